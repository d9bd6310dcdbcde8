//! Small geometry helpers shared across modules.

use std::f64::consts::PI;

/// Wraps an angle to the half-open interval (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Smallest signed difference `a - b`, wrapped to (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Rotates a world-frame offset into the body frame of a pose with heading `psi`.
pub fn world_to_body(dx: f64, dy: f64, psi: f64) -> (f64, f64) {
    let (s, c) = psi.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}

/// Euclidean distance between two points.
pub fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

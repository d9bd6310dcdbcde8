//! Action mapping and smoothing.
//!
//! Raw policy outputs live in [-1, 1]^2. They are mapped into the
//! deployable ranges — steering clamped to [-0.8, 0.8] to prevent rollover
//! at speed, throttle to [0.6, 1.0] to rule out slow driving — and then
//! blended with the previously deployed action to suppress shaky control.

use serde::{Deserialize, Serialize};

use crate::vehicle::Controls;

/// Steering magnitude limit of the deployable action.
pub const STEER_LIMIT: f64 = 0.8;
/// Throttle range of the deployable action.
pub const THROTTLE_RANGE: (f64, f64) = (0.6, 1.0);

/// A deployable action: steering in [-0.8, 0.8], throttle in [0.6, 1.0].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub steer: f64,
    pub throttle: f64,
}

impl Action {
    /// The action deployed before the first policy output of an episode:
    /// neutral steering at the minimum allowed throttle.
    pub fn initial() -> Self {
        Self { steer: 0.0, throttle: THROTTLE_RANGE.0 }
    }

    pub fn in_range(&self) -> bool {
        self.steer.abs() <= STEER_LIMIT + 1e-12
            && (THROTTLE_RANGE.0 - 1e-12..=THROTTLE_RANGE.1 + 1e-12).contains(&self.throttle)
    }

    pub fn controls(&self) -> Controls {
        Controls::new(self.steer, self.throttle)
    }
}

/// Maps a raw network output pair (each in [-1, 1]) onto the deployable
/// ranges: `steer = 0.8*u1`, `throttle = 0.8 + 0.2*u2`.
///
/// Out-of-range inputs are clamped; the returned flag reports whether
/// clamping occurred so the caller can count it in diagnostics.
pub fn map_raw(raw: (f64, f64)) -> (Action, bool) {
    let clamped = !(-1.0..=1.0).contains(&raw.0) || !(-1.0..=1.0).contains(&raw.1);
    let u1 = raw.0.clamp(-1.0, 1.0);
    let u2 = raw.1.clamp(-1.0, 1.0);
    (
        Action {
            steer: STEER_LIMIT * u1,
            // 0.6 + 0.4*(u2+1)/2, written to hit both endpoints exactly
            throttle: THROTTLE_RANGE.0 + 0.2 * (u2 + 1.0),
        },
        clamped,
    )
}

/// Per-channel blending gains of the smoothing filter. `k1` weighs the new
/// network action and `k2` the previously deployed one; each channel pair
/// sums to one so the result is a convex combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingGains {
    pub k1_steer: f64,
    pub k1_throttle: f64,
    pub k2_steer: f64,
    pub k2_throttle: f64,
}

impl Default for SmoothingGains {
    fn default() -> Self {
        Self {
            k1_steer: 0.1,
            k1_throttle: 0.3,
            k2_steer: 0.9,
            k2_throttle: 0.7,
        }
    }
}

impl SmoothingGains {
    pub fn validate(&self) -> Result<(), String> {
        let convex = |k1: f64, k2: f64| {
            (0.0..=1.0).contains(&k1) && (0.0..=1.0).contains(&k2) && (k1 + k2 - 1.0).abs() < 1e-9
        };
        if convex(self.k1_steer, self.k2_steer) && convex(self.k1_throttle, self.k2_throttle) {
            Ok(())
        } else {
            Err(format!("smoothing gains must be convex per channel: {self:?}"))
        }
    }
}

/// Blends the network action with the previously deployed action:
/// `a_t = K1 * a_net + K2 * a_prev` per channel.
pub fn smooth(a_net: Action, a_prev: Action, g: &SmoothingGains) -> Action {
    Action {
        steer: g.k1_steer * a_net.steer + g.k2_steer * a_prev.steer,
        throttle: g.k1_throttle * a_net.throttle + g.k2_throttle * a_prev.throttle,
    }
}

//! Reward shaping: exponential partial rewards over the tracking errors,
//! combined into a speed-scaled weighted sum with a low-speed punishment.
//!
//! The angular partials are computed in degrees; they flip sign beyond
//! 90 degrees to flag a command that points the car the wrong way.

use serde::{Deserialize, Serialize};

/// Reward gains and weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Cross-track decay rate [1/m].
    pub k1: f64,
    /// Angular decay rate [1/deg].
    pub k2: f64,
    /// Weight on the cross-track partial.
    pub w_ey: f64,
    /// Weight on the heading-error partial.
    pub w_epsi: f64,
    /// Weight on the slip-error partial.
    pub w_ebeta: f64,
    /// Below this speed [m/s] the total reward is punished.
    pub v_min: f64,
    /// Multiplier applied below `v_min`.
    pub low_speed_factor: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            k1: 0.5,
            k2: 0.1,
            w_ey: 40.0,
            w_epsi: 40.0,
            w_ebeta: 20.0,
            v_min: 6.0,
            low_speed_factor: 0.5,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.k1 > 0.0
            && self.k2 > 0.0
            && self.w_ey >= 0.0
            && self.w_epsi >= 0.0
            && self.w_ebeta >= 0.0
            && self.v_min > 0.0
            && self.low_speed_factor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(format!("reward params out of range: {self:?}"))
        }
    }
}

/// Cross-track partial reward `exp(-k1 * e_y)` for an error magnitude in
/// meters; always in (0, 1].
pub fn partial_ey(e_y: f64, p: &RewardParams) -> f64 {
    debug_assert!(e_y >= 0.0, "cross-track partial takes a magnitude");
    (-p.k1 * e_y).exp()
}

/// Angular partial reward for an error `x` in degrees.
///
/// `exp(-k2*|x|)` inside +-90 deg; beyond that the reward goes negative,
/// `-exp(-k2*(180 - |x|))`, so pointing backwards is actively punished.
/// The boundary itself takes the negative branch.
pub fn partial_angle(x: f64, p: &RewardParams) -> f64 {
    if x >= 90.0 {
        -(-p.k2 * (180.0 - x)).exp()
    } else if x <= -90.0 {
        -(-p.k2 * (180.0 + x)).exp()
    } else {
        (-p.k2 * x.abs()).exp()
    }
}

/// Total reward: speed times the weighted sum of partials, halved (by
/// `low_speed_factor`) below `v_min`.
pub fn total_reward(v: f64, e_y: f64, e_psi_deg: f64, e_beta_deg: f64, p: &RewardParams) -> f64 {
    debug_assert!(v >= 0.0);
    let weighted = p.w_ey * partial_ey(e_y, p)
        + p.w_epsi * partial_angle(e_psi_deg, p)
        + p.w_ebeta * partial_angle(e_beta_deg, p);
    let r = v * weighted;
    if v < p.v_min {
        p.low_speed_factor * r
    } else {
        r
    }
}

//! Vector field guidance, error variables, observation assembly and
//! terminal conditions.
//!
//! The guidance law blends the reference heading with a cross-track
//! dependent correction bounded by `psi_inf`; the controller is then
//! rewarded for matching that desired heading rather than the raw path
//! tangent, which is what pulls it back onto the trajectory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{angle_diff, world_to_body, wrap_angle};
use crate::track::{nearest_point, RefPoint, ReferenceTrajectory, Track};
use crate::vehicle::VehicleState;

/// Gains of the vector field guidance law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VfgParams {
    /// Transition gain [1/m]: larger values snap the desired heading back
    /// to the path direction over a shorter distance.
    pub k: f64,
    /// Maximum deviation between the desired and reference headings [rad].
    pub psi_inf: f64,
}

impl Default for VfgParams {
    fn default() -> Self {
        Self { k: 0.1, psi_inf: std::f64::consts::FRAC_PI_2 }
    }
}

impl VfgParams {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if self.k > 0.0 && self.psi_inf > 0.0 && self.psi_inf <= std::f64::consts::FRAC_PI_2 {
            Ok(())
        } else {
            Err(GuidanceError::InvalidParams(format!(
                "vfg params out of range: k={} psi_inf={}",
                self.k, self.psi_inf
            )))
        }
    }
}

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("{0}")]
    InvalidParams(String),
    #[error("non-finite {0} while assembling the observation")]
    NonFinite(&'static str),
}

/// Desired heading from the vector field:
/// `psi_d = d * psi_inf * (2/pi) * atan(k * e_y) + psi_ref`, wrapped.
///
/// `e_y` is the unsigned cross-track magnitude; `side` carries which side
/// of the path the vehicle is on. With headings measured counterclockwise
/// and cross-track positive to the left, a vehicle on the left needs a
/// clockwise (negative) correction, so `side = -1` for the left side and
/// `+1` for the right. [`side_flag`] derives it from the signed cross-track.
pub fn desired_heading(psi_ref: f64, e_y: f64, side: f64, vfg: &VfgParams) -> f64 {
    let deviation = side * vfg.psi_inf * std::f64::consts::FRAC_2_PI * (vfg.k * e_y).atan();
    wrap_angle(psi_ref + deviation)
}

/// Side flag for [`desired_heading`] from a signed cross-track error
/// (positive = left of the path): +1 on the right, -1 on the left.
pub fn side_flag(signed_cross_track: f64) -> f64 {
    if signed_cross_track > 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// The ten error variables of the state space: cross-track, heading, slip
/// and velocity errors plus their one-step backward differences.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorState {
    /// Signed cross-track error [m], positive left of the path.
    pub e_y: f64,
    pub e_y_dot: f64,
    /// Heading error vs the VFG desired heading, wrapped to (-pi, pi].
    pub e_psi: f64,
    pub e_psi_dot: f64,
    /// Slip angle error vs the reference slip, wrapped to (-pi, pi].
    pub e_beta: f64,
    pub e_beta_dot: f64,
    pub e_vx: f64,
    pub e_vx_dot: f64,
    pub e_vy: f64,
    pub e_vy_dot: f64,
}

impl ErrorState {
    pub fn is_finite(&self) -> bool {
        [
            self.e_y,
            self.e_y_dot,
            self.e_psi,
            self.e_psi_dot,
            self.e_beta,
            self.e_beta_dot,
            self.e_vx,
            self.e_vx_dot,
            self.e_vy,
            self.e_vy_dot,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Computes the error state for the current step.
///
/// `signed_e_y` comes from [`nearest_point`] against the reference
/// trajectory; `reference` is the matched reference point. Derivatives are
/// one-step backward differences (wrapped for the angular channels) and
/// zero at episode start when `prev` is absent.
pub fn error_state(
    state: &VehicleState,
    prev: Option<&ErrorState>,
    reference: &RefPoint,
    signed_e_y: f64,
    vfg: &VfgParams,
    dt: f64,
) -> ErrorState {
    debug_assert!(dt > 0.0);
    let psi_d = desired_heading(
        reference.psi_ref,
        signed_e_y.abs(),
        side_flag(signed_e_y),
        vfg,
    );
    let e_psi = angle_diff(state.psi, psi_d);
    let e_beta = angle_diff(state.slip_angle(), reference.beta_ref);
    let e_vx = state.v_x - reference.v_x_ref;
    let e_vy = state.v_y - reference.v_y_ref;

    let (e_y_dot, e_psi_dot, e_beta_dot, e_vx_dot, e_vy_dot) = match prev {
        Some(p) => (
            (signed_e_y - p.e_y) / dt,
            angle_diff(e_psi, p.e_psi) / dt,
            angle_diff(e_beta, p.e_beta) / dt,
            (e_vx - p.e_vx) / dt,
            (e_vy - p.e_vy) / dt,
        ),
        None => (0.0, 0.0, 0.0, 0.0, 0.0),
    };

    ErrorState {
        e_y: signed_e_y,
        e_y_dot,
        e_psi,
        e_psi_dot,
        e_beta,
        e_beta_dot,
        e_vx,
        e_vx_dot,
        e_vy,
        e_vy_dot,
    }
}

/// Full observation: steering, throttle, ten error entries and ten
/// lookahead samples. Ablated mode drops the slip-angle channels.
pub const OBS_DIM_FULL: usize = 42;
pub const OBS_DIM_ABLATED: usize = 30;
/// Number of lookahead reference points in the observation.
pub const LOOKAHEAD_POINTS: usize = 10;
/// Arc-length spacing between lookahead points [m].
pub const LOOKAHEAD_SPACING: f64 = 2.0;

/// Normalization constants: every channel is divided by its entry so the
/// network sees O(1) inputs. Distances scale by the off-track limit,
/// angles by pi, velocities by a generous top speed, and each derivative
/// by its parent constant per control period. The table is exported into
/// run metadata for reproducibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsNorm {
    pub distance: f64,
    pub angle: f64,
    pub velocity: f64,
    pub distance_rate: f64,
    pub angle_rate: f64,
    pub velocity_rate: f64,
}

impl ObsNorm {
    pub fn for_dt(dt: f64) -> Self {
        let distance = 15.0;
        let angle = std::f64::consts::PI;
        let velocity = 40.0;
        Self {
            distance,
            angle,
            velocity,
            distance_rate: distance / dt,
            angle_rate: angle / dt,
            velocity_rate: velocity / dt,
        }
    }
}

/// Which channels the policy sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsMode {
    /// The full 42-dimensional observation.
    Full,
    /// 30-dimensional: slip-angle channels removed (e_beta, its rate and
    /// the ten lookahead slip angles).
    AblatedSlip,
}

impl ObsMode {
    pub fn dim(self) -> usize {
        match self {
            ObsMode::Full => OBS_DIM_FULL,
            ObsMode::AblatedSlip => OBS_DIM_ABLATED,
        }
    }
}

/// Assembles the normalized observation vector.
///
/// Lookahead positions are rotated/translated into the vehicle body frame
/// so the observation is invariant to world pose. `zero_slip_velocity`
/// additionally zeroes e_beta, its rate, e_vy and its rate, which is how
/// the rough-reference application mode feeds the policy.
pub fn build_observation(
    state: &VehicleState,
    errs: &ErrorState,
    look: &[RefPoint],
    mode: ObsMode,
    zero_slip_velocity: bool,
    norm: &ObsNorm,
) -> Result<Vec<f64>, GuidanceError> {
    if look.len() != LOOKAHEAD_POINTS {
        return Err(GuidanceError::NonFinite("lookahead window"));
    }
    if !state.is_finite() {
        return Err(GuidanceError::NonFinite("vehicle state"));
    }
    if !errs.is_finite() {
        return Err(GuidanceError::NonFinite("error state"));
    }

    let (e_beta, e_beta_dot, e_vy, e_vy_dot) = if zero_slip_velocity {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        (errs.e_beta, errs.e_beta_dot, errs.e_vy, errs.e_vy_dot)
    };

    let mut obs = Vec::with_capacity(mode.dim());
    obs.push(state.delta);
    obs.push(state.tau);
    obs.push(errs.e_y / norm.distance);
    obs.push(errs.e_y_dot / norm.distance_rate);
    obs.push(errs.e_psi / norm.angle);
    obs.push(errs.e_psi_dot / norm.angle_rate);
    if mode == ObsMode::Full {
        obs.push(e_beta / norm.angle);
        obs.push(e_beta_dot / norm.angle_rate);
    }
    obs.push(errs.e_vx / norm.velocity);
    obs.push(errs.e_vx_dot / norm.velocity_rate);
    obs.push(e_vy / norm.velocity);
    obs.push(e_vy_dot / norm.velocity_rate);
    for p in look {
        let (bx, by) = world_to_body(p.x - state.x, p.y - state.y, state.psi);
        obs.push(bx / norm.distance);
        obs.push(by / norm.distance);
        if mode == ObsMode::Full {
            let beta = if zero_slip_velocity { 0.0 } else { p.beta_ref };
            obs.push(beta / norm.angle);
        }
    }
    debug_assert_eq!(obs.len(), mode.dim());
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(GuidanceError::NonFinite("observation entry"));
    }
    Ok(obs)
}

/// Episode status produced by [`terminal_check`]. Anything but `Running`
/// marks the terminal state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    Running,
    /// Left the drivable band: the barrier-contact analog.
    Collision,
    /// Reached the destination (or completed the lap on loops).
    Arrival,
    /// More than [`OFF_TRACK_DISTANCE`] away from the track.
    OffTrack,
}

/// Off-track termination distance [m].
pub const OFF_TRACK_DISTANCE: f64 = 15.0;
/// Within this distance of the final point counts as arrival [m].
pub const ARRIVED_THRESHOLD: f64 = 5.0;

/// Decides the episode status.
///
/// `progress_s` is the cumulative arc length the vehicle has covered along
/// the trajectory (maintained by the environment); on loop tracks a full
/// lap is the arrival condition.
pub fn terminal_check(
    state: &VehicleState,
    track: &Track,
    traj: &ReferenceTrajectory,
    arrived_threshold: f64,
    progress_s: f64,
) -> Terminal {
    let pos = (state.x, state.y);
    if track.is_loop {
        if progress_s >= traj.total_length() {
            return Terminal::Arrival;
        }
    } else {
        let last = traj.points.last().unwrap();
        // guard against counting a spawn next to the finish as arrival
        let near_end = progress_s > 0.5 * traj.total_length();
        if near_end && crate::math::dist(pos, (last.x, last.y)) <= arrived_threshold {
            return Terminal::Arrival;
        }
    }
    if track.distance_to_centerline(pos) > OFF_TRACK_DISTANCE {
        return Terminal::OffTrack;
    }
    let (_, cross) = nearest_point(traj, pos, None);
    if cross.abs() > track.half_width {
        return Terminal::Collision;
    }
    Terminal::Running
}

//! Dynamic bicycle model for a drift-capable planar vehicle.
//!
//! Single-track model with a smoothly saturating (arctangent-shaped) lateral
//! tire curve, longitudinal drive force on the driven axle(s), quadratic
//! aerodynamic drag and a first-order engine lag whose time constant scales
//! with the drivetrain moment of inertia. Load split between the axles is
//! static; there is no weight transfer and no rollover — roll is prevented
//! upstream by clamping the steering command.
//!
//! All functions here are pure: identical inputs produce bit-identical
//! outputs, so rollouts can run on any number of workers without locks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::wrap_angle;

/// Gravitational acceleration [m/s^2].
pub const GRAVITY: f64 = 9.81;

/// Wheel angle at full steering command [rad] (35 degrees).
pub const MAX_STEER_RAD: f64 = 0.610_865_238_198_015_3;

/// Below this forward speed the slip angle is reported as zero; atan2 is
/// ill-conditioned near zero velocity.
pub const SLIP_SPEED_GUARD: f64 = 0.5;

/// Forward-speed floor used inside the axle slip computation.
const AXLE_SPEED_FLOOR: f64 = 0.5;

/// Engine lag time constant per unit drivetrain inertia [s per kg*m^2].
const ENGINE_LAG_PER_MOI: f64 = 0.5;

/// Which axle(s) receive longitudinal drive force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriveType {
    Fwd,
    Awd,
}

/// Physical description of a vehicle.
///
/// The four named presets mirror the roles of the vehicles used for
/// training and generalization testing: the trainer car, a lighter and
/// more powerful coupe, a compact with a large drivetrain inertia, and a
/// heavy all-wheel-drive truck.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Vehicle mass [kg].
    pub mass: f64,
    /// Peak friction coefficient of the tires (dimensionless). The
    /// simulator maps this scalar linearly onto the per-axle force cap;
    /// values well above 1 reproduce the arcade-scale grip of the
    /// original environment rather than street tires.
    pub tire_friction: f64,
    /// Drivetrain moment of inertia proxy [kg*m^2]; enters as a
    /// first-order lag on the achieved drive force.
    pub engine_moi: f64,
    /// Overall length [m].
    pub length: f64,
    /// Overall width [m].
    pub width: f64,
    /// Distance from center of gravity to the front axle [m].
    pub wheelbase_front: f64,
    /// Distance from center of gravity to the rear axle [m].
    pub wheelbase_rear: f64,
    pub drive_type: DriveType,
    /// Peak longitudinal drive force at full throttle [N].
    pub max_engine_force: f64,
    /// Front cornering stiffness [N/rad].
    pub cornering_stiffness_front: f64,
    /// Rear cornering stiffness [N/rad].
    pub cornering_stiffness_rear: f64,
    /// Quadratic aerodynamic drag coefficient [N*s^2/m^2].
    pub drag_coefficient: f64,
    /// Yaw moment of inertia [kg*m^2].
    pub yaw_inertia: f64,
}

/// Named vehicle presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehiclePreset {
    /// The car used for training (friction/mass are randomized around it).
    Trainer,
    /// Lighter, more powerful, reaches the highest top speed.
    LightCoupe,
    /// Small car with a large drivetrain inertia: lazy throttle response.
    HighMoiCompact,
    /// Heavy AWD truck: precise but reluctant to slide.
    HeavyAwdTruck,
}

impl VehiclePreset {
    pub const ALL: [VehiclePreset; 4] = [
        VehiclePreset::Trainer,
        VehiclePreset::LightCoupe,
        VehiclePreset::HighMoiCompact,
        VehiclePreset::HeavyAwdTruck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VehiclePreset::Trainer => "trainer",
            VehiclePreset::LightCoupe => "light_coupe",
            VehiclePreset::HighMoiCompact => "high_moi_compact",
            VehiclePreset::HeavyAwdTruck => "heavy_awd_truck",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl VehicleParams {
    /// Builds a parameter set from overall dimensions plus tuning knobs.
    ///
    /// The wheelbase is 62% of the body length with the center of gravity
    /// 45% of the way back (front-heavy, as expected for the mostly
    /// front-wheel-drive fleet). Cornering stiffnesses are chosen so the
    /// front axle saturates over ~0.15 rad of slip and the rear over
    /// ~0.20 rad: the lazier rear is what lets a step steer swing the tail
    /// out before the force catches up.
    fn derive(
        mass: f64,
        tire_friction: f64,
        engine_moi: f64,
        length: f64,
        width: f64,
        drive_type: DriveType,
        power_per_kg: f64,
        drag_coefficient: f64,
    ) -> Self {
        let wheelbase = 0.62 * length;
        let wheelbase_front = 0.45 * wheelbase;
        let wheelbase_rear = 0.55 * wheelbase;
        let front_load = mass * GRAVITY * wheelbase_rear / wheelbase;
        let rear_load = mass * GRAVITY * wheelbase_front / wheelbase;
        Self {
            mass,
            tire_friction,
            engine_moi,
            length,
            width,
            wheelbase_front,
            wheelbase_rear,
            drive_type,
            max_engine_force: power_per_kg * mass,
            cornering_stiffness_front: tire_friction * front_load / 0.15,
            cornering_stiffness_rear: tire_friction * rear_load / 0.20,
            drag_coefficient,
            yaw_inertia: mass * wheelbase_front * wheelbase_rear,
        }
    }

    pub fn preset(which: VehiclePreset) -> Self {
        match which {
            VehiclePreset::Trainer => {
                Self::derive(1800.0, 3.5, 0.1, 3.6, 1.6, DriveType::Fwd, 3.4, 5.6)
            }
            VehiclePreset::LightCoupe => {
                Self::derive(1200.0, 3.5, 0.3, 4.2, 1.8, DriveType::Fwd, 6.0, 4.5)
            }
            VehiclePreset::HighMoiCompact => {
                Self::derive(1000.0, 3.5, 1.0, 3.8, 1.7, DriveType::Fwd, 3.8, 5.8)
            }
            VehiclePreset::HeavyAwdTruck => {
                Self::derive(5500.0, 3.5, 1.0, 5.6, 2.5, DriveType::Awd, 2.0, 18.0)
            }
        }
    }

    /// Returns a copy with mass and tire friction overridden, as used by the
    /// per-episode randomization and the unseen-condition evaluations.
    pub fn with_overrides(&self, tire_friction: Option<f64>, mass: Option<f64>) -> Self {
        let mut p = self.clone();
        if let Some(f) = tire_friction {
            p.tire_friction = f;
        }
        if let Some(m) = mass {
            // Yaw inertia tracks mass; stiffness and engine force stay with
            // the preset so that only grip/inertia change, as in the source
            // environment where friction and mass are independent sliders.
            p.yaw_inertia *= m / p.mass;
            p.mass = m;
        }
        p
    }

    pub fn wheelbase(&self) -> f64 {
        self.wheelbase_front + self.wheelbase_rear
    }

    /// Static vertical load on the front axle [N].
    pub fn front_axle_load(&self) -> f64 {
        self.mass * GRAVITY * self.wheelbase_rear / self.wheelbase()
    }

    /// Static vertical load on the rear axle [N].
    pub fn rear_axle_load(&self) -> f64 {
        self.mass * GRAVITY * self.wheelbase_front / self.wheelbase()
    }

    pub fn validate(&self) -> Result<(), StepError> {
        let ok = self.mass > 0.0
            && self.yaw_inertia > 0.0
            && self.wheelbase() > 0.0
            && (1.0..=6.0).contains(&self.tire_friction)
            && self.max_engine_force > 0.0
            && self.cornering_stiffness_front > 0.0
            && self.cornering_stiffness_rear > 0.0
            && self.drag_coefficient >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(StepError::InvalidParams(format!(
                "vehicle params out of range: mass={} friction={} yaw_inertia={}",
                self.mass, self.tire_friction, self.yaw_inertia
            )))
        }
    }
}

/// Full kinematic/dynamic pose of the simulated car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// World position [m].
    pub x: f64,
    pub y: f64,
    /// Heading angle, wrapped to (-pi, pi].
    pub psi: f64,
    /// Body-frame forward velocity [m/s].
    pub v_x: f64,
    /// Body-frame lateral velocity [m/s].
    pub v_y: f64,
    /// Yaw rate [rad/s].
    pub yaw_rate: f64,
    /// Last applied normalized steering, in [-1, 1].
    pub delta: f64,
    /// Last applied normalized throttle, in [0, 1].
    pub tau: f64,
    /// Achieved longitudinal drive force [N]; lags the throttle command
    /// with a time constant proportional to the engine inertia.
    pub drive_force: f64,
}

impl VehicleState {
    /// At rest at a pose, controls neutral.
    pub fn at_pose(x: f64, y: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            psi: wrap_angle(psi),
            v_x: 0.0,
            v_y: 0.0,
            yaw_rate: 0.0,
            delta: 0.0,
            tau: 0.0,
            drive_force: 0.0,
        }
    }

    pub fn speed(&self) -> f64 {
        (self.v_x * self.v_x + self.v_y * self.v_y).sqrt()
    }

    /// Slip angle beta: the angle between heading and velocity direction at
    /// the center of gravity. Zero below the low-speed guard.
    pub fn slip_angle(&self) -> f64 {
        if self.speed() > SLIP_SPEED_GUARD {
            self.v_y.atan2(self.v_x)
        } else {
            0.0
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.x,
            self.y,
            self.psi,
            self.v_x,
            self.v_y,
            self.yaw_rate,
            self.delta,
            self.tau,
            self.drive_force,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Raw simulator controls in the native ranges: steering in [-1, 1] and
/// throttle in [0, 1]. The policy-facing clamped ranges live in
/// [`crate::control`]; the simulator itself accepts the full span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub delta: f64,
    pub tau: f64,
}

impl Controls {
    pub fn new(delta: f64, tau: f64) -> Self {
        Self {
            delta: delta.clamp(-1.0, 1.0),
            tau: tau.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    /// NaN leakage from the trainer shows up here first.
    #[error("non-finite {0} passed to vehicle step")]
    NonFinite(&'static str),
    #[error("{0}")]
    InvalidParams(String),
}

/// Saturating lateral tire force.
///
/// Odd in `slip`, slope `-stiffness` at the origin, magnitude approaching
/// `max_force` asymptotically. The sign opposes the slip angle.
pub fn tire_lateral_force(slip: f64, stiffness: f64, max_force: f64) -> f64 {
    let mag = max_force
        * std::f64::consts::FRAC_2_PI
        * (std::f64::consts::FRAC_PI_2 * stiffness / max_force * slip.abs()).atan();
    -mag.copysign(slip)
}

#[derive(Clone, Copy)]
struct Derivs {
    dx: f64,
    dy: f64,
    dpsi: f64,
    dvx: f64,
    dvy: f64,
    dr: f64,
    dforce: f64,
}

fn dynamics(
    x: &VehicleState,
    drive_force: f64,
    controls: Controls,
    p: &VehicleParams,
) -> Derivs {
    let steer = controls.delta * MAX_STEER_RAD;
    let vx_eff = x.v_x.max(AXLE_SPEED_FLOOR);

    let slip_front = (x.v_y + p.wheelbase_front * x.yaw_rate).atan2(vx_eff) - steer;
    let slip_rear = (x.v_y - p.wheelbase_rear * x.yaw_rate).atan2(vx_eff);

    let cap_front = p.tire_friction * p.front_axle_load();
    let cap_rear = p.tire_friction * p.rear_axle_load();
    let fy_front = tire_lateral_force(slip_front, p.cornering_stiffness_front, cap_front);
    let fy_rear = tire_lateral_force(slip_rear, p.cornering_stiffness_rear, cap_rear);

    let (fx_front, fx_rear) = match p.drive_type {
        DriveType::Fwd => (drive_force, 0.0),
        DriveType::Awd => (0.5 * drive_force, 0.5 * drive_force),
    };
    let drag = p.drag_coefficient * x.v_x * x.v_x.abs();

    let (sin_s, cos_s) = steer.sin_cos();
    let force_x = fx_front * cos_s - fy_front * sin_s + fx_rear - drag;
    let force_y = fy_front * cos_s + fx_front * sin_s + fy_rear;
    let torque = p.wheelbase_front * (fy_front * cos_s + fx_front * sin_s)
        - p.wheelbase_rear * fy_rear;

    let (sin_psi, cos_psi) = x.psi.sin_cos();
    let lag = (ENGINE_LAG_PER_MOI * p.engine_moi).max(0.01);

    Derivs {
        dx: x.v_x * cos_psi - x.v_y * sin_psi,
        dy: x.v_x * sin_psi + x.v_y * cos_psi,
        dpsi: x.yaw_rate,
        dvx: force_x / p.mass + x.yaw_rate * x.v_y,
        dvy: force_y / p.mass - x.yaw_rate * x.v_x,
        dr: torque / p.yaw_inertia,
        dforce: (controls.tau * p.max_engine_force - drive_force) / lag,
    }
}

fn advance(s: &VehicleState, d: &Derivs, h: f64) -> VehicleState {
    VehicleState {
        x: s.x + h * d.dx,
        y: s.y + h * d.dy,
        psi: s.psi + h * d.dpsi,
        v_x: s.v_x + h * d.dvx,
        v_y: s.v_y + h * d.dvy,
        yaw_rate: s.yaw_rate + h * d.dr,
        delta: s.delta,
        tau: s.tau,
        drive_force: s.drive_force + h * d.dforce,
    }
}

/// Advances the vehicle by `dt` seconds under constant controls using a
/// fixed-step 4th-order Runge-Kutta integration.
pub fn step(
    state: &VehicleState,
    controls: Controls,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState, StepError> {
    if !state.is_finite() {
        return Err(StepError::NonFinite("state"));
    }
    if !(controls.delta.is_finite() && controls.tau.is_finite()) {
        return Err(StepError::NonFinite("action"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(StepError::NonFinite("dt"));
    }

    let k1 = dynamics(state, state.drive_force, controls, params);
    let s2 = advance(state, &k1, dt / 2.0);
    let k2 = dynamics(&s2, s2.drive_force, controls, params);
    let s3 = advance(state, &k2, dt / 2.0);
    let k3 = dynamics(&s3, s3.drive_force, controls, params);
    let s4 = advance(state, &k3, dt);
    let k4 = dynamics(&s4, s4.drive_force, controls, params);

    let mut next = *state;
    let w = dt / 6.0;
    next.x += w * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx);
    next.y += w * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy);
    next.psi = wrap_angle(next.psi + w * (k1.dpsi + 2.0 * k2.dpsi + 2.0 * k3.dpsi + k4.dpsi));
    next.v_x += w * (k1.dvx + 2.0 * k2.dvx + 2.0 * k3.dvx + k4.dvx);
    next.v_y += w * (k1.dvy + 2.0 * k2.dvy + 2.0 * k3.dvy + k4.dvy);
    next.yaw_rate += w * (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr);
    next.drive_force =
        (next.drive_force + w * (k1.dforce + 2.0 * k2.dforce + 2.0 * k3.dforce + k4.dforce))
            .max(0.0);
    next.delta = controls.delta;
    next.tau = controls.tau;

    if !next.is_finite() {
        return Err(StepError::NonFinite("integrated state"));
    }
    Ok(next)
}

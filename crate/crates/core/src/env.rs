//! The rollout environment: one episode of driving a vehicle along a
//! reference trajectory at a fixed control rate.
//!
//! Per step: the raw policy pair is mapped into the deployable ranges,
//! blended with the previously deployed action, applied to the bicycle
//! model for one control period, and the resulting pose is scored against
//! the reference (guidance errors, reward, terminal conditions).

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{self, Action, SmoothingGains};
use crate::guidance::{
    self, build_observation, error_state, terminal_check, ErrorState, ObsMode, ObsNorm, Terminal,
    VfgParams, ARRIVED_THRESHOLD, LOOKAHEAD_POINTS, LOOKAHEAD_SPACING,
};
use crate::reward::{total_reward, RewardParams};
use crate::track::{lookahead, nearest_point, ReferenceTrajectory, Track};
use crate::vehicle::{self, VehicleParams, VehicleState};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Vehicle(#[from] vehicle::StepError),
    #[error(transparent)]
    Guidance(#[from] guidance::GuidanceError),
    #[error(transparent)]
    Track(#[from] crate::track::TrackError),
    #[error("environment was stepped after the episode ended")]
    EpisodeOver,
}

/// Per-episode environment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Control period [s].
    pub dt: f64,
    /// Step cap; exceeding it truncates the episode without a terminal.
    pub max_episode_steps: usize,
    /// Forward speed at spawn [m/s].
    pub spawn_speed: f64,
    pub obs_mode: ObsMode,
    /// Application-test mode: zero the slip-angle and lateral-velocity
    /// channels of the observation (used with the rough reference).
    pub app_test: bool,
    pub vfg: VfgParams,
    pub reward: RewardParams,
    /// Smoothing filter switch; disabled reproduces the WOS ablation.
    pub smoothing_enabled: bool,
    pub smoothing: SmoothingGains,
    /// Apply the smoothing blend to the raw [-1,1] outputs before range
    /// mapping instead of after (config-recorded alternative ordering).
    pub smooth_on_raw: bool,
    pub arrived_threshold: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            max_episode_steps: 3000,
            spawn_speed: 5.0,
            obs_mode: ObsMode::Full,
            app_test: false,
            vfg: VfgParams::default(),
            reward: RewardParams::default(),
            smoothing_enabled: true,
            smoothing: SmoothingGains::default(),
            smooth_on_raw: false,
            arrived_threshold: ARRIVED_THRESHOLD,
        }
    }
}

/// Everything a step tells the caller beyond the observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub state: VehicleState,
    pub applied: Action,
    pub raw: [f64; 2],
    pub errors: ErrorState,
    pub nearest_s: f64,
    /// Raw input fell outside [-1, 1] and was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminal: Terminal,
    /// Step cap reached without a terminal condition.
    pub truncated: bool,
    pub info: StepInfo,
}

/// One episode of simulation against a fixed track/reference pair.
#[derive(Debug, Clone)]
pub struct DriftEnv {
    pub track: Arc<Track>,
    pub traj: Arc<ReferenceTrajectory>,
    pub params: VehicleParams,
    pub cfg: EnvConfig,
    norm: ObsNorm,
    state: VehicleState,
    errs: Option<ErrorState>,
    prev_action: Action,
    prev_raw: [f64; 2],
    hint: usize,
    progress_raw: f64,
    progress: f64,
    last_s: f64,
    steps: usize,
    terminal: Terminal,
    /// How many raw actions needed clamping this episode.
    pub clamp_count: u64,
}

impl DriftEnv {
    pub fn new(
        track: Arc<Track>,
        traj: Arc<ReferenceTrajectory>,
        params: VehicleParams,
        cfg: EnvConfig,
    ) -> Result<Self, EnvError> {
        params.validate()?;
        traj.validate()?;
        cfg.vfg.validate()?;
        let norm = ObsNorm::for_dt(cfg.dt);
        let mut env = Self {
            track,
            traj,
            params,
            cfg,
            norm,
            state: VehicleState::at_pose(0.0, 0.0, 0.0),
            errs: None,
            prev_action: Action::initial(),
            prev_raw: [0.0, -1.0],
            hint: 0,
            progress_raw: 0.0,
            progress: 0.0,
            last_s: 0.0,
            steps: 0,
            terminal: Terminal::Running,
            clamp_count: 0,
        };
        env.reset(0.0)?;
        Ok(env)
    }

    pub fn obs_dim(&self) -> usize {
        self.cfg.obs_mode.dim()
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn errors(&self) -> Option<&ErrorState> {
        self.errs.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn terminal(&self) -> Terminal {
        self.terminal
    }

    /// Starts a fresh episode at the head of the reference, offset
    /// laterally by `lateral_jitter` meters (spawn randomization for
    /// evaluation repetitions).
    pub fn reset(&mut self, lateral_jitter: f64) -> Result<Vec<f64>, EnvError> {
        let start = self.traj.points[0];
        let left = start.psi_ref + std::f64::consts::FRAC_PI_2;
        let mut state = VehicleState::at_pose(
            start.x + lateral_jitter * left.cos(),
            start.y + lateral_jitter * left.sin(),
            start.psi_ref,
        );
        state.v_x = self.cfg.spawn_speed;
        state.delta = Action::initial().steer;
        state.tau = Action::initial().throttle;
        self.state = state;
        self.errs = None;
        self.prev_action = Action::initial();
        self.prev_raw = [0.0, -1.0];
        self.hint = 0;
        self.progress_raw = 0.0;
        self.progress = 0.0;
        self.steps = 0;
        self.terminal = Terminal::Running;
        self.clamp_count = 0;

        let (idx, cross) = nearest_point(&self.traj, (state.x, state.y), None);
        self.hint = idx;
        self.last_s = self.traj.points[idx].s;
        let reference = self.traj.points[idx];
        let errs = error_state(&self.state, None, &reference, cross, &self.cfg.vfg, self.cfg.dt);
        self.errs = Some(errs);
        self.observe(&errs)
    }

    fn observe(&self, errs: &ErrorState) -> Result<Vec<f64>, EnvError> {
        let look = lookahead(&self.traj, self.hint, LOOKAHEAD_POINTS, LOOKAHEAD_SPACING);
        Ok(build_observation(
            &self.state,
            errs,
            &look,
            self.cfg.obs_mode,
            self.cfg.app_test,
            &self.norm,
        )?)
    }

    /// Maps, smooths and applies one raw policy output pair.
    pub fn step(&mut self, raw: [f64; 2]) -> Result<StepResult, EnvError> {
        if self.terminal != Terminal::Running || self.steps >= self.cfg.max_episode_steps {
            return Err(EnvError::EpisodeOver);
        }

        let (applied, clamped) = self.resolve_action(raw);
        if clamped {
            self.clamp_count += 1;
        }

        let mut next = vehicle::step(&self.state, applied.controls(), &self.params, self.cfg.dt)?;
        next.delta = applied.steer;
        next.tau = applied.throttle;

        let (idx, cross) = nearest_point(&self.traj, (next.x, next.y), Some(self.hint));
        let s = self.traj.points[idx].s;
        let total = self.traj.total_length();
        let mut ds = s - self.last_s;
        if self.traj.is_loop {
            if ds < -0.5 * total {
                ds += total;
            } else if ds > 0.5 * total {
                ds -= total;
            }
        }
        self.progress_raw += ds;
        self.progress = self.progress.max(self.progress_raw);
        self.last_s = s;
        self.hint = idx;

        let reference = self.traj.points[idx];
        let errs = error_state(
            &next,
            self.errs.as_ref(),
            &reference,
            cross,
            &self.cfg.vfg,
            self.cfg.dt,
        );

        let reward = total_reward(
            next.speed(),
            errs.e_y.abs(),
            errs.e_psi.to_degrees(),
            errs.e_beta.to_degrees(),
            &self.cfg.reward,
        );

        self.state = next;
        self.errs = Some(errs);
        self.prev_action = applied;
        self.steps += 1;

        self.terminal = terminal_check(
            &self.state,
            &self.track,
            &self.traj,
            self.cfg.arrived_threshold,
            self.progress,
        );
        let truncated = self.terminal == Terminal::Running && self.steps >= self.cfg.max_episode_steps;

        Ok(StepResult {
            obs: self.observe(&errs)?,
            reward,
            terminal: self.terminal,
            truncated,
            info: StepInfo {
                state: self.state,
                applied,
                raw,
                errors: errs,
                nearest_s: s,
                clamped,
            },
        })
    }

    fn resolve_action(&mut self, raw: [f64; 2]) -> (Action, bool) {
        if self.cfg.smoothing_enabled && self.cfg.smooth_on_raw {
            let clamped = raw.iter().any(|v| !(-1.0..=1.0).contains(v));
            let g = &self.cfg.smoothing;
            let blended = [
                g.k1_steer * raw[0].clamp(-1.0, 1.0) + g.k2_steer * self.prev_raw[0],
                g.k1_throttle * raw[1].clamp(-1.0, 1.0) + g.k2_throttle * self.prev_raw[1],
            ];
            self.prev_raw = blended;
            let (action, _) = control::map_raw((blended[0], blended[1]));
            (action, clamped)
        } else {
            let (mapped, clamped) = control::map_raw((raw[0], raw[1]));
            let action = if self.cfg.smoothing_enabled {
                control::smooth(mapped, self.prev_action, &self.cfg.smoothing)
            } else {
                mapped
            };
            (action, clamped)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{generate_track, rough_centerline_reference, scripted_expert_reference, TrackSpec};
    use crate::vehicle::VehiclePreset;

    fn straight_env() -> DriftEnv {
        let track = generate_track(&TrackSpec {
            seed: 42,
            n_corners: 0,
            corner_angle_range_deg: (40.0, 180.0),
            segment_length_range_m: (300.0, 300.0),
            half_width_m: 6.0,
        })
        .unwrap();
        let traj = rough_centerline_reference(&track, 20.0);
        DriftEnv::new(
            Arc::new(track),
            Arc::new(traj),
            VehicleParams::preset(VehiclePreset::Trainer),
            EnvConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn reset_produces_consistent_observation() {
        let mut env = straight_env();
        let obs = env.reset(0.0).unwrap();
        assert_eq!(obs.len(), 42);
        // on the line with matching heading: zero cross-track and heading error
        let errs = env.errors().unwrap();
        assert!(errs.e_y.abs() < 1e-9);
        assert!(errs.e_psi.abs() < 1e-9);
        assert_eq!(errs.e_y_dot, 0.0);
    }

    #[test]
    fn spawn_jitter_offsets_laterally() {
        let mut env = straight_env();
        env.reset(0.5).unwrap();
        assert!((env.errors().unwrap().e_y - 0.5).abs() < 1e-6);
        env.reset(-0.5).unwrap();
        assert!((env.errors().unwrap().e_y + 0.5).abs() < 1e-6);
    }

    #[test]
    fn full_throttle_straight_accumulates_reward() {
        let mut env = straight_env();
        env.reset(0.0).unwrap();
        let mut total = 0.0;
        for _ in 0..200 {
            let r = env.step([0.0, 1.0]).unwrap();
            total += r.reward;
            assert_eq!(r.terminal, Terminal::Running);
            assert!(r.info.errors.e_y.abs() < 0.01, "drifted off a straight");
        }
        assert!(total > 0.0);
        assert!(env.state().v_x > 10.0, "throttle should accelerate the car");
    }

    #[test]
    fn smoothing_limits_step_change() {
        let mut env = straight_env();
        env.reset(0.0).unwrap();
        let r = env.step([1.0, 1.0]).unwrap();
        // first command after neutral start: steer at most k1 * 0.8
        assert!((r.info.applied.steer - 0.08).abs() < 1e-12);
        // throttle blends toward 1.0 from the 0.6 start
        assert!((r.info.applied.throttle - 0.72).abs() < 1e-12);
    }

    #[test]
    fn wos_mode_applies_raw_mapping() {
        let mut env = straight_env();
        env.cfg.smoothing_enabled = false;
        env.reset(0.0).unwrap();
        let r = env.step([1.0, 1.0]).unwrap();
        assert_eq!(r.info.applied, Action { steer: 0.8, throttle: 1.0 });
    }

    #[test]
    fn veering_off_ends_episode() {
        let mut env = straight_env();
        env.reset(0.0).unwrap();
        let mut last = Terminal::Running;
        for _ in 0..2000 {
            let r = env.step([1.0, 1.0]).unwrap();
            last = r.terminal;
            if last != Terminal::Running {
                break;
            }
        }
        assert!(
            matches!(last, Terminal::Collision | Terminal::OffTrack),
            "hard steer should leave the band, got {last:?}"
        );
        assert!(env.step([0.0, 0.0]).is_err(), "stepping after terminal must fail");
    }

    #[test]
    fn arrival_on_expert_line() {
        // follow the expert reference with a simple proportional controller
        let track = generate_track(&TrackSpec {
            seed: 11,
            n_corners: 2,
            corner_angle_range_deg: (130.0, 170.0),
            segment_length_range_m: (60.0, 90.0),
            half_width_m: 6.0,
        })
        .unwrap();
        let params = VehicleParams::preset(VehiclePreset::Trainer);
        let traj = scripted_expert_reference(&track, &params);
        let mut env = DriftEnv::new(
            Arc::new(track),
            Arc::new(traj),
            params,
            EnvConfig { max_episode_steps: 6000, ..Default::default() },
        )
        .unwrap();
        env.reset(0.0).unwrap();
        let mut terminal = Terminal::Running;
        let mut abs_epsi_sum = 0.0;
        let mut n = 0usize;
        while terminal == Terminal::Running && env.steps() < 6000 {
            let errs = *env.errors().unwrap();
            // steer against the heading error with yaw damping, coast when
            // over the reference speed
            let steer = (-2.0 * errs.e_psi - 0.25 * env.state().yaw_rate).clamp(-1.0, 1.0);
            let throttle = if errs.e_vx > 0.0 { -1.0 } else { 1.0 };
            let r = env.step([steer, throttle]).unwrap();
            abs_epsi_sum += r.info.errors.e_psi.abs();
            n += 1;
            terminal = r.terminal;
            if r.truncated {
                break;
            }
        }
        assert_eq!(terminal, Terminal::Arrival, "P-controller should finish a gentle track");
        let mean_epsi_deg = (abs_epsi_sum / n as f64).to_degrees();
        assert!(mean_epsi_deg < 20.0, "mean |e_psi| {mean_epsi_deg} deg");
    }

    #[test]
    fn episode_is_deterministic() {
        let run = || {
            let mut env = straight_env();
            env.reset(0.25).unwrap();
            let mut sig = Vec::new();
            for i in 0..100 {
                let u = [0.3 * ((i as f64) * 0.1).sin(), 0.8];
                let r = env.step(u).unwrap();
                sig.push((r.info.state.x.to_bits(), r.info.state.y.to_bits(), r.reward.to_bits()));
            }
            sig
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clamp_diagnostics_counted() {
        let mut env = straight_env();
        env.reset(0.0).unwrap();
        env.step([1.7, 0.0]).unwrap();
        env.step([0.2, 0.0]).unwrap();
        assert_eq!(env.clamp_count, 1);
    }
}


//! Run configuration: one human-readable TOML file holds every tunable
//! constant. Unknown keys are rejected, ranges are validated before any
//! work starts, and the full resolved config lands in the run metadata of
//! every command so a run can be reproduced from its output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::SmoothingGains;
use crate::env::EnvConfig;
use crate::guidance::{ObsMode, ObsNorm, VfgParams};
use crate::reward::RewardParams;
use crate::sac::SacHyper;
use crate::vehicle::{VehicleParams, VehiclePreset};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub root_seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { root_seed: 42, out_dir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizationSection {
    /// Per-episode tire friction range during stage-2 training.
    pub friction_range: (f64, f64),
    /// Per-episode vehicle mass range [kg].
    pub mass_range: (f64, f64),
}

impl Default for RandomizationSection {
    fn default() -> Self {
        Self { friction_range: (3.0, 4.0), mass_range: (1700.0, 1900.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleSection {
    /// One of: trainer, light_coupe, high_moi_compact, heavy_awd_truck.
    pub preset: String,
    pub friction_override: Option<f64>,
    pub mass_override: Option<f64>,
    pub randomization: RandomizationSection,
}

impl Default for VehicleSection {
    fn default() -> Self {
        Self {
            preset: "trainer".into(),
            friction_override: None,
            mass_override: None,
            randomization: RandomizationSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub dt: f64,
    pub max_episode_steps: usize,
    pub spawn_speed: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { dt: 0.02, max_episode_steps: 3000, spawn_speed: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VfgSection {
    pub k: f64,
    pub psi_inf_deg: f64,
}

impl Default for VfgSection {
    fn default() -> Self {
        Self { k: 0.1, psi_inf_deg: 90.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub k1: f64,
    pub k2: f64,
    /// [cross-track, heading, slip] weights.
    pub weights: [f64; 3],
    pub v_min: f64,
    pub low_speed_factor: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self { k1: 0.5, k2: 0.1, weights: [40.0, 40.0, 20.0], v_min: 6.0, low_speed_factor: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingSection {
    pub enabled: bool,
    /// Per-channel weight on the new action: [steer, throttle].
    pub k1: [f64; 2],
    /// Per-channel weight on the previous action: [steer, throttle].
    pub k2: [f64; 2],
    /// Blend raw [-1,1] outputs before range mapping instead of after.
    pub on_raw: bool,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self { enabled: true, k1: [0.1, 0.3], k2: [0.9, 0.7], on_raw: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationSection {
    /// "full" (42 entries) or "ablated_slip" (30 entries).
    pub mode: String,
}

impl Default for ObservationSection {
    fn default() -> Self {
        Self { mode: "full".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacSection {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub polyak: f64,
    pub alpha: f64,
    pub buffer_capacity: usize,
    pub update_threshold: usize,
    /// 0 means uncapped (one update per environment step of the episode).
    pub updates_per_trigger_cap: usize,
    pub update_every_step: bool,
    pub reward_scale: f64,
}

impl Default for SacSection {
    fn default() -> Self {
        let h = SacHyper::default();
        Self {
            hidden: h.hidden,
            learning_rate: h.learning_rate,
            batch_size: h.batch_size,
            gamma: h.gamma,
            polyak: h.polyak,
            alpha: h.alpha,
            buffer_capacity: h.buffer_capacity,
            update_threshold: h.update_threshold,
            updates_per_trigger_cap: 0,
            update_every_step: h.update_every_step,
            reward_scale: h.reward_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub stage1_episodes: usize,
    pub stage2_episodes: usize,
    /// Deterministic evaluation rollout every this many episodes.
    pub eval_interval: usize,
    /// Checkpoint written every this many episodes (and at the end).
    pub checkpoint_interval: usize,
    pub tracks_dir: PathBuf,
    pub stage1_track: String,
    pub stage2_tracks: Vec<String>,
    /// Track used for the periodic evaluation rollouts.
    pub eval_track: String,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            stage1_episodes: 300,
            stage2_episodes: 600,
            eval_interval: 10,
            checkpoint_interval: 50,
            tracks_dir: PathBuf::from("tracks"),
            stage1_track: "track_a".into(),
            stage2_tracks: vec![
                "track_b".into(),
                "track_c".into(),
                "track_d".into(),
                "track_e".into(),
                "track_f".into(),
            ],
            eval_track: "track_a".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Seeded repetitions per evaluation variant.
    pub repetitions: usize,
    /// Lateral spawn jitter magnitude [m] distinguishing the repetitions.
    pub spawn_jitter: f64,
    pub track: String,
    /// Constant reference speed of the application-test mode [km/h].
    pub app_test_v_ref_kmh: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            repetitions: 4,
            spawn_jitter: 0.5,
            track: "track_g".into(),
            app_test_v_ref_kmh: 110.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSection {
    /// "scripted_expert", "rough_centerline" or "recorded_file".
    pub source: String,
    /// Constant speed of a rough centerline reference [km/h], when used as
    /// the main reference source.
    pub rough_v_kmh: f64,
    pub recorded_file: Option<PathBuf>,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self { source: "scripted_expert".into(), rough_v_kmh: 80.0, recorded_file: None }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub vehicle: VehicleSection,
    pub simulation: SimulationSection,
    pub vfg: VfgSection,
    pub reward: RewardSection,
    pub smoothing: SmoothingSection,
    pub observation: ObservationSection,
    pub sac: SacSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub reference: ReferenceSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.preset()?;
        if let Some(f) = self.vehicle.friction_override {
            if !(1.0..=6.0).contains(&f) {
                return Err(invalid(format!("friction override {f} outside [1, 6]")));
            }
        }
        if let Some(m) = self.vehicle.mass_override {
            if m <= 0.0 {
                return Err(invalid("mass override must be positive"));
            }
        }
        let (flo, fhi) = self.vehicle.randomization.friction_range;
        if !(1.0..=6.0).contains(&flo) || !(1.0..=6.0).contains(&fhi) || flo > fhi {
            return Err(invalid(format!("friction range [{flo}, {fhi}] outside [1, 6]")));
        }
        let (mlo, mhi) = self.vehicle.randomization.mass_range;
        if mlo <= 0.0 || mlo > mhi {
            return Err(invalid("mass range must be positive and ordered"));
        }
        if !(self.simulation.dt > 0.0 && self.simulation.dt < 1.0) {
            return Err(invalid("dt must lie in (0, 1)"));
        }
        if self.simulation.max_episode_steps == 0 {
            return Err(invalid("max_episode_steps must be positive"));
        }
        self.vfg_params()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.reward_params()
            .validate()
            .map_err(invalid)?;
        self.smoothing_gains().validate().map_err(invalid)?;
        self.obs_mode()?;
        if self.sac.hidden.is_empty() || self.sac.hidden.iter().any(|&w| w == 0) {
            return Err(invalid("sac.hidden must list positive layer widths"));
        }
        if self.sac.batch_size == 0 || self.sac.buffer_capacity < self.sac.batch_size {
            return Err(invalid("buffer capacity must be >= batch size > 0"));
        }
        if !(0.0..1.0).contains(&self.sac.gamma) {
            return Err(invalid("gamma must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.sac.polyak) {
            return Err(invalid("polyak must lie in [0, 1]"));
        }
        if self.sac.learning_rate <= 0.0 || self.sac.reward_scale <= 0.0 {
            return Err(invalid("learning rate and reward scale must be positive"));
        }
        if self.evaluation.repetitions == 0 {
            return Err(invalid("evaluation repetitions must be positive"));
        }
        if self.evaluation.app_test_v_ref_kmh <= 0.0 || self.reference.rough_v_kmh <= 0.0 {
            return Err(invalid("reference speeds must be positive"));
        }
        match self.reference.source.as_str() {
            "scripted_expert" | "rough_centerline" => {}
            "recorded_file" => {
                if self.reference.recorded_file.is_none() {
                    return Err(invalid("reference.source = recorded_file needs reference.recorded_file"));
                }
            }
            other => {
                return Err(invalid(format!(
                    "unknown reference source '{other}' (valid: scripted_expert, rough_centerline, recorded_file)"
                )))
            }
        }
        Ok(())
    }

    pub fn preset(&self) -> Result<VehiclePreset, ConfigError> {
        VehiclePreset::from_name(&self.vehicle.preset).ok_or_else(|| {
            invalid(format!(
                "unknown vehicle preset '{}' (valid: {})",
                self.vehicle.preset,
                VehiclePreset::ALL.map(|p| p.name()).join(", ")
            ))
        })
    }

    pub fn vehicle_params(&self) -> Result<VehicleParams, ConfigError> {
        let base = VehicleParams::preset(self.preset()?);
        Ok(base.with_overrides(self.vehicle.friction_override, self.vehicle.mass_override))
    }

    pub fn obs_mode(&self) -> Result<ObsMode, ConfigError> {
        match self.observation.mode.as_str() {
            "full" => Ok(ObsMode::Full),
            "ablated_slip" => Ok(ObsMode::AblatedSlip),
            other => Err(invalid(format!(
                "unknown observation mode '{other}' (valid: full, ablated_slip)"
            ))),
        }
    }

    pub fn vfg_params(&self) -> VfgParams {
        VfgParams { k: self.vfg.k, psi_inf: self.vfg.psi_inf_deg.to_radians() }
    }

    pub fn reward_params(&self) -> RewardParams {
        RewardParams {
            k1: self.reward.k1,
            k2: self.reward.k2,
            w_ey: self.reward.weights[0],
            w_epsi: self.reward.weights[1],
            w_ebeta: self.reward.weights[2],
            v_min: self.reward.v_min,
            low_speed_factor: self.reward.low_speed_factor,
        }
    }

    pub fn smoothing_gains(&self) -> SmoothingGains {
        SmoothingGains {
            k1_steer: self.smoothing.k1[0],
            k1_throttle: self.smoothing.k1[1],
            k2_steer: self.smoothing.k2[0],
            k2_throttle: self.smoothing.k2[1],
        }
    }

    pub fn sac_hyper(&self) -> SacHyper {
        SacHyper {
            hidden: self.sac.hidden.clone(),
            learning_rate: self.sac.learning_rate,
            batch_size: self.sac.batch_size,
            gamma: self.sac.gamma,
            polyak: self.sac.polyak,
            alpha: self.sac.alpha,
            buffer_capacity: self.sac.buffer_capacity,
            update_threshold: self.sac.update_threshold,
            updates_per_trigger_cap: match self.sac.updates_per_trigger_cap {
                0 => None,
                n => Some(n),
            },
            update_every_step: self.sac.update_every_step,
            reward_scale: self.sac.reward_scale,
        }
    }

    pub fn env_config(&self) -> Result<EnvConfig, ConfigError> {
        Ok(EnvConfig {
            dt: self.simulation.dt,
            max_episode_steps: self.simulation.max_episode_steps,
            spawn_speed: self.simulation.spawn_speed,
            obs_mode: self.obs_mode()?,
            app_test: false,
            vfg: self.vfg_params(),
            reward: self.reward_params(),
            smoothing_enabled: self.smoothing.enabled,
            smoothing: self.smoothing_gains(),
            smooth_on_raw: self.smoothing.on_raw,
            arrived_threshold: crate::guidance::ARRIVED_THRESHOLD,
        })
    }

    /// Run metadata: the resolved config plus the observation
    /// normalization table and the crate version.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "code_version": format!("driftrl {}", env!("CARGO_PKG_VERSION")),
            "config": self,
            "observation_normalization": ObsNorm::for_dt(self.simulation.dt),
        })
    }
}

//! The operations behind the command-line verbs: track generation,
//! two-stage training, variant evaluation, single rollouts and report
//! comparison. Every command writes a run-metadata file (resolved config,
//! seeds, code version, normalization table) into its output directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, RunConfig};
use crate::env::{DriftEnv, EnvConfig, EnvError};
use crate::eval::{
    aggregate, compare_table, compute_metrics, AggregateReport, EndKind, LogRow, MetricsReport,
    RolloutLog, MPS_TO_KMH,
};
use crate::guidance::ObsMode;
use crate::rng::stream_rng;
use crate::sac::{
    run_deterministic_rollout, train_stage, EpisodeRecord, EvalRecord, ReplayBuffer, SacAgent,
    TrackRef, TrainError, TrainOptions,
};
use crate::track::{
    generate_track, rough_centerline_reference, scripted_expert_reference, ReferenceTrajectory,
    Track, TrackError, TrackSpec,
};
use crate::vehicle::{VehicleParams, VehiclePreset};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Invalid(msg.into())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_run_meta(
    dir: &Path,
    cfg: &RunConfig,
    command: &str,
    extra: serde_json::Value,
) -> Result<(), PipelineError> {
    let meta = serde_json::json!({
        "command": command,
        "arguments": extra,
        "run": cfg.metadata(),
    });
    write_json(&dir.join("run_meta.json"), &meta)
}

// ---------------------------------------------------------------------------
// gen-tracks
// ---------------------------------------------------------------------------

pub const TRACK_SPEC_FILE_VERSION: u32 = 1;

/// One named entry of a track-specification file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTrackSpec {
    pub name: String,
    #[serde(flatten)]
    pub spec: TrackSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpecFile {
    pub version: u32,
    pub tracks: Vec<NamedTrackSpec>,
}

impl TrackSpecFile {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let file: TrackSpecFile =
            serde_json::from_str(&text).map_err(|e| invalid(format!("bad track spec file: {e}")))?;
        if file.version != TRACK_SPEC_FILE_VERSION {
            return Err(invalid(format!("unsupported track spec version {}", file.version)));
        }
        Ok(file)
    }
}

#[derive(Debug)]
pub struct GenTracksOutput {
    pub written: Vec<PathBuf>,
    pub failures: Vec<(String, String)>,
}

/// Generates every track in the spec file into `out_dir`. Generation
/// failures are reported per track; the remaining tracks still get built.
pub fn cmd_gen_tracks(spec_path: &Path, out_dir: &Path) -> Result<GenTracksOutput, PipelineError> {
    let file = TrackSpecFile::load(spec_path)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut failures = Vec::new();
    for entry in &file.tracks {
        match generate_track(&entry.spec) {
            Ok(mut track) => {
                track.name = entry.name.clone();
                let path = out_dir.join(format!("{}.json", entry.name));
                track.save(&path)?;
                written.push(path);
            }
            Err(e) => failures.push((entry.name.clone(), e.to_string())),
        }
    }
    Ok(GenTracksOutput { written, failures })
}

// ---------------------------------------------------------------------------
// shared loading helpers
// ---------------------------------------------------------------------------

pub fn load_track(tracks_dir: &Path, name: &str) -> Result<Track, PipelineError> {
    let path = tracks_dir.join(format!("{name}.json"));
    if !path.exists() {
        return Err(invalid(format!("track '{name}' not found at {}", path.display())));
    }
    Ok(Track::load(&path)?)
}

/// Builds the configured reference trajectory for a track.
pub fn build_reference(
    cfg: &RunConfig,
    track: &Track,
    params: &VehicleParams,
) -> Result<ReferenceTrajectory, PipelineError> {
    let traj = match cfg.reference.source.as_str() {
        "scripted_expert" => scripted_expert_reference(track, params),
        "rough_centerline" => {
            rough_centerline_reference(track, cfg.reference.rough_v_kmh / MPS_TO_KMH)
        }
        "recorded_file" => {
            let path = cfg.reference.recorded_file.as_ref().expect("validated");
            ReferenceTrajectory::load(path)?
        }
        other => return Err(invalid(format!("unknown reference source {other}"))),
    };
    traj.validate()?;
    Ok(traj)
}

fn track_ref(
    cfg: &RunConfig,
    name: &str,
    params: &VehicleParams,
) -> Result<TrackRef, PipelineError> {
    let track = load_track(&cfg.training.tracks_dir, name)?;
    let traj = build_reference(cfg, &track, params)?;
    Ok((Arc::new(track), Arc::new(traj)))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub stage: u32,
    pub resume: Option<PathBuf>,
    pub episodes_override: Option<usize>,
    pub dry_run: bool,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub episodes: Vec<EpisodeRecord>,
    pub evals: Vec<EvalRecord>,
}

fn episode_csv_header() -> &'static str {
    "episode,track,friction,mass,steps,return,avg_speed_mps,avg_abs_epsi_deg,terminal,updates,j_v,j_q1,j_q2,j_pi\n"
}

fn episode_csv_row(e: &EpisodeRecord) -> String {
    let losses = match &e.mean_losses {
        Some(l) => format!("{},{},{},{}", l.j_v, l.j_q1, l.j_q2, l.j_pi),
        None => ",,,".to_string(),
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}\n",
        e.episode,
        e.track,
        e.friction,
        e.mass,
        e.steps,
        e.ret,
        e.avg_speed,
        e.avg_abs_epsi_deg,
        e.end.name(),
        e.updates,
        losses
    )
}

fn eval_csv_header() -> &'static str {
    "after_episode,steps,return,avg_speed_mps,avg_abs_epsi_deg,terminal\n"
}

fn eval_csv_row(v: &EvalRecord) -> String {
    format!(
        "{},{},{},{},{},{}\n",
        v.after_episode, v.steps, v.ret, v.avg_speed, v.avg_abs_epsi_deg, v.end.name()
    )
}

/// Two-stage training entry point. Stage 1 starts from scratch on the
/// simple track; stage 2 resumes from a checkpoint and trains on the
/// harder track set with per-episode friction/mass randomization.
pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<TrainOutput, PipelineError> {
    cfg.validate()?;
    if !(args.stage == 1 || args.stage == 2) {
        return Err(invalid(format!("stage must be 1 or 2, got {}", args.stage)));
    }
    let params = cfg.vehicle_params()?;
    let obs_mode = cfg.obs_mode()?;
    let env_cfg = cfg.env_config()?;

    // resolve tracks up front so a dry run validates the whole config
    let (train_names, episodes_default): (Vec<String>, usize) = if args.stage == 1 {
        (vec![cfg.training.stage1_track.clone()], cfg.training.stage1_episodes)
    } else {
        (cfg.training.stage2_tracks.clone(), cfg.training.stage2_episodes)
    };
    let episodes = args.episodes_override.unwrap_or(episodes_default);
    let mut train_refs = Vec::new();
    for name in &train_names {
        train_refs.push(track_ref(cfg, name, &params)?);
    }
    let eval_ref = track_ref(cfg, &cfg.training.eval_track, &params)?;

    let resume_ckpt = match (&args.resume, args.stage) {
        (Some(path), _) => Some(Checkpoint::load(path)?),
        (None, 2) => {
            return Err(invalid(
                "stage 2 resumes from a stage-1 checkpoint; pass one with --resume",
            ))
        }
        (None, _) => None,
    };
    if let Some(ckpt) = &resume_ckpt {
        if ckpt.meta.obs_mode != obs_mode {
            return Err(invalid(format!(
                "checkpoint was trained with {} observation entries but the config asks for {}; refusing",
                ckpt.meta.obs_mode.dim(),
                obs_mode.dim()
            )));
        }
    }

    let out_dir = cfg.run.out_dir.clone();
    if args.dry_run {
        return Ok(TrainOutput {
            checkpoint: out_dir.join(format!("checkpoint_stage{}.json", args.stage)),
            episodes: Vec::new(),
            evals: Vec::new(),
        });
    }

    std::fs::create_dir_all(&out_dir)?;
    write_run_meta(
        &out_dir,
        cfg,
        "train",
        serde_json::json!({
            "stage": args.stage,
            "episodes": episodes,
            "resume": args.resume.as_ref().map(|p| p.display().to_string()),
        }),
    )?;

    let seed = cfg.run.root_seed;
    let mut agent = match &resume_ckpt {
        Some(ckpt) => SacAgent::from_checkpoint(ckpt, cfg.sac_hyper()),
        None => SacAgent::new(obs_mode.dim(), cfg.sac_hyper(), stream_rng(seed, "policy")),
    };
    let mut buffer = ReplayBuffer::new(
        cfg.sac.buffer_capacity,
        stream_rng(seed, &format!("buffer-stage{}", args.stage)),
    );
    if let Some(ckpt) = &resume_ckpt {
        buffer.restore_rng(&ckpt.buffer_rng);
    }

    let mut episode_rng = stream_rng(seed, &format!("episodes-stage{}", args.stage));
    let randomize = (args.stage == 2).then(|| {
        (
            cfg.vehicle.randomization.friction_range,
            cfg.vehicle.randomization.mass_range,
        )
    });

    let mut episode_csv = String::from(episode_csv_header());
    let mut eval_csv = String::from(eval_csv_header());
    let mut episodes_log: Vec<EpisodeRecord> = Vec::new();
    let mut evals_log: Vec<EvalRecord> = Vec::new();

    // stage 2 starts with an evaluation of the inherited weights so the
    // transfer is visible in the logs before any update runs
    if args.stage == 2 {
        let mut eval_env = DriftEnv::new(
            eval_ref.0.clone(),
            eval_ref.1.clone(),
            params.clone(),
            env_cfg.clone(),
        )?;
        let o = run_deterministic_rollout(&mut eval_env, &agent, 0.0, None)?;
        let rec = EvalRecord {
            after_episode: 0,
            steps: o.steps,
            ret: o.ret,
            avg_speed: o.avg_speed,
            avg_abs_epsi_deg: o.avg_abs_epsi_deg,
            end: o.end,
        };
        eval_csv.push_str(&eval_csv_row(&rec));
        evals_log.push(rec);
    }

    let ckpt_path = out_dir.join(format!("checkpoint_stage{}.json", args.stage));
    {
        let ckpt_every = cfg.training.checkpoint_interval.max(1);
        let mut env_steps = 0u64;
        let episode_csv = std::cell::RefCell::new(&mut episode_csv);
        let eval_csv = std::cell::RefCell::new(&mut eval_csv);
        let episodes_log = std::cell::RefCell::new(&mut episodes_log);
        let evals_log = std::cell::RefCell::new(&mut evals_log);
        train_stage(
            &mut agent,
            &mut buffer,
            &train_refs,
            &eval_ref,
            &params,
            &env_cfg,
            &TrainOptions {
                episodes,
                eval_interval: cfg.training.eval_interval,
                randomize,
            },
            &mut episode_rng,
            |e, agent, buffer| {
                env_steps += e.steps as u64;
                episode_csv.borrow_mut().push_str(&episode_csv_row(e));
                episodes_log.borrow_mut().push(e.clone());
                if e.episode % ckpt_every == 0 || e.episode == episodes {
                    let ckpt = agent.to_checkpoint(
                        obs_mode,
                        args.stage,
                        e.episode as u64,
                        env_steps,
                        buffer.rng_state(),
                    );
                    if let Err(err) = ckpt.save(&ckpt_path) {
                        eprintln!("warning: checkpoint save failed: {err}");
                    }
                }
            },
            |v| {
                eval_csv.borrow_mut().push_str(&eval_csv_row(v));
                evals_log.borrow_mut().push(v.clone());
            },
        )?;
    }
    if !ckpt_path.exists() {
        // zero-episode runs still leave a loadable checkpoint behind
        let ckpt = agent.to_checkpoint(obs_mode, args.stage, 0, 0, buffer.rng_state());
        ckpt.save(&ckpt_path)?;
    }

    std::fs::write(out_dir.join(format!("episodes_stage{}.csv", args.stage)), episode_csv)?;
    std::fs::write(out_dir.join(format!("evals_stage{}.csv", args.stage)), eval_csv)?;

    Ok(TrainOutput { checkpoint: ckpt_path, episodes: episodes_log, evals: evals_log })
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Evaluation variants. `Sac` is the plain trained controller; `SacWos`
/// disables the smoothing filter at deployment; `Sac30` drives with the
/// slip-ablated observation (needs a checkpoint trained that way);
/// `AppTest` follows a rough constant-speed centerline reference with the
/// slip/lateral-velocity channels zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Sac,
    SacWos,
    Sac30,
    AppTest,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sac, Variant::SacWos, Variant::Sac30, Variant::AppTest];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sac => "sac",
            Variant::SacWos => "sac-wos",
            Variant::Sac30 => "sac-30",
            Variant::AppTest => "app-test",
        }
    }

    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                invalid(format!(
                    "unknown variant '{s}' (valid: {})",
                    Self::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }

    fn required_obs_mode(self) -> ObsMode {
        match self {
            Variant::Sac30 => ObsMode::AblatedSlip,
            _ => ObsMode::Full,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub variants: Vec<Variant>,
    pub friction: Option<f64>,
    pub mass: Option<f64>,
    pub preset: Option<String>,
    pub track: Option<String>,
    pub single_thread: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub reports: Vec<MetricsReport>,
    pub aggregate: AggregateReport,
    pub ends: Vec<EndKind>,
}

#[derive(Debug)]
pub struct EvalOutput {
    pub results: Vec<VariantResult>,
    pub table_text: Option<String>,
}

/// Builds the environment for one variant repetition.
fn variant_env(
    cfg: &RunConfig,
    variant: Variant,
    track: &Arc<Track>,
    expert: &Arc<ReferenceTrajectory>,
    rough: &Arc<ReferenceTrajectory>,
    params: &VehicleParams,
) -> Result<DriftEnv, PipelineError> {
    let mut env_cfg: EnvConfig = cfg.env_config()?;
    env_cfg.obs_mode = variant.required_obs_mode();
    match variant {
        Variant::Sac | Variant::Sac30 => {}
        Variant::SacWos => env_cfg.smoothing_enabled = false,
        Variant::AppTest => {
            env_cfg.app_test = true;
        }
    }
    let traj = match variant {
        Variant::AppTest => rough.clone(),
        _ => expert.clone(),
    };
    Ok(DriftEnv::new(track.clone(), traj, params.clone(), env_cfg)?)
}

/// Evaluates a checkpoint under the requested variants: a fixed number of
/// seeded spawn-jitter repetitions each, aggregated, with a comparison
/// table when more than one variant ran.
pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<EvalOutput, PipelineError> {
    cfg.validate()?;
    if args.variants.is_empty() {
        return Err(invalid("no variants requested"));
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    for &v in &args.variants {
        if ckpt.meta.obs_mode != v.required_obs_mode() {
            return Err(invalid(format!(
                "variant {} needs a checkpoint with {} observation entries, but '{}' holds {}; refusing",
                v.name(),
                v.required_obs_mode().dim(),
                args.checkpoint.display(),
                ckpt.meta.obs_mode.dim()
            )));
        }
    }

    let preset = match &args.preset {
        Some(name) => VehiclePreset::from_name(name).ok_or_else(|| {
            invalid(format!(
                "unknown vehicle preset '{name}' (valid: {})",
                VehiclePreset::ALL.map(|p| p.name()).join(", ")
            ))
        })?,
        None => cfg.preset()?,
    };
    let params =
        VehicleParams::preset(preset).with_overrides(args.friction, args.mass);
    params.validate().map_err(|e| invalid(e.to_string()))?;

    let track_name = args.track.clone().unwrap_or_else(|| cfg.evaluation.track.clone());
    let track = Arc::new(load_track(&cfg.training.tracks_dir, &track_name)?);
    // expert reference for the preset under test (references are rebuilt
    // per vehicle so they stay feasible for its physics)
    let expert = Arc::new(scripted_expert_reference(&track, &VehicleParams::preset(preset)));
    let rough = Arc::new(rough_centerline_reference(
        &track,
        cfg.evaluation.app_test_v_ref_kmh / MPS_TO_KMH,
    ));

    let agent = SacAgent::from_checkpoint(&ckpt, cfg.sac_hyper());

    // seeded jitters shared across variants so repetitions are paired
    let mut jitter_rng = stream_rng(cfg.run.root_seed, "spawn-jitter");
    let jitters: Vec<f64> = (0..cfg.evaluation.repetitions)
        .map(|_| jitter_rng.gen_range(-cfg.evaluation.spawn_jitter..=cfg.evaluation.spawn_jitter))
        .collect();

    let out_dir = cfg.run.out_dir.join("eval");
    std::fs::create_dir_all(&out_dir)?;
    write_run_meta(
        &out_dir,
        cfg,
        "eval",
        serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "variants": args.variants.iter().map(|v| v.name()).collect::<Vec<_>>(),
            "preset": preset.name(),
            "friction": params.tire_friction,
            "mass": params.mass,
            "track": track_name,
            "jitters": jitters,
        }),
    )?;

    let mut results = Vec::new();
    for &variant in &args.variants {
        let run_rep = |(rep, jitter): (usize, f64)| -> Result<(MetricsReport, EndKind), PipelineError> {
            let mut env = variant_env(cfg, variant, &track, &expert, &rough, &params)?;
            let mut rows: Vec<LogRow> = Vec::new();
            let outcome = run_deterministic_rollout(&mut env, &agent, jitter, Some(&mut rows))?;
            let log = RolloutLog {
                dt: env.cfg.dt,
                track_name: track.name.clone(),
                end: outcome.end,
                config: serde_json::json!({"variant": variant.name(), "repetition": rep, "jitter": jitter}),
                rows,
            };
            let mut report = compute_metrics(&log, &track);
            if variant == Variant::AppTest {
                report.mask_reference_relative();
            }
            Ok((report, outcome.end))
        };

        let indexed: Vec<(usize, f64)> = jitters.iter().copied().enumerate().collect();
        let rep_results: Result<Vec<_>, PipelineError> = if args.single_thread {
            indexed.into_iter().map(run_rep).collect()
        } else {
            indexed.into_par_iter().map(run_rep).collect()
        };
        let rep_results = rep_results?;
        let reports: Vec<MetricsReport> = rep_results.iter().map(|(r, _)| r.clone()).collect();
        let ends: Vec<EndKind> = rep_results.iter().map(|(_, e)| *e).collect();
        let agg = aggregate(&reports);
        let result = VariantResult { variant, reports, aggregate: agg, ends };
        write_json(&out_dir.join(format!("{}_metrics.json", variant.name())), &result)?;
        results.push(result);
    }

    let table_text = if results.len() >= 2 {
        let rows: Vec<(String, AggregateReport)> = results
            .iter()
            .map(|r| (r.variant.name().to_uppercase(), r.aggregate.clone()))
            .collect();
        let (text, csv) = compare_table(&rows);
        std::fs::write(out_dir.join("compare.txt"), &text)?;
        std::fs::write(out_dir.join("compare.csv"), &csv)?;
        Some(text)
    } else {
        None
    };

    Ok(EvalOutput { results, table_text })
}

// ---------------------------------------------------------------------------
// rollout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RolloutArgs {
    pub checkpoint: PathBuf,
    pub track: Option<String>,
    pub variant: Variant,
    pub jitter: f64,
}

#[derive(Debug)]
pub struct RolloutOutput {
    pub log_path: PathBuf,
    pub plot_path: PathBuf,
    pub metrics: MetricsReport,
    pub end: EndKind,
}

/// One deterministic rollout, written as a full log plus plot-ready CSV
/// (time series of the tracking errors, slip angle, speed and steering).
pub fn cmd_rollout(cfg: &RunConfig, args: &RolloutArgs) -> Result<RolloutOutput, PipelineError> {
    cfg.validate()?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    if ckpt.meta.obs_mode != args.variant.required_obs_mode() {
        return Err(invalid(format!(
            "variant {} needs a checkpoint with {} observation entries; refusing",
            args.variant.name(),
            args.variant.required_obs_mode().dim()
        )));
    }
    let preset = cfg.preset()?;
    let params = cfg.vehicle_params()?;
    let track_name = args.track.clone().unwrap_or_else(|| cfg.evaluation.track.clone());
    let track = Arc::new(load_track(&cfg.training.tracks_dir, &track_name)?);
    let expert = Arc::new(scripted_expert_reference(&track, &VehicleParams::preset(preset)));
    let rough = Arc::new(rough_centerline_reference(
        &track,
        cfg.evaluation.app_test_v_ref_kmh / MPS_TO_KMH,
    ));
    let agent = SacAgent::from_checkpoint(&ckpt, cfg.sac_hyper());

    let mut env = variant_env(cfg, args.variant, &track, &expert, &rough, &params)?;
    let mut rows = Vec::new();
    let outcome = run_deterministic_rollout(&mut env, &agent, args.jitter, Some(&mut rows))?;

    let out_dir = cfg.run.out_dir.join("rollout");
    std::fs::create_dir_all(&out_dir)?;
    write_run_meta(
        &out_dir,
        cfg,
        "rollout",
        serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "variant": args.variant.name(),
            "track": track_name,
            "jitter": args.jitter,
            "deterministic_policy": true,
        }),
    )?;

    let log = RolloutLog {
        dt: env.cfg.dt,
        track_name: track.name.clone(),
        end: outcome.end,
        config: cfg.metadata(),
        rows,
    };
    let log_path = out_dir.join("rollout_log.json");
    log.save(&log_path)?;

    let mut plot = String::from("t,e_y,e_psi_deg,beta_deg,speed_kmh,steer\n");
    for r in &log.rows {
        plot.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.t,
            r.errors.e_y,
            r.errors.e_psi.to_degrees(),
            r.state.slip_angle().to_degrees(),
            r.state.speed() * MPS_TO_KMH,
            r.action.steer
        ));
    }
    let plot_path = out_dir.join("rollout_plot.csv");
    std::fs::write(&plot_path, plot)?;

    let mut metrics = compute_metrics(&log, &track);
    if args.variant == Variant::AppTest {
        metrics.mask_reference_relative();
    }
    write_json(&out_dir.join("rollout_metrics.json"), &metrics)?;

    Ok(RolloutOutput { log_path, plot_path, metrics, end: outcome.end })
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

/// Loads saved variant metrics files and renders the comparison table.
pub fn cmd_compare(labeled: &[(String, PathBuf)]) -> Result<(String, String), PipelineError> {
    if labeled.len() < 2 {
        return Err(invalid("compare needs at least two labeled reports"));
    }
    #[derive(Deserialize)]
    struct Saved {
        aggregate: AggregateReport,
    }
    let mut rows = Vec::new();
    for (label, path) in labeled {
        let text = std::fs::read_to_string(path)?;
        let saved: Saved = serde_json::from_str(&text)
            .map_err(|e| invalid(format!("bad metrics file {}: {e}", path.display())))?;
        rows.push((label.clone(), saved.aggregate));
    }
    Ok(compare_table(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("driftrl-pipeline-{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn spec_file(dir: &Path) -> PathBuf {
        let file = TrackSpecFile {
            version: TRACK_SPEC_FILE_VERSION,
            tracks: vec![
                NamedTrackSpec {
                    name: "track_a".into(),
                    spec: TrackSpec {
                        seed: 101,
                        n_corners: 2,
                        corner_angle_range_deg: (130.0, 170.0),
                        segment_length_range_m: (50.0, 70.0),
                        half_width_m: 6.0,
                    },
                },
                NamedTrackSpec {
                    name: "track_g".into(),
                    spec: TrackSpec {
                        seed: 107,
                        n_corners: 3,
                        corner_angle_range_deg: (80.0, 170.0),
                        segment_length_range_m: (50.0, 70.0),
                        half_width_m: 6.0,
                    },
                },
            ],
        };
        let path = dir.join("specs.json");
        let mut text = serde_json::to_string_pretty(&file).unwrap();
        text.push('\n');
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn gen_tracks_is_byte_deterministic() {
        let dir = temp_dir("gen");
        let spec = spec_file(&dir);
        let out1 = dir.join("out1");
        let out2 = dir.join("out2");
        let r1 = cmd_gen_tracks(&spec, &out1).unwrap();
        let r2 = cmd_gen_tracks(&spec, &out2).unwrap();
        assert!(r1.failures.is_empty());
        assert_eq!(r1.written.len(), 2);
        for (a, b) in r1.written.iter().zip(&r2.written) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
    }

    #[test]
    fn gen_tracks_reports_invalid_specs() {
        let dir = temp_dir("gen-bad");
        let file = TrackSpecFile {
            version: TRACK_SPEC_FILE_VERSION,
            tracks: vec![
                NamedTrackSpec {
                    name: "bad".into(),
                    spec: TrackSpec {
                        seed: 1,
                        n_corners: 1,
                        corner_angle_range_deg: (30.0, 100.0),
                        segment_length_range_m: (50.0, 70.0),
                        half_width_m: 6.0,
                    },
                },
                NamedTrackSpec {
                    name: "good".into(),
                    spec: TrackSpec {
                        seed: 2,
                        n_corners: 0,
                        corner_angle_range_deg: (40.0, 180.0),
                        segment_length_range_m: (50.0, 70.0),
                        half_width_m: 6.0,
                    },
                },
            ],
        };
        let path = dir.join("specs.json");
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let out = cmd_gen_tracks(&path, &dir.join("out")).unwrap();
        assert_eq!(out.written.len(), 1, "the valid track still gets built");
        assert_eq!(out.failures.len(), 1);
        assert!(out.failures[0].1.contains("[40, 180]"));
    }

    fn smoke_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.run.out_dir = dir.join("run");
        cfg.training.tracks_dir = dir.join("tracks");
        cfg.training.stage1_track = "track_a".into();
        cfg.training.stage2_tracks = vec!["track_a".into()];
        cfg.training.eval_track = "track_a".into();
        cfg.training.stage1_episodes = 2;
        cfg.training.stage2_episodes = 2;
        cfg.training.eval_interval = 2;
        cfg.evaluation.track = "track_g".into();
        cfg.evaluation.repetitions = 2;
        cfg.simulation.max_episode_steps = 60;
        cfg.sac.hidden = vec![16];
        cfg.sac.batch_size = 16;
        cfg.sac.buffer_capacity = 4096;
        cfg.sac.update_threshold = 40;
        cfg.sac.updates_per_trigger_cap = 2;
        cfg
    }

    fn setup_tracks(dir: &Path) {
        let spec = spec_file(dir);
        cmd_gen_tracks(&spec, &dir.join("tracks")).unwrap();
    }

    #[test]
    fn train_eval_rollout_end_to_end() {
        let dir = temp_dir("e2e");
        setup_tracks(&dir);
        let cfg = smoke_config(&dir);

        // dry run validates without writing
        let dry = cmd_train(&cfg, &TrainArgs { stage: 1, resume: None, episodes_override: None, dry_run: true }).unwrap();
        assert!(dry.episodes.is_empty());
        assert!(!cfg.run.out_dir.join("run_meta.json").exists());

        let out = cmd_train(&cfg, &TrainArgs { stage: 1, resume: None, episodes_override: None, dry_run: false }).unwrap();
        assert_eq!(out.episodes.len(), 2);
        assert!(out.checkpoint.exists());
        assert!(cfg.run.out_dir.join("run_meta.json").exists());
        assert!(cfg.run.out_dir.join("episodes_stage1.csv").exists());

        // stage 2 requires a resume checkpoint
        assert!(cmd_train(&cfg, &TrainArgs { stage: 2, resume: None, episodes_override: None, dry_run: false }).is_err());
        let out2 = cmd_train(
            &cfg,
            &TrainArgs { stage: 2, resume: Some(out.checkpoint.clone()), episodes_override: Some(1), dry_run: false },
        )
        .unwrap();
        // stage 2 logs an initial evaluation before any update
        assert_eq!(out2.evals.first().map(|e| e.after_episode), Some(0));

        // evaluation across variants
        let eval = cmd_eval(
            &cfg,
            &EvalArgs {
                checkpoint: out.checkpoint.clone(),
                variants: vec![Variant::Sac, Variant::SacWos, Variant::AppTest],
                single_thread: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(eval.results.len(), 3);
        let table = eval.table_text.unwrap();
        assert!(table.contains("SAC-WOS"));
        // app-test masks reference-relative errors
        let app = eval.results.iter().find(|r| r.variant == Variant::AppTest).unwrap();
        assert_eq!(app.aggregate.mean.cte_mean, None);
        assert!(cfg.run.out_dir.join("eval/compare.csv").exists());

        // rollout determinism: identical bytes for the same seed
        let r1 = cmd_rollout(&cfg, &RolloutArgs { checkpoint: out.checkpoint.clone(), track: None, variant: Variant::Sac, jitter: 0.2 }).unwrap();
        let bytes1 = std::fs::read(&r1.plot_path).unwrap();
        let r2 = cmd_rollout(&cfg, &RolloutArgs { checkpoint: out.checkpoint.clone(), track: None, variant: Variant::Sac, jitter: 0.2 }).unwrap();
        let bytes2 = std::fs::read(&r2.plot_path).unwrap();
        assert_eq!(bytes1, bytes2);

        // pipeline consistency: the saved log replays to the same metrics
        let log = RolloutLog::load(&r1.log_path).unwrap();
        let track = load_track(&cfg.training.tracks_dir, &cfg.evaluation.track).unwrap();
        let replayed = compute_metrics(&log, &track);
        assert_eq!(replayed.cte_mean, r1.metrics.cte_mean);
        assert_eq!(replayed.smos, r1.metrics.smos);

        // compare command over saved metrics files
        let table = cmd_compare(&[
            ("SAC".into(), cfg.run.out_dir.join("eval/sac_metrics.json")),
            ("SAC-WOS".into(), cfg.run.out_dir.join("eval/sac-wos_metrics.json")),
        ])
        .unwrap();
        assert!(table.0.contains("SAC"));
    }

    #[test]
    fn obs_mode_conflicts_refused() {
        let dir = temp_dir("conflict");
        setup_tracks(&dir);
        let cfg = smoke_config(&dir);
        let out = cmd_train(&cfg, &TrainArgs { stage: 1, resume: None, episodes_override: Some(1), dry_run: false }).unwrap();

        // full checkpoint into an ablated config: refused
        let mut cfg30 = cfg.clone();
        cfg30.observation.mode = "ablated_slip".into();
        let err = cmd_train(
            &cfg30,
            &TrainArgs { stage: 2, resume: Some(out.checkpoint.clone()), episodes_override: Some(1), dry_run: false },
        )
        .unwrap_err();
        assert!(err.to_string().contains("refusing"), "{err}");

        // full checkpoint under the sac-30 variant: refused
        let err = cmd_eval(
            &cfg,
            &EvalArgs {
                checkpoint: out.checkpoint,
                variants: vec![Variant::Sac30],
                single_thread: true,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("refusing"));
    }

    #[test]
    fn unknown_variant_lists_valid_names() {
        let err = Variant::parse("sac-99").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sac-wos") && msg.contains("app-test"), "{msg}");
    }

    #[test]
    fn corrupt_checkpoint_refused_on_train() {
        let dir = temp_dir("corrupt");
        setup_tracks(&dir);
        let cfg = smoke_config(&dir);
        let out = cmd_train(&cfg, &TrainArgs { stage: 1, resume: None, episodes_override: Some(1), dry_run: false }).unwrap();
        let text = std::fs::read_to_string(&out.checkpoint).unwrap();
        std::fs::write(&out.checkpoint, text.replacen("\"stage\":1", "\"stage\":2", 1)).unwrap();
        let err = cmd_train(
            &cfg,
            &TrainArgs { stage: 2, resume: Some(out.checkpoint), episodes_override: Some(1), dry_run: false },
        )
        .unwrap_err();
        assert!(err.to_string().contains("integrity"), "{err}");
    }
}

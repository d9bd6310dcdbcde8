//! Rollout metrics and comparison tables.
//!
//! Whole-track and corner-segmented: mean cross-track error, mean heading
//! error, max/average velocity, lap time, steering smoothness (mean rolling
//! standard deviation of the steering command) and maximum slip angle.

use serde::{Deserialize, Serialize};

use crate::control::Action;
use crate::guidance::{ErrorState, Terminal};
use crate::track::Track;
use crate::vehicle::VehicleState;

/// Conversion for reported velocities.
pub const MPS_TO_KMH: f64 = 3.6;
/// Rolling window of the smoothness metric, in control steps (1 s at 50 Hz).
pub const SMOS_WINDOW: usize = 50;

/// One control step of a recorded rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub state: VehicleState,
    pub action: Action,
    pub errors: ErrorState,
    pub reward: f64,
    pub nearest_s: f64,
}

/// How a rollout ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndKind {
    Arrival,
    Collision,
    OffTrack,
    Timeout,
}

impl EndKind {
    pub fn from_terminal(t: Terminal, truncated: bool) -> Self {
        match t {
            Terminal::Arrival => EndKind::Arrival,
            Terminal::Collision => EndKind::Collision,
            Terminal::OffTrack => EndKind::OffTrack,
            Terminal::Running => {
                debug_assert!(truncated);
                EndKind::Timeout
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EndKind::Arrival => "arrival",
            EndKind::Collision => "collision",
            EndKind::OffTrack => "off_track",
            EndKind::Timeout => "timeout",
        }
    }
}

/// A complete recorded rollout at the control rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub dt: f64,
    pub track_name: String,
    pub end: EndKind,
    pub config: serde_json::Value,
    pub rows: Vec<LogRow>,
}

pub const ROLLOUT_LOG_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RolloutLogFile {
    version: u32,
    #[serde(flatten)]
    log: RolloutLog,
}

impl RolloutLog {
    pub fn save(&self, path: &std::path::Path) -> Result<(), std::io::Error> {
        let file = RolloutLogFile { version: ROLLOUT_LOG_VERSION, log: self.clone() };
        let mut text = serde_json::to_string(&file).expect("log serializes");
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let file: RolloutLogFile = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        if file.version != ROLLOUT_LOG_VERSION {
            return Err(format!("unsupported rollout log version {}", file.version));
        }
        Ok(file.log)
    }
}

/// The Table-style metric row. Velocities in km/h, errors in meters and
/// degrees. `None` renders as an em-dash: lap time is absent without an
/// arrival, corner columns without corner samples, and the
/// reference-relative errors are masked in application-test reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cte_mean: Option<f64>,
    pub hae_mean: Option<f64>,
    pub max_vel: f64,
    pub avg_vel: f64,
    pub lap_time: Option<f64>,
    pub smos: f64,
    pub slip_max: f64,
    pub corner_cte: Option<f64>,
    pub corner_hae: Option<f64>,
    pub corner_avg_vel: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// Blanks the reference-relative error columns (rough-reference mode
    /// reports, where expert-relative errors are not meaningful).
    pub fn mask_reference_relative(&mut self) {
        self.cte_mean = None;
        self.hae_mean = None;
        self.corner_cte = None;
        self.corner_hae = None;
    }

    /// The ten metric values in fixed table order.
    pub fn columns(&self) -> [Option<f64>; 10] {
        [
            self.cte_mean,
            self.hae_mean,
            Some(self.max_vel),
            Some(self.avg_vel),
            self.lap_time,
            Some(self.smos),
            self.corner_cte,
            self.corner_hae,
            self.corner_avg_vel,
            Some(self.slip_max),
        ]
    }
}

/// Fixed column metadata: (header, unit, larger-is-better).
pub const METRIC_COLUMNS: [(&str, &str, bool); 10] = [
    ("C.T.E.", "m", false),
    ("H.A.E.", "deg", false),
    ("MAX-VEL", "km/h", true),
    ("AVG-VEL", "km/h", true),
    ("L.T.", "s", false),
    ("SMOS", "", false),
    ("C.T.E.(cor)", "m", false),
    ("H.A.E.(cor)", "deg", false),
    ("AVG-VEL(cor)", "km/h", true),
    ("SLIP", "deg", true),
];

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Mean of the rolling population standard deviation of the steering
/// command. Logs shorter than the window fall back to one full-log window.
pub fn rolling_steering_std(steer: &[f64], window: usize) -> (f64, bool) {
    if steer.is_empty() {
        return (0.0, true);
    }
    if steer.len() < window {
        return (pop_std(steer), true);
    }
    let n_windows = steer.len() - window + 1;
    let total: f64 = (0..n_windows).map(|i| pop_std(&steer[i..i + window])).sum();
    (total / n_windows as f64, false)
}

/// Computes the metric row of one rollout.
pub fn compute_metrics(log: &RolloutLog, track: &Track) -> MetricsReport {
    assert!(!log.rows.is_empty(), "metrics need a non-empty log");
    let mut warnings = Vec::new();

    let speeds: Vec<f64> = log.rows.iter().map(|r| r.state.speed() * MPS_TO_KMH).collect();
    let ctes: Vec<f64> = log.rows.iter().map(|r| r.errors.e_y.abs()).collect();
    let haes: Vec<f64> = log.rows.iter().map(|r| r.errors.e_psi.abs().to_degrees()).collect();
    let steer: Vec<f64> = log.rows.iter().map(|r| r.action.steer).collect();
    let slip_max = log
        .rows
        .iter()
        .map(|r| r.state.slip_angle().abs().to_degrees())
        .fold(0.0, f64::max);

    let (smos, truncated) = rolling_steering_std(&steer, SMOS_WINDOW);
    if truncated {
        warnings.push(format!(
            "log shorter than the {SMOS_WINDOW}-step rolling window; SMOS over the full log"
        ));
    }

    let corner_rows: Vec<&LogRow> = log
        .rows
        .iter()
        .filter(|r| track.corner_mask(r.nearest_s))
        .collect();
    let (corner_cte, corner_hae, corner_avg_vel) = if corner_rows.is_empty() {
        warnings.push("no corner samples in this rollout".into());
        (None, None, None)
    } else {
        (
            Some(mean(&corner_rows.iter().map(|r| r.errors.e_y.abs()).collect::<Vec<_>>())),
            Some(mean(
                &corner_rows
                    .iter()
                    .map(|r| r.errors.e_psi.abs().to_degrees())
                    .collect::<Vec<_>>(),
            )),
            Some(mean(
                &corner_rows
                    .iter()
                    .map(|r| r.state.speed() * MPS_TO_KMH)
                    .collect::<Vec<_>>(),
            )),
        )
    };

    MetricsReport {
        cte_mean: Some(mean(&ctes)),
        hae_mean: Some(mean(&haes)),
        max_vel: speeds.iter().copied().fold(0.0, f64::max),
        avg_vel: mean(&speeds),
        lap_time: match log.end {
            EndKind::Arrival => Some(log.rows.last().unwrap().t),
            _ => None,
        },
        smos,
        slip_max,
        corner_cte,
        corner_hae,
        corner_avg_vel,
        warnings,
    }
}

/// Elementwise mean and population standard deviation over repetitions.
/// Optional columns aggregate over the repetitions where they are present;
/// `lap_count` says how many of the runs actually arrived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n: usize,
    pub lap_count: usize,
    pub mean: MetricsReport,
    pub std: MetricsReport,
}

pub fn aggregate(reports: &[MetricsReport]) -> AggregateReport {
    assert!(!reports.is_empty(), "aggregate needs at least one report");
    let n = reports.len();

    let agg_opt = |get: &dyn Fn(&MetricsReport) -> Option<f64>| -> (Option<f64>, Option<f64>) {
        let xs: Vec<f64> = reports.iter().filter_map(get).collect();
        if xs.is_empty() {
            (None, None)
        } else {
            (Some(mean(&xs)), Some(pop_std(&xs)))
        }
    };
    let agg = |get: &dyn Fn(&MetricsReport) -> f64| -> (f64, f64) {
        let xs: Vec<f64> = reports.iter().map(get).collect();
        (mean(&xs), pop_std(&xs))
    };

    let (cte_m, cte_s) = agg_opt(&|r| r.cte_mean);
    let (hae_m, hae_s) = agg_opt(&|r| r.hae_mean);
    let (max_m, max_s) = agg(&|r| r.max_vel);
    let (avg_m, avg_s) = agg(&|r| r.avg_vel);
    let (lt_m, lt_s) = agg_opt(&|r| r.lap_time);
    let (smos_m, smos_s) = agg(&|r| r.smos);
    let (slip_m, slip_s) = agg(&|r| r.slip_max);
    let (ccte_m, ccte_s) = agg_opt(&|r| r.corner_cte);
    let (chae_m, chae_s) = agg_opt(&|r| r.corner_hae);
    let (cav_m, cav_s) = agg_opt(&|r| r.corner_avg_vel);

    let lap_count = reports.iter().filter(|r| r.lap_time.is_some()).count();
    AggregateReport {
        n,
        lap_count,
        mean: MetricsReport {
            cte_mean: cte_m,
            hae_mean: hae_m,
            max_vel: max_m,
            avg_vel: avg_m,
            lap_time: lt_m,
            smos: smos_m,
            slip_max: slip_m,
            corner_cte: ccte_m,
            corner_hae: chae_m,
            corner_avg_vel: cav_m,
            warnings: Vec::new(),
        },
        std: MetricsReport {
            cte_mean: cte_s,
            hae_mean: hae_s,
            max_vel: max_s,
            avg_vel: avg_s,
            lap_time: lt_s,
            smos: smos_s,
            slip_max: slip_s,
            corner_cte: ccte_s,
            corner_hae: chae_s,
            corner_avg_vel: cav_s,
            warnings: Vec::new(),
        },
    }
}

/// Renders labeled aggregate reports as an aligned text table and a CSV,
/// columns in the fixed order, best value per column flagged (`*` in text),
/// ties flagged on every winner, absent values as an em-dash.
pub fn compare_table(rows: &[(String, AggregateReport)]) -> (String, String) {
    assert!(rows.len() >= 2, "comparison needs at least two labeled runs");

    // best per column
    let mut best: [Option<f64>; 10] = [None; 10];
    for (_, agg) in rows {
        for (c, v) in agg.mean.columns().iter().enumerate() {
            if let Some(v) = v {
                let better = match best[c] {
                    None => true,
                    Some(b) => {
                        if METRIC_COLUMNS[c].2 {
                            *v > b
                        } else {
                            *v < b
                        }
                    }
                };
                if better {
                    best[c] = Some(*v);
                }
            }
        }
    }

    let fmt = |v: Option<f64>, c: usize| -> String {
        match v {
            None => "—".to_string(),
            Some(v) => {
                let flag = match best[c] {
                    Some(b) if v == b => "*",
                    _ => "",
                };
                format!("{v:.3}{flag}")
            }
        }
    };

    let mut text = String::new();
    text.push_str(&format!("{:<14}", "method"));
    for (name, unit, _) in METRIC_COLUMNS {
        let h = if unit.is_empty() { name.to_string() } else { format!("{name} ({unit})") };
        text.push_str(&format!("{h:>16}"));
    }
    text.push('\n');
    for (label, agg) in rows {
        text.push_str(&format!("{label:<14}"));
        for (c, v) in agg.mean.columns().iter().enumerate() {
            text.push_str(&format!("{:>16}", fmt(*v, c)));
        }
        text.push('\n');
    }

    let mut csv = String::from("method");
    for (name, _, _) in METRIC_COLUMNS {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for (label, agg) in rows {
        csv.push_str(label);
        for v in agg.mean.columns() {
            csv.push(',');
            match v {
                Some(v) => csv.push_str(&format!("{v:.6}")),
                None => csv.push('—'),
            }
        }
        csv.push('\n');
    }

    (text, csv)
}

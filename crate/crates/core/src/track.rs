//! Tracks and reference trajectories.
//!
//! A track is a piecewise line-arc centerline sampled at ~1 m arc-length
//! spacing, plus a drivable half-width and annotated corner segments. The
//! corner `angle_deg` is the interior angle between the adjoining straights:
//! 180 deg is no turn at all, 40 deg is close to a hairpin; the geometric
//! turn of the arc is `180 - angle_deg`.
//!
//! Reference trajectories come from three sources: a scripted expert that
//! plays the role of the human drift driver, a rough centerline reference
//! with zero slip angles and constant speed, and recorded files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math::{angle_diff, dist, wrap_angle};
use crate::vehicle::{VehicleParams, GRAVITY};

/// Nominal arc-length spacing between centerline points [m].
pub const CENTERLINE_SPACING: f64 = 1.0;

/// Minimum number of points a trajectory must have for the lookahead
/// window to be satisfiable.
pub const MIN_TRAJECTORY_POINTS: usize = 11;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("invalid track spec: {0}")]
    InvalidSpec(String),
    #[error("could not generate a non-self-intersecting track after {0} attempts; pick a new seed")]
    GenerationFailed(usize),
    #[error("invalid track data: {0}")]
    InvalidTrack(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad track file: {0}")]
    Format(#[from] serde_json::Error),
}

/// One annotated corner: the arc occupies `[start_arc, end_arc]` along the
/// centerline and `angle_deg` is the interior corner angle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerSegment {
    pub start_arc: f64,
    pub end_arc: f64,
    pub angle_deg: f64,
}

/// Generation request for a procedural track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub seed: u64,
    pub n_corners: usize,
    /// Interior corner angle range in degrees, within [40, 180].
    pub corner_angle_range_deg: (f64, f64),
    /// Straight segment length range [m].
    pub segment_length_range_m: (f64, f64),
    pub half_width_m: f64,
}

impl TrackSpec {
    pub fn validate(&self) -> Result<(), TrackError> {
        let (lo, hi) = self.corner_angle_range_deg;
        if !(40.0..=180.0).contains(&lo) || !(40.0..=180.0).contains(&hi) || lo > hi {
            return Err(TrackError::InvalidSpec(format!(
                "corner angles must lie within [40, 180] degrees, got [{lo}, {hi}]"
            )));
        }
        let (slo, shi) = self.segment_length_range_m;
        if !(slo > 0.0 && shi >= slo) {
            return Err(TrackError::InvalidSpec(format!(
                "segment length range must be positive, got [{slo}, {shi}]"
            )));
        }
        if self.half_width_m <= 0.0 {
            return Err(TrackError::InvalidSpec("half width must be positive".into()));
        }
        Ok(())
    }
}

/// An immutable track: centerline samples, drivable band and corner annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub name: String,
    pub half_width: f64,
    pub is_loop: bool,
    pub corner_segments: Vec<CornerSegment>,
    centerline: Vec<[f64; 2]>,
    cum_s: Vec<f64>,
}

/// On-disk representation (versioned JSON).
#[derive(Serialize, Deserialize)]
struct TrackFile {
    version: u32,
    name: String,
    half_width: f64,
    is_loop: bool,
    corner_segments: Vec<CornerSegment>,
    centerline: Vec<[f64; 2]>,
}

pub const TRACK_FILE_VERSION: u32 = 1;

impl Track {
    pub fn from_centerline(
        name: impl Into<String>,
        centerline: Vec<[f64; 2]>,
        half_width: f64,
        is_loop: bool,
        corner_segments: Vec<CornerSegment>,
    ) -> Result<Self, TrackError> {
        if centerline.len() < 2 {
            return Err(TrackError::InvalidTrack("centerline needs >= 2 points".into()));
        }
        let mut cum_s = Vec::with_capacity(centerline.len());
        cum_s.push(0.0);
        for w in centerline.windows(2) {
            let d = dist((w[0][0], w[0][1]), (w[1][0], w[1][1]));
            if d <= 0.0 || d > 2.0 * CENTERLINE_SPACING {
                return Err(TrackError::InvalidTrack(format!(
                    "consecutive centerline points must be within 2x nominal spacing, got {d}"
                )));
            }
            cum_s.push(cum_s.last().unwrap() + d);
        }
        let total = *cum_s.last().unwrap();
        for c in &corner_segments {
            if !(c.start_arc >= 0.0 && c.end_arc <= total + 1e-6 && c.start_arc < c.end_arc) {
                return Err(TrackError::InvalidTrack(format!(
                    "corner segment [{}, {}] outside [0, {total}]",
                    c.start_arc, c.end_arc
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            half_width,
            is_loop,
            corner_segments,
            centerline,
            cum_s,
        })
    }

    pub fn centerline(&self) -> &[[f64; 2]] {
        &self.centerline
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.centerline[i][0], self.centerline[i][1])
    }

    pub fn len(&self) -> usize {
        self.centerline.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centerline.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        *self.cum_s.last().unwrap()
    }

    pub fn arc_at(&self, i: usize) -> f64 {
        self.cum_s[i]
    }

    /// Tangent heading of the centerline at point `i`, from central
    /// differences (wrapping on loops, one-sided at the ends otherwise).
    pub fn tangent_heading(&self, i: usize) -> f64 {
        let n = self.centerline.len();
        let (a, b) = if self.is_loop {
            ((i + n - 1) % n, (i + 1) % n)
        } else {
            (i.saturating_sub(1), (i + 1).min(n - 1))
        };
        let (ax, ay) = self.point(a);
        let (bx, by) = self.point(b);
        (by - ay).atan2(bx - ax)
    }

    /// True iff `s` falls inside any annotated corner segment
    /// (closed-left convention: the start boundary is inside).
    pub fn corner_mask(&self, s: f64) -> bool {
        self.corner_segments
            .iter()
            .any(|c| s >= c.start_arc && s < c.end_arc)
    }

    /// Shortest distance from `pos` to the centerline polyline.
    pub fn distance_to_centerline(&self, pos: (f64, f64)) -> f64 {
        let mut best = f64::INFINITY;
        let n = self.centerline.len();
        let segs = if self.is_loop { n } else { n - 1 };
        for i in 0..segs {
            let a = self.point(i);
            let b = self.point((i + 1) % n);
            best = best.min(point_segment_distance(pos, a, b));
        }
        best
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), TrackError> {
        let file = TrackFile {
            version: TRACK_FILE_VERSION,
            name: self.name.clone(),
            half_width: self.half_width,
            is_loop: self.is_loop,
            corner_segments: self.corner_segments.clone(),
            centerline: self.centerline.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TrackError> {
        let text = std::fs::read_to_string(path)?;
        let file: TrackFile = serde_json::from_str(&text)?;
        if file.version != TRACK_FILE_VERSION {
            return Err(TrackError::InvalidTrack(format!(
                "unsupported track file version {}",
                file.version
            )));
        }
        Self::from_centerline(
            file.name,
            file.centerline,
            file.half_width,
            file.is_loop,
            file.corner_segments,
        )
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = abx * abx + aby * aby;
    if len2 <= f64::EPSILON {
        return dist(p, a);
    }
    let t = (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / len2).clamp(0.0, 1.0);
    dist(p, (a.0 + t * abx, a.1 + t * aby))
}

// ---------------------------------------------------------------------------
// Procedural generation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum Piece {
    Straight { len: f64 },
    Arc { radius: f64, turn: f64 },
}

impl Piece {
    fn arc_len(&self) -> f64 {
        match *self {
            Piece::Straight { len } => len,
            Piece::Arc { radius, turn } => radius * turn.abs(),
        }
    }
}

const GENERATION_ATTEMPTS: usize = 50;
const MIN_CORNER_RADIUS: f64 = 12.0;
const MAX_CORNER_RADIUS: f64 = 28.0;

/// Generates a non-self-intersecting piecewise line-arc track.
/// Pure function of the spec: the same spec always yields the same track.
pub fn generate_track(spec: &TrackSpec) -> Result<Track, TrackError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..GENERATION_ATTEMPTS {
        let plan = draw_plan(spec, &mut rng);
        if let Some(track) = realize(spec, &plan) {
            return Ok(track);
        }
    }
    Err(TrackError::GenerationFailed(GENERATION_ATTEMPTS))
}

/// (pieces, interior angle per corner)
fn draw_plan(spec: &TrackSpec, rng: &mut ChaCha8Rng) -> (Vec<Piece>, Vec<f64>) {
    let (alo, ahi) = spec.corner_angle_range_deg;
    let (slo, shi) = spec.segment_length_range_m;
    let mut pieces = Vec::new();
    let mut angles = Vec::new();
    let mut side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    pieces.push(Piece::Straight { len: rng.gen_range(slo..=shi) });
    for _ in 0..spec.n_corners {
        let angle: f64 = rng.gen_range(alo..=ahi);
        // sharper corners get tighter radii so that the curvature-limited
        // speed actually drops with the corner angle
        let sharp = (180.0 - angle) / 140.0;
        let radius = (MAX_CORNER_RADIUS - sharp * (MAX_CORNER_RADIUS - MIN_CORNER_RADIUS))
            * rng.gen_range(0.9..=1.1);
        let turn = (180.0 - angle).to_radians() * side;
        // alternate preferred side with some randomness to keep the
        // track from spiraling into itself
        side = if rng.gen::<f64>() < 0.7 { -side } else { side };
        pieces.push(Piece::Arc { radius, turn });
        angles.push(angle);
        pieces.push(Piece::Straight { len: rng.gen_range(slo..=shi) });
    }
    (pieces, angles)
}

fn realize(spec: &TrackSpec, (pieces, angles): &(Vec<Piece>, Vec<f64>)) -> Option<Track> {
    let total: f64 = pieces.iter().map(Piece::arc_len).sum();
    let n = (total / CENTERLINE_SPACING).floor() as usize + 1;
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n + 1);
    let mut analytic_s: Vec<f64> = Vec::with_capacity(n + 1);
    for k in 0..n {
        let s = k as f64 * CENTERLINE_SPACING;
        pts.push(eval_path(pieces, s));
        analytic_s.push(s);
    }
    if total - analytic_s.last().unwrap() > 0.2 {
        pts.push(eval_path(pieces, total));
        analytic_s.push(total);
    }

    // reject tracks whose bands come back onto themselves
    let clearance = 2.2 * spec.half_width_m;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            if analytic_s[j] - analytic_s[i] > 20.0 {
                let d = dist((pts[i][0], pts[i][1]), (pts[j][0], pts[j][1]));
                if d < clearance {
                    return None;
                }
            }
        }
    }

    let track = Track::from_centerline("", pts, spec.half_width_m, false, Vec::new()).ok()?;

    // map the analytic arc ranges of each corner onto the chord-based
    // arc-length coordinates of the sampled centerline
    let mut corners = Vec::new();
    let mut s_cursor = 0.0;
    let mut angle_iter = angles.iter();
    for piece in pieces {
        let len = piece.arc_len();
        if let Piece::Arc { .. } = piece {
            let angle = *angle_iter.next().unwrap();
            let (a0, a1) = (s_cursor, s_cursor + len);
            let first = analytic_s.iter().position(|&s| s >= a0 - 1e-9)?;
            let last = analytic_s.iter().rposition(|&s| s <= a1 + 1e-9)?;
            if last > first {
                corners.push(CornerSegment {
                    start_arc: track.arc_at(first),
                    end_arc: track.arc_at(last),
                    angle_deg: angle,
                });
            }
        }
        s_cursor += len;
    }

    Track::from_centerline(
        "",
        track.centerline.clone(),
        spec.half_width_m,
        false,
        corners,
    )
    .ok()
}

/// Position on the analytic path at arc length `s`.
fn eval_path(pieces: &[Piece], s: f64) -> [f64; 2] {
    let mut pos = (0.0f64, 0.0f64);
    let mut heading = 0.0f64;
    let mut remaining = s;
    for piece in pieces {
        let len = piece.arc_len();
        let here = remaining.min(len);
        match *piece {
            Piece::Straight { .. } => {
                pos.0 += here * heading.cos();
                pos.1 += here * heading.sin();
            }
            Piece::Arc { radius, turn } => {
                let sweep = here / radius * turn.signum();
                let side = turn.signum();
                let cx = pos.0 - side * radius * heading.sin();
                let cy = pos.1 + side * radius * heading.cos();
                let a0 = (pos.1 - cy).atan2(pos.0 - cx);
                let a = a0 + sweep;
                pos = (cx + radius * a.cos(), cy + radius * a.sin());
                heading += sweep;
            }
        }
        if remaining <= len {
            break;
        }
        remaining -= len;
    }
    [pos.0, pos.1]
}

// ---------------------------------------------------------------------------
// Reference trajectories
// ---------------------------------------------------------------------------

/// One reference sample: pose, body-frame velocities and slip angle at arc
/// length `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefPoint {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub psi_ref: f64,
    pub v_x_ref: f64,
    pub v_y_ref: f64,
    pub beta_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefSource {
    ScriptedExpert,
    RoughCenterline,
    RecordedFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub source: RefSource,
    pub is_loop: bool,
    pub points: Vec<RefPoint>,
}

pub const TRAJECTORY_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    version: u32,
    #[serde(flatten)]
    traj: ReferenceTrajectory,
}

impl ReferenceTrajectory {
    pub fn validate(&self) -> Result<(), TrackError> {
        if self.points.len() < MIN_TRAJECTORY_POINTS {
            return Err(TrackError::InvalidTrack(format!(
                "trajectory needs >= {MIN_TRAJECTORY_POINTS} points, got {}",
                self.points.len()
            )));
        }
        let mut prev = f64::NEG_INFINITY;
        for p in &self.points {
            let finite = [p.s, p.x, p.y, p.psi_ref, p.v_x_ref, p.v_y_ref, p.beta_ref]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(TrackError::InvalidTrack("non-finite reference point".into()));
            }
            if p.s <= prev {
                return Err(TrackError::InvalidTrack("arc length must strictly increase".into()));
            }
            prev = p.s;
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.points.last().map(|p| p.s).unwrap_or(0.0)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), TrackError> {
        let file = TrajectoryFile { version: TRAJECTORY_FILE_VERSION, traj: self.clone() };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TrackError> {
        let text = std::fs::read_to_string(path)?;
        let file: TrajectoryFile = serde_json::from_str(&text)?;
        if file.version != TRAJECTORY_FILE_VERSION {
            return Err(TrackError::InvalidTrack(format!(
                "unsupported trajectory file version {}",
                file.version
            )));
        }
        let mut traj = file.traj;
        traj.source = RefSource::RecordedFile;
        traj.validate()?;
        Ok(traj)
    }
}

/// Top speed the scripted expert aims for on open track [m/s].
pub const EXPERT_MAX_SPEED: f64 = 30.0;
/// Fraction of the friction-limited lateral acceleration the expert uses.
const EXPERT_LAT_FRAC: f64 = 0.9;
/// Deceleration budget for the braking envelope, as a fraction of mu*g.
/// There is no brake in the action space; scrubbing speed in a drift is
/// the only way down, which this fraction approximates.
const EXPERT_BRAKE_FRAC: f64 = 0.35;
/// Peak reference slip angle for the sharpest corner [deg].
///
/// The drift profile is the heuristic line through these anchor points
/// (interior angle -> peak |beta|): 180 -> 0, 145 -> 7.5, 110 -> 15,
/// 75 -> 22.5, 40 -> 30.
const EXPERT_PEAK_BETA_DEG: f64 = 30.0;

/// Racing-line style reference: curvature/friction capped speed profile with
/// a braking envelope, drifting through annotated corners with a slip-angle
/// peak that grows with corner sharpness. The line itself follows the track
/// centerline.
pub fn scripted_expert_reference(track: &Track, params: &VehicleParams) -> ReferenceTrajectory {
    let n = track.len();
    let a_lat = EXPERT_LAT_FRAC * params.tire_friction * GRAVITY;
    let a_brake = EXPERT_BRAKE_FRAC * params.tire_friction * GRAVITY;

    // curvature magnitude from tangent heading change
    let mut speed: Vec<f64> = (0..n)
        .map(|i| {
            let (prev, next) = neighbors(track, i);
            let dtheta = angle_diff(track.tangent_heading(next), track.tangent_heading(prev));
            let ds = arc_between(track, prev, next);
            let kappa = (dtheta / ds).abs();
            (a_lat / kappa.max(1e-9)).sqrt().min(EXPERT_MAX_SPEED)
        })
        .collect();

    // backward braking envelope; two sweeps on loops for periodicity
    let sweeps = if track.is_loop { 2 } else { 1 };
    for _ in 0..sweeps {
        for i in (0..n - 1).rev() {
            let ds = track.arc_at(i + 1) - track.arc_at(i);
            speed[i] = speed[i].min((speed[i + 1].powi(2) + 2.0 * a_brake * ds).sqrt());
        }
        if track.is_loop {
            let ds = CENTERLINE_SPACING;
            let wrap = (speed[0].powi(2) + 2.0 * a_brake * ds).sqrt();
            let last = speed.len() - 1;
            speed[last] = speed[last].min(wrap);
        }
    }

    let points = (0..n)
        .map(|i| {
            let s = track.arc_at(i);
            let beta = expert_beta(track, s);
            let theta = track.tangent_heading(i);
            let v = speed[i];
            RefPoint {
                s,
                x: track.point(i).0,
                y: track.point(i).1,
                // course = heading + slip, so the drifting heading leads
                // the path tangent against the slip
                psi_ref: wrap_angle(theta - beta),
                v_x_ref: v * beta.cos(),
                v_y_ref: v * beta.sin(),
                beta_ref: beta,
            }
        })
        .collect();

    ReferenceTrajectory {
        source: RefSource::ScriptedExpert,
        is_loop: track.is_loop,
        points,
    }
}

fn neighbors(track: &Track, i: usize) -> (usize, usize) {
    let n = track.len();
    if track.is_loop {
        ((i + n - 1) % n, (i + 1) % n)
    } else {
        (i.saturating_sub(1), (i + 1).min(n - 1))
    }
}

fn arc_between(track: &Track, a: usize, b: usize) -> f64 {
    if b >= a {
        (track.arc_at(b) - track.arc_at(a)).max(1e-9)
    } else {
        // wrapped neighbor pair on a loop
        (track.total_length() - track.arc_at(a) + track.arc_at(b)).max(1e-9)
    }
}

/// Reference slip angle at arc length `s`: zero outside corners, a raised
/// sine inside, peaking with corner sharpness and signed against the turn.
fn expert_beta(track: &Track, s: f64) -> f64 {
    for c in &track.corner_segments {
        if s >= c.start_arc && s < c.end_arc {
            let u = (s - c.start_arc) / (c.end_arc - c.start_arc);
            let sharp = (180.0 - c.angle_deg) / 140.0;
            let peak = (EXPERT_PEAK_BETA_DEG * sharp).to_radians();
            let turn_sign = corner_turn_sign(track, c);
            return -turn_sign * peak * (std::f64::consts::PI * u).sin();
        }
    }
    0.0
}

fn corner_turn_sign(track: &Track, c: &CornerSegment) -> f64 {
    let i0 = index_at_arc(track, c.start_arc);
    let i1 = index_at_arc(track, c.end_arc);
    angle_diff(track.tangent_heading(i1), track.tangent_heading(i0)).signum()
}

fn index_at_arc(track: &Track, s: f64) -> usize {
    match track
        .cum_s
        .binary_search_by(|probe| probe.partial_cmp(&s).unwrap())
    {
        Ok(i) => i,
        Err(i) => i.min(track.len() - 1),
    }
}

/// Centerline waypoint reference: headings from tangents, zero slip angles,
/// constant forward speed.
pub fn rough_centerline_reference(track: &Track, v_const: f64) -> ReferenceTrajectory {
    assert!(v_const > 0.0, "constant reference speed must be positive");
    let points = (0..track.len())
        .map(|i| RefPoint {
            s: track.arc_at(i),
            x: track.point(i).0,
            y: track.point(i).1,
            psi_ref: track.tangent_heading(i),
            v_x_ref: v_const,
            v_y_ref: 0.0,
            beta_ref: 0.0,
        })
        .collect();
    ReferenceTrajectory {
        source: RefSource::RoughCenterline,
        is_loop: track.is_loop,
        points,
    }
}

// ---------------------------------------------------------------------------
// Path queries
// ---------------------------------------------------------------------------

/// How far the local search around the hint extends before falling back to
/// a global scan.
const NEAREST_WINDOW: usize = 40;

/// Index of the reference point closest to `pos`, plus the signed
/// cross-track distance (positive when the position is left of the local
/// tangent). A hint index turns this into a local search.
pub fn nearest_point(
    traj: &ReferenceTrajectory,
    pos: (f64, f64),
    hint: Option<usize>,
) -> (usize, f64) {
    let n = traj.points.len();
    let best = match hint {
        Some(h) if h < n => {
            let local = scan_nearest(traj, pos, h, NEAREST_WINDOW);
            // a best point pinned at the window edge means the hint went
            // stale; rescan globally
            let at_edge = if traj.is_loop {
                false
            } else {
                let lo = h.saturating_sub(NEAREST_WINDOW);
                let hi = (h + NEAREST_WINDOW).min(n - 1);
                (local == lo && lo != 0) || (local == hi && hi != n - 1)
            };
            if at_edge {
                global_nearest(traj, pos)
            } else {
                local
            }
        }
        _ => global_nearest(traj, pos),
    };
    (best, signed_cross_track(traj, pos, best))
}

fn global_nearest(traj: &ReferenceTrajectory, pos: (f64, f64)) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in traj.points.iter().enumerate() {
        let d = dist(pos, (p.x, p.y));
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn scan_nearest(traj: &ReferenceTrajectory, pos: (f64, f64), hint: usize, window: usize) -> usize {
    let n = traj.points.len();
    let mut best = hint;
    let mut best_d = f64::INFINITY;
    let range: Box<dyn Iterator<Item = usize>> = if traj.is_loop {
        Box::new((0..=2 * window).map(move |k| (hint + n + k - window) % n))
    } else {
        Box::new(hint.saturating_sub(window)..=(hint + window).min(n - 1))
    };
    for i in range {
        let p = &traj.points[i];
        let d = dist(pos, (p.x, p.y));
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Signed perpendicular offset of `pos` from the tangent line at point `i`.
pub fn signed_cross_track(traj: &ReferenceTrajectory, pos: (f64, f64), i: usize) -> f64 {
    let n = traj.points.len();
    let (a, b) = if traj.is_loop {
        ((i + n - 1) % n, (i + 1) % n)
    } else {
        (i.saturating_sub(1), (i + 1).min(n - 1))
    };
    let pa = &traj.points[a];
    let pb = &traj.points[b];
    let (tx, ty) = (pb.x - pa.x, pb.y - pa.y);
    let norm = (tx * tx + ty * ty).sqrt().max(1e-12);
    let p = &traj.points[i];
    let (dx, dy) = (pos.0 - p.x, pos.1 - p.y);
    (tx * dy - ty * dx) / norm
}

/// `n` reference points sampled ahead of `index` at fixed arc-length
/// `spacing`, linearly interpolated; clamps to the final point on non-loop
/// trajectories and wraps on loops.
pub fn lookahead(traj: &ReferenceTrajectory, index: usize, n: usize, spacing: f64) -> Vec<RefPoint> {
    assert!(n >= 1);
    let s0 = traj.points[index].s;
    let total = traj.total_length();
    (1..=n)
        .map(|k| {
            let mut s = s0 + k as f64 * spacing;
            if traj.is_loop {
                s = s.rem_euclid(total.max(1e-9));
            }
            interp_at(traj, s)
        })
        .collect()
}

/// Linear interpolation of a reference point at arc length `s` (clamped to
/// the ends on non-loop trajectories). Angles interpolate along the shortest
/// wrapped arc.
pub fn interp_at(traj: &ReferenceTrajectory, s: f64) -> RefPoint {
    let pts = &traj.points;
    let n = pts.len();
    if s <= pts[0].s {
        return pts[0];
    }
    if s >= pts[n - 1].s {
        return pts[n - 1];
    }
    let j = match pts.binary_search_by(|p| p.s.partial_cmp(&s).unwrap()) {
        Ok(j) => return pts[j],
        Err(j) => j - 1,
    };
    let (a, b) = (&pts[j], &pts[j + 1]);
    let t = (s - a.s) / (b.s - a.s);
    RefPoint {
        s,
        x: a.x + t * (b.x - a.x),
        y: a.y + t * (b.y - a.y),
        psi_ref: wrap_angle(a.psi_ref + t * angle_diff(b.psi_ref, a.psi_ref)),
        v_x_ref: a.v_x_ref + t * (b.v_x_ref - a.v_x_ref),
        v_y_ref: a.v_y_ref + t * (b.v_y_ref - a.v_y_ref),
        beta_ref: wrap_angle(a.beta_ref + t * angle_diff(b.beta_ref, a.beta_ref)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::VehiclePreset;
    use proptest::prelude::*;

    fn spec(seed: u64, n_corners: usize, angles: (f64, f64)) -> TrackSpec {
        TrackSpec {
            seed,
            n_corners,
            corner_angle_range_deg: angles,
            segment_length_range_m: (40.0, 80.0),
            half_width_m: 6.0,
        }
    }

    #[test]
    fn straight_track_has_no_corners() {
        let t = generate_track(&spec(1, 0, (40.0, 180.0))).unwrap();
        assert!(t.corner_segments.is_empty());
        assert!(!t.corner_mask(t.total_length() / 2.0));
        // all points on the x axis
        for p in t.centerline() {
            assert!(p[1].abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_track(&spec(9, 5, (60.0, 150.0))).unwrap();
        let b = generate_track(&spec(9, 5, (60.0, 150.0))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn annotated_angles_match_geometry() {
        let t = generate_track(&spec(7, 6, (40.0, 180.0))).unwrap();
        assert_eq!(t.corner_segments.len(), 6);
        for c in &t.corner_segments {
            assert!((40.0..=180.0).contains(&c.angle_deg), "angle {}", c.angle_deg);
            // recompute the turn from tangents on the straights flanking the
            // arc; the full heading change happens between them
            let i0 = index_at_arc(&t, c.start_arc).saturating_sub(3);
            let i1 = (index_at_arc(&t, c.end_arc) + 3).min(t.len() - 1);
            let turn = angle_diff(t.tangent_heading(i1), t.tangent_heading(i0))
                .abs()
                .to_degrees();
            let expected = 180.0 - c.angle_deg;
            assert!(
                (turn - expected).abs() < 2.0,
                "turn {turn} vs interior angle {}",
                c.angle_deg
            );
        }
    }

    #[test]
    fn invalid_angles_rejected() {
        let err = generate_track(&spec(1, 2, (30.0, 100.0))).unwrap_err();
        assert!(err.to_string().contains("[40, 180]"));
    }

    #[test]
    fn corner_mask_convention() {
        let t = generate_track(&spec(11, 3, (70.0, 120.0))).unwrap();
        let c = t.corner_segments[0];
        assert!(t.corner_mask(c.start_arc), "closed-left: start is inside");
        assert!(!t.corner_mask(c.end_arc), "open-right: end is outside");
        assert!(t.corner_mask(0.5 * (c.start_arc + c.end_arc)));
    }

    fn circle_track(radius: f64) -> Track {
        let n = (2.0 * std::f64::consts::PI * radius).round() as usize;
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Track::from_centerline("circle", pts, 6.0, true, vec![]).unwrap()
    }

    #[test]
    fn expert_on_straight_track() {
        let t = generate_track(&spec(2, 0, (40.0, 180.0))).unwrap();
        let p = VehicleParams::preset(VehiclePreset::Trainer);
        let traj = scripted_expert_reference(&t, &p);
        traj.validate().unwrap();
        for pt in &traj.points {
            assert_eq!(pt.beta_ref, 0.0);
            assert!((pt.v_x_ref - EXPERT_MAX_SPEED).abs() < 1e-9);
            assert_eq!(pt.v_y_ref, 0.0);
        }
    }

    #[test]
    fn expert_drifts_in_sharp_corner() {
        // one 90-degree corner: peak |beta| above 15 deg inside, zero outside
        let mut found = None;
        for seed in 0..20 {
            let t = generate_track(&spec(seed, 1, (90.0, 90.0))).unwrap();
            if t.corner_segments.len() == 1 {
                found = Some(t);
                break;
            }
        }
        let t = found.expect("no track with a single corner");
        let p = VehicleParams::preset(VehiclePreset::Trainer);
        let traj = scripted_expert_reference(&t, &p);
        let c = t.corner_segments[0];
        let mut peak: f64 = 0.0;
        for pt in &traj.points {
            if pt.s >= c.start_arc && pt.s < c.end_arc {
                peak = peak.max(pt.beta_ref.abs());
            } else {
                assert_eq!(pt.beta_ref, 0.0, "beta outside corner at s={}", pt.s);
            }
        }
        assert!(peak.to_degrees() > 15.0, "peak beta {} deg", peak.to_degrees());
    }

    #[test]
    fn tighter_corner_is_slower() {
        let corner_min_speed = |angle: f64| {
            let t = generate_track(&spec(5, 1, (angle, angle))).unwrap();
            let p = VehicleParams::preset(VehiclePreset::Trainer);
            let traj = scripted_expert_reference(&t, &p);
            let c = t.corner_segments[0];
            traj.points
                .iter()
                .filter(|pt| pt.s >= c.start_arc && pt.s < c.end_arc)
                .map(|pt| (pt.v_x_ref.powi(2) + pt.v_y_ref.powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        assert!(corner_min_speed(60.0) < corner_min_speed(140.0));
    }

    #[test]
    fn rough_reference_is_flat() {
        let t = generate_track(&spec(3, 4, (60.0, 160.0))).unwrap();
        let traj = rough_centerline_reference(&t, 110.0 / 3.6);
        traj.validate().unwrap();
        for pt in &traj.points {
            assert_eq!(pt.beta_ref, 0.0);
            assert_eq!(pt.v_y_ref, 0.0);
            assert!((pt.v_x_ref - 110.0 / 3.6).abs() < 1e-12);
        }
    }

    #[test]
    fn rough_reference_straight_heading_constant() {
        let t = generate_track(&spec(4, 0, (40.0, 180.0))).unwrap();
        let traj = rough_centerline_reference(&t, 20.0);
        let h0 = traj.points[2].psi_ref;
        for pt in &traj.points {
            assert!((pt.psi_ref - h0).abs() < 1e-9);
        }
    }

    #[test]
    fn loop_heading_is_periodic() {
        let t = circle_track(40.0);
        let traj = rough_centerline_reference(&t, 20.0);
        // wrapping the lookahead all the way around lands on the start heading
        let full_lap = lookahead(&traj, 0, 1, traj.total_length());
        let d = angle_diff(full_lap[0].psi_ref, traj.points[0].psi_ref);
        assert!(d.abs() < 1e-9, "heading mismatch {d}");
    }

    #[test]
    fn nearest_point_basics() {
        let t = generate_track(&spec(6, 0, (40.0, 180.0))).unwrap();
        let traj = rough_centerline_reference(&t, 20.0);
        // exactly on a point
        let p = traj.points[10];
        let (i, e) = nearest_point(&traj, (p.x, p.y), None);
        assert_eq!(i, 10);
        assert_eq!(e, 0.0);
        // 2 m perpendicular-left of the straight (+y side, track runs along +x)
        let (_, e) = nearest_point(&traj, (p.x, p.y + 2.0), Some(8));
        assert!((e - 2.0).abs() < 1e-9, "left offset {e}");
        let (_, e) = nearest_point(&traj, (p.x, p.y - 2.0), Some(12));
        assert!((e + 2.0).abs() < 1e-9, "right offset {e}");
    }

    #[test]
    fn hint_matches_global_search() {
        use rand::Rng;
        let t = generate_track(&spec(8, 5, (50.0, 160.0))).unwrap();
        let traj = scripted_expert_reference(&t, &VehicleParams::preset(VehiclePreset::Trainer));
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let i = rng.gen_range(0..traj.points.len());
            let p = traj.points[i];
            let pos = (
                p.x + rng.gen_range(-15.0..15.0),
                p.y + rng.gen_range(-15.0..15.0),
            );
            let hint = (i + rng.gen_range(0..10)).min(traj.points.len() - 1);
            let (gi, ge) = nearest_point(&traj, pos, None);
            let (hi, he) = nearest_point(&traj, pos, Some(hint));
            // equally-distant ties can differ in index; compare distances
            let dg = dist(pos, (traj.points[gi].x, traj.points[gi].y));
            let dh = dist(pos, (traj.points[hi].x, traj.points[hi].y));
            assert!((dg - dh).abs() < 1e-9, "hint {hi} vs global {gi}");
            if gi == hi {
                assert_eq!(ge, he);
            }
        }
    }

    #[test]
    fn lookahead_shapes() {
        let t = generate_track(&spec(12, 2, (90.0, 150.0))).unwrap();
        let traj = rough_centerline_reference(&t, 15.0);
        let look = lookahead(&traj, 0, 10, 2.0);
        assert_eq!(look.len(), 10);
        for w in look.windows(2) {
            assert!(w[1].s > w[0].s);
        }
        // clamping at the end of a non-loop trajectory
        let last = traj.points.len() - 1;
        let look = lookahead(&traj, last, 10, 2.0);
        assert_eq!(look.len(), 10);
        for p in &look {
            assert_eq!(p.x, traj.points[last].x);
            assert_eq!(p.y, traj.points[last].y);
        }
    }

    #[test]
    fn lookahead_interpolates_spacing() {
        // straight unit-spaced trajectory: x advances by the spacing
        let t = generate_track(&spec(2, 0, (40.0, 180.0))).unwrap();
        let traj = rough_centerline_reference(&t, 20.0);
        let look = lookahead(&traj, 5, 10, 2.0);
        let x0 = traj.points[5].x;
        for (k, p) in look.iter().enumerate() {
            assert!((p.x - (x0 + 2.0 * (k + 1) as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn track_file_roundtrip() {
        let t = generate_track(&spec(21, 4, (60.0, 150.0))).unwrap();
        let dir = std::env::temp_dir().join("driftrl-track-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.json");
        let mut named = t.clone();
        named.name = "roundtrip".into();
        named.save(&path).unwrap();
        let loaded = Track::load(&path).unwrap();
        assert_eq!(named, loaded);
    }

    proptest! {
        // reference trajectories keep slip below 90 deg and speeds finite
        #[test]
        fn references_are_sane(seed in 0u64..30, n in 0usize..5) {
            let t = generate_track(&spec(seed, n, (40.0, 180.0))).unwrap();
            let p = VehicleParams::preset(VehiclePreset::Trainer);
            for traj in [
                scripted_expert_reference(&t, &p),
                rough_centerline_reference(&t, 25.0),
            ] {
                traj.validate().unwrap();
                for pt in &traj.points {
                    prop_assert!(pt.beta_ref.abs() < std::f64::consts::FRAC_PI_2);
                    prop_assert!(pt.v_x_ref.is_finite() && pt.v_y_ref.is_finite());
                }
            }
        }
    }
}


//! Datapoint schema, persistence, misleading sketch generation, Fréchet
//! annotation and teleoperation recording.
//!
//! A dataset is a directory per environment:
//!
//! ```text
//! <env>/map.pgm
//! <env>/map.json
//! <env>/datapoints/dp_0000.json
//! <env>/episodes/...
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::DatasetError;
use crate::geometry::{resample_by_arclength, Point2, Polyline, Pose2};
use crate::metrics::discrete_frechet;
use crate::sim::{step_in_world, CollisionMonitor, RobotState, SimConfig};
use crate::world::{load_map_dir, ConstraintRegion, OccupancyGrid};

pub const SCHEMA_VERSION: u32 = 2;
/// Spacing used to densify sketch and demo before comparing them.
pub const FD_SKETCH_SPACING: f64 = 0.1;
pub const TELEOP_RATE_HZ: f64 = 10.0;
pub const COMMAND_HOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    Precise,
    Misleading,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Precise => "Precise",
            Condition::Misleading => "Misleading",
        })
    }
}

impl FromStr for Condition {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "precise" => Ok(Condition::Precise),
            "misleading" => Ok(Condition::Misleading),
            _ => Err(DatasetError::Invalid(format!("unknown condition `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Datapoint {
    pub schema_version: u32,
    pub id: String,
    pub environment: String,
    /// Map file relative to the environment directory.
    pub map_ref: String,
    pub sketch: Polyline,
    pub language: String,
    pub condition: Condition,
    /// Ids of the map regions that apply to this route.
    pub constraints: Vec<String>,
    pub goal: Point2,
    pub start_pose: Pose2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo: Option<Polyline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_sketch_demo: Option<f64>,
}

impl Datapoint {
    /// Draft with the goal at the sketch end and the start pose at the
    /// sketch start, facing along the first segment.
    pub fn draft(id: impl Into<String>, environment: impl Into<String>, sketch: Polyline, condition: Condition) -> Self {
        let pts = sketch.points();
        let heading = pts
            .windows(2)
            .find(|w| w[0].distance(w[1]) > 0.0)
            .map_or(0.0, |w| (w[1] - w[0]).angle());
        Self {
            schema_version: SCHEMA_VERSION,
            id: id.into(),
            environment: environment.into(),
            map_ref: "map.pgm".into(),
            language: String::new(),
            condition,
            constraints: Vec::new(),
            goal: sketch.last(),
            start_pose: Pose2::from_point(sketch.first(), heading),
            sketch,
            demo: None,
            demo_duration: None,
            fd_sketch_demo: None,
        }
    }
}

fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with sorted keys and floats rounded to 6 significant digits.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("serializable value");
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("json value");
    s.push('\n');
    s
}

/// Round-trips a datapoint through its stored representation.
pub fn canonicalize(dp: &Datapoint) -> Datapoint {
    parse_datapoint(canonical_json(dp).as_bytes()).expect("canonical json parses")
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| DatasetError::file(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| DatasetError::file(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DatasetError::file(path, e))
}

/// Condition/geometry consistency: Precise sketches avoid blocking cells,
/// Misleading sketches clip at least one.
pub fn validate_condition(grid: &OccupancyGrid, sketch: &Polyline, condition: Condition) -> Result<(), DatasetError> {
    let hit = grid.first_blocking_segment(sketch);
    match (condition, hit) {
        (Condition::Precise, Some(seg)) => Err(DatasetError::ConditionMismatch {
            reason: format!("precise sketch crosses a blocking cell on segment {seg}"),
            segment: Some(seg),
        }),
        (Condition::Misleading, None) => Err(DatasetError::ConditionMismatch {
            reason: "misleading sketch does not clip any blocking cell".into(),
            segment: None,
        }),
        _ => Ok(()),
    }
}

pub fn validate_datapoint(grid: &OccupancyGrid, dp: &Datapoint) -> Result<(), DatasetError> {
    if dp.demo.is_some() != dp.fd_sketch_demo.is_some() {
        return Err(DatasetError::Invalid(format!(
            "datapoint `{}`: fd_sketch_demo must be present exactly when a demo is",
            dp.id
        )));
    }
    validate_condition(grid, &dp.sketch, dp.condition)
}

/// Validates against `grid` and writes the canonical JSON atomically.
pub fn save_datapoint(path: &Path, dp: &Datapoint, grid: &OccupancyGrid) -> Result<(), DatasetError> {
    let text = canonical_json(dp);
    let stored = parse_datapoint(text.as_bytes())?;
    validate_datapoint(grid, &stored)?;
    write_atomic(path, text.as_bytes())
}

fn migrate_v1(obj: &mut Map<String, Value>) {
    let misleading = obj.remove("misleading").and_then(|v| v.as_bool()).unwrap_or(false);
    let condition = if misleading { "Misleading" } else { "Precise" };
    let id = obj.get("id").and_then(Value::as_str).unwrap_or("?").to_string();
    log::info!("migrating datapoint `{id}` from schema 1: condition={condition}, constraints=[]");
    obj.insert("condition".into(), Value::from(condition));
    obj.entry("constraints").or_insert_with(|| Value::Array(vec![]));
    obj.entry("map_ref").or_insert_with(|| Value::from("map.pgm"));
    obj.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
}

pub fn parse_datapoint(bytes: &[u8]) -> Result<Datapoint, DatasetError> {
    let mut value: Value = serde_json::from_slice(bytes).map_err(|e| DatasetError::Schema {
        path: ".".into(),
        message: e.to_string(),
    })?;
    if let Value::Object(obj) = &mut value {
        match obj.get("schema_version").and_then(Value::as_u64) {
            None | Some(1) => migrate_v1(obj),
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(DatasetError::Schema {
                    path: "schema_version".into(),
                    message: format!("unsupported schema version {v}"),
                })
            }
        }
    }
    serde_path_to_error::deserialize(value).map_err(|e| DatasetError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn load_datapoint(path: &Path) -> Result<Datapoint, DatasetError> {
    let bytes = fs::read(path).map_err(|e| DatasetError::file(path, e))?;
    parse_datapoint(&bytes)
}

/// One environment directory: map, regions and its datapoints sorted by
/// file name.
#[derive(Debug, Clone)]
pub struct Environment {
    pub name: String,
    pub dir: PathBuf,
    pub grid: OccupancyGrid,
    pub regions: Vec<ConstraintRegion>,
    pub datapoints: Vec<Datapoint>,
}

impl Environment {
    pub fn regions_for(&self, dp: &Datapoint) -> Vec<ConstraintRegion> {
        self.regions
            .iter()
            .filter(|r| dp.constraints.contains(&r.id))
            .cloned()
            .collect()
    }

    pub fn datapoint_path(&self, id: &str) -> PathBuf {
        self.dir.join("datapoints").join(format!("{id}.json"))
    }
}

pub fn datapoint_files(env_dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let dir = env_dir.join("datapoints");
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| DatasetError::file(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_environment(env_dir: &Path) -> Result<Environment, DatasetError> {
    let (grid, regions) = load_map_dir(env_dir)?;
    let mut datapoints = Vec::new();
    for f in datapoint_files(env_dir)? {
        let dp = load_datapoint(&f).map_err(|e| match e {
            DatasetError::Schema { path, message } => DatasetError::Schema {
                path: format!("{}: {path}", f.display()),
                message,
            },
            other => other,
        })?;
        if let Some(missing) = dp.constraints.iter().find(|c| !regions.iter().any(|r| &r.id == *c)) {
            return Err(DatasetError::Invalid(format!(
                "{}: constraint `{missing}` is not a region of the map",
                f.display()
            )));
        }
        datapoints.push(dp);
    }
    let name = env_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Environment {
        name,
        dir: env_dir.to_path_buf(),
        grid,
        regions,
        datapoints,
    })
}

/// Every environment directory under `root` (those holding a `map.json`),
/// sorted by name.
pub fn load_dataset(root: &Path) -> Result<Vec<Environment>, DatasetError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| DatasetError::file(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("map.json").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_environment(d)).collect()
}

const SIGMA_START: f64 = 0.5;
const SIGMA_STEP: f64 = 0.5;
const SIGMA_MAX: f64 = 10.0;
const DRAWS_PER_SIGMA: usize = 8;

/// Perturbs the interior points of a blocking-free sketch with growing
/// Gaussian noise until it clips a blocking cell. Endpoints stay fixed; a
/// two-point sketch gains a midpoint to perturb. Perturbed points are
/// clamped to the map.
pub fn make_misleading(grid: &OccupancyGrid, precise: &Polyline, seed: u64) -> Result<Polyline, DatasetError> {
    if precise.len() < 2 {
        return Err(DatasetError::Invalid("sketch needs at least two points".into()));
    }
    if grid.intersects_blocking(precise) {
        return Err(DatasetError::Invalid("input sketch already clips a blocking cell".into()));
    }
    let mut base = precise.points().to_vec();
    if base.len() == 2 {
        base.insert(1, base[0].lerp(base[1], 0.5));
    }
    let (w, h) = grid.extent();
    let inset = grid.resolution() / 2.0;
    let lo = grid.origin() + Point2::new(inset, inset);
    let hi = grid.origin() + Point2::new(w - inset, h - inset);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sigma = SIGMA_START;
    while sigma <= SIGMA_MAX + 1e-9 {
        let noise = Normal::new(0.0, sigma).expect("positive sigma");
        for _ in 0..DRAWS_PER_SIGMA {
            let mut pts = base.clone();
            let n = pts.len();
            for p in &mut pts[1..n - 1] {
                p.x = (p.x + noise.sample(&mut rng)).clamp(lo.x, hi.x);
                p.y = (p.y + noise.sample(&mut rng)).clamp(lo.y, hi.y);
            }
            let candidate = Polyline::new(pts)?;
            if grid.intersects_blocking(&candidate) {
                return Ok(candidate);
            }
        }
        sigma += SIGMA_STEP;
    }
    Err(DatasetError::GenerationFailed { sigma: SIGMA_MAX })
}

fn densify(line: &Polyline) -> Result<Polyline, DatasetError> {
    if line.length() > 0.0 {
        Ok(resample_by_arclength(line, FD_SKETCH_SPACING)?)
    } else {
        Ok(line.clone())
    }
}

/// Fréchet distance between the sketch and the demo, both resampled at
/// [`FD_SKETCH_SPACING`].
pub fn sketch_demo_fd(sketch: &Polyline, demo: &Polyline) -> Result<f64, DatasetError> {
    let (a, b) = (densify(sketch)?, densify(demo)?);
    Ok(discrete_frechet(a.points(), b.points()).expect("polylines are non-empty"))
}

pub fn annotate_fd(dp: &Datapoint) -> Result<Datapoint, DatasetError> {
    let demo = dp.demo.as_ref().ok_or(DatasetError::MissingDemo)?;
    let mut out = dp.clone();
    out.fd_sketch_demo = Some(sketch_demo_fd(&dp.sketch, demo)?);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedCommand {
    pub t: f64,
    pub v: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeleopSample {
    pub t: f64,
    pub pose: Pose2,
    pub v_cmd: f64,
    pub omega_cmd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopRecord {
    pub datapoint_id: String,
    /// Accepted commands stamped with session time.
    pub commands: Vec<TimedCommand>,
    /// One sample per simulation step, starting at t = 0.
    pub samples: Vec<TeleopSample>,
    pub incomplete: bool,
    pub degenerate: bool,
}

impl TeleopRecord {
    /// Pose track with consecutive duplicates removed.
    pub fn demo(&self) -> Polyline {
        let mut pts: Vec<Point2> = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            if pts.last().is_none_or(|l| l.distance(s.pose.position) > 1e-9) {
                pts.push(s.pose.position);
            }
        }
        Polyline::new(pts).expect("record has a start sample")
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

/// Server-clocked teleoperation session. Commands are held until replaced
/// and drop to zero once they are older than [`COMMAND_HOLD`].
#[derive(Debug, Clone)]
pub struct TeleopRecorder {
    cfg: SimConfig,
    state: RobotState,
    monitor: CollisionMonitor,
    held: (f64, f64),
    held_since: Option<f64>,
    record: TeleopRecord,
    collisions: usize,
}

impl TeleopRecorder {
    pub fn new(datapoint_id: impl Into<String>, start: Pose2, cfg: SimConfig) -> Self {
        let state = RobotState::at_rest(start);
        Self {
            cfg,
            state,
            monitor: CollisionMonitor::default(),
            held: (0.0, 0.0),
            held_since: None,
            record: TeleopRecord {
                datapoint_id: datapoint_id.into(),
                commands: Vec::new(),
                samples: vec![TeleopSample {
                    t: 0.0,
                    pose: start,
                    v_cmd: 0.0,
                    omega_cmd: 0.0,
                }],
                incomplete: false,
                degenerate: false,
            },
            collisions: 0,
        }
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn collisions(&self) -> usize {
        self.collisions
    }

    pub fn record(&self) -> &TeleopRecord {
        &self.record
    }

    /// Accepts a command at the current session time. Non-finite values
    /// are rejected; the rest are clamped to the actuator limits.
    pub fn command(&mut self, v: f64, omega: f64) -> Result<(f64, f64), DatasetError> {
        if !v.is_finite() || !omega.is_finite() {
            return Err(DatasetError::Invalid("command values must be finite".into()));
        }
        let (v, omega) = crate::sim::clamp_command(v, omega, &self.cfg);
        self.held = (v, omega);
        self.held_since = Some(self.state.time);
        self.record.commands.push(TimedCommand {
            t: self.state.time,
            v,
            omega,
        });
        Ok((v, omega))
    }

    /// Command in effect for the next step.
    pub fn active_command(&self) -> (f64, f64) {
        match self.held_since {
            Some(t0) if self.state.time - t0 < COMMAND_HOLD - 1e-9 => self.held,
            _ => (0.0, 0.0),
        }
    }

    /// Advances one simulation step under the held command.
    pub fn tick(&mut self, world: &OccupancyGrid) -> &TeleopSample {
        let (v, omega) = self.active_command();
        let (next, event) = step_in_world(self.state, v, omega, &self.cfg, world, &mut self.monitor);
        self.state = next;
        self.collisions += usize::from(event.is_some());
        self.record.samples.push(TeleopSample {
            t: next.time,
            pose: next.pose,
            v_cmd: v,
            omega_cmd: omega,
        });
        self.record.samples.last().expect("just pushed")
    }

    /// Ends the session and writes demo, duration and FD into `dp`.
    pub fn finish(mut self, dp: &Datapoint) -> (TeleopRecord, Datapoint) {
        let demo = self.record.demo();
        self.record.degenerate = demo.len() < 2;
        let mut out = dp.clone();
        out.demo_duration = Some(self.record.duration());
        out.fd_sketch_demo = Some(sketch_demo_fd(&dp.sketch, &demo).expect("sketch is finite"));
        out.demo = Some(demo);
        (self.record, out)
    }

    /// Ends the session early; the partial record is flagged incomplete.
    pub fn abort(mut self) -> TeleopRecord {
        self.record.incomplete = true;
        self.record.degenerate = self.record.demo().len() < 2;
        self.record
    }
}

/// Replays a timestamped command log through a fresh recorder until
/// `end_time`. Commands apply at the first step whose time reaches their
/// stamp.
pub fn record_teleop(
    world: &OccupancyGrid,
    dp: &Datapoint,
    cfg: &SimConfig,
    commands: &[TimedCommand],
    end_time: f64,
) -> Result<(TeleopRecord, Datapoint), DatasetError> {
    if commands.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(DatasetError::Invalid("command log must be sorted by time".into()));
    }
    let mut rec = TeleopRecorder::new(dp.id.clone(), dp.start_pose, cfg.clone());
    let mut next = 0;
    let steps = (end_time / cfg.dt + 1e-9).floor() as usize;
    for _ in 0..steps {
        while next < commands.len() && commands[next].t <= rec.time() + 1e-9 {
            rec.command(commands[next].v, commands[next].omega)?;
            next += 1;
        }
        rec.tick(world);
    }
    Ok(rec.finish(dp))
}

//! Evaluation campaigns: datapoint × iteration episodes with randomized
//! start headings, run in parallel and reduced into a report.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::control::{PdController, PdGains};
use crate::dataset::{load_dataset, load_environment, sketch_demo_fd, write_atomic, Condition, Datapoint, Environment};
use crate::error::{DatasetError, RunError};
use crate::fixtures::load_suites;
use crate::geometry::{to_ego_frame, Point2, Pose2};
use crate::metrics::{aggregate_report, check_violations, EpisodeOutcome, EvalReport};
use crate::policy::{
    resolve_action, BaselineConfig, BaselinePlanner, Endpoint, Observation, OraclePolicy, Policy, PolicyKind, RemotePolicy,
};
use crate::render::{render_canvas, render_front_view};
use crate::sim::{EpisodeState, SimConfig};
use crate::tokenizer::{fit_codebook, supervision_actions, WaypointCodebook, DEFAULT_K};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const EPISODES_DIR: &str = "episodes";

/// Everything that determines a campaign. Loaded from TOML or JSON; every
/// field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Environment directories or dataset roots holding several.
    pub datasets: Vec<PathBuf>,
    /// Environment names to keep; empty keeps all.
    pub environments: Vec<String>,
    /// Datapoint ids to keep; empty keeps all.
    pub datapoints: Vec<String>,
    /// Named group from an environment's suites file.
    pub suite: Option<String>,
    pub policy: PolicyKind,
    pub iterations: usize,
    pub seed: u64,
    /// Draw each episode's start heading at random instead of using the
    /// datapoint's.
    pub randomize_heading: bool,
    /// Parallel episode workers; 0 uses every core. Not part of the
    /// report header since results do not depend on it.
    pub workers: usize,
    pub codebook: Option<PathBuf>,
    pub remote_timeout_s: f64,
    pub gains: PdGains,
    pub sim: SimConfig,
    pub baseline: BaselineConfig,
    pub episode_logs: bool,
    /// Output directory. Not part of the report header.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            datasets: vec![PathBuf::from("datasets")],
            environments: Vec::new(),
            datapoints: Vec::new(),
            suite: None,
            policy: PolicyKind::Baseline,
            iterations: 3,
            seed: 0,
            randomize_heading: true,
            workers: 1,
            codebook: None,
            remote_timeout_s: 2.0,
            gains: PdGains::default(),
            sim: SimConfig::default(),
            baseline: BaselineConfig::default(),
            episode_logs: true,
            out: PathBuf::from("runs/eval"),
        }
    }
}

impl RunConfig {
    /// Parses a `.toml` or `.json` file, chosen by extension.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?,
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.iterations == 0 {
            return Err(RunError::Config("iterations must be at least 1".into()));
        }
        if self.datasets.is_empty() {
            return Err(RunError::Config("no dataset paths given".into()));
        }
        for p in self.datasets.iter().chain(self.codebook.iter()) {
            if !p.exists() {
                return Err(RunError::Config(format!("path does not exist: {}", p.display())));
            }
        }
        if !(self.remote_timeout_s > 0.0 && self.remote_timeout_s.is_finite()) {
            return Err(RunError::Config("remote_timeout_s must be positive".into()));
        }
        if !(self.sim.dt > 0.0 && self.sim.action_budget > 0.0) {
            return Err(RunError::Config("sim.dt and sim.action_budget must be positive".into()));
        }
        self.gains.validate().map_err(RunError::Config)?;
        if let PolicyKind::Remote(e) = &self.policy {
            e.parse::<Endpoint>().map_err(|e| RunError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// The configuration as recorded in report headers.
    pub fn header(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("out");
            map.remove("workers");
        }
        v
    }
}

/// Loads environments from every configured path, applying the filters.
pub fn load_environments(cfg: &RunConfig) -> Result<Vec<Environment>, RunError> {
    let mut envs = Vec::new();
    for path in &cfg.datasets {
        if path.join("map.json").exists() {
            envs.push(load_environment(path)?);
        } else {
            envs.extend(load_dataset(path)?);
        }
    }
    envs.retain(|e| cfg.environments.is_empty() || cfg.environments.contains(&e.name));
    for env in &mut envs {
        if let Some(suite) = &cfg.suite {
            let suites = load_suites(&env.dir)?;
            let ids = suites.get(suite).cloned().unwrap_or_default();
            env.datapoints.retain(|d| ids.contains(&d.id));
        }
        if !cfg.datapoints.is_empty() {
            env.datapoints.retain(|d| cfg.datapoints.contains(&d.id));
        }
    }
    envs.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(envs)
}

/// Seed of one episode, derived from the campaign seed and the episode's
/// identity so it does not depend on scheduling.
pub fn episode_seed(seed: u64, environment: &str, datapoint_id: &str, iteration: usize) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let key = format!("{environment}/{datapoint_id}/{iteration}");
    let mut h = FNV_OFFSET ^ seed;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Start heading drawn uniformly from [-π, π).
pub fn start_heading(episode_seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
}

pub fn make_policy(
    cfg: &RunConfig,
    env: &Environment,
    dp: &Datapoint,
    codebook: Option<&WaypointCodebook>,
) -> Result<Box<dyn Policy>, RunError> {
    Ok(match &cfg.policy {
        PolicyKind::Baseline => Box::new(BaselinePlanner::new(&env.grid, &dp.sketch, cfg.baseline.clone())?),
        PolicyKind::Oracle => {
            let demo = dp.demo.as_ref().ok_or(DatasetError::MissingDemo)?;
            Box::new(OraclePolicy::new(demo, codebook.cloned())?)
        }
        PolicyKind::Remote(endpoint) => {
            let endpoint: Endpoint = endpoint.parse().map_err(|e: crate::error::PolicyError| RunError::Config(e.to_string()))?;
            let k = codebook.map_or(DEFAULT_K, |c| c.k);
            Box::new(RemotePolicy::new(endpoint, Duration::from_secs_f64(cfg.remote_timeout_s), k))
        }
    })
}

/// Runs one episode to termination, streaming tick records to `log`.
pub fn run_episode(
    cfg: &RunConfig,
    env: &Environment,
    dp: &Datapoint,
    iteration: usize,
    codebook: Option<&WaypointCodebook>,
    mut log: Option<&mut dyn Write>,
) -> Result<EpisodeOutcome, RunError> {
    let seed = episode_seed(cfg.seed, &env.name, &dp.id, iteration);
    let heading = if cfg.randomize_heading {
        start_heading(seed)
    } else {
        dp.start_pose.heading
    };
    let start = Pose2::from_point(dp.start_pose.position, heading);
    let mut policy = make_policy(cfg, env, dp, codebook)?;
    let controller = PdController::new(cfg.gains);
    let mut ep = EpisodeState::new(dp.id.clone(), start, dp.goal, cfg.sim.max_ticks(dp.sketch.length()));
    let mut policy_error = None;
    while ep.is_running() {
        let rendered = if policy.wants_images() {
            let front = render_front_view(&env.grid, ep.robot.pose)?;
            let canvas = render_canvas(&env.grid, dp.sketch.points(), ep.hindsight.points(), Some(ep.robot.pose));
            Some((front, canvas))
        } else {
            None
        };
        let obs = Observation {
            tick: ep.tick,
            pose: ep.robot.pose,
            hindsight: &ep.hindsight,
            language: &dp.language,
            images: rendered.as_ref().map(|(f, c)| (f, c)),
        };
        let waypoints = match policy.act(&obs).and_then(|r| resolve_action(&r, codebook)) {
            Ok(w) => w,
            Err(e) => {
                log::warn!("{}/{} iteration {iteration}: policy failed at tick {}: {e}", env.name, dp.id, ep.tick);
                if let Some(w) = log.as_deref_mut() {
                    writeln!(w, "{}", json!({ "tick": ep.tick, "error": e.to_string() })).map_err(RunError::io("episode log"))?;
                }
                policy_error = Some(e.to_string());
                break;
            }
        };
        let mut rec = ep.advance(&env.grid, &waypoints, &controller, &cfg.sim)?;
        rec.policy_latency_ms = policy.last_latency_ms();
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&rec).expect("tick record serializes")).map_err(RunError::io("episode log"))?;
        }
    }
    let frechet_to_demo = match &dp.demo {
        Some(demo) => Some(sketch_demo_fd(&ep.trace_polyline(), demo)?),
        None => None,
    };
    Ok(EpisodeOutcome {
        datapoint_id: dp.id.clone(),
        environment: env.name.clone(),
        condition: dp.condition,
        iteration,
        success: ep.status == crate::sim::EpisodeStatus::Success,
        collided: ep.collided(),
        frechet_to_demo,
        violations: check_violations(&ep.trace, &env.regions_for(dp)),
        ticks: ep.tick,
        duration: ep.robot.time,
        fallbacks: policy.fallbacks(),
        policy_error,
    })
}

/// How a codebook is fitted from a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookFit {
    pub k: usize,
    pub seed: u64,
    /// Closed-loop oracle rounds whose queried waypoints join the corpus.
    /// Round 0 drives with continuous waypoints, later rounds with the
    /// codebook fitted so far. Zero fits the demo actions alone.
    pub rollout_rounds: usize,
    /// Randomized-heading replays per precise demo and round.
    pub rollout_iterations: usize,
}

impl Default for CodebookFit {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            rollout_rounds: 2,
            rollout_iterations: 8,
        }
    }
}

const ROLLOUT_SALT: u64 = 0xC0DE_B00C_5EED_0001;

/// Ego-frame waypoints the oracle asks for while replaying `dp` from a
/// randomized heading, driving either the continuous waypoints or their
/// decoded tokens.
pub fn oracle_queries(
    cfg: &RunConfig,
    env: &Environment,
    dp: &Datapoint,
    iteration: usize,
    codebook: Option<&WaypointCodebook>,
) -> Result<Vec<Point2>, RunError> {
    let demo = dp.demo.as_ref().ok_or(DatasetError::MissingDemo)?;
    let heading = start_heading(episode_seed(cfg.seed, &env.name, &dp.id, iteration));
    let start = Pose2::from_point(dp.start_pose.position, heading);
    let mut oracle = OraclePolicy::new(demo, None)?;
    let controller = PdController::new(cfg.gains);
    let mut ep = EpisodeState::new(dp.id.clone(), start, dp.goal, cfg.sim.max_ticks(dp.sketch.length()));
    let mut out = Vec::new();
    while ep.is_running() {
        let pose = ep.robot.pose;
        let ego = oracle.next_world_waypoints(pose.position).map(|w| to_ego_frame(pose, w));
        out.extend(ego);
        let action = match codebook {
            Some(cb) => cb.decode_action(&cb.encode_action(&ego))?,
            None => ego,
        };
        ep.advance(&env.grid, &action, &controller, &cfg.sim)?;
    }
    Ok(out)
}

/// Fits a codebook on the demo actions of every precise datapoint plus
/// the oracle queries of `fit.rollout_rounds` closed-loop rounds. Returns
/// the codebook and the corpus of its final fit.
pub fn fit_dataset_codebook(
    cfg: &RunConfig,
    envs: &[Environment],
    fit: &CodebookFit,
) -> Result<(WaypointCodebook, Vec<Point2>), RunError> {
    let demos: Vec<(&Environment, &Datapoint)> = envs
        .iter()
        .flat_map(|e| e.datapoints.iter().map(move |d| (e, d)))
        .filter(|(_, d)| d.condition == Condition::Precise && d.demo.is_some())
        .collect();
    let mut corpus = Vec::new();
    for (_, d) in &demos {
        for step in supervision_actions(d.demo.as_ref().expect("filtered on demo"))? {
            corpus.extend(step.waypoints_ego);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| RunError::Config(format!("worker pool: {e}")))?;
    let mut codebook = None;
    for round in 0..fit.rollout_rounds {
        let rollout_cfg = RunConfig {
            seed: (fit.seed ^ ROLLOUT_SALT).wrapping_add(round as u64),
            ..cfg.clone()
        };
        let jobs: Vec<(&Environment, &Datapoint, usize)> = demos
            .iter()
            .flat_map(|&(e, d)| (0..fit.rollout_iterations).map(move |it| (e, d, it)))
            .collect();
        let queries: Vec<Result<Vec<Point2>, RunError>> = pool.install(|| {
            jobs.par_iter()
                .map(|&(e, d, it)| oracle_queries(&rollout_cfg, e, d, it, codebook.as_ref()))
                .collect()
        });
        for q in queries {
            corpus.extend(q?);
        }
        if round + 1 < fit.rollout_rounds {
            codebook = Some(fit_codebook(&corpus, fit.k, fit.seed)?);
        }
    }
    Ok((fit_codebook(&corpus, fit.k, fit.seed)?, corpus))
}

/// Relative path of an episode log inside the output directory.
pub fn episode_log_path(environment: &str, datapoint_id: &str, iteration: usize) -> PathBuf {
    Path::new(EPISODES_DIR)
        .join(environment)
        .join(format!("{datapoint_id}_it{iteration}.jsonl"))
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: EvalReport,
    pub outcomes: Vec<EpisodeOutcome>,
    pub out_dir: PathBuf,
}

/// Runs a campaign and writes `report.json`, `report.txt`,
/// `outcomes.jsonl` and one JSON-lines log per episode under `cfg.out`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalSummary, RunError> {
    cfg.validate()?;
    let envs = load_environments(cfg)?;
    let codebook = cfg
        .codebook
        .as_deref()
        .map(WaypointCodebook::load)
        .transpose()
        .map_err(|e| RunError::Config(format!("codebook: {e}")))?;
    let mut jobs = Vec::new();
    for env in &envs {
        for dp in &env.datapoints {
            if cfg.policy == PolicyKind::Oracle && dp.demo.is_none() {
                return Err(DatasetError::MissingDemo.into());
            }
            for it in 0..cfg.iterations {
                jobs.push((env, dp, it));
            }
        }
    }
    if jobs.is_empty() {
        log::warn!("no datapoints selected");
    }
    fs::create_dir_all(&cfg.out).map_err(RunError::io_at(&cfg.out))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| RunError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<EpisodeOutcome, RunError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(env, dp, it)| {
                if !cfg.episode_logs {
                    return run_episode(cfg, env, dp, it, codebook.as_ref(), None);
                }
                let path = cfg.out.join(episode_log_path(&env.name, &dp.id, it));
                fs::create_dir_all(path.parent().expect("log path has a parent")).map_err(RunError::io_at(&path))?;
                let mut w = BufWriter::new(File::create(&path).map_err(RunError::io_at(&path))?);
                let outcome = run_episode(cfg, env, dp, it, codebook.as_ref(), Some(&mut w))?;
                w.flush().map_err(RunError::io_at(&path))?;
                Ok(outcome)
            })
            .collect()
    });
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let report = aggregate_report(&outcomes);
    write_outputs(cfg, &report, &outcomes)?;
    Ok(EvalSummary {
        report,
        outcomes,
        out_dir: cfg.out.clone(),
    })
}

fn write_outputs(cfg: &RunConfig, report: &EvalReport, outcomes: &[EpisodeOutcome]) -> Result<(), RunError> {
    let header = cfg.header();
    let mut doc = serde_json::to_string_pretty(&json!({ "config": header, "report": report })).expect("report serializes");
    doc.push('\n');
    let json_path = cfg.out.join(REPORT_JSON);
    write_atomic(&json_path, doc.as_bytes())?;

    let mut text = String::new();
    let toml_header = toml::to_string(&header).unwrap_or_else(|_| header.to_string());
    for line in toml_header.lines() {
        text.push_str("# ");
        text.push_str(line);
        text.push('\n');
    }
    text.push('\n');
    text.push_str(&report.render_text());
    write_atomic(&cfg.out.join(REPORT_TEXT), text.as_bytes())?;

    let mut lines = String::new();
    for o in outcomes {
        lines.push_str(&serde_json::to_string(o).expect("outcome serializes"));
        lines.push('\n');
    }
    write_atomic(&cfg.out.join(OUTCOMES_FILE), lines.as_bytes())?;
    Ok(())
}

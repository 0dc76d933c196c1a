//! Dataset tooling behind the command-line subcommands: codebook fitting,
//! supervision export, rendering and misleading-sketch generation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    annotate_fd, load_datapoint, load_environment, make_misleading, save_datapoint, write_atomic,
    Condition, Datapoint, Environment,
};
use crate::error::{DatasetError, RunError};
use crate::geometry::{Point2, Polyline};
use crate::render::{encode_png, render_base, render_canvas, render_front_view, Raster};
use crate::runner::{fit_dataset_codebook, CodebookFit, RunConfig};
use crate::tokenizer::{extract_supervision, supervision_actions, WaypointCodebook};

pub const SUPERVISION_FILE: &str = "supervision.jsonl";

/// Result of [`cmd_fit_codebook`].
#[derive(Debug, Clone)]
pub struct FitSummary {
    pub codebook: WaypointCodebook,
    pub corpus_len: usize,
    pub inertia: f64,
}

/// Fits a codebook over the environments selected by `cfg` and writes it
/// to `out`.
pub fn cmd_fit_codebook(cfg: &RunConfig, fit: &CodebookFit, out: &Path) -> Result<FitSummary, RunError> {
    cfg.validate()?;
    let envs = crate::runner::load_environments(cfg)?;
    let (codebook, corpus) = fit_dataset_codebook(cfg, &envs, fit)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(RunError::io_at(dir))?;
    }
    codebook.save(out)?;
    Ok(FitSummary {
        inertia: codebook.inertia(&corpus),
        corpus_len: corpus.len(),
        codebook,
    })
}

/// One training record of the supervision export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionRecord {
    pub environment: String,
    pub datapoint_id: String,
    pub tick: usize,
    /// Relative to the export directory.
    pub canvas_png_path: String,
    pub front_png_path: String,
    pub language: String,
    pub target_tokens: [usize; 4],
}

/// Canvas and front view seen at supervision step `tick` of `dp`: the
/// robot at the step's start pose with the earlier step starts as its
/// hindsight. Datapoints without a demo only have tick 0, at the start pose.
pub fn step_views(env: &Environment, dp: &Datapoint, tick: usize) -> Result<(Raster, Raster), RunError> {
    let (pose, hindsight) = match &dp.demo {
        Some(demo) => {
            let steps = supervision_actions(demo)?;
            let step = steps
                .get(tick)
                .ok_or_else(|| RunError::Config(format!("tick {tick} beyond the {} demo actions", steps.len())))?;
            let h: Vec<Point2> = steps[..=tick].iter().map(|s| s.start_pose.position).collect();
            (step.start_pose, h)
        }
        None if tick == 0 => (dp.start_pose, vec![dp.start_pose.position]),
        None => return Err(RunError::Config(format!("{} has no demo, only tick 0 renders", dp.id))),
    };
    let canvas = render_canvas(&env.grid, dp.sketch.points(), &hindsight, Some(pose));
    let front = render_front_view(&env.grid, pose)?;
    Ok((Raster::from(&canvas), Raster::from(&front)))
}

/// Writes `supervision.jsonl` and the per-step images under `out`. Every
/// datapoint with a demo contributes one record per action.
pub fn cmd_export_supervision(
    cfg: &RunConfig,
    codebook: &Path,
    expected_k: usize,
    out: &Path,
) -> Result<usize, RunError> {
    cfg.validate()?;
    let cb = WaypointCodebook::load(codebook).map_err(|e| RunError::Config(format!("codebook: {e}")))?;
    if cb.k != expected_k {
        return Err(RunError::CodebookMismatch(format!(
            "{} has K = {}, expected {expected_k}",
            codebook.display(),
            cb.k
        )));
    }
    let envs = crate::runner::load_environments(cfg)?;
    fs::create_dir_all(out).map_err(RunError::io_at(out))?;
    let mut lines = String::new();
    let mut count = 0;
    for env in &envs {
        for dp in &env.datapoints {
            let Some(demo) = &dp.demo else { continue };
            let img_dir = PathBuf::from("images").join(&env.name);
            fs::create_dir_all(out.join(&img_dir)).map_err(RunError::io_at(&out.join(&img_dir)))?;
            for (step, tokens) in extract_supervision(demo, &cb)? {
                let (canvas, front) = step_views(env, dp, step.tick)?;
                let canvas_rel = img_dir.join(format!("{}_t{:03}_canvas.png", dp.id, step.tick));
                let front_rel = img_dir.join(format!("{}_t{:03}_front.png", dp.id, step.tick));
                write_atomic(&out.join(&canvas_rel), &encode_png(&canvas))?;
                write_atomic(&out.join(&front_rel), &encode_png(&front))?;
                let rec = SupervisionRecord {
                    environment: env.name.clone(),
                    datapoint_id: dp.id.clone(),
                    tick: step.tick,
                    canvas_png_path: canvas_rel.to_string_lossy().into_owned(),
                    front_png_path: front_rel.to_string_lossy().into_owned(),
                    language: dp.language.clone(),
                    target_tokens: tokens,
                };
                lines.push_str(&serde_json::to_string(&rec).expect("record serializes"));
                lines.push('\n');
                count += 1;
            }
        }
    }
    if count == 0 {
        log::warn!("no demos found, supervision file is empty");
    }
    write_atomic(&out.join(SUPERVISION_FILE), lines.as_bytes())?;
    Ok(count)
}

/// Environment directory holding a datapoint file
/// (`<env>/datapoints/<id>.json`).
pub fn environment_of(datapoint_path: &Path) -> Result<PathBuf, RunError> {
    datapoint_path
        .parent()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .ok_or_else(|| RunError::Config(format!("{} is not inside <env>/datapoints", datapoint_path.display())))
}

/// Files written by [`cmd_render`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFiles {
    pub base: PathBuf,
    pub canvas: PathBuf,
    pub front: PathBuf,
}

/// Writes the base map, canvas and front-view PNGs of a datapoint at
/// `tick` into `out`.
pub fn cmd_render(datapoint_path: &Path, tick: usize, out: &Path) -> Result<RenderedFiles, RunError> {
    let env = load_environment(&environment_of(datapoint_path)?)?;
    let dp = load_datapoint(datapoint_path)?;
    let (canvas, front) = step_views(&env, &dp, tick)?;
    fs::create_dir_all(out).map_err(RunError::io_at(out))?;
    let files = RenderedFiles {
        base: out.join(format!("{}_base.png", env.name)),
        canvas: out.join(format!("{}_t{tick:03}_canvas.png", dp.id)),
        front: out.join(format!("{}_t{tick:03}_front.png", dp.id)),
    };
    write_atomic(&files.base, &encode_png(&Raster::from(&render_base(&env.grid))))?;
    write_atomic(&files.canvas, &encode_png(&canvas))?;
    write_atomic(&files.front, &encode_png(&front))?;
    Ok(files)
}

/// Derives a Misleading twin of a Precise datapoint. The twin keeps the
/// demo, so its FD is annotated against the new sketch. With `out` unset
/// the twin is written next to the source as `<id>_m.json`.
pub fn cmd_make_misleading(datapoint_path: &Path, seed: u64, out: Option<&Path>) -> Result<(PathBuf, Datapoint), RunError> {
    let env = load_environment(&environment_of(datapoint_path)?)?;
    let dp = load_datapoint(datapoint_path)?;
    if dp.condition != Condition::Precise {
        return Err(DatasetError::Invalid(format!("{} is not a precise datapoint", dp.id)).into());
    }
    let sketch: Polyline = make_misleading(&env.grid, &dp.sketch, seed)?;
    let mut twin = Datapoint {
        id: format!("{}_m", dp.id),
        condition: Condition::Misleading,
        sketch,
        ..dp.clone()
    };
    if twin.demo.is_some() {
        twin = annotate_fd(&twin)?;
    }
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => datapoint_path.with_file_name(format!("{}.json", twin.id)),
    };
    save_datapoint(&path, &twin, &env.grid)?;
    Ok((path, twin))
}

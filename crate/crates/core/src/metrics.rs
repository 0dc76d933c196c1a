//! Episode metrics: discrete Fréchet distance, trajectory deviation distance
//! (interquartile mean over successful episodes), programmatic constraint
//! checking, and the per-environment report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Condition;
use crate::error::MetricsError;
use crate::geometry::{normalize_angle, Point2, TimedPoint};
use crate::world::{point_in_polygon, ConstraintRegion, RegionKind};

/// Discrete Fréchet distance between two point sequences.
pub fn discrete_frechet(a: &[Point2], b: &[Point2]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::DegenerateInput("Fréchet distance needs non-empty inputs"));
    }
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            let d = ai.distance(bj);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(cur[j - 1]).min(prev[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub region_id: String,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub datapoint_id: String,
    pub environment: String,
    pub condition: Condition,
    pub iteration: usize,
    pub success: bool,
    pub collided: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frechet_to_demo: Option<f64>,
    pub violations: Vec<Violation>,
    pub ticks: usize,
    pub duration: f64,
    /// Actions that fell back to the raw sketch.
    #[serde(default)]
    pub fallbacks: usize,
    /// Set when the policy failed and the episode was cut short.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_error: Option<String>,
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean of the values between the first and third quartile, bounds
/// inclusive. Fewer than four values fall back to the plain mean.
pub fn interquartile_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.len() < 4 {
        return Some(v.iter().sum::<f64>() / v.len() as f64);
    }
    let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
    let kept: Vec<f64> = v.into_iter().filter(|&x| x >= q1 && x <= q3).collect();
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Interquartile mean of the Fréchet distances of successful episodes.
pub fn trajectory_deviation_distance(outcomes: &[EpisodeOutcome]) -> Option<f64> {
    let fds: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.success)
        .filter_map(|o| o.frechet_to_demo)
        .collect();
    interquartile_mean(&fds)
}

/// Half-width of the time window used to estimate travel direction.
const DIRECTION_HALF_WINDOW: f64 = 0.25;
const WRONG_WAY_ANGLE: f64 = std::f64::consts::FRAC_PI_2;
const WRONG_WAY_DURATION: f64 = 1.0;

fn position_at(traj: &[TimedPoint], t: f64) -> Point2 {
    if t <= traj[0].t {
        return traj[0].p;
    }
    let last = traj[traj.len() - 1];
    if t >= last.t {
        return last.p;
    }
    let i = traj.partition_point(|s| s.t < t).max(1);
    let (a, b) = (traj[i - 1], traj[i]);
    if b.t <= a.t {
        return b.p;
    }
    a.p.lerp(b.p, (t - a.t) / (b.t - a.t))
}

/// Run boundaries: each maximal stretch of samples satisfying `pred`
/// reported as (first index, last index).
fn runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len() - 1));
    }
    out
}

/// Checks a timestamped trajectory against constraint regions.
///
/// * `ForbiddenArea`: one violation per entry into the polygon.
/// * `CrossOnlyAt`: one violation per stretch spent inside the guarded
///   polygon while outside every crossing polygon.
/// * `DirectionalLane`: one violation per stretch inside the lane where the
///   travel direction (displacement over ±0.25 s) differs from the lane
///   direction by more than 90° for longer than 1 s.
pub fn check_violations(traj: &[TimedPoint], regions: &[ConstraintRegion]) -> Vec<Violation> {
    let mut out = Vec::new();
    if traj.is_empty() {
        return out;
    }
    for region in regions {
        let inside: Vec<bool> = traj.iter().map(|s| point_in_polygon(&region.polygon, s.p)).collect();
        let flags: Vec<bool> = match region.kind {
            RegionKind::ForbiddenArea => inside,
            RegionKind::CrossOnlyAt => traj
                .iter()
                .zip(&inside)
                .map(|(s, &ins)| ins && !region.crossings.iter().any(|c| point_in_polygon(c, s.p)))
                .collect(),
            RegionKind::DirectionalLane => {
                let lane = region.direction.unwrap_or(0.0);
                traj.iter()
                    .zip(&inside)
                    .map(|(s, &ins)| {
                        if !ins {
                            return false;
                        }
                        let a = position_at(traj, s.t - DIRECTION_HALF_WINDOW);
                        let b = position_at(traj, s.t + DIRECTION_HALF_WINDOW);
                        let d = b - a;
                        d.norm() > 1e-3 && normalize_angle(d.angle() - lane).abs() > WRONG_WAY_ANGLE
                    })
                    .collect()
            }
        };
        for (s, e) in runs(&flags) {
            let hit = match region.kind {
                RegionKind::DirectionalLane => traj[e].t - traj[s].t > WRONG_WAY_DURATION,
                _ => true,
            };
            if hit {
                out.push(Violation {
                    region_id: region.id.clone(),
                    time: traj[s].t,
                });
            }
        }
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time).then_with(|| a.region_id.cmp(&b.region_id)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub environment: String,
    pub condition: Condition,
    pub episodes: usize,
    pub successes: usize,
    pub collisions: usize,
    pub violating: usize,
    pub sr: f64,
    pub cr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdd: Option<f64>,
    pub ivr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalRow {
    pub environment: String,
    pub episodes: usize,
    pub sr: f64,
}

/// SR/CR/TDD/IVR per environment and condition, with a total SR column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub totals: Vec<TotalRow>,
}

fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

pub fn aggregate_report(outcomes: &[EpisodeOutcome]) -> EvalReport {
    let mut groups: BTreeMap<(String, Condition), Vec<EpisodeOutcome>> = BTreeMap::new();
    for o in outcomes {
        groups
            .entry((o.environment.clone(), o.condition))
            .or_default()
            .push(o.clone());
    }
    let mut rows = Vec::new();
    for ((env, cond), group) in &groups {
        let n = group.len();
        let successes = group.iter().filter(|o| o.success).count();
        let collisions = group.iter().filter(|o| o.collided).count();
        let violating = group.iter().filter(|o| !o.violations.is_empty()).count();
        rows.push(ReportRow {
            environment: env.clone(),
            condition: *cond,
            episodes: n,
            successes,
            collisions,
            violating,
            sr: percent(successes, n),
            cr: percent(collisions, n),
            tdd: trajectory_deviation_distance(group),
            ivr: percent(violating, n),
        });
    }
    let mut totals: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for r in &rows {
        let t = totals.entry(r.environment.clone()).or_default();
        t.0 += r.episodes;
        // Condition SRs weighted by episode count.
        t.1 += r.sr * r.episodes as f64;
    }
    let totals = totals
        .into_iter()
        .map(|(environment, (episodes, weighted))| TotalRow {
            environment,
            episodes,
            sr: if episodes == 0 { 0.0 } else { weighted / episodes as f64 },
        })
        .collect();
    EvalReport { rows, totals }
}

impl EvalReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, environment: &str, condition: Condition) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.environment == environment && r.condition == condition)
    }

    /// Fixed-width text table.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:<10} {:>4} {:>6} {:>6} {:>9} {:>6}",
            "environment", "condition", "n", "SR", "CR", "TDD", "IVR"
        );
        let _ = writeln!(s, "{}", "-".repeat(59));
        for r in &self.rows {
            let tdd = r.tdd.map_or_else(|| "-".to_string(), |t| format!("{t:.3}m"));
            let _ = writeln!(
                s,
                "{:<12} {:<10} {:>4} {:>5.0}% {:>5.0}% {:>9} {:>5.0}%",
                r.environment,
                r.condition.to_string(),
                r.episodes,
                r.sr,
                r.cr,
                tdd,
                r.ivr
            );
        }
        if !self.totals.is_empty() {
            let _ = writeln!(s, "{}", "-".repeat(59));
            for t in &self.totals {
                let _ = writeln!(s, "{:<12} {:<10} {:>4} {:>5.0}%", t.environment, "Total", t.episodes, t.sr);
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

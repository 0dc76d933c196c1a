//! Waypoint tokens: a k-means codebook over ego-frame waypoints and the
//! extraction of token targets from demonstrations.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TokenizerError;
use crate::geometry::{resample_by_arclength, to_ego_frame, Point2, Polyline, Pose2};
use crate::sim::ACTION_LEN;

pub const DEFAULT_K: usize = 128;
pub const WAYPOINT_SPACING: f64 = 0.5;
const MAX_ITERATIONS: usize = 100;
const CONVERGENCE_SHIFT: f64 = 1e-6;

/// Four token ids, one per waypoint of an action.
pub type ActionTokens = [usize; ACTION_LEN];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointCodebook {
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    /// Largest distance from a training waypoint to its centroid.
    pub max_radius: f64,
    pub centroids: Vec<Point2>,
}

fn nearest(centroids: &[Point2], p: Point2) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = {
            let dx = c.x - p.x;
            let dy = c.y - p.y;
            dx * dx + dy * dy
        };
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn inertia_of(centroids: &[Point2], points: &[Point2]) -> f64 {
    points.iter().map(|&p| nearest(centroids, p).1).sum()
}

fn distinct_count(points: &[Point2], cap: usize) -> usize {
    let mut seen: Vec<Point2> = Vec::new();
    for &p in points {
        if !seen.contains(&p) {
            seen.push(p);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

fn kmeans_plus_plus(points: &[Point2], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point2> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|&p| nearest(&centroids, p).1).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
        }
        let c = points[pick.expect("more distinct points than centroids")];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(p.distance(c).powi(2));
        }
    }
    centroids
}

/// Lloyd iterations from `init`; returns final centroids and the number of
/// iterations run.
pub fn lloyd(points: &[Point2], mut centroids: Vec<Point2>) -> (Vec<Point2>, usize) {
    let k = centroids.len();
    let mut prev_inertia = f64::INFINITY;
    for iter in 1..=MAX_ITERATIONS {
        let assign: Vec<(usize, f64)> = points.iter().map(|&p| nearest(&centroids, p)).collect();
        let inertia: f64 = assign.iter().map(|a| a.1).sum();
        assert!(
            inertia <= prev_inertia * (1.0 + 1e-12) + 1e-12,
            "k-means inertia increased from {prev_inertia} to {inertia}"
        );
        prev_inertia = inertia;
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (&p, &(c, _)) in points.iter().zip(&assign) {
            sums[c].0 += p.x;
            sums[c].1 += p.y;
            sums[c].2 += 1;
        }
        let mut next: Vec<Point2> = sums
            .iter()
            .zip(&centroids)
            .map(|(&(sx, sy, n), &old)| {
                if n == 0 {
                    old
                } else {
                    Point2::new(sx / n as f64, sy / n as f64)
                }
            })
            .collect();
        // Empty clusters move to the point farthest from its centroid.
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if sums[c].2 > 0 {
                continue;
            }
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken.contains(i))
                .map(|(i, &p)| (i, p.distance(next[assign[i].0])))
                .filter(|&(_, d)| d > 0.0)
                .fold(None, |best: Option<(usize, f64)>, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                });
            if let Some((i, _)) = far {
                taken.push(i);
                next[c] = points[i];
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| a.distance(*b))
            .fold(0.0, f64::max);
        centroids = next;
        if shift < CONVERGENCE_SHIFT {
            return (centroids, iter);
        }
    }
    (centroids, MAX_ITERATIONS)
}

/// K-means with k-means++ seeding and Lloyd refinement, deterministic for
/// a given seed.
pub fn fit_codebook(waypoints: &[Point2], k: usize, seed: u64) -> Result<WaypointCodebook, TokenizerError> {
    if k == 0 {
        return Err(TokenizerError::DegenerateInput("K must be at least 1".into()));
    }
    if let Some(i) = waypoints.iter().position(|p| !p.is_finite()) {
        return Err(TokenizerError::DegenerateInput(format!("waypoint {i} is not finite")));
    }
    let distinct = distinct_count(waypoints, k);
    if waypoints.len() < k || distinct < k {
        return Err(TokenizerError::InsufficientData {
            needed: k,
            got: distinct,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_plus_plus(waypoints, k, &mut rng);
    let (centroids, iterations) = lloyd(waypoints, init);
    log::debug!("k-means converged after {iterations} iterations");
    let max_radius = waypoints
        .iter()
        .map(|&p| nearest(&centroids, p).1.sqrt())
        .fold(0.0, f64::max);
    Ok(WaypointCodebook {
        k,
        seed,
        max_radius,
        centroids,
    })
}

impl WaypointCodebook {
    /// Nearest centroid; ties go to the lowest id.
    pub fn encode(&self, w: Point2) -> usize {
        nearest(&self.centroids, w).0
    }

    pub fn decode(&self, token: usize) -> Result<Point2, TokenizerError> {
        self.centroids
            .get(token)
            .copied()
            .ok_or(TokenizerError::TokenOutOfRange { token, k: self.k })
    }

    pub fn encode_action(&self, waypoints: &[Point2; ACTION_LEN]) -> ActionTokens {
        waypoints.map(|w| self.encode(w))
    }

    pub fn decode_action(&self, tokens: &ActionTokens) -> Result<[Point2; ACTION_LEN], TokenizerError> {
        let mut out = [Point2::ORIGIN; ACTION_LEN];
        for (o, &t) in out.iter_mut().zip(tokens) {
            *o = self.decode(t)?;
        }
        Ok(out)
    }

    /// Sum of squared distances from `points` to their nearest centroid.
    pub fn inertia(&self, points: &[Point2]) -> f64 {
        inertia_of(&self.centroids, points)
    }

    pub fn validate(&self) -> Result<(), TokenizerError> {
        if self.k == 0 || self.centroids.len() != self.k {
            return Err(TokenizerError::Format(format!(
                "K = {} but {} centroids",
                self.k,
                self.centroids.len()
            )));
        }
        if self.max_radius.is_nan() || self.max_radius < 0.0 || self.centroids.iter().any(|c| !c.is_finite()) {
            return Err(TokenizerError::Format("non-finite or negative values".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("codebook serializes");
        s.push('\n');
        s
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, TokenizerError> {
        let cb: WaypointCodebook = serde_json::from_slice(bytes).map_err(|e| TokenizerError::Format(e.to_string()))?;
        cb.validate()?;
        Ok(cb)
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_json(&fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// One labeled action: the pose it starts from and its four waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionStep {
    /// Action index along the demo, which is also the episode tick.
    pub tick: usize,
    pub start_pose: Pose2,
    pub waypoints_ego: [Point2; ACTION_LEN],
}

/// Splits a demo into consecutive non-overlapping actions of four waypoints
/// at [`WAYPOINT_SPACING`]. Each action is expressed in the frame of its
/// first sample, with heading taken from the neighbouring samples; the last
/// action is padded with the final point.
pub fn supervision_actions(demo: &Polyline) -> Result<Vec<SupervisionStep>, TokenizerError> {
    if demo.length() < WAYPOINT_SPACING - 1e-9 {
        return Err(TokenizerError::DegenerateInput(format!(
            "demo length {:.3} m is shorter than one waypoint spacing",
            demo.length()
        )));
    }
    let q = resample_by_arclength(demo, WAYPOINT_SPACING)
        .map_err(|e| TokenizerError::DegenerateInput(e.to_string()))?;
    let q = q.points();
    let last = q.len() - 1;
    let mut out = Vec::new();
    let mut start = 0;
    while start < last {
        let (a, b) = (q[start.saturating_sub(1)], q[(start + 1).min(last)]);
        let heading = (b - a).angle();
        let pose = Pose2::from_point(q[start], heading);
        let mut w = [Point2::ORIGIN; ACTION_LEN];
        for (i, slot) in w.iter_mut().enumerate() {
            *slot = to_ego_frame(pose, q[(start + 1 + i).min(last)]);
        }
        out.push(SupervisionStep {
            tick: out.len(),
            start_pose: pose,
            waypoints_ego: w,
        });
        start += ACTION_LEN;
    }
    Ok(out)
}

/// [`supervision_actions`] with each action encoded to tokens.
pub fn extract_supervision(
    demo: &Polyline,
    cb: &WaypointCodebook,
) -> Result<Vec<(SupervisionStep, ActionTokens)>, TokenizerError> {
    Ok(supervision_actions(demo)?
        .into_iter()
        .map(|s| {
            let t = cb.encode_action(&s.waypoints_ego);
            (s, t)
        })
        .collect())
}

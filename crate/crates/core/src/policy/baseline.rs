//! Sketch-following planner: the sketch is cut into subgoals, each reached
//! by A* on an inflated grid, and the planned path is handed out four
//! waypoints at a time. Language is ignored. Legs that A* cannot solve
//! follow the raw sketch instead.

use serde::{Deserialize, Serialize};

use super::astar::{astar_with_escape, path_points};
use super::{Observation, Policy, PolicyResponse};
use crate::error::PolicyError;
use crate::geometry::{resample_by_arclength, to_ego_frame, Point2, Polyline, Pose2};
use crate::sim::ACTION_LEN;
use crate::tokenizer::WAYPOINT_SPACING;
use crate::world::{CellClass, OccupancyGrid, DEFAULT_FOOTPRINT_RADIUS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub subgoal_spacing: f64,
    pub footprint_radius: f64,
    /// Clearance added to the footprint when inflating obstacles.
    pub inflation_margin: f64,
    /// Distance at which a subgoal counts as visited.
    pub subgoal_reach: f64,
    /// Plan on a grid where Rock reads as Grass.
    pub legacy_perception: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            subgoal_spacing: 2.0,
            footprint_radius: DEFAULT_FOOTPRINT_RADIUS,
            inflation_margin: 0.25,
            subgoal_reach: 0.5,
            legacy_perception: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselinePlanner {
    cfg: BaselineConfig,
    perceived: OccupancyGrid,
    planning: OccupancyGrid,
    sketch: Polyline,
    sketch_s: Vec<f64>,
    subgoals: Vec<(Point2, f64)>,
    next: usize,
    fallbacks: usize,
}

impl BaselinePlanner {
    pub fn new(grid: &OccupancyGrid, sketch: &Polyline, cfg: BaselineConfig) -> Result<Self, PolicyError> {
        if sketch.length().is_nan() || sketch.length() <= 0.0 {
            return Err(PolicyError::DegenerateInput("sketch has zero length".into()));
        }
        if cfg.subgoal_spacing.is_nan() || cfg.subgoal_spacing <= 0.0 {
            return Err(PolicyError::DegenerateInput("subgoal spacing must be positive".into()));
        }
        let perceived = if cfg.legacy_perception {
            grid.reclassify(CellClass::Rock, CellClass::Grass)
        } else {
            grid.clone()
        };
        let planning = perceived.inflate(cfg.footprint_radius + cfg.inflation_margin);
        let samples = resample_by_arclength(sketch, cfg.subgoal_spacing)
            .map_err(|e| PolicyError::DegenerateInput(e.to_string()))?;
        let total = sketch.length();
        let subgoals = samples
            .points()
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, &p)| (p, (i as f64 * cfg.subgoal_spacing).min(total)))
            .collect();
        Ok(Self {
            sketch_s: sketch.cumulative_lengths(),
            cfg,
            perceived,
            planning,
            sketch: sketch.clone(),
            subgoals,
            next: 0,
            fallbacks: 0,
        })
    }

    /// Grid A* plans on, after perception and inflation.
    pub fn planning_grid(&self) -> &OccupancyGrid {
        &self.planning
    }

    pub fn subgoals(&self) -> Vec<Point2> {
        self.subgoals.iter().map(|s| s.0).collect()
    }

    pub fn fallback_count(&self) -> usize {
        self.fallbacks
    }

    /// Fallback leg: `start`, the sketch vertices strictly between
    /// arclengths `from` and `to_s`, then `to`.
    fn raw_leg(&self, start: Point2, from: f64, to: Point2, to_s: f64) -> Vec<Point2> {
        let mut pts = vec![start];
        pts.extend(
            self.sketch
                .points()
                .iter()
                .zip(&self.sketch_s)
                .filter(|&(_, &s)| s > from + 1e-9 && s < to_s - 1e-9)
                .map(|(&p, _)| p),
        );
        pts.push(to);
        pts
    }

    /// Subgoal `j` is visited once the robot is within reach of it, or
    /// nearby and beyond it in the direction of subgoal `j + 1`.
    fn passed(&self, robot: Point2, j: usize) -> bool {
        let (sg, _) = self.subgoals[j];
        let d = robot.distance(sg);
        if d <= self.cfg.subgoal_reach {
            return true;
        }
        let dir = self.subgoals[j + 1].0 - sg;
        d <= self.cfg.subgoal_spacing && (robot - sg).dot(dir) > 0.0
    }

    /// World-frame path from `robot` through the upcoming subgoals, at
    /// least one action long when the sketch allows.
    pub fn plan_path(&mut self, robot: Point2) -> (Vec<Point2>, bool) {
        let last = self.subgoals.len() - 1;
        while self.next < last && self.passed(robot, self.next) {
            self.next += 1;
        }
        let horizon = ACTION_LEN as f64 * WAYPOINT_SPACING;
        let mut path = vec![robot];
        let mut length = 0.0;
        let mut fell_back = false;
        let mut cur = robot;
        let mut cur_s = self.sketch.project(robot);
        for j in self.next..=last {
            if length >= horizon {
                break;
            }
            let (goal, goal_s) = self.subgoals[j];
            let leg = match astar_with_escape(&self.planning, &self.perceived, cur, goal) {
                Some(cells) => path_points(&self.planning, &cells, cur, goal),
                None => {
                    fell_back = true;
                    self.raw_leg(cur, cur_s, goal, goal_s)
                }
            };
            length += leg.windows(2).map(|w| w[0].distance(w[1])).sum::<f64>();
            path.extend_from_slice(&leg[1..]);
            cur = goal;
            cur_s = goal_s;
        }
        (path, fell_back)
    }

    fn segment_free(&self, a: Point2, b: Point2) -> bool {
        let seg = Polyline::new(vec![a, b]).expect("finite points");
        !self.planning.intersects_blocking(&seg)
    }

    /// Picks four points along `path` about [`WAYPOINT_SPACING`] apart.
    /// A step is shortened to the farthest path vertex in reach when the
    /// straight chord would cut through the inflated grid.
    fn select_waypoints(&self, path: &[Point2]) -> [Point2; ACTION_LEN] {
        let line = Polyline::new(path.to_vec()).expect("path is non-empty");
        let cum = line.cumulative_lengths();
        let total = line.length();
        let mut out = [line.last(); ACTION_LEN];
        let (mut prev, mut s_prev) = (line.first(), 0.0);
        for slot in &mut out {
            let target = s_prev + WAYPOINT_SPACING;
            if target >= total {
                *slot = line.last();
                prev = line.last();
                s_prev = total;
                continue;
            }
            let cand = line.point_at(target);
            let (p, s) = if self.segment_free(prev, cand) {
                (cand, target)
            } else {
                let between: Vec<usize> = (0..path.len()).filter(|&i| cum[i] > s_prev + 1e-9 && cum[i] < target).collect();
                match between.iter().rev().find(|&&i| self.segment_free(prev, path[i])) {
                    Some(&i) => (path[i], cum[i]),
                    None => (cand, target),
                }
            };
            *slot = p;
            prev = p;
            s_prev = s;
        }
        out
    }

    /// Next four ego-frame waypoints for a robot at `robot`.
    pub fn plan(&mut self, robot: Pose2) -> Result<[Point2; ACTION_LEN], PolicyError> {
        let (path, fell_back) = self.plan_path(robot.position);
        if path.len() < 2 {
            return Err(PolicyError::NoPath("sketch yields no waypoints".into()));
        }
        if fell_back {
            self.fallbacks += 1;
            log::debug!("baseline fell back to the raw sketch at {:?}", robot.position);
        }
        let world = self.select_waypoints(&path);
        Ok(world.map(|p| to_ego_frame(robot, p)))
    }
}

impl Policy for BaselinePlanner {
    fn name(&self) -> String {
        "baseline".into()
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<PolicyResponse, PolicyError> {
        self.plan(obs.pose).map(PolicyResponse::Waypoints)
    }

    fn fallbacks(&self) -> usize {
        self.fallbacks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::from_ego_frame;

    fn corridor() -> OccupancyGrid {
        let mut g = OccupancyGrid::new(200, 60, 0.1, Point2::ORIGIN, CellClass::Free);
        g.fill_rect(Point2::new(0.0, 0.0), Point2::new(20.0, 0.2), CellClass::Wall);
        g.fill_rect(Point2::new(0.0, 5.8), Point2::new(20.0, 6.0), CellClass::Wall);
        g
    }

    #[test]
    fn overtaken_subgoal_is_not_revisited() {
        let g = corridor();
        let sketch = Polyline::from_xy(&[(1.0, 3.05), (15.0, 3.05)]).unwrap();
        let mut b = BaselinePlanner::new(&g, &sketch, BaselineConfig::default()).unwrap();
        let robot = Pose2::new(3.4, 3.9, 0.0);
        let w = b.plan(robot).unwrap();
        for p in w {
            assert!(from_ego_frame(robot, p).x > 3.4, "{p:?}");
        }
    }

    #[test]
    fn straight_corridor_forward_waypoints() {
        let g = corridor();
        let sketch = Polyline::from_xy(&[(1.0, 3.05), (15.0, 3.05)]).unwrap();
        let mut b = BaselinePlanner::new(&g, &sketch, BaselineConfig::default()).unwrap();
        let w = b.plan(Pose2::new(1.0, 3.05, 0.0)).unwrap();
        for (i, p) in w.iter().enumerate() {
            assert!((p.x - 0.5 * (i + 1) as f64).abs() < 0.06, "{p:?}");
            assert!(p.y.abs() < 0.06);
        }
        assert_eq!(b.fallback_count(), 0);
    }

    #[test]
    fn detour_clears_inflated_cells() {
        let mut g = corridor();
        g.fill_rect(Point2::new(5.7, 2.5), Point2::new(6.3, 3.5), CellClass::Obstacle);
        let sketch = Polyline::from_xy(&[(1.0, 3.05), (15.0, 3.05)]).unwrap();
        let mut b = BaselinePlanner::new(&g, &sketch, BaselineConfig::default()).unwrap();
        let mut pose = Pose2::new(1.0, 3.05, 0.0);
        for _ in 0..10 {
            let w = b.plan(pose).unwrap();
            let mut pts = vec![pose.position];
            pts.extend(w.iter().map(|&p| from_ego_frame(pose, p)));
            let line = Polyline::new(pts.clone()).unwrap();
            assert!(!b.planning_grid().intersects_blocking(&line), "{pts:?}");
            let end = *pts.last().unwrap();
            pose = Pose2::from_point(end, (end - pts[pts.len() - 2]).angle());
        }
        assert_eq!(b.fallback_count(), 0);
        assert!(pose.position.x > 12.0);
    }

    #[test]
    fn wall_crossing_sketch_falls_back() {
        let mut g = corridor();
        g.fill_rect(Point2::new(5.0, 0.0), Point2::new(7.0, 6.0), CellClass::Wall);
        let sketch = Polyline::from_xy(&[(1.0, 3.0), (11.0, 3.0)]).unwrap();
        let mut b = BaselinePlanner::new(&g, &sketch, BaselineConfig::default()).unwrap();
        let mut pose = Pose2::new(1.0, 3.0, 0.0);
        let mut clipped = false;
        for _ in 0..4 {
            let w = b.plan(pose).unwrap();
            let mut pts = vec![pose.position];
            pts.extend(w.iter().map(|&p| from_ego_frame(pose, p)));
            clipped |= g.intersects_blocking(&Polyline::new(pts.clone()).unwrap());
            pose = Pose2::from_point(pts[4], 0.0);
        }
        assert!(clipped);
        assert!(b.fallback_count() > 0);
    }

    #[test]
    fn legacy_perception_ignores_rocks() {
        let mut g = OccupancyGrid::new(100, 60, 0.1, Point2::ORIGIN, CellClass::Grass);
        g.fill_disc(Point2::new(2.0, 3.1), 0.3, CellClass::Rock);
        let sketch = Polyline::from_xy(&[(1.0, 3.0), (9.0, 3.0)]).unwrap();
        let legacy = BaselineConfig {
            legacy_perception: true,
            ..BaselineConfig::default()
        };
        let mut blind = BaselinePlanner::new(&g, &sketch, legacy).unwrap();
        let mut seeing = BaselinePlanner::new(&g, &sketch, BaselineConfig::default()).unwrap();
        let start = Pose2::new(1.0, 3.0, 0.0);
        let path = |w: [Point2; 4]| {
            let mut pts = vec![start.position];
            pts.extend(w.iter().map(|&p| from_ego_frame(start, p)));
            Polyline::new(pts).unwrap()
        };
        let blind_path = path(blind.plan(start).unwrap());
        assert!(blind_path.points().iter().any(|&p| g.is_blocked(p, 0.3)));
        let seen = path(seeing.plan(start).unwrap());
        assert!(!seen.points().iter().any(|&p| g.is_blocked(p, 0.3)));
    }

    #[test]
    fn end_of_sketch_holds_position() {
        let g = corridor();
        let sketch = Polyline::from_xy(&[(1.0, 3.0), (3.0, 3.0)]).unwrap();
        let mut b = BaselinePlanner::new(&g, &sketch, BaselineConfig::default()).unwrap();
        let w = b.plan(Pose2::new(3.0, 3.0, 0.0)).unwrap();
        assert!(w.iter().all(|p| p.norm() < 1e-9));
        assert!(BaselinePlanner::new(&g, &Polyline::from_xy(&[(1.0, 3.0)]).unwrap(), BaselineConfig::default()).is_err());
    }
}

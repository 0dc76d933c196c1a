//! Demonstration replay: emits the next four demo samples ahead of the
//! robot, optionally quantized through a codebook.

use super::{Observation, Policy, PolicyResponse};
use crate::error::PolicyError;
use crate::geometry::{resample_by_arclength, to_ego_frame, Point2, Polyline, Pose2};
use crate::sim::ACTION_LEN;
use crate::tokenizer::{WaypointCodebook, WAYPOINT_SPACING};

/// Samples searched ahead of the current index when locating the robot.
const SEARCH_WINDOW: usize = 3 * ACTION_LEN;

#[derive(Debug, Clone)]
pub struct OraclePolicy {
    samples: Vec<Point2>,
    index: usize,
    codebook: Option<WaypointCodebook>,
}

impl OraclePolicy {
    pub fn new(demo: &Polyline, codebook: Option<WaypointCodebook>) -> Result<Self, PolicyError> {
        if demo.length().is_nan() || demo.length() <= 0.0 {
            return Err(PolicyError::DegenerateInput("demo has zero length".into()));
        }
        let samples = resample_by_arclength(demo, WAYPOINT_SPACING)
            .map_err(|e| PolicyError::DegenerateInput(e.to_string()))?
            .points()
            .to_vec();
        Ok(Self {
            samples,
            index: 0,
            codebook,
        })
    }

    /// Demo sample the robot was last matched to. Never decreases.
    pub fn progress(&self) -> usize {
        self.index
    }

    pub fn samples(&self) -> &[Point2] {
        &self.samples
    }

    /// Next four world-frame demo samples after the one nearest `robot`,
    /// clamped to the final sample.
    pub fn next_world_waypoints(&mut self, robot: Point2) -> [Point2; ACTION_LEN] {
        let last = self.samples.len() - 1;
        let end = (self.index + SEARCH_WINDOW).min(last);
        let mut best = self.index;
        for i in self.index..=end {
            if robot.distance(self.samples[i]) < robot.distance(self.samples[best]) {
                best = i;
            }
        }
        self.index = best;
        std::array::from_fn(|k| self.samples[(best + 1 + k).min(last)])
    }

    pub fn act_at(&mut self, pose: Pose2) -> PolicyResponse {
        let world = self.next_world_waypoints(pose.position);
        let ego = world.map(|p| to_ego_frame(pose, p));
        match &self.codebook {
            Some(cb) => PolicyResponse::Tokens(cb.encode_action(&ego)),
            None => PolicyResponse::Waypoints(ego),
        }
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<PolicyResponse, PolicyError> {
        Ok(self.act_at(obs.pose))
    }
}

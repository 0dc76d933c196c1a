//! Unicycle kinematics, collision bookkeeping and the per-tick episode loop.
//!
//! Each policy tick produces four ego-frame waypoints. The episode converts
//! them to the world frame at the current pose, hands them to a
//! [`Controller`], appends the achieved end position to the hindsight
//! trajectory and decides whether the episode has terminated.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geometry::{from_ego_frame, normalize_angle, Point2, Polyline, Pose2, TimedPoint};
use crate::world::{OccupancyGrid, DEFAULT_FOOTPRINT_RADIUS};

/// Number of waypoints in one action.
pub const ACTION_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub footprint_radius: f64,
    pub goal_radius: f64,
    /// Controller budget per policy tick, seconds.
    pub action_budget: f64,
    pub terminal_collision: bool,
    /// Free time required before a new collision event can be logged.
    pub collision_debounce: f64,
    /// Lookahead covered by one action, meters (waypoint spacing × 4).
    pub action_horizon: f64,
    pub min_ticks: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            v_max: 1.5,
            omega_max: 1.5,
            footprint_radius: DEFAULT_FOOTPRINT_RADIUS,
            goal_radius: 1.0,
            action_budget: 10.0,
            terminal_collision: false,
            collision_debounce: 0.5,
            action_horizon: 2.0,
            min_ticks: 20,
        }
    }
}

impl SimConfig {
    /// Tick limit for a task whose sketch is `sketch_length` meters long.
    pub fn max_ticks(&self, sketch_length: f64) -> usize {
        let raw = (3.0 * sketch_length / (self.v_max * self.action_horizon)).ceil();
        (raw.max(0.0) as usize).max(self.min_ticks)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2,
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub time: f64,
}

impl RobotState {
    pub fn at_rest(pose: Pose2) -> Self {
        Self {
            pose,
            linear_velocity: 0.0,
            angular_velocity: 0.0,
            time: 0.0,
        }
    }

    pub fn position(&self) -> Point2 {
        self.pose.position
    }
}

/// Clamps commands to `[0, v_max] × [-ω_max, ω_max]`.
pub fn clamp_command(v: f64, omega: f64, cfg: &SimConfig) -> (f64, f64) {
    let v = if v.is_finite() { v.clamp(0.0, cfg.v_max) } else { 0.0 };
    let w = if omega.is_finite() { omega.clamp(-cfg.omega_max, cfg.omega_max) } else { 0.0 };
    (v, w)
}

/// Integrates a constant twist exactly over `dt`: a straight segment when
/// the turn rate is negligible, otherwise a circular arc of radius v/ω.
pub fn step_kinematics(state: RobotState, v_cmd: f64, omega_cmd: f64, dt: f64, cfg: &SimConfig) -> RobotState {
    let (v, w) = clamp_command(v_cmd, omega_cmd, cfg);
    let Pose2 { position: p, heading: th } = state.pose;
    let (x, y, heading) = if w.abs() < 1e-9 {
        (p.x + v * dt * libm::cos(th), p.y + v * dt * libm::sin(th), th)
    } else {
        let th2 = th + w * dt;
        let r = v / w;
        (p.x + r * (libm::sin(th2) - libm::sin(th)), p.y - r * (libm::cos(th2) - libm::cos(th)), th2)
    };
    RobotState {
        pose: Pose2::new(x, y, normalize_angle(heading)),
        linear_velocity: v,
        angular_velocity: w,
        time: state.time + dt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub position: Point2,
}

/// Merges consecutive blocked steps into one event until the robot has been
/// free for the debounce interval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollisionMonitor {
    in_contact: bool,
    free_since: Option<f64>,
}

impl CollisionMonitor {
    pub fn observe(&mut self, blocked: bool, time: f64, position: Point2, debounce: f64) -> Option<CollisionEvent> {
        if blocked {
            self.free_since = None;
            if self.in_contact {
                return None;
            }
            self.in_contact = true;
            return Some(CollisionEvent { time, position });
        }
        if self.in_contact {
            let since = *self.free_since.get_or_insert(time);
            if time - since >= debounce - 1e-9 {
                self.in_contact = false;
                self.free_since = None;
            }
        }
        None
    }
}

/// One simulation step inside a world. A step whose end position would be
/// blocked keeps the rotation but cancels the translation, and is reported
/// to the monitor.
pub fn step_in_world(
    state: RobotState,
    v_cmd: f64,
    omega_cmd: f64,
    cfg: &SimConfig,
    world: &OccupancyGrid,
    monitor: &mut CollisionMonitor,
) -> (RobotState, Option<CollisionEvent>) {
    let mut next = step_kinematics(state, v_cmd, omega_cmd, cfg.dt, cfg);
    let blocked = world.is_blocked(next.pose.position, cfg.footprint_radius);
    if blocked {
        next.pose.position = state.pose.position;
        next.linear_velocity = 0.0;
    }
    let event = monitor.observe(blocked, next.time, next.pose.position, cfg.collision_debounce);
    (next, event)
}

/// Result of executing one action.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracking {
    pub state: RobotState,
    pub trace: Vec<RobotState>,
    pub collisions: Vec<CollisionEvent>,
    /// Number of targets reached, in order.
    pub reached: usize,
}

/// Executes world-frame waypoints in closed loop.
pub trait Controller {
    fn track(
        &self,
        start: RobotState,
        targets: &[Point2],
        world: &OccupancyGrid,
        cfg: &SimConfig,
        budget: f64,
        monitor: &mut CollisionMonitor,
    ) -> Result<Tracking, SimError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeStatus {
    Running,
    Success,
    Timeout,
    /// Only reachable with `terminal_collision = true`.
    Collided,
}

/// One line of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub pose: Pose2,
    pub action_waypoints_world: Vec<Point2>,
    pub collisions: Vec<CollisionEvent>,
    pub status: EpisodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub datapoint_id: String,
    pub robot: RobotState,
    /// Achieved end-of-action positions, seeded with the start position.
    pub hindsight: Polyline,
    pub collision_events: Vec<CollisionEvent>,
    pub status: EpisodeStatus,
    pub tick: usize,
    pub goal: Point2,
    pub max_ticks: usize,
    /// Robot positions at every simulation step, starting with the start
    /// position.
    pub trace: Vec<TimedPoint>,
    monitor: CollisionMonitor,
}

impl EpisodeState {
    pub fn new(datapoint_id: impl Into<String>, start: Pose2, goal: Point2, max_ticks: usize) -> Self {
        let robot = RobotState::at_rest(start);
        Self {
            datapoint_id: datapoint_id.into(),
            robot,
            hindsight: Polyline::new(vec![start.position]).expect("start pose is finite"),
            collision_events: Vec::new(),
            status: EpisodeStatus::Running,
            tick: 0,
            goal,
            max_ticks,
            trace: vec![TimedPoint::new(0.0, start.position)],
            monitor: CollisionMonitor::default(),
        }
    }

    pub fn is_running(&self) -> bool {
        self.status == EpisodeStatus::Running
    }

    pub fn collided(&self) -> bool {
        !self.collision_events.is_empty()
    }

    pub fn trace_polyline(&self) -> Polyline {
        Polyline::new(self.trace.iter().map(|tp| tp.p).collect()).expect("trace is never empty")
    }

    /// Runs one action of exactly four ego-frame waypoints.
    pub fn advance(
        &mut self,
        world: &OccupancyGrid,
        action_waypoints: &[Point2],
        controller: &dyn Controller,
        cfg: &SimConfig,
    ) -> Result<TickRecord, SimError> {
        if !self.is_running() {
            return Err(SimError::NotRunning);
        }
        if action_waypoints.len() != ACTION_LEN {
            return Err(SimError::ContractViolation(format!(
                "expected {ACTION_LEN} waypoints, got {}",
                action_waypoints.len()
            )));
        }
        let pose = self.robot.pose;
        let targets: Vec<Point2> = action_waypoints.iter().map(|&w| from_ego_frame(pose, w)).collect();
        let tracking = controller.track(self.robot, &targets, world, cfg, cfg.action_budget, &mut self.monitor)?;
        self.trace
            .extend(tracking.trace.iter().map(|s| TimedPoint::new(s.time, s.pose.position)));
        self.robot = tracking.state;
        self.collision_events.extend(tracking.collisions.iter().copied());
        self.hindsight
            .push(self.robot.pose.position)
            .map_err(|e| SimError::ContractViolation(e.to_string()))?;
        self.tick += 1;
        if check_success(self, self.goal, cfg.goal_radius) {
            self.status = EpisodeStatus::Success;
        } else if cfg.terminal_collision && !tracking.collisions.is_empty() {
            self.status = EpisodeStatus::Collided;
        } else if self.tick >= self.max_ticks {
            self.status = EpisodeStatus::Timeout;
        }
        Ok(TickRecord {
            tick: self.tick,
            pose: self.robot.pose,
            action_waypoints_world: targets,
            collisions: tracking.collisions,
            status: self.status,
            policy_latency_ms: None,
        })
    }
}

pub fn check_success(ep: &EpisodeState, goal: Point2, goal_radius: f64) -> bool {
    ep.robot.pose.position.distance(goal) <= goal_radius
}

//! Proportional-derivative waypoint tracking for a unicycle robot.
//!
//! The law acts on the bearing error `e` to the current target:
//!
//! ```text
//! ω = clamp(kp_ang·e + kd_ang·(e − e_prev)/dt, ±ω_max)
//! v = clamp(kp_lin·distance·max(0, cos e), 0, v_max)
//! ```
//!
//! so the robot turns in place while the target is more than 90° off its
//! heading. `e` wraps at ±π, where the commanded turn direction flips.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geometry::{normalize_angle, Point2, Pose2};
use crate::sim::{step_in_world, CollisionMonitor, Controller, RobotState, SimConfig, Tracking, ACTION_LEN};
use crate::world::OccupancyGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdGains {
    pub kp_lin: f64,
    pub kp_ang: f64,
    pub kd_ang: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Switching distance for intermediate waypoints.
    pub accept_radius: f64,
    /// Stopping distance for the last waypoint of an action.
    pub final_accept_radius: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            kp_lin: 0.5,
            kp_ang: 5.0,
            kd_ang: 0.5,
            v_max: 1.5,
            omega_max: 1.5,
            accept_radius: 0.3,
            final_accept_radius: 0.1,
        }
    }
}

impl PdGains {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("kp_lin", self.kp_lin),
            ("kp_ang", self.kp_ang),
            ("kd_ang", self.kd_ang),
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
            ("accept_radius", self.accept_radius),
            ("final_accept_radius", self.final_accept_radius),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("gain `{name}` must be positive, got {v}"));
            }
        }
        if self.accept_radius >= 1.0 || self.final_accept_radius >= 1.0 {
            return Err("accept radii must be below 1 m".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub v: f64,
    pub omega: f64,
    pub heading_error: f64,
}

pub fn control_step(pose: Pose2, target: Point2, gains: &PdGains, prev_heading_error: f64, dt: f64) -> ControlOutput {
    let delta = target - pose.position;
    let distance = delta.norm();
    let e = if distance > 0.0 {
        normalize_angle(delta.angle() - pose.heading)
    } else {
        0.0
    };
    let omega = (gains.kp_ang * e + gains.kd_ang * normalize_angle(e - prev_heading_error) / dt)
        .clamp(-gains.omega_max, gains.omega_max);
    let v = (gains.kp_lin * distance * libm::cos(e).max(0.0)).clamp(0.0, gains.v_max);
    ControlOutput {
        v,
        omega,
        heading_error: e,
    }
}

fn bearing_error(pose: Pose2, target: Point2) -> f64 {
    let delta = target - pose.position;
    if delta.norm() > 0.0 {
        normalize_angle(delta.angle() - pose.heading)
    } else {
        0.0
    }
}

/// Drives through `targets` in order, switching to the next one inside the
/// accept radius, until the last is reached or `budget` seconds elapse.
pub fn track_waypoints(
    start: RobotState,
    targets: &[Point2],
    gains: &PdGains,
    cfg: &SimConfig,
    world: &OccupancyGrid,
    budget: f64,
    monitor: &mut CollisionMonitor,
) -> Result<Tracking, SimError> {
    if targets.len() != ACTION_LEN {
        return Err(SimError::ContractViolation(format!(
            "expected {ACTION_LEN} targets, got {}",
            targets.len()
        )));
    }
    if budget.is_nan() || budget <= 0.0 {
        return Err(SimError::ContractViolation(format!("budget must be positive, got {budget}")));
    }
    let radius = |i: usize| {
        if i + 1 == targets.len() {
            gains.final_accept_radius
        } else {
            gains.accept_radius
        }
    };
    let steps = (budget / cfg.dt + 1e-9).floor() as usize;
    let mut state = start;
    let mut trace = Vec::with_capacity(steps.min(256));
    let mut collisions = Vec::new();
    let mut idx = 0;
    let mut prev_error: Option<f64> = None;
    let advance = |idx: &mut usize, prev: &mut Option<f64>, pos: Point2| {
        while *idx < targets.len() && pos.distance(targets[*idx]) <= radius(*idx) {
            *idx += 1;
            *prev = None;
        }
    };
    for _ in 0..steps {
        advance(&mut idx, &mut prev_error, state.pose.position);
        if idx == targets.len() {
            break;
        }
        let target = targets[idx];
        let e_prev = prev_error.unwrap_or_else(|| bearing_error(state.pose, target));
        let out = control_step(state.pose, target, gains, e_prev, cfg.dt);
        prev_error = Some(out.heading_error);
        let (next, event) = step_in_world(state, out.v, out.omega, cfg, world, monitor);
        state = next;
        collisions.extend(event);
        trace.push(state);
    }
    advance(&mut idx, &mut prev_error, state.pose.position);
    state.linear_velocity = 0.0;
    state.angular_velocity = 0.0;
    Ok(Tracking {
        state,
        trace,
        collisions,
        reached: idx,
    })
}

/// [`Controller`] backed by [`track_waypoints`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PdController {
    pub gains: PdGains,
}

impl PdController {
    pub fn new(gains: PdGains) -> Self {
        Self { gains }
    }
}

impl Controller for PdController {
    fn track(
        &self,
        start: RobotState,
        targets: &[Point2],
        world: &OccupancyGrid,
        cfg: &SimConfig,
        budget: f64,
        monitor: &mut CollisionMonitor,
    ) -> Result<Tracking, SimError> {
        // Actuator limits are the tighter of the controller's and the robot's.
        let limits = SimConfig {
            v_max: cfg.v_max.min(self.gains.v_max),
            omega_max: cfg.omega_max.min(self.gains.omega_max),
            ..cfg.clone()
        };
        track_waypoints(start, targets, &self.gains, &limits, world, budget, monitor)
    }
}

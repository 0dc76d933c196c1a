//! Tracks one four-waypoint action with the PD controller in an empty room.

use canvas_nav::control::{track_waypoints, PdGains};
use canvas_nav::geometry::{Point2, Pose2};
use canvas_nav::sim::{CollisionMonitor, RobotState, SimConfig};
use canvas_nav::world::{CellClass, OccupancyGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = OccupancyGrid::new(100, 100, 0.1, Point2::ORIGIN, CellClass::Free);
    let cfg = SimConfig::default();
    let targets = [Point2::new(2.5, 2.0), Point2::new(3.0, 2.1), Point2::new(3.45, 2.3), Point2::new(3.85, 2.6)];
    let start = RobotState::at_rest(Pose2::new(2.0, 2.0, 0.0));
    let t = track_waypoints(start, &targets, &PdGains::default(), &cfg, &world, cfg.action_budget, &mut CollisionMonitor::default())?;
    println!("reached {}/{} waypoints in {} steps", t.reached, targets.len(), t.trace.len());
    for s in t.trace.iter().step_by(5) {
        println!("  t={:.1} s ({:.2}, {:.2}) heading {:+.2}", s.time, s.pose.position.x, s.pose.position.y, s.pose.heading);
    }
    println!("final ({:.2}, {:.2})", t.state.pose.position.x, t.state.pose.position.y);
    Ok(())
}

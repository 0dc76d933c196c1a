//! Unicycle kinematics: a constant-curvature command closes a circle.

use canvas_nav::geometry::Pose2;
use canvas_nav::sim::{step_kinematics, RobotState, SimConfig};

fn main() {
    let cfg = SimConfig::default();
    let (v, omega) = (0.5, std::f64::consts::FRAC_PI_4);
    let period = std::f64::consts::TAU / omega;
    let steps = (period / cfg.dt).round() as usize;
    let mut s = RobotState::at_rest(Pose2::new(0.0, 0.0, 0.0));
    let mut farthest: f64 = 0.0;
    for _ in 0..steps {
        s = step_kinematics(s, v, omega, cfg.dt, &cfg);
        farthest = farthest.max(s.position().norm());
    }
    println!("{steps} steps of {} s, radius {:.2} m", cfg.dt, v / omega);
    println!("farthest point {farthest:.3} m, final offset {:.2e} m, heading {:.2e} rad", s.position().norm(), s.pose.heading);
}

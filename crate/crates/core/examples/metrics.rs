//! Constraint violations and trajectory deviation on hand-made traces.

use canvas_nav::dataset::{load_environment, Condition};
use canvas_nav::geometry::{Point2, TimedPoint};
use canvas_nav::metrics::{check_violations, interquartile_mean, trajectory_deviation_distance, EpisodeOutcome};

fn outcome(id: &str, condition: Condition, fd: f64) -> EpisodeOutcome {
    EpisodeOutcome {
        datapoint_id: id.into(),
        environment: "demo".into(),
        condition,
        iteration: 0,
        success: true,
        collided: false,
        frechet_to_demo: Some(fd),
        violations: Vec::new(),
        ticks: 10,
        duration: 1.0,
        fallbacks: 0,
        policy_error: None,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = load_environment(&std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets/street"))?;
    let trace: Vec<TimedPoint> = (0..=40).map(|i| TimedPoint::new(i as f64 * 0.1, Point2::new(16.0, 4.0 + i as f64 * 0.25))).collect();
    for v in check_violations(&trace, &env.regions) {
        println!("violation: {} at t={:.1} s", v.region_id, v.time);
    }

    let fds = [0.1, 0.2, 0.2, 0.3, 5.0];
    println!("IQM of {fds:?} = {:.3}", interquartile_mean(&fds).unwrap());
    let outcomes: Vec<_> = fds.iter().enumerate().map(|(i, &fd)| outcome(&format!("dp_{i}"), Condition::Precise, fd)).collect();
    println!("TDD = {:?}", trajectory_deviation_distance(&outcomes));
    Ok(())
}

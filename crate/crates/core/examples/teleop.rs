//! Records a teleoperated demo with the server-clocked recorder and writes
//! the resulting demo, duration and FD into the datapoint.

use std::path::PathBuf;

use canvas_nav::dataset::{load_environment, TeleopRecorder};
use canvas_nav::sim::SimConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = load_environment(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets/gallery"))?;
    let dp = &env.datapoints[0];
    let mut rec = TeleopRecorder::new(dp.id.clone(), dp.start_pose, SimConfig::default());
    for tick in 0..60 {
        if tick % 3 == 0 {
            let omega = if tick < 30 { 0.0 } else { 0.4 };
            rec.command(0.8, omega)?;
        }
        rec.tick(&env.grid);
    }
    // Silence: the held command expires and the robot stops.
    for _ in 0..20 {
        rec.tick(&env.grid);
    }
    let collisions = rec.collisions();
    let (record, updated) = rec.finish(dp);
    let demo = updated.demo.as_ref().ok_or("no demo")?;
    println!("{} commands, {} samples, {collisions} collisions", record.commands.len(), record.samples.len());
    println!(
        "demo {:.2} m over {:.1} s, FD to sketch {:.2} m",
        demo.length(),
        updated.demo_duration.unwrap_or(0.0),
        updated.fd_sketch_demo.unwrap_or(f64::NAN)
    );
    Ok(())
}

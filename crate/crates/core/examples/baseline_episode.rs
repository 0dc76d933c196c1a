//! Runs the sketch-following baseline on one datapoint and prints the
//! per-tick log. `cargo run --example baseline_episode -- street dp_0003`

use std::path::PathBuf;

use canvas_nav::dataset::load_environment;
use canvas_nav::runner::{run_episode, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let env_name = args.next().unwrap_or_else(|| "street".into());
    let id = args.next().unwrap_or_else(|| "dp_0001".into());
    let env = load_environment(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets").join(&env_name))?;
    let dp = env.datapoints.iter().find(|d| d.id == id).ok_or("unknown datapoint")?;
    let mut log = Vec::new();
    let outcome = run_episode(&RunConfig::default(), &env, dp, 0, None, Some(&mut log))?;
    for line in String::from_utf8(log)?.lines().take(5) {
        println!("{line}");
    }
    println!("...");
    println!(
        "{env_name}/{id}: success {}, collided {}, {} ticks, FD to demo {:?}, {} violations",
        outcome.success,
        outcome.collided,
        outcome.ticks,
        outcome.frechet_to_demo,
        outcome.violations.len()
    );
    Ok(())
}

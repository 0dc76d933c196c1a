//! Derives a misleading sketch from a precise datapoint and compares the
//! sketch-to-demo Fréchet distances.

use std::path::PathBuf;

use canvas_nav::dataset::{load_environment, make_misleading, sketch_demo_fd, validate_condition, Condition};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = load_environment(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets/office"))?;
    for dp in env.datapoints.iter().filter(|d| d.condition == Condition::Precise).take(3) {
        let demo = dp.demo.as_ref().ok_or("datapoint has no demo")?;
        let twin = make_misleading(&env.grid, &dp.sketch, 1)?;
        validate_condition(&env.grid, &twin, Condition::Misleading)?;
        println!(
            "{}: precise FD {:.2} m, misleading FD {:.2} m",
            dp.id,
            sketch_demo_fd(&dp.sketch, demo)?,
            sketch_demo_fd(&twin, demo)?
        );
    }
    Ok(())
}

//! Renders the canvas and front view of a datapoint's start pose to PNGs.
//! `cargo run --example render_views -- datasets/street/datapoints/dp_0001.json out/`

use std::path::PathBuf;

use canvas_nav::dataset::{load_datapoint, load_environment};
use canvas_nav::render::{encode_png, render_base, render_canvas, render_front_view, Raster};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dp_path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets/street/datapoints/dp_0001.json"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let env = load_environment(dp_path.parent().and_then(|p| p.parent()).ok_or("not in <env>/datapoints")?)?;
    let dp = load_datapoint(&dp_path)?;

    let base = render_base(&env.grid);
    let canvas = render_canvas(&env.grid, dp.sketch.points(), &[], Some(dp.start_pose));
    let front = render_front_view(&env.grid, dp.start_pose)?;
    std::fs::create_dir_all(&out)?;
    for (name, img) in [("base", Raster::from(&base)), ("canvas", Raster::from(&canvas)), ("front", Raster::from(&front))] {
        let path = out.join(format!("{}_{}_{name}.png", env.name, dp.id));
        std::fs::write(&path, encode_png(&img))?;
        println!("wrote {} ({}x{})", path.display(), img.width, img.height);
    }
    Ok(())
}

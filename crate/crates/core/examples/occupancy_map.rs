//! Loads a bundled map, casts rays and plans an A* path across it.
//! `cargo run --example occupancy_map -- datasets/office`

use std::path::PathBuf;

use canvas_nav::geometry::{polyline_length, Polyline};
use canvas_nav::policy::astar_points;
use canvas_nav::world::load_map_dir;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets/office"));
    let (grid, regions) = load_map_dir(&dir)?;
    let (w, h) = grid.extent();
    println!("{}: {}x{} cells at {} m, {w} x {h} m, {} regions", dir.display(), grid.width(), grid.height(), grid.resolution(), regions.len());

    let free: Vec<_> = (0..grid.height())
        .flat_map(|r| (0..grid.width()).map(move |c| (c, r)))
        .filter(|&(c, r)| !grid.get(c, r).is_blocking())
        .map(|(c, r)| grid.cell_center(c, r))
        .collect();
    let (start, goal) = (free[free.len() / 4], free[3 * free.len() / 4]);
    for k in 0..4 {
        let dir = k as f64 * std::f64::consts::FRAC_PI_2;
        let (range, hit) = grid.raycast(start, dir, 20.0)?;
        println!("ray {:>3}°: {range:.2} m, hit {:?}", k * 90, hit.map(|c| c.name()));
    }
    match astar_points(&grid, start, goal) {
        Some(path) => println!("A* {start:?} -> {goal:?}: {} points, {:.2} m", path.len(), polyline_length(&Polyline::new(path)?)),
        None => println!("no path between {start:?} and {goal:?}"),
    }
    Ok(())
}

//! Fits a small waypoint codebook on the office demos and round-trips an
//! action through it.

use std::path::PathBuf;

use canvas_nav::dataset::load_environment;
use canvas_nav::tokenizer::{fit_codebook, supervision_actions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = load_environment(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets/office"))?;
    let mut corpus = Vec::new();
    let mut actions = Vec::new();
    for demo in env.datapoints.iter().filter_map(|d| d.demo.as_ref()) {
        for step in supervision_actions(demo)? {
            corpus.extend(step.waypoints_ego);
            actions.push(step);
        }
    }
    let cb = fit_codebook(&corpus, 32, 0)?;
    println!("K = {} over {} waypoints: inertia {:.3}, max_radius {:.3} m", cb.k, corpus.len(), cb.inertia(&corpus), cb.max_radius);
    let step = &actions[actions.len() / 2];
    let tokens = cb.encode_action(&step.waypoints_ego);
    let decoded = cb.decode_action(&tokens)?;
    println!("tokens {tokens:?}");
    for (w, d) in step.waypoints_ego.iter().zip(decoded) {
        println!("  ({:+.2}, {:+.2}) -> ({:+.2}, {:+.2})", w.x, w.y, d.x, d.y);
    }
    Ok(())
}

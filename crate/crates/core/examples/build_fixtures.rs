//! Regenerates the bundled datasets and their K=128 codebook:
//! `cargo run --release --example build_fixtures -- datasets`.

use std::path::PathBuf;

use canvas_nav::dataset::{load_dataset, Condition};
use canvas_nav::fixtures::{build_all, write_environment};
use canvas_nav::runner::{fit_dataset_codebook, CodebookFit, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "datasets".into()));
    for env in build_all()? {
        write_environment(&root, &env)?;
        let mean_fd = |c: Condition| {
            let fds: Vec<f64> = env
                .datapoints
                .iter()
                .filter(|d| d.condition == c)
                .filter_map(|d| d.fd_sketch_demo)
                .collect();
            (fds.len(), fds.iter().sum::<f64>() / fds.len().max(1) as f64)
        };
        let (np, fp) = mean_fd(Condition::Precise);
        let (nm, fm) = mean_fd(Condition::Misleading);
        println!(
            "{:8} {:2} precise (mean FD {fp:.2} m), {:2} misleading (mean FD {fm:.2} m)",
            env.name, np, nm
        );
    }
    let cfg = RunConfig {
        workers: 0,
        ..RunConfig::default()
    };
    let (cb, corpus) = fit_dataset_codebook(&cfg, &load_dataset(&root)?, &CodebookFit::default())?;
    cb.save(&root.join("codebook_k128.json"))?;
    println!("codebook: K={} over {} waypoints, max_radius {:.3} m", cb.k, corpus.len(), cb.max_radius);
    Ok(())
}

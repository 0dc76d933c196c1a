//! Evaluates the demo-replaying oracle through the bundled token codebook
//! on the office oracle suite and writes the reports.

use std::path::PathBuf;

use canvas_nav::policy::PolicyKind;
use canvas_nav::runner::{cmd_eval, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets");
    let cfg = RunConfig {
        datasets: vec![data.join("office")],
        suite: Some("oracle".into()),
        policy: PolicyKind::Oracle,
        codebook: Some(data.join("codebook_k128.json")),
        iterations: 3,
        workers: 0,
        out: std::env::temp_dir().join("canvas-nav-oracle-eval"),
        ..RunConfig::default()
    };
    let summary = cmd_eval(&cfg)?;
    print!("{}", summary.report.render_text());
    println!("reports in {}", summary.out_dir.display());
    Ok(())
}

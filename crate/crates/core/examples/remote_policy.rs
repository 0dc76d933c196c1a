//! Evaluates a policy served over the wire protocol. A local reference
//! server answers every request with the same four tokens.

use std::path::PathBuf;

use canvas_nav::policy::remote::{EchoMode, ReferenceServer};
use canvas_nav::policy::PolicyKind;
use canvas_nav::runner::{cmd_eval, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets");
    let server = ReferenceServer::spawn(EchoMode::Tokens([0, 0, 0, 0]))?;
    let cfg = RunConfig {
        datasets: vec![data.join("office")],
        datapoints: vec!["dp_0001".into(), "dp_0002".into()],
        policy: PolicyKind::Remote(format!("tcp://{}", server.addr())),
        codebook: Some(data.join("codebook_k128.json")),
        iterations: 1,
        out: std::env::temp_dir().join("canvas-nav-remote-eval"),
        ..RunConfig::default()
    };
    let summary = cmd_eval(&cfg)?;
    print!("{}", summary.report.render_text());
    Ok(())
}

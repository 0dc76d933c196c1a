use std::path::{Path, PathBuf};

use canvas_nav::geometry::Point2;
use canvas_nav::policy::remote::{EchoMode, ReferenceServer};
use canvas_nav::policy::PolicyKind;
use canvas_nav::runner::{cmd_eval, RunConfig};

fn datasets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../datasets")
}

fn config(endpoint: String, out: &Path) -> RunConfig {
    RunConfig {
        datasets: vec![datasets().join("office")],
        datapoints: vec!["dp_0001".into()],
        policy: PolicyKind::Remote(endpoint),
        codebook: Some(datasets().join("codebook_k128.json")),
        iterations: 1,
        out: out.to_path_buf(),
        ..RunConfig::default()
    }
}

#[test]
fn remote_waypoints_drive_the_robot() {
    let tmp = tempfile::tempdir().unwrap();
    let w = [Point2::new(0.5, 0.0), Point2::new(1.0, 0.0), Point2::new(1.5, 0.0), Point2::new(2.0, 0.0)];
    let server = ReferenceServer::spawn(EchoMode::Waypoints(w)).unwrap();
    let summary = cmd_eval(&config(format!("http://{}", server.addr()), tmp.path())).unwrap();
    let o = &summary.outcomes[0];
    assert!(o.policy_error.is_none(), "{:?}", o.policy_error);
    assert!(o.ticks > 1);
    assert!(tmp.path().join("report.json").is_file());
}

#[test]
fn remote_errors_end_the_episode() {
    let tmp = tempfile::tempdir().unwrap();
    let server = ReferenceServer::spawn(EchoMode::Error("model offline".into())).unwrap();
    let summary = cmd_eval(&config(format!("tcp://{}", server.addr()), tmp.path())).unwrap();
    let o = &summary.outcomes[0];
    assert!(!o.success);
    assert!(o.policy_error.as_deref().unwrap().contains("model offline"), "{:?}", o.policy_error);
}

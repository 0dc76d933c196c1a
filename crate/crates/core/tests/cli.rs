use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use canvas_nav::dataset::{load_datapoint, load_environment, Condition};
use canvas_nav::geometry::{Point2, Polyline};
use canvas_nav::tokenizer::{supervision_actions, WaypointCodebook};
use canvas_nav::tools::SupervisionRecord;

/// Set to regenerate the render goldens.
const BLESS_ENV: &str = "CANVAS_NAV_BLESS";

fn datasets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../datasets")
}

fn bundled_codebook() -> PathBuf {
    datasets().join("codebook_k128.json")
}

fn canvas_nav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canvas-nav"))
        .args(args)
        .env("CANVAS_NAV_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            copy_dir(&p, &to.join(e.file_name()));
        } else {
            fs::copy(&p, to.join(e.file_name())).unwrap();
        }
    }
}

/// Config selecting a couple of office datapoints for one iteration.
fn small_config(dir: &Path, datasets: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "datasets = [{:?}]\nenvironments = [\"office\"]\ndatapoints = [\"dp_0001\", \"dp_0002\"]\niterations = 1\n",
        s(datasets)
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn eval_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), &datasets());
    let out = tmp.path().join("run");
    let stdout = ok(&canvas_nav(&["eval", "--config", s(&cfg), "--seed", "3", "--out", s(&out)]));
    assert!(stdout.contains("wrote"), "{stdout}");
    for f in ["report.json", "report.txt", "outcomes.jsonl"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 3);
    assert_eq!(fs::read_to_string(out.join("outcomes.jsonl")).unwrap().lines().count(), 2);
    assert!(out.join("episodes/office/dp_0001_it0.jsonl").is_file());
}

#[test]
fn bad_config_and_policy_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "iterations = \"many\"\n").unwrap();
    assert_eq!(canvas_nav(&["eval", "--config", s(&bad)]).status.code(), Some(2));
    let unknown = tmp.path().join("unknown.toml");
    fs::write(&unknown, "no_such_key = 1\n").unwrap();
    assert_eq!(canvas_nav(&["eval", "--config", s(&unknown)]).status.code(), Some(2));
    assert_eq!(canvas_nav(&["eval", "--policy", "vlm"]).status.code(), Some(2));
    let missing = tmp.path().join("nope");
    assert_eq!(canvas_nav(&["eval", "--datasets", s(&missing)]).status.code(), Some(2));
}

#[test]
fn corrupt_datapoint_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("datasets");
    copy_dir(&datasets().join("office"), &root.join("office"));
    fs::write(root.join("office/datapoints/dp_0001.json"), b"{\"id\": ").unwrap();
    let cfg = small_config(tmp.path(), &root);
    let out = canvas_nav(&["eval", "--config", s(&cfg), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dp_0001"));
}

#[test]
fn fit_codebook_prints_fit_quality() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cb.json");
    let office = datasets().join("office");
    let stdout = ok(&canvas_nav(&[
        "fit-codebook", "--datasets", s(&office), "--k", "16", "--rollout-rounds", "0", "--out", s(&out),
    ]));
    assert!(stdout.contains("inertia = "), "{stdout}");
    assert!(stdout.contains("max_radius = "), "{stdout}");
    let cb = WaypointCodebook::load(&out).unwrap();
    assert_eq!(cb.k, 16);
    let printed: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("max_radius = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((printed - cb.max_radius).abs() < 1e-6);
}

#[test]
fn export_supervision_covers_every_action() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), &datasets());
    let out = tmp.path().join("sup");
    let cb = bundled_codebook();
    let stdout = ok(&canvas_nav(&["export-supervision", "--config", s(&cfg), "--codebook", s(&cb), "--out", s(&out)]));
    assert!(stdout.contains("records"), "{stdout}");

    let codebook = WaypointCodebook::load(&cb).unwrap();
    let records: Vec<SupervisionRecord> = fs::read_to_string(out.join("supervision.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mut expected = 0;
    for id in ["dp_0001", "dp_0002"] {
        let dp = load_datapoint(&datasets().join(format!("office/datapoints/{id}.json"))).unwrap();
        let steps = supervision_actions(dp.demo.as_ref().unwrap()).unwrap();
        let mine: Vec<&SupervisionRecord> = records.iter().filter(|r| r.datapoint_id == id).collect();
        assert_eq!(mine.len(), steps.len(), "{id}");
        for (r, step) in mine.iter().zip(&steps) {
            assert_eq!(r.tick, step.tick);
            assert_eq!(r.language, dp.language);
            let decoded = codebook.decode_action(&r.target_tokens).unwrap();
            for (d, w) in decoded.iter().zip(&step.waypoints_ego) {
                assert!(d.distance(*w) <= codebook.max_radius + 1e-9, "{id} tick {}", r.tick);
            }
            assert!(out.join(&r.canvas_png_path).is_file());
            assert!(out.join(&r.front_png_path).is_file());
        }
        expected += steps.len();
    }
    assert_eq!(records.len(), expected);
}

#[test]
fn straight_demo_decodes_forward() {
    let codebook = WaypointCodebook::load(&bundled_codebook()).unwrap();
    let demo = Polyline::new(vec![Point2::new(1.0, 2.0), Point2::new(9.0, 2.0)]).unwrap();
    for step in supervision_actions(&demo).unwrap() {
        let decoded = codebook.decode_action(&codebook.encode_action(&step.waypoints_ego)).unwrap();
        let mut prev = 0.0;
        for d in decoded {
            assert!(d.x > prev, "{decoded:?}");
            assert!(d.y.abs() <= codebook.max_radius);
            prev = d.x;
        }
    }
}

#[test]
fn export_rejects_wrong_k() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), &datasets());
    let out = canvas_nav(&[
        "export-supervision", "--config", s(&cfg), "--codebook", s(&bundled_codebook()), "--k", "64",
        "--out", s(&tmp.path().join("sup")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("K = 128"));
}

#[test]
fn export_on_empty_dataset_writes_empty_file() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("datasets");
    copy_dir(&datasets().join("office"), &root.join("office"));
    for e in fs::read_dir(root.join("office/datapoints")).unwrap().flatten() {
        fs::remove_file(e.path()).unwrap();
    }
    let out = tmp.path().join("sup");
    let office = root.join("office");
    let stdout = ok(&canvas_nav(&[
        "export-supervision", "--datasets", s(&office), "--codebook", s(&bundled_codebook()), "--out", s(&out),
    ]));
    assert!(stdout.contains("wrote 0 records"), "{stdout}");
    assert_eq!(fs::read(out.join("supervision.jsonl")).unwrap(), b"");
}

#[test]
fn render_matches_goldens() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var_os(BLESS_ENV).is_some();
    let tmp = tempfile::tempdir().unwrap();
    for (env, id, tick) in [("office", "dp_0001", 0), ("street", "dp_0003", 2), ("orchard", "dp_0002", 1)] {
        let dp = datasets().join(format!("{env}/datapoints/{id}.json"));
        let out = tmp.path().join(env);
        ok(&canvas_nav(&["render", s(&dp), "--tick", &tick.to_string(), "--out", s(&out)]));
        for entry in fs::read_dir(&out).unwrap().flatten() {
            let name = entry.file_name();
            let want = golden.join(env).join(&name);
            let got = fs::read(entry.path()).unwrap();
            if bless {
                fs::create_dir_all(want.parent().unwrap()).unwrap();
                fs::write(&want, &got).unwrap();
                continue;
            }
            let expected = fs::read(&want).unwrap_or_else(|_| panic!("missing golden {}", want.display()));
            assert!(got == expected, "{env}/{} differs from its golden", name.to_string_lossy());
        }
    }
}

#[test]
fn render_rejects_tick_past_demo() {
    let tmp = tempfile::tempdir().unwrap();
    let dp = datasets().join("office/datapoints/dp_0001.json");
    let out = canvas_nav(&["render", s(&dp), "--tick", "9999", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn make_misleading_writes_annotated_twin() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("datasets");
    copy_dir(&datasets().join("office"), &root.join("office"));
    let src = root.join("office/datapoints/dp_0001.json");
    let stdout = ok(&canvas_nav(&["make-misleading", s(&src), "--seed", "5"]));
    assert!(stdout.contains("FD"), "{stdout}");
    let twin = load_datapoint(&root.join("office/datapoints/dp_0001_m.json")).unwrap();
    let orig = load_datapoint(&src).unwrap();
    assert_eq!(twin.condition, Condition::Misleading);
    assert_eq!(twin.demo, orig.demo);
    assert_ne!(twin.sketch, orig.sketch);
    assert!(twin.fd_sketch_demo.unwrap() > orig.fd_sketch_demo.unwrap());
    load_environment(&root.join("office")).unwrap();

    let again = canvas_nav(&["make-misleading", s(&root.join("office/datapoints/dp_0001_m.json"))]);
    assert_eq!(again.status.code(), Some(3));
}

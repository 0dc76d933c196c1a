use std::fs;
use std::path::{Path, PathBuf};

use canvas_nav::dataset::{load_dataset, Condition};
use canvas_nav::fixtures::{build_all, load_suites, write_environment, ENVIRONMENTS, SUITE_ORACLE};

fn datasets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../datasets")
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn bundled_datasets_match_generator() {
    let tmp = tempfile::tempdir().unwrap();
    for env in build_all().unwrap() {
        write_environment(tmp.path(), &env).unwrap();
    }
    for name in ENVIRONMENTS {
        let (fresh, bundled) = (tmp.path().join(name), datasets().join(name));
        assert_eq!(files(&fresh), files(&bundled), "{name}: file sets differ");
        for f in files(&fresh) {
            assert!(fs::read(fresh.join(&f)).unwrap() == fs::read(bundled.join(&f)).unwrap(), "{name}/{} differs", f.display());
        }
    }
}

#[test]
fn every_datapoint_has_a_demo_and_fd() {
    for env in load_dataset(&datasets()).unwrap() {
        assert!(env.datapoints.len() >= 20, "{}", env.name);
        for dp in &env.datapoints {
            assert!(dp.demo.is_some() && dp.fd_sketch_demo.is_some(), "{}/{}", env.name, dp.id);
        }
        let suites = load_suites(&datasets().join(&env.name)).unwrap();
        for (suite, ids) in &suites {
            for id in ids {
                assert!(env.datapoints.iter().any(|d| &d.id == id), "{suite} names missing {id}");
            }
        }
    }
}

#[test]
fn office_oracle_suite_is_ten_precise_routes() {
    let suites = load_suites(&datasets().join("office")).unwrap();
    let ids = &suites[SUITE_ORACLE];
    assert_eq!(ids.len(), 10);
    let env = canvas_nav::dataset::load_environment(&datasets().join("office")).unwrap();
    for id in ids {
        let dp = env.datapoints.iter().find(|d| &d.id == id).unwrap();
        assert_eq!(dp.condition, Condition::Precise);
    }
}

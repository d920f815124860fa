use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn voxact(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_voxact"));
    cmd.args(args).current_dir(dir).env_remove("DETECTOR_ENDPOINT").env_remove("FIXTURE_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = voxact(dir, args, &[]);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
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

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn same_seed_gives_identical_datasets() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for name in ["a", "b"] {
        ok(d, &["gen-demos", "--task", "hand_over_item", "--seed", "9", "--episodes", "4", "--data", name, "--out", name]);
    }
    let (a, b) = (files(&d.join("a")), files(&d.join("b")));
    assert_eq!(a, b);
    assert!(a.iter().any(|p| p.starts_with("detections")));
    for p in a.iter().filter(|p| !p.ends_with("gen-demos.json")) {
        assert_eq!(std::fs::read(d.join("a").join(p)).unwrap(), std::fs::read(d.join("b").join(p)).unwrap(), "{}", p.display());
    }
    ok(d, &["gen-demos", "--task", "hand_over_item", "--seed", "10", "--episodes", "4", "--data", "c", "--out", "c"]);
    assert_ne!(std::fs::read(d.join("a/scenes.json")).unwrap(), std::fs::read(d.join("c/scenes.json")).unwrap());
}

#[test]
fn zero_episodes_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = voxact(tmp.path(), &["gen-demos", "--episodes", "0"], &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("episodes"));
}

#[test]
fn bad_flags_and_files_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&voxact(d, &["fit", "--task", "fold_laundry"], &[])), 2);
    assert_eq!(code(&voxact(d, &["fit", "--alpha", "1.5"], &[])), 2);
    assert_eq!(code(&voxact(d, &["fit", "--config", "missing.toml"], &[])), 2);
    assert_eq!(code(&voxact(d, &["fit", "--data", "nowhere"], &[])), 3);
    assert_eq!(code(&voxact(d, &["evaluate", "--model", "nowhere"], &[])), 3);
}

#[test]
fn oracle_rollouts_succeed_and_null_ones_do_not() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for task in ["open_drawer", "put_item_in_drawer", "open_jar", "hand_over_item"] {
        let data = format!("data/{task}");
        let out = format!("out/{task}");
        ok(d, &["gen-demos", "--task", task, "--seed", "2", "--episodes", "4", "--data", &data, "--out", &out]);
        let line = ok(d, &["rollout", "--task", task, "--seed", "2", "--policy", "oracle", "--eval-data", &data, "--out", &out]);
        assert!(line.contains("4/4 successful"), "{task}: {line}");
        assert_eq!(report(&d.join(&out).join("rollout.json"))["result"]["success_rate"], 1.0);
    }
    let line = ok(
        d,
        &["rollout", "--task", "open_jar", "--policy", "null", "--episodes", "2", "--eval-data", "data/open_jar", "--out", "out/null"],
    );
    assert!(line.contains("0/2 successful"), "{line}");
    let r = report(&d.join("out/null/rollout.json"));
    assert_eq!(r["result"]["outcomes"][0]["termination"]["kind"], "max_keyframes");
}

#[test]
fn evaluate_rejects_models_fit_on_another_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen-demos", "--episodes", "2", "--data", "train", "--seed", "4"]);
    ok(d, &["fit", "--data", "train", "--seed", "4"]);
    std::fs::write(d.join("small.toml"), "[grid]\ndims = [25, 25, 25]\n[knn]\nfactors = [5, 1]\n").unwrap();
    let out = voxact(d, &["evaluate", "--config", "small.toml", "--eval-data", "train"], &[]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn detector_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen-demos", "--episodes", "2", "--data", "train"]);
    let args = ["inspect-grid", "--data", "train", "--detector-mode", "service"];
    assert_eq!(code(&voxact(d, &args, &[])), 2);
    let dead = [("DETECTOR_ENDPOINT", "http://127.0.0.1:9")];
    assert_eq!(code(&voxact(d, &args, &dead)), 4);
    let fixtures = d.join("train");
    let fallback = voxact(d, &args, &[dead[0], ("FIXTURE_DIR", fixtures.to_str().unwrap())]);
    assert!(fallback.status.success(), "{}", String::from_utf8_lossy(&fallback.stderr));
    let r = report(&d.join("out/inspect-grid.json"));
    assert_eq!(r["command"], "inspect-grid");
    assert_eq!(r["result"]["dims"], serde_json::json!([50, 50, 50]));
    assert!(r["result"]["points"].as_u64().unwrap() > 0);
    assert!(d.join("out/inspect-grid.vox").exists());
}

use std::path::Path;
use std::process::{Command, Output};

fn evplab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evplab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EVPLAB_SEED")
        .output()
        .expect("spawn evplab")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let o = evplab(args, cwd);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(evplab(&["no-such-command"], dir.path()).status.code(), Some(1));
    assert_eq!(evplab(&["simulate", "--entry", "x", "--strategy", "cico"], dir.path()).status.code(), Some(1));
    assert_eq!(evplab(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"network\": 3}").unwrap();
    let o = evplab(&["simulate", "--net", "bad.json", "--entry", "905", "--strategy", "noevp"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = evplab(&["train", "--data", "missing"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = evplab(&["simulate", "--entry", "905", "--strategy", "warp"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_net_round_trips_through_simulate() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-net", "-o", "net.json"], dir.path());
    assert!(dir.path().join("net.json.manifest.json").exists());
    let out = ok(
        &["simulate", "--net", "net.json", "--seed", "2", "--entry", "905", "--strategy", "cico", "-o", "a"],
        dir.path(),
    );
    assert!(out.contains("CI-CO"), "{out}");
    for f in ["run.json", "metrics.json", "trajectory.csv", "events.jsonl"] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
    ok(&["simulate", "--seed", "2", "--entry", "905", "--strategy", "cico", "-o", "b"], dir.path());
    let a = manifest(&dir.path().join("a"));
    let b = manifest(&dir.path().join("b"));
    assert_eq!(a["outputs"], b["outputs"], "same scenario, same bytes");
    assert_eq!(a["seed"], 2);
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_evplab"))
        .args(["simulate", "--entry", "905", "--strategy", "noevp", "-o", "r"])
        .env("EVPLAB_SEED", "4")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("seed 4"));
    assert_eq!(manifest(&dir.path().join("r"))["seed"], 4);
}

#[test]
fn small_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(&["--jobs", "1", "gen-data", "--seeds", "1", "--offsets", "5", "-o", "data"], d);
    assert!(out.contains("5 scenarios (train 3, validation 1, test 1)"), "{out}");
    assert!(out.contains(" 0 violations"), "{out}");
    let csv = std::fs::read_to_string(d.join("data/dataset_I4_train.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 3 + 802 + 1);
    assert!(csv.lines().count() > 1);
    let scen: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("data/scenarios.json")).unwrap()).unwrap();
    assert_eq!(scen.as_array().unwrap().len(), 5);

    ok(&["train", "--data", "data", "--regressors", "linear", "-o", "cand"], d);
    for k in 2..=8 {
        assert!(d.join(format!("cand/I{k}.json")).exists());
    }
    let table = ok(&["select", "--data", "data", "--candidates", "cand", "-o", "models"], d);
    assert!(table.starts_with("| Intersection | NoPrThres | Curve | Cutoff |"), "{table}");
    assert_eq!(table.lines().count(), 2 + 7);

    let rep = ok(
        &["compare", "--data", "data", "--model", "models/corridor.json", "--strategies", "noevp,cico,mlevp", "-o", "rep"],
        d,
    );
    assert!(rep.contains("MLEVP"), "{rep}");
    for f in ["metrics.csv", "summary.csv", "paired.csv", "erv_travel_time_s.svg", "report.json"] {
        assert!(d.join("rep").join(f).exists(), "{f}");
    }
    let m = manifest(&d.join("rep"));
    assert!(m["outputs"].as_array().unwrap().iter().all(|o| o["sha256"].as_str().unwrap().len() == 64));

    let b = ok(&["bench", "--model", "models/corridor.json"], d);
    let v: serde_json::Value = serde_json::from_str(b.trim()).unwrap();
    assert!(v["factor"].as_f64().unwrap() > 0.0);
}

use std::path::Path;
use std::process::{Command, Output};

use sliceq_core::metrics::{parse_json, Stat};

fn sliceq(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sliceq"))
        .args(args)
        .current_dir(dir)
        .env_remove("SLICEQ_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = sliceq(&["run", "--scenario", "2", "--seed", "3", "--out-dir", "res"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("res/scenario2_seed3.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2401);
    assert!(csv.starts_with("t,q0_occ,q0_rate,q0_drops,q1_occ,"));
    let json = std::fs::read(dir.path().join("res/scenario2_seed3.json")).unwrap();
    let run = parse_json(&json).unwrap();
    assert_eq!(run.series.len(), 2400);
    assert_eq!(run.config["seed"], 3);
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sliceq"))
        .args(["run", "--seed", "1"])
        .current_dir(dir.path())
        .env("SLICEQ_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("from-env/scenario1_seed1.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let out = sliceq(&["run", "--scenario", "3", "--seed", "11", "--out-dir", "o"], dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    for ext in ["csv", "json"] {
        let a = std::fs::read(dirs[0].path().join(format!("o/scenario3_seed11.{ext}"))).unwrap();
        let b = std::fs::read(dirs[1].path().join(format!("o/scenario3_seed11.{ext}"))).unwrap();
        assert!(a == b, "{ext} differs");
    }
}

#[test]
fn invalid_epsilon_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[agent]\nepsilon = 1.5\n");
    let out = sliceq(&["run", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epsilon"), "{}", stderr(&out));
    assert!(!dir.path().join("out").exists());

    let out = sliceq(&["run", "--epsilon", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn negative_link_capacity_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[gateway]\nlink_capacity = -300.0\n");
    let out = sliceq(&["validate", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("link_capacity"));
}

#[test]
fn unsorted_schedule_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[scenario]\nmultipliers = [1.3, 1.8, 1.5, 2.0]\n");
    let out = sliceq(&["run", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("schedule"), "{}", stderr(&out));
}

#[test]
fn undersized_run_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = sliceq(&["run", "--phase-duration", "20"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("process cycle too short"), "{}", stderr(&out));
    // 90 pkt/s * 4 * 28 s = 10080 packets
    let out = sliceq(&["run", "--phase-duration", "28", "--out-dir", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn bad_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sliceq(&["run", "--scenario", "x"], dir.path()).status.code(), Some(2));
    assert_eq!(sliceq(&["sweep"], dir.path()).status.code(), Some(2));
    assert_eq!(sliceq(&["--help"], dir.path()).status.code(), Some(0));
    let out = sliceq(&["validate", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_aggregate_matches_per_seed_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = sliceq(&["sweep", "--scenario", "2", "--seeds", "1,2,3", "--out-dir", "s"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let s = dir.path().join("s");
    let mut conv = Vec::new();
    let mut drops = Vec::new();
    for (i, seed) in [1, 2, 3].iter().enumerate() {
        let json = std::fs::read(s.join(format!("sweep{i:03}_scenario2_seed{seed}.json"))).unwrap();
        let run = parse_json(&json).unwrap();
        conv.push(run.summary.convergence_rate.unwrap());
        drops.push(run.summary.queues[2].total_drops as f64);
    }
    let agg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(s.join("sweep_scenario2_aggregate.json")).unwrap()).unwrap();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let close = |a: &serde_json::Value, b: f64| (a.as_f64().unwrap() - b).abs() < 1e-9;
    assert!(close(&agg["aggregate"]["convergence_rate"]["mean"], mean(&conv)));
    assert!(close(&agg["aggregate"]["convergence_rate"]["stddev"], sd(&conv)));
    assert!(close(&agg["aggregate"]["queues"][2]["total_drops"]["mean"], mean(&drops)));
    assert!(close(&agg["aggregate"]["queues"][2]["total_drops"]["stddev"], sd(&drops)));
    assert_eq!(Stat::of(&conv).n, 3);
}

#[test]
fn model_command() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let out = sliceq(&["model", "--model", fixtures.join("duplicate_link.json").to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("duplicate interdomain link (D1, D2)"));

    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/model.json");
    let out = sliceq(&["model", "--model", shipped.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("D1: 3 queues"));
}

#[test]
fn shipped_configs_validate() {
    let dir = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["default", "scenario1", "scenario2", "scenario3", "from_model"] {
        let path = configs.join(format!("{name}.toml"));
        let out = sliceq(&["validate", "--config", path.to_str().unwrap()], dir.path());
        assert_eq!(out.status.code(), Some(0), "{name}: {}", stderr(&out));
    }
}

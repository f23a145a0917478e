use std::path::Path;
use std::process::Command;

use pwcert::harness::config::ExperimentConfig;
use pwcert::harness::io::{read_json, write_json};
use pwcert::harness::pipeline::LearnCheckpoint;
use pwcert::identify::AffineDynamics;
use pwcert::linalg::{Mat, Vector};
use pwcert::partition::Partition;
use pwcert::verify::discretize;

fn pwcert(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pwcert")).args(args).output().expect("binary runs")
}

fn write_system(dir: &Path, a: Mat) {
    let part = Partition::grid(&[-1.0, -1.0], &[1.0, 1.0], &[2, 2]).unwrap();
    let model = AffineDynamics { a, b: Mat::zeros(2, 1), c: Vector::zeros(2) };
    let gains = vec![(Mat::zeros(1, 2), Vector::zeros(1)); 4];
    let sys = discretize(&part, &vec![model; 4], &gains, &vec![Vector::zeros(2); 4], 0.1, part.domain(), 0.1).unwrap();
    write_json(&dir.join("system.json"), &sys).unwrap();
}

#[test]
fn marginal_system_exits_with_gap_limit() {
    let dir = tempfile::tempdir().unwrap();
    // zero drift over a unit step keeps x⁺ = x, so ΔV is identically zero
    write_system(dir.path(), Mat::zeros(2, 2));
    let out = pwcert(&["certify", "--from", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("certify.json").exists());
}

#[test]
fn expanding_system_exits_with_no_certificate() {
    let dir = tempfile::tempdir().unwrap();
    // x⁺ = x + 0.1 · 10 x = 2x
    write_system(dir.path(), Mat::identity(2, 2) * 10.0);
    let out = pwcert(&["certify", "--from", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = pwcert(&["roa", "--from", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    let out = pwcert(&["--cells", "3y3", "identify", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn staged_commands_share_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let mut cfg = ExperimentConfig::pendulum();
    cfg.partition.cells = vec![3, 3];
    cfg.episodes.count = 3000;
    let config = dir.path().join("small.toml");
    std::fs::write(&config, cfg.to_toml().unwrap()).unwrap();

    let out = pwcert(&["--config", config.to_str().unwrap(), "--seed", "3", "--out-dir", d, "identify"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck: LearnCheckpoint = read_json(&dir.path().join("learn.json")).unwrap();
    assert_eq!(ck.config.seed, 3);
    assert_eq!(ck.config.partition.cells, vec![3, 3]);
    assert_eq!(ck.episodes.len(), 3000);
    let text = serde_json::to_string(&ck).unwrap();
    assert_eq!(serde_json::from_str::<LearnCheckpoint>(&text).unwrap(), ck);

    let out = pwcert(&["control", "--from", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("system.json").exists());
    assert!(dir.path().join("uncertainty.json").exists());

    let out = pwcert(&["simulate", "--from", d, "--x0", "0.5,-0.5", "--horizon", "0.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 102);
    assert!(traj.lines().nth(1).unwrap().starts_with("0,0.5,-0.5,"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::Vector3;
use quadcatch::ballistics::{generate_observations, NoiseModel, ThrowSpec};
use quadcatch::experiments::{Config, Report};
use quadcatch::gmm::GaussianMixture;

fn quadcatch(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_quadcatch")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn smoke_run_prints_a_table() {
    let out = quadcatch(&["run", "--scenario", "smoke"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for m in ["plane", "mindist", "gmm"] {
        let line = text.lines().find(|l| l.starts_with(m)).unwrap();
        assert!(line.contains("1/1") && line.contains("100.0"), "{line}");
    }
}

#[test]
fn json_reports_pool_and_csv_has_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    quadcatch(&["run", "--scenario", "low-10", "--seed", "1", "--format", "json", "--out", path(&a)]);
    quadcatch(&["run", "--scenario", "low-10", "--seed", "2", "--format", "json", "--out", path(&b)]);
    let merged = dir.path().join("all.json");
    quadcatch(&["report", path(&a), path(&b), "--format", "json", "--out", path(&merged)]);
    let r: Report = serde_json::from_str(&fs::read_to_string(&merged).unwrap()).unwrap();
    assert_eq!(r.n_throws, 20);
    assert_eq!(r.rows.len(), 60);

    let csv = dir.path().join("gmm.csv");
    quadcatch(&["run", "--scenario", "low-10", "--method", "gmm", "--format", "csv", "--out", path(&csv)]);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 10);
}

#[test]
fn fitted_mixture_feeds_back_through_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let mix = dir.path().join("mixture.json");
    quadcatch(&["fit-gmm", "--out", path(&mix)]);
    let m: GaussianMixture = serde_json::from_str(&fs::read_to_string(&mix).unwrap()).unwrap();
    assert_eq!(m.k(), 1);

    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[gmm]\nmixture_file = \"mixture.json\"\n").unwrap();
    let with_file = quadcatch(&["--config", path(&cfg), "run", "--scenario", "low-10", "--format", "json"]);
    let without = quadcatch(&["run", "--scenario", "low-10", "--format", "json"]);
    let (x, y): (Report, Report) =
        (serde_json::from_slice(&with_file.stdout).unwrap(), serde_json::from_slice(&without.stdout).unwrap());
    assert_eq!(x.summaries, y.summaries);
}

#[test]
fn replay_reads_an_observation_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("throw.txt");
    let cfg = Config::default();
    let throw = ThrowSpec::new(Vector3::new(2.25, 0.0, 0.0), Vector3::new(-3.5, 0.0, 2.7), 0.5);
    let stream = generate_observations(&throw, &cfg.camera, &NoiseModel::noiseless(), 30.0, 5).unwrap();
    stream.write_records(fs::File::create(&log).unwrap()).unwrap();
    let out = quadcatch(&["replay", "--log", path(&log), "--method", "plane"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    let t_arrive: f64 = last[3].parse().unwrap();
    assert!((t_arrive - (0.5 + 2.0 / 3.5)).abs() < 1e-6, "{t_arrive}");
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[sim]\nperception_fps = -30.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_quadcatch")).args(["--config", path(&cfg), "run"]).output().unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_quadcatch")).args(["run", "--scenario", "nope"]).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
}

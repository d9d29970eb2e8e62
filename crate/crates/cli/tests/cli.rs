use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_choicecal");

// Short searches keep the fits quick; convergence is still expected.
const LIGHT: &str = "\
[estimation.aggregate.tabu]
restarts = 4
[estimation.individual.tabu]
restarts = 2
[shift.band]
n_sims = 200
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("CHOICECAL_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

/// Two-group synthetic dataset plus a light config in a fresh directory.
fn workspace(subjects: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("light.toml"), LIGHT).unwrap();
    let n = subjects.to_string();
    let o = run(
        dir.path(),
        &["--out", "sim", "--seed", "11", "simulate", "--subjects", &n, "--fraction", "0.7", "--shift-alpha", "0.6"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

const DATA: [&str; 4] = ["--pairs", "sim/pairs.csv", "--observations", "sim/observations.csv"];

fn with_data<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(DATA).collect()
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = run(dir.path(), &["--out", out, "--seed", "3", "simulate", "--subjects", "12"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["pairs.csv", "observations.csv", "truth.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between reruns");
    }
    let o = run(dir.path(), &["--out", "c", "--seed", "4", "simulate", "--subjects", "12"]);
    assert_eq!(code(&o), 0);
    assert_ne!(
        std::fs::read(dir.path().join("a/observations.csv")).unwrap(),
        std::fs::read(dir.path().join("c/observations.csv")).unwrap()
    );
}

#[test]
fn every_output_carries_hash_and_seed() {
    let dir = workspace(16);
    let o = run(dir.path(), &with_data(&["--out", "ing", "--seed", "21", "ingest"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let meta = &json(dir.path().join("ing/ingest.json"))["meta"];
    assert_eq!(meta["seed"], 21);
    let hash = meta["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    let csv = std::fs::read_to_string(dir.path().join("ing/frequencies.csv")).unwrap();
    let first = csv.lines().next().unwrap();
    assert!(first.starts_with('#'));
    assert!(first.contains(&format!("config_hash={hash}")));
    assert!(first.contains("seed=21"));
    // the output location does not enter the hash, the seed does
    run(dir.path(), &with_data(&["--out", "ing2", "--seed", "21", "ingest"]));
    run(dir.path(), &with_data(&["--out", "ing3", "--seed", "22", "ingest"]));
    assert_eq!(json(dir.path().join("ing2/ingest.json"))["meta"]["config_hash"], hash.as_str());
    assert_ne!(json(dir.path().join("ing3/ingest.json"))["meta"]["config_hash"], hash.as_str());
    let ingest = &json(dir.path().join("ing/ingest.json"))["result"];
    assert_eq!(ingest["n_pairs"], 91);
    assert_eq!(ingest["n_subjects"], 16);
}

#[test]
fn input_errors_exit_with_two() {
    let dir = workspace(8);
    let o = run(dir.path(), &["--out", "x", "simulate", "--subjects", "0"]);
    assert_eq!(code(&o), 2);

    let o = run(dir.path(), &["--out", "x", "ingest", "--pairs", "missing.csv", "--observations", "sim/observations.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.csv"));

    let o = run(dir.path(), &["--out", "x", "ingest", "--pairs", "sim/pairs.csv"]);
    assert_eq!(code(&o), 2);

    std::fs::write(dir.path().join("bad.toml"), "no_such_key = 1\n").unwrap();
    let o = run(dir.path(), &["--config", "bad.toml", "simulate"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no_such_key"));

    let o = run(dir.path(), &with_data(&["--out", "x", "fit", "--session", "3"]));
    assert_eq!(code(&o), 2);

    let obs = std::fs::read_to_string(dir.path().join("sim/observations.csv")).unwrap();
    std::fs::write(dir.path().join("broken.csv"), obs.replacen(",B\n", ",Z\n", 1)).unwrap();
    let o = run(
        dir.path(),
        &["--out", "x", "ingest", "--pairs", "sim/pairs.csv", "--observations", "broken.csv"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn qdt_aggregate_fit_reports_seven_parameters() {
    let dir = workspace(20);
    let o = run(
        dir.path(),
        &with_data(&["--config", "light.toml", "--out", "fit", "fit", "--model", "qdt", "--level", "aggregate"]),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit = &json(dir.path().join("fit/fit.json"))["result"]["aggregate"][0];
    assert_eq!(fit["model"], "qdt");
    let p = &fit["params"];
    let n = p["cpt"].as_object().unwrap().len() + ["a", "eta"].iter().filter(|k| p[**k].is_number()).count();
    assert_eq!(n, 7);
    let pairs = std::fs::read_to_string(dir.path().join("fit/fit_pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 2 + 91);
}

#[test]
fn non_convergence_exits_with_one() {
    let dir = workspace(8);
    std::fs::write(
        dir.path().join("starved.toml"),
        "[estimation.aggregate.tabu]\nrestarts = 1\n[estimation.aggregate.simplex]\nmax_evaluations = 10\n",
    )
    .unwrap();
    let o = run(
        dir.path(),
        &with_data(&["--config", "starved.toml", "--out", "fit", "fit", "--model", "logit-cpt"]),
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("did not converge"));
    assert!(dir.path().join("fit/fit.json").exists());
}

#[test]
fn flags_override_config_file() {
    let dir = workspace(8);
    std::fs::write(
        dir.path().join("c.toml"),
        "seed = 5\nout = \"from-file\"\n[simulate]\nsubjects = 6\nsessions = 1\n",
    )
    .unwrap();
    let o = run(dir.path(), &["--config", "c.toml", "simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = json(dir.path().join("from-file/truth.json"));
    assert_eq!(t["meta"]["seed"], 5);
    assert_eq!(t["result"]["subjects"].as_array().unwrap().len(), 6);

    let o = run(dir.path(), &["--config", "c.toml", "--seed", "9", "--out", "flag", "simulate", "--subjects", "4"]);
    assert_eq!(code(&o), 0);
    let t = json(dir.path().join("flag/truth.json"));
    assert_eq!(t["meta"]["seed"], 9);
    assert_eq!(t["result"]["subjects"].as_array().unwrap().len(), 4);
    let obs = std::fs::read_to_string(dir.path().join("flag/observations.csv")).unwrap();
    assert!(!obs.contains(",2,"), "sessions = 1 from the file should still apply");
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .current_dir(dir.path())
        .env("CHOICECAL_OUT", "env-out")
        .args(["simulate", "--subjects", "3"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("env-out/truth.json").exists());
}

#[test]
fn shift_and_cluster_outputs() {
    let dir = workspace(60);
    let o = run(dir.path(), &with_data(&["--config", "light.toml", "--out", "sh", "shift"]));
    assert!(code(&o) <= 1, "{}", stderr(&o));
    let s = &json(dir.path().join("sh/shift.json"))["result"];
    let beta = s["calibration"]["params"]["shift_beta"].as_f64().unwrap();
    assert!(beta > 0.0);
    let curve = std::fs::read_to_string(dir.path().join("sh/shift_curve.csv")).unwrap();
    assert!(curve.lines().nth(1).unwrap().contains("band_low"));
    assert_eq!(curve.lines().count(), 2 + 91);
    for f in ["rss_grid.csv", "clusters.csv"] {
        assert!(dir.path().join("sh").join(f).exists());
    }

    let o = run(dir.path(), &with_data(&["--out", "cl", "cluster"]));
    assert!(code(&o) <= 1, "{}", stderr(&o));
    let clusters = std::fs::read_to_string(dir.path().join("cl/clusters.csv")).unwrap();
    assert_eq!(clusters.lines().count(), 2 + 60);
    let c = &json(dir.path().join("cl/cluster.json"))["result"];
    assert!(c["homogeneity"].is_object());
}

#[test]
fn predictability_writes_tail_column() {
    let dir = workspace(16);
    let o = run(
        dir.path(),
        &with_data(&["--config", "light.toml", "--out", "pd", "predictability", "--threshold", "0.8"]),
    );
    assert!(code(&o) <= 1, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("pd/predictability_subjects.csv")).unwrap();
    let header = csv.lines().nth(1).unwrap();
    assert!(header.split(',').any(|h| h == "tail_above_0.8"), "{header}");
    assert_eq!(csv.lines().count(), 2 + 16);
    let p = &json(dir.path().join("pd/predictability.json"))["result"];
    assert_eq!(p["model"], "qdt");
    let mix = std::fs::read_to_string(dir.path().join("pd/mixture.csv")).unwrap();
    assert_eq!(mix.lines().count(), 2 + 92);
}

#[test]
fn predict_scores_second_session() {
    let dir = workspace(12);
    let o = run(dir.path(), &with_data(&["--config", "light.toml", "--out", "pr", "predict"]));
    assert!(code(&o) <= 1, "{}", stderr(&o));
    let subjects = std::fs::read_to_string(dir.path().join("pr/predict_subjects.csv")).unwrap();
    assert!(subjects.lines().nth(1).unwrap().contains("fraction_qdt"));
    assert_eq!(subjects.lines().count(), 2 + 12);
}

#[test]
fn report_is_complete_and_reproducible() {
    let dir = workspace(30);
    for out in ["r1", "r2"] {
        let o = run(dir.path(), &with_data(&["--config", "light.toml", "--out", out, "report"]));
        assert!(code(&o) <= 1, "{}", stderr(&o));
    }
    let r = &json(dir.path().join("r1/report.json"))["result"];
    assert_eq!(r["n_subjects"], 30);
    assert!(r["shift"].is_object());
    assert!(r["predictability"].is_object());
    assert_eq!(r["hierarchical"].as_array().unwrap().len(), 2);
    for f in [
        "report.json",
        "aggregate_params.csv",
        "fit_pairs.csv",
        "fit_subjects.csv",
        "shift_curve.csv",
        "rss_grid.csv",
        "clusters.csv",
        "predictability_subjects.csv",
        "mixture.csv",
    ] {
        let a = std::fs::read(dir.path().join("r1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("r2").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between reruns");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = workspace(10);
    for (out, t) in [("t1", "1"), ("t3", "3")] {
        let o = run(
            dir.path(),
            &with_data(&["--config", "light.toml", "--threads", t, "--out", out, "fit", "--level", "individual"]),
        );
        assert!(code(&o) <= 1, "{}", stderr(&o));
    }
    for f in ["fit.json", "fit_subjects.csv"] {
        let a = std::fs::read(dir.path().join("t1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("t3").join(f)).unwrap();
        assert_eq!(a, b, "{f} depends on the thread count");
    }
}

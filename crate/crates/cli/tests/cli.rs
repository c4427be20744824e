use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use etel::montecarlo::{sample_design, SplitMix64};
use etel::Design;
use serde_json::Value;

fn etel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etel")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn write_sample(dir: &Path, name: &str, design: &str, n: usize, seed: u64) -> PathBuf {
    let design: Design = design.parse().unwrap();
    let data = sample_design(&design, n, SplitMix64::for_replication(seed, 0));
    let path = dir.join(name);
    fs::write(&path, data.to_csv_string()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&etel(&["--help"])), 0);
    assert_eq!(code(&etel(&["mc", "--help"])), 0);
    assert_eq!(code(&etel(&["--version"])), 0);
    assert_eq!(code(&etel(&[])), 1);
    assert_eq!(code(&etel(&["estimate", "--bogus"])), 1);
    assert_eq!(code(&etel(&["frobnicate"])), 1);
}

#[test]
fn missing_file_names_the_path() {
    let out = etel(&["estimate", "--model", "mean_known_variance:1.0", "--family", "etel", "--data", "no/such/c.csv"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no/such/c.csv"), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn unknown_model_and_family_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sample(dir.path(), "c.csv", "mean_known_variance:1", 50, 1);
    let out = etel(&["estimate", "--model", "probit", "--family", "etel", "--data", s(&data)]);
    assert_eq!(code(&out), 1);
    let out = etel(&["estimate", "--model", "location", "--family", "gmm", "--data", s(&data)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn no_reweighting_is_exit_two() {
    // tight cluster: (x − θ)² − 1 < 0 at every observation for every θ
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tight.csv");
    let rows: Vec<String> = (0..20).map(|i| format!("{}", 0.01 * i as f64)).collect();
    fs::write(&path, rows.join("\n") + "\n").unwrap();
    let out = etel(&["estimate", "--model", "mean_known_variance:1.0", "--family", "etel", "--data", s(&path)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn estimate_model_c() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sample(dir.path(), "c.csv", "mean_known_variance:1", 1000, 21);
    let out = etel(&["estimate", "--model", "mean_known_variance:1.0", "--family", "etel", "--data", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["family"], "etel");
    assert_eq!(v["n"], 1000);
    assert_eq!(v["overid_df"], 1);
    assert!(v["theta_hat"][0].as_f64().unwrap().abs() < 0.15);
    let se = v["std_classical"][0].as_f64().unwrap();
    assert!((0.025..0.04).contains(&se), "{se}");
    assert!(v["std_robust"][0].as_f64().is_some());
    let p = v["p_overid"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    // --out writes the same document
    let file = dir.path().join("report.json");
    let out2 = etel(&["estimate", "--model", "mean_known_variance:1.0", "--family", "etel", "--data", s(&data), "--out", s(&file)]);
    assert_eq!(code(&out2), 0);
    assert!(out2.stdout.is_empty());
    assert_eq!(fs::read(&file).unwrap(), out.stdout);
}

#[test]
fn estimate_gel_family_has_no_robust_field() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sample(dir.path(), "k4.csv", "hall_horowitz:4", 200, 3);
    let out = etel(&["estimate", "--model", "hall_horowitz:4", "--family", "et", "--data", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out);
    assert!(v["std_robust"].is_null());
    assert!(v["bias"].is_null());
    assert_eq!(v["overid_df"], 3);
}

#[test]
fn test_at_estimate_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sample(dir.path(), "m.csv", "mean_known_variance:0.8", 400, 5);
    let est = etel(&["estimate", "--model", "mean_known_variance:0.8", "--family", "etel", "--data", s(&data)]);
    assert_eq!(code(&est), 0);
    let theta = json(&est)["theta_hat"][0].to_string();
    let out = etel(&["test", "--model", "mean_known_variance:0.8", "--data", s(&data), "--theta0", &theta]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["lr"]["stat"].as_f64().unwrap(), 0.0);
    assert_eq!(v["lr"]["p_value"].as_f64().unwrap(), 1.0);
    assert_eq!(v["lr"]["df"], 1);
    assert_eq!(v["overid"]["df"], 1);
    assert!(v["overid"]["stat"].as_f64().unwrap() > 0.0);
}

#[test]
fn test_far_from_estimate_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sample(dir.path(), "c.csv", "mean_known_variance:1", 500, 8);
    let out = etel(&["test", "--model", "mean_known_variance:1", "--data", s(&data), "--theta0", "-0.4"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out);
    assert!(v["lr"]["p_value"].as_f64().unwrap() < 1e-6);
    assert_eq!(v["theta0"][0].as_f64().unwrap(), -0.4);
}

#[test]
fn test_just_identified_notice() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sample(dir.path(), "c.csv", "mean_known_variance:1", 100, 9);
    let out = etel(&["test", "--model", "location", "--data", s(&data), "--theta0", "0.1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("zero degrees of freedom"), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["overid"]["df"], 0);
    assert_eq!(v["overid"]["stat"].as_f64().unwrap(), 0.0);
    assert_eq!(v["overid"]["p_value"].as_f64().unwrap(), 1.0);
}

#[test]
fn test_rejects_wrong_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sample(dir.path(), "c.csv", "mean_known_variance:1", 100, 9);
    let out = etel(&["test", "--model", "location", "--data", s(&data), "--theta0", "0.1,0.2"]);
    assert_eq!(code(&out), 1);
}

fn parse_weights(text: &str) -> Vec<(f64, f64)> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,nw"));
    lines
        .map(|l| {
            let (x, w) = l.split_once(',').unwrap();
            (x.parse().unwrap(), w.parse().unwrap())
        })
        .collect()
}

#[test]
fn weights_el_heavier_than_etel_under_misspecification() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sample(dir.path(), "m.csv", "mean_known_variance:0.8", 1000, 13);
    let max_weight = |family: &str| {
        let out = etel(&["weights", "--model", "mean_known_variance:0.8", "--family", family, "--data", s(&data)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let rows = parse_weights(&String::from_utf8(out.stdout).unwrap());
        assert_eq!(rows.len(), 1000);
        assert!(rows.windows(2).all(|w| w[0].0 <= w[1].0));
        let total: f64 = rows.iter().map(|r| r.1).sum();
        assert!((total - 1000.0).abs() < 1e-8, "{total}");
        rows.iter().fold(0.0f64, |m, r| m.max(r.1))
    };
    let (el, etel) = (max_weight("el"), max_weight("etel"));
    assert!(el > etel, "el {el} etel {etel}");
}

#[test]
fn weights_at_given_theta() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sample(dir.path(), "c.csv", "mean_known_variance:1", 300, 14);
    let file = dir.path().join("w.csv");
    let out = etel(&["weights", "--model", "mean_known_variance:1", "--family", "et", "--data", s(&data), "--theta", "0.0", "--out", s(&file)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = parse_weights(&fs::read_to_string(&file).unwrap());
    assert!(rows.iter().all(|r| r.1 > 0.0));
}

#[test]
fn mc_single_replication_has_no_std() {
    let out = etel(&["mc", "--design", "hall_horowitz:4", "--n", "100", "--reps", "1", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["n_valid"], 1);
    for f in v["families"].as_array().unwrap() {
        assert!(f.get("std_dev").is_none());
        assert!(f["mean_bias"][0].as_f64().is_some());
    }
}

fn run_mc(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["mc", "--design", "mean_known_variance:0.8", "--n", "80", "--reps", "12", "--seed", "99", "--out", s(dir)];
    args.extend_from_slice(extra);
    etel(&args)
}

#[test]
fn mc_outputs_are_deterministic_and_parse() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    for (dir, extra) in dirs.iter().zip([&["--workers", "1"][..], &[], &["--workers", "2"]]) {
        let out = run_mc(dir, extra);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(out.stdout.is_empty());
    }
    for file in ["summary.json", "replications.csv", "ecdf.csv"] {
        let first = fs::read(dirs[0].join(file)).unwrap();
        for d in &dirs[1..] {
            assert_eq!(fs::read(d.join(file)).unwrap(), first, "{file}");
        }
    }

    let summary: Value = serde_json::from_slice(&fs::read(dirs[0].join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_valid"], 12);
    assert_eq!(
        summary["n_attempted"].as_u64().unwrap(),
        12 + summary["n_discarded"].as_u64().unwrap()
    );
    let families: Vec<&str> = summary["families"].as_array().unwrap().iter().map(|f| f["family"].as_str().unwrap()).collect();
    assert_eq!(families, ["el", "et", "etel"]);

    let reps = fs::read_to_string(dirs[0].join("replications.csv")).unwrap();
    let mut lines = reps.lines();
    assert_eq!(lines.next(), Some("rep_index,seed,family,theta_hat,status"));
    let mut converged = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 5);
        cols[0].parse::<u64>().unwrap();
        cols[1].parse::<u64>().unwrap();
        if cols[4] == "converged" {
            cols[3].parse::<f64>().unwrap();
            converged += 1;
        }
    }
    assert!(converged >= 36);

    let ecdf = fs::read_to_string(dirs[0].join("ecdf.csv")).unwrap();
    let mut lines = ecdf.lines();
    assert_eq!(lines.next(), Some("family,theta"));
    let rows: Vec<(String, f64)> = lines
        .map(|l| {
            let (f, t) = l.split_once(',').unwrap();
            (f.to_string(), t.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 36);
    for fam in ["el", "et", "etel"] {
        let vals: Vec<f64> = rows.iter().filter(|r| r.0 == fam).map(|r| r.1).collect();
        assert_eq!(vals.len(), 12);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn mc_too_many_discards_writes_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = etel(&[
        "mc", "--design", "mean_known_variance:1", "--n", "1", "--reps", "2", "--seed", "1", "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let summary: Value = serde_json::from_slice(&fs::read(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_valid"], 0);
    assert_eq!(summary["n_attempted"], 6);
    assert!(tmp.path().join("replications.csv").exists());
}

#[test]
fn mc_rejects_bad_design() {
    let out = etel(&["mc", "--design", "hall_horowitz:1", "--n", "10", "--reps", "2", "--seed", "1"]);
    assert_eq!(code(&out), 1);
    let out = etel(&["mc", "--design", "hall_horowitz:4", "--n", "10", "--reps", "2"]);
    assert_eq!(code(&out), 1, "seed is mandatory");
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcause::simulation::{generate, DgpConfig};
use pcause::save_csv;
use sha2::{Digest, Sha256};

fn pcause(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcause"))
        .args(args)
        .env("PCAUSE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn sim_csv(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("sim.csv");
    let ds = generate(&DgpConfig::with_n(n, 11)).unwrap().dataset;
    save_csv(&ds, &path, "y", "a").unwrap();
    path
}

fn estimate(dir: &Path, extra: &[&str]) -> (PathBuf, Output) {
    let data = sim_csv(dir, 3000);
    let out = dir.join("fit.json");
    let mut args = vec![
        "estimate",
        "--data",
        data.to_str().unwrap(),
        "--outcome",
        "y",
        "--treatment",
        "a",
        "--covariates",
        "x1,x2,x3,x4",
        "--nuisance",
        "logistic",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = pcause(&args);
    (out, o)
}

#[test]
fn estimate_writes_fit_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (fit, o) = estimate(dir.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.contains("Robust std. error"));
    assert!(table.contains("Sample size: 3000 observations."));
    assert_eq!(table.lines().count(), 1 + 5 + 2);

    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fit).unwrap()).unwrap();
    let side = PathBuf::from(doc["manifest"].as_str().unwrap());
    assert!(side.ends_with("fit.json.manifest.json"));
    let man: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&side).unwrap()).unwrap();
    assert_eq!(man["subcommand"], "estimate");
    assert_eq!(man["seeds"][0], 3);
    let data = std::fs::read(dir.path().join("sim.csv")).unwrap();
    assert_eq!(man["inputs"][0]["sha256"], hex::encode(Sha256::digest(&data)));
}

#[test]
fn missing_column_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim_csv(dir.path(), 50);
    let o = pcause(&[
        "estimate", "--data", data.to_str().unwrap(), "--outcome", "y", "--treatment", "a",
        "--covariates", "x1,nope",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}

fn zero_fit(dir: &Path) -> PathBuf {
    // Logistic fit with beta = 0 everywhere, so PC is 1/2 at any profile.
    let (fit, o) = estimate(dir, &[]);
    assert!(o.status.success());
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fit).unwrap()).unwrap();
    for v in doc["beta"].as_array_mut().unwrap() {
        *v = serde_json::json!(0.0);
    }
    std::fs::write(&fit, doc.to_string()).unwrap();
    fit
}

#[test]
fn predict_at_zero_coefficients_gives_even_odds() {
    let dir = tempfile::tempdir().unwrap();
    let fit = zero_fit(dir.path());
    let o = pcause(&["predict", "--fit", fit.to_str().unwrap(), "--at", "x1=0.3,x2=-1,x3=2,x4=0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.starts_with("PC 0.5000"), "{s}");
    assert!(s.contains("odds of causation 1.00"), "{s}");
}

#[test]
fn predict_requires_every_covariate() {
    let dir = tempfile::tempdir().unwrap();
    let (fit, _) = estimate(dir.path(), &[]);
    let o = pcause(&["predict", "--fit", fit.to_str().unwrap(), "--at", "x1=0"]);
    assert_eq!(o.status.code(), Some(2));
}

fn pc_of(line: &str) -> Vec<f64> {
    line.split(|c: char| c == ' ' || c == '(' || c == ')' || c == ',')
        .filter_map(|t| t.parse().ok())
        .take(3)
        .collect()
}

#[test]
fn curve_endpoints_match_predict() {
    let dir = tempfile::tempdir().unwrap();
    let (fit, _) = estimate(dir.path(), &[]);
    let fit = fit.to_str().unwrap();
    let curve = dir.path().join("curve.csv");
    let o = pcause(&[
        "curve", "--fit", fit, "--vary", "x2", "--from", "-1.5", "--to", "2", "--steps", "7",
        "--at", "x1=0.1,x3=0,x4=1", "--out", curve.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&curve).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(text.lines().next().unwrap(), "x2,pc,ci_low,ci_high");
    assert_eq!(rows.len(), 8);
    assert!(curve.with_file_name("curve.csv.manifest.json").exists());
    for (row, x2) in [(&rows[0], "-1.5"), (&rows[7], "2")] {
        let p = pcause(&["predict", "--fit", fit, "--at", &format!("x1=0.1,x2={x2},x3=0,x4=1")]);
        let want = pc_of(&stdout(&p));
        for k in 0..3 {
            assert!((row[k + 1] - want[k]).abs() < 6e-5, "{row:?} vs {want:?}");
        }
    }
    // A zero-step curve is the single profile at `from`.
    let o = pcause(&["curve", "--fit", fit, "--vary", "x2", "--from", "-1.5", "--to", "9", "--steps", "0", "--at", "x1=0.1,x3=0,x4=1"]);
    let s = stdout(&o);
    assert_eq!(s.lines().count(), 2);
    assert!((s.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse::<f64>().unwrap() - rows[0][1]).abs() < 1e-12);
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    std::fs::write(&cfg, "sample_sizes = [1500]\nreplications = 2\neval_points = 50\nregimes = [\"oracle\"]\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = pcause(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
    let man = std::fs::read_to_string(dir.path().join("a.csv.manifest.json")).unwrap();
    assert!(man.contains("\"seeds\": [\n    9\n  ]"), "{man}");
}

#[test]
fn simulate_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "replications = 2\nunknown_key = 1\n").unwrap();
    let o = pcause(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("r.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn select_ranks_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim_csv(dir.path(), 3000);
    let json = dir.path().join("rank.json");
    let o = pcause(&[
        "select", "--data", data.to_str().unwrap(), "--outcome", "y", "--treatment", "a",
        "--covariates", "x1,x2,x3,x4", "--nuisance", "logistic",
        "--candidate", "full=logistic", "--candidate", "flat=logistic:",
        "--json", json.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rank: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(rank.as_array().unwrap().len(), 2);
    assert_eq!(rank[0]["candidate_id"], "full");
    assert!(stdout(&o).contains("full"));

    let bad = pcause(&[
        "select", "--data", data.to_str().unwrap(), "--outcome", "y", "--treatment", "a",
        "--covariates", "x1", "--candidate", "q=cubic",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

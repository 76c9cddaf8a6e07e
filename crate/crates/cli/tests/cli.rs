use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trajcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajcast")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = trajcast(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    trajcast(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

#[test]
fn help_matches_golden_files() {
    assert_eq!(ok(&["--help"]), golden("help.txt"));
    for sub in ["synth", "ingest", "backtest", "evaluate", "dm", "copula", "report"] {
        assert_eq!(ok(&[sub, "--help"]), golden(&format!("help_{sub}.txt")), "{sub}");
    }
}

#[test]
fn help_lists_the_documented_flags() {
    let all: String = ["synth", "backtest", "dm"].iter().map(|s| ok(&[s, "--help"])).collect();
    for flag in ["--config", "--out", "--seed", "--models", "--jobs", "--stride", "--loss", "--days", "--products"] {
        assert!(all.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--days", "130", "--products", "2", "--seed", "7", "--out", p(d)]);
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn ingest_rebuilds_a_synthetic_store() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let store = dir.path().join("store");
    ok(&["synth", "--days", "5", "--products", "2", "--out", p(&raw), "--trades"]);
    let out = ok(&[
        "ingest",
        "--trades",
        p(&raw.join("trades.csv")),
        "--da",
        p(&raw.join("da_prices.csv")),
        "--fundamentals",
        p(&raw.join("fundamentals.csv")),
        "--out",
        p(&store),
    ]);
    assert!(out.contains("10 product-days"), "{out}");
    assert!(store.join("grids.csv").exists());
}

#[test]
fn full_pipeline_is_rerunnable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok(&["synth", "--days", "44", "--products", "2", "--seed", "3", "--out", p(&data)]);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"in_sample_days": 40, "out_of_sample_days": 4, "members": 40, "copula_base": "RW.t"}"#).unwrap();
    let args = [
        "backtest", "--data", p(&data), "--out", p(&run), "--config", p(&cfg), "--models", "Naive,RW.N,RW.t", "--stride",
        "2", "--seed", "9", "--jobs", "1",
    ];
    ok(&args);
    let summary = fs::read(run.join("scores/summary.csv")).unwrap();
    ok(&["evaluate", "--data", p(&data), "--out", p(&run)]);
    assert_eq!(fs::read(run.join("scores/summary.csv")).unwrap(), summary);
    ok(&args);
    assert_eq!(fs::read(run.join("scores/summary.csv")).unwrap(), summary);

    let dm = ok(&["dm", "--out", p(&run), "--loss", "crps"]);
    assert!(dm.contains("RW.t"));
    assert!(run.join("dm/crps_pvalues.csv").exists());
    let table = ok(&["copula", "--data", p(&data), "--out", p(&run)]);
    assert!(table.contains("countermonotone"));
    assert!(run.join("copula/table.csv").exists());
    ok(&["report", "--out", p(&run)]);
    for f in ["es_by_hour.csv", "crps_by_step.csv", "pinball_by_level.csv"] {
        assert!(run.join("report").join(f).exists(), "{f}");
    }
    let config: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["seed"], 9);
    assert_eq!(config["stride"], 2);
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--days", "3", "--products", "1", "--out", p(&data)]);
    let out = p(&dir.path().join("run")).to_string();
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["backtest", "--data", p(&data)]), 2);
    assert_eq!(code(&["backtest", "--data", p(&data), "--out", &out, "--set", "bogus=1"]), 2);
    assert_eq!(code(&["backtest", "--data", p(&data), "--out", &out, "--set", "novalue"]), 2);
    assert_eq!(code(&["backtest", "--data", p(&data), "--out", &out, "--models", "NotAModel"]), 2);
    assert_eq!(code(&["backtest", "--data", p(&data), "--out", &out, "--stride", "0"]), 2);
    assert_eq!(code(&["dm", "--out", &out, "--loss", "mse"]), 2);
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"members": 10, "unknown_key": true}"#).unwrap();
    let res = trajcast(&["backtest", "--data", p(&data), "--out", &out, "--config", p(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error[usage]"));
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--days", "3", "--products", "1", "--out", p(&data)]);
    // three days cannot fill a 365-day window
    let res = trajcast(&["backtest", "--data", p(&data), "--out", p(&dir.path().join("run"))]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error[data]"));
    assert_eq!(code(&["report", "--out", p(&dir.path().join("missing"))]), 1);
    assert_eq!(code(&["evaluate", "--data", p(&dir.path().join("nowhere")), "--out", p(&data)]), 1);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mailbox_cli::commands::{CompareReport, JumpRecord};
use mailbox_cli::output::{Header, WithHeader};
use mailbox_cli::selftest::SelftestReport;

const BIN: &str = env!("CARGO_BIN_EXE_mailbox");

fn mailbox(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .env_remove("MAILBOX_SEED")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = mailbox(out, args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Data lines of a CSV file, without the comment header and column names.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(2)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = read(path);
    assert_eq!(actual, expected, "golden file {name} differs; rerun with UPDATE_GOLDEN=1 if intended");
}

#[test]
fn golden_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "7", "simulate", "--lambda", "0.8", "--horizon", "3"]);
    golden("trajectory.jsonl", &read(d.join("trajectory.jsonl")));
    ok(d, &["--seed", "7", "simulate", "--lambda", "0.8", "--horizon", "3", "--format", "csv"]);
    golden("trajectory.csv", &read(d.join("trajectory.csv")));
    ok(d, &["--seed", "7", "shape", "--eps", "0.04", "--s-grid", "0.5,1,12.5", "-n", "4"]);
    golden("shape.csv", &read(d.join("shape.csv")));
    ok(d, &["--seed", "7", "limit", "-n", "2", "--s-grid", "1,2", "--interval", "1:2"]);
    golden("limit_curves.csv", &read(d.join("limit_curves.csv")));
    golden("limit_jumps.jsonl", &read(d.join("limit_jumps.jsonl")));
    ok(d, &["--seed", "7", "stationary", "-n", "200", "--lambda", "0.5"]);
    golden("stationary_report.json", &read(d.join("stationary_report.json")));
}

#[test]
fn headers_carry_version_seed_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "11", "simulate", "--horizon", "2"]);
    let first = read(d.join("trajectory.jsonl")).lines().next().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    let h: Header = serde_json::from_value(v["header"].clone()).unwrap();
    assert_eq!(h.seed, 11);
    assert_eq!(h.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(h.config_hash.len(), 16);

    ok(d, &["--seed", "11", "shape", "-n", "2"]);
    let line = read(d.join("shape.csv")).lines().next().unwrap().to_string();
    assert!(line.starts_with("# mailbox ") && line.contains("seed=11") && line.contains("config_hash="));
}

#[test]
fn zero_horizon_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--horizon", "0"]);
    assert_eq!(read(dir.path().join("trajectory.jsonl")).lines().count(), 1);
    ok(dir.path(), &["simulate", "--horizon", "0", "--format", "csv"]);
    assert_eq!(read(dir.path().join("trajectory.csv")).lines().count(), 2);
}

#[test]
fn fixed_seed_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        ok(d, &["--seed", "3", "simulate", "--horizon", "200"]);
        ok(d, &["--seed", "3", "shape", "-n", "50"]);
        ok(d, &["--seed", "3", "limit", "-n", "20"]);
    }
    for f in ["trajectory.jsonl", "shape.csv", "limit_hull.csv", "limit_curves.csv", "limit_jumps.jsonl"] {
        assert_eq!(read(a.path().join(f)), read(b.path().join(f)), "{f}");
    }
}

#[test]
fn seed_comes_from_the_environment_unless_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str]| {
        let o = Command::new(BIN)
            .env("MAILBOX_SEED", "99")
            .args(extra)
            .arg("config")
            .output()
            .unwrap();
        String::from_utf8(o.stdout).unwrap()
    };
    assert!(run(&[]).contains("seed = 99"));
    assert!(run(&["--seed", "5"]).contains("seed = 5"));
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 42\n").unwrap();
    assert!(run(&["--config", cfg.to_str().unwrap()]).contains("seed = 42"));
}

#[test]
fn printed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN).env_remove("MAILBOX_SEED").args(["--seed", "8", "config"]).output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    let path = dir.path().join("printed.toml");
    std::fs::write(&path, &text).unwrap();
    let again = Command::new(BIN)
        .env_remove("MAILBOX_SEED")
        .args(["--config", path.to_str().unwrap(), "config"])
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn parameter_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: &[&[&str]] = &[
        &["stationary", "--lambda", "1.0"],
        &["stationary", "-n", "0"],
        &["shape", "--eps", "0.04", "--s-grid", "13"],
        &["limit", "--s-min", "1", "--interval", "0.5:2"],
        &["limit", "--s-min", "0"],
        &["compare", "--eps", "0.01,0.02"],
        &["compare", "--eps", "0.2", "--s", "1,3"],
        &["simulate", "--lambda", "-1"],
        &["selftest", "--geometric-lambda", "1.0"],
        &["--seed", "18446744073709551615", "simulate"],
        &["simulate", "--no-such-flag"],
    ];
    for args in cases {
        let o = mailbox(d, args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?} gave no diagnostic");
    }
    let o = mailbox(d, &["stationary", "--lambda", "1.0"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("transient"));
    let o = mailbox(d, &["selftest", "--geometric-lambda", "1.0"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("refusing"));
}

#[test]
fn empty_executions_track_the_idle_probability() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "21", "simulate", "--lambda", "0.5", "--horizon", "10000"]);
    let text = read(dir.path().join("trajectory.jsonl"));
    let idle: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["event_kind"] == "execution")
        .map(|v| v.get("priority").is_none() as u8 as f64)
        .collect();
    // Batch means absorb serial correlation.
    let b = idle.len() / 20;
    let means: Vec<f64> = idle.chunks(b).filter(|c| c.len() == b).map(|c| c.iter().sum::<f64>() / b as f64).collect();
    let m = mailbox_core::stats::mean(&means);
    let se = mailbox_core::stats::standard_error(&means);
    assert!((m - 0.5).abs() < 3.0 * se, "{m} ± {se}");
}

#[test]
fn stationary_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "22", "stationary", "--methods", "exact", "--lambda", "0.5", "-n", "100000"]);
    let rows = csv_rows(&read(d.join("stationary_samples.csv")));
    let zeros: Vec<f64> = rows.iter().map(|r| (r[3] == "0") as u8 as f64).collect();
    let se = (0.25 / zeros.len() as f64).sqrt();
    assert!((mailbox_core::stats::mean(&zeros) - 0.5).abs() < 3.0 * se);

    ok(d, &["--seed", "22", "stationary", "--methods", "exact,backward", "--delta", "0.5", "-n", "10000"]);
    let text = read(d.join("stationary_report.json"));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["tests"].as_array().unwrap().len(), 3);
    for t in v["tests"].as_array().unwrap() {
        assert!(t["p_value"].as_f64().unwrap() > 0.01, "{t}");
    }
}

#[test]
fn shape_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "23", "shape", "--eps", "0.04", "--s-grid", "1,12.5", "-n", "200"]);
    for r in csv_rows(&read(d.join("shape.csv"))) {
        if r[1] == "12.5" {
            assert_eq!(r[2], "0.0");
        }
    }
    ok(d, &["--seed", "23", "shape", "--eps", "0.01", "--s-grid", "1", "-n", "10000"]);
    let h: Vec<f64> = csv_rows(&read(d.join("shape.csv"))).iter().map(|r| r[2].parse().unwrap()).collect();
    let (m, se) = (mailbox_core::stats::mean(&h), mailbox_core::stats::standard_error(&h));
    assert!((m - 0.49).abs() < 3.0 * se, "{m} ± {se}");
}

#[test]
fn limit_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &["--seed", "24", "limit", "--s-min", "1", "-n", "10000", "--s-grid", "1000", "--interval", "1:2.718281828459045"],
    );
    let jumps: Vec<f64> = read(d.join("limit_jumps.jsonl"))
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<JumpRecord>(l).unwrap().count as f64)
        .collect();
    assert_eq!(jumps.len(), 10_000);
    let (m, se) = (mailbox_core::stats::mean(&jumps), mailbox_core::stats::standard_error(&jumps));
    assert!((m - 1.0).abs() < 3.0 * se, "{m} ± {se}");

    let h: Vec<f64> = csv_rows(&read(d.join("limit_curves.csv"))).iter().map(|r| r[2].parse().unwrap()).collect();
    let near_zero = h.iter().filter(|&&x| x < 0.01).count();
    assert!(near_zero as f64 >= 0.999 * h.len() as f64, "{near_zero}");
}

#[test]
fn compare_example() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "25", "compare", "--eps", "0.005", "--s", "1"]);
    let text = read(dir.path().join("compare_report.json"));
    let r: WithHeader<Header, CompareReport> = serde_json::from_str(&text).unwrap();
    assert_eq!(r.header.command, "compare");
    assert_eq!(r.body.two_sample.len(), 1);
    assert!(r.body.two_sample[0].report.p_value > 0.01, "{:?}", r.body.two_sample[0]);
    assert_eq!(r.body.limit_marginals[0].oracle, "derived");
}

#[test]
fn selftest_report_schema_round_trips() {
    let text = read(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden")
            .join("selftest_report_schema.json"),
    );
    let parsed: WithHeader<Header, SelftestReport> = serde_json::from_str(&text).unwrap();
    let back = serde_json::to_string_pretty(&parsed).unwrap() + "\n";
    assert_eq!(back, text);
}

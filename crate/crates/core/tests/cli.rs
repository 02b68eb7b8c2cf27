use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evosim_core::provider::API_KEY_ENV;
use evosim_core::report::{parse_csv, RunReport};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn evosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evosim")).args(args).env_remove(API_KEY_ENV).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn validate_config_accepts_shipped_examples() {
    for name in ["scenario1.toml", "scenario2.toml", "scenario3.toml"] {
        let o = evosim(&["validate-config", "--config", p(&fixture(name))]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}

#[test]
fn validate_config_rejects_broken_config() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    let text = std::fs::read_to_string(fixture("scenario1.toml")).unwrap().replace("number = 32", "number = 0");
    std::fs::write(&bad, text).unwrap();
    let o = evosim(&["validate-config", "--config", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error[E_SCENARIO]: "), "{err}");
    assert_eq!(err.lines().count(), 1);

    let o = evosim(&["validate-config", "--config", "/nonexistent.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[E_CONFIG]: "));
}

#[test]
fn usage_errors_exit_one_with_one_line() {
    for args in [
        &["run", "--config", "x.toml"][..],
        &["frobnicate"][..],
        &["report", "--record", "r.json", "--window", "zero", "--out", "o"][..],
    ] {
        let o = evosim(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err = stderr(&o);
        assert!(err.starts_with("error[E_USAGE]: "), "{err}");
        assert_eq!(err.lines().count(), 1, "{err}");
    }
}

#[test]
fn run_writes_record_csv_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = evosim(&["run", "--config", p(&fixture("scenario1.toml")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = RunReport::read(&out.join("run_record.json")).unwrap();
    assert!(report.complete);
    let (rounds, series) = parse_csv(&std::fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rounds, vec![0, 1, 2, 3]);
    assert_eq!(series.len(), report.series.len());
    let svg = std::fs::read_to_string(out.join("metrics.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
}

#[test]
fn seed_and_script_flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = evosim(&[
        "run",
        "--config",
        p(&fixture("scenario3.toml")),
        "--script",
        p(&fixture("scenario3_reject_all_script.toml")),
        "--seed",
        "99",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "always-reject run is partial");
    let err = stderr(&o);
    assert!(err.starts_with("error[E_PARTIAL]: "), "{err}");
    let report = RunReport::read(&out.join("run_record.json")).unwrap();
    assert_eq!(report.seed, 99);
    assert!(!report.complete);
    assert!(report.round_results.is_empty());
}

#[test]
fn http_provider_without_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("live.toml");
    let text = std::fs::read_to_string(fixture("scenario1.toml")).unwrap().replace(
        "[provider]\nkind = \"scripted\"\nscript = \"scenario1_script.toml\"",
        "[provider]\nkind = \"http\"\n[provider.http]\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\nmodel = \"m\"",
    );
    std::fs::write(&cfg, text).unwrap();
    let o = evosim(&["run", "--config", p(&cfg), "--out", p(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains(API_KEY_ENV), "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn replay_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let record = fixture("records/scenario3.json");
    let o = evosim(&["replay", "--record", p(&record), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("r/metrics.csv").exists());

    let mut report = RunReport::read(&record).unwrap();
    report.series[1].values[1] = 3.0;
    let tampered = tmp.path().join("t.json");
    report.write(&tampered).unwrap();
    let o = evosim(&["replay", "--record", p(&tampered), "--out", p(&tmp.path().join("t"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[E_REPLAY]: "));

    let mut report = RunReport::read(&record).unwrap();
    report.round_results[0].interviews[0].parsed_value = None;
    report.write(&tampered).unwrap();
    let o = evosim(&["replay", "--record", p(&tampered), "--out", p(&tmp.path().join("t"))]);
    assert_eq!(o.status.code(), Some(3), "stored scores no longer follow from the interviews");
}

#[test]
fn report_smooths_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("rep");
    let record = fixture("records/scenario1.json");
    let o = evosim(&[
        "report",
        "--record",
        p(&record),
        "--plot",
        "turns_survived,accuracy_a",
        "--window",
        "2",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("metrics_sma2.csv")).unwrap();
    assert_eq!(
        csv,
        "round,turns_survived_sma2,accuracy_a_sma2\n0,0.000000,0.000000\n1,0.000000,0.000000\n2,2.000000,0.500000\n3,4.000000,1.000000\n"
    );
    let svg = std::fs::read_to_string(out.join("metrics_sma2.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);

    let o = evosim(&["report", "--record", p(&record), "--plot", "nope", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.starts_with("error[E_SERIES]: unknown series `nope`; available: turns_survived, accuracy_a, accuracy_b"),
        "{err}"
    );
}

use std::path::Path;
use std::process::{Command, Output};

use bose_cli::record::read_records;
use bose_cli::ExperimentRecord;

fn bose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bose"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn only_record(out: &Output) -> ExperimentRecord {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    ExperimentRecord::from_json(lines[0]).unwrap()
}

const TWO_SITE: &str = "\
[geometry]
side = 2
[model]
lambda0 = 0.5
[grid]
slices = 8
[truncation]
occupation = 8
[mc]
samples = 2000
seed = 11
";

#[test]
fn oracle_default_is_the_geometric_series() {
    let out = bose(&["oracle", "--no-timing"]);
    assert!(out.status.success());
    let r = only_record(&out);
    let expected = 1.0 / (1.0 - (-1.0f64).exp());
    assert!((r.estimate.re - expected).abs() < 1e-12, "{}", r.estimate.re);
    assert!((r.estimate.re - 1.581977).abs() < 5e-7);
    assert_eq!(r.schema_version, bose_cli::SCHEMA_VERSION);
    assert_eq!(r.observable, "xi");
}

#[test]
fn unknown_key_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[grid]\nslices = 4\n\n[mc]\n  sampels = 10\n");
    let out = bose(&["hs", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:5:3"), "{err}");
}

#[test]
fn bad_flag_exits_2() {
    assert_eq!(bose(&["hs", "--samples", "many"]).status.code(), Some(2));
    assert_eq!(bose(&["teleport"]).status.code(), Some(2));
}

#[test]
fn invalid_values_exit_3_and_capacity_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "neg.toml", "[model]\nkappa0 = -1.0\n");
    assert_eq!(bose(&["oracle", "--config", &cfg]).status.code(), Some(3));
    assert_eq!(bose(&["hs", "--ntau", "0"]).status.code(), Some(3));
    assert_eq!(bose(&["mayer", "--nmax", "9"]).status.code(), Some(4));
    let big = write(dir.path(), "big.toml", "[geometry]\nside = 6\n[truncation]\noccupation = 4\n");
    assert_eq!(bose(&["oracle", "--config", &big]).status.code(), Some(4));
}

#[test]
fn flagged_record_still_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "low.toml", "[truncation]\noccupation = 3\n");
    let out = bose(&["oracle", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    assert!(only_record(&out).flagged);
}

#[test]
fn validate_default_passes_every_check() {
    let out = bose(&["validate", "--no-timing"]);
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(!err.contains("FAIL"), "{err}");
    let text = String::from_utf8(out.stdout).unwrap();
    let records: Vec<ExperimentRecord> = text.lines().map(|l| ExperimentRecord::from_json(l).unwrap()).collect();
    assert!(records.len() >= 8);
    assert!(records.iter().all(|r| r.details["passed"] == true));
}

#[test]
fn validate_interacting_two_site_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "v.toml",
        "[geometry]\nside = 2\n[model]\nlambda0 = 0.5\n[truncation]\noccupation = 8\n",
    );
    let out = bose(&["validate", "--config", &cfg]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{err}");
    for name in ["oracle_vs_hs_xi_rel", "oracle_vs_loopgas_xi_rel", "stability_bound"] {
        assert!(err.contains(&format!("PASS {name}")), "{err}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "two.toml", TWO_SITE);
    let a = bose(&["hs", "--config", &cfg, "--no-timing"]);
    let b = bose(&["hs", "--config", &cfg, "--no-timing"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = bose(&["hs", "--config", &cfg, "--no-timing", "--seed", "12"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn chains_pool_and_keep_their_streams() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "two.toml", TWO_SITE);
    let one = only_record(&bose(&["loopgas", "--config", &cfg, "--no-timing"]));
    let three = only_record(&bose(&["loopgas", "--config", &cfg, "--no-timing", "--chains", "3"]));
    assert_eq!(three.samples, 3 * one.samples);
    assert_eq!(three.chain_seeds.len(), 3);
    assert!(three.chain_seeds.contains(&one.chain_seeds[0]));
    assert!(three.stderr.re < one.stderr.re);
    assert!((three.estimate.re - one.estimate.re).abs() < 4.0 * one.stderr.re);
}

#[test]
fn out_file_appends_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "two.toml", TWO_SITE);
    let out = dir.path().join("records.jsonl");
    let o = out.display().to_string();
    for cmd in ["oracle", "hs", "mayer"] {
        assert!(bose(&[cmd, "--config", &cfg, "--out", &o, "--nmax", "3"]).status.success());
    }
    let text = std::fs::read_to_string(&out).unwrap();
    let records = read_records(&out).unwrap();
    assert_eq!(records.len(), 3);
    let again: Vec<String> = records.iter().map(|r| r.to_json()).collect();
    assert_eq!(again.join("\n") + "\n", text);
    assert_eq!(records[2].observable, "log_xi_rel");
    let oracle_rel = records[0].details["xi_rel"].as_f64().unwrap();
    let hs = &records[1];
    assert!((hs.estimate.re - oracle_rel).abs() < 4.0 * hs.stderr.re);
}

#[test]
fn large_n_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "ln.toml",
        "[model]\nlambda0 = 0.5\ncoupling = \"mean_field\"\nrho_mode = \"wick\"\n[grid]\nslices = 4\n[limit]\nkind = \"large_n\"\nn_list = [2.0, 8.0]\n[mc]\nsamples = 1000\n",
    );
    let out = dir.path().join("sweep.jsonl");
    let status = bose(&["limit", "--config", &cfg, "--out", &out.display().to_string()]).status;
    assert!(status.success());
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "parameter,estimate_re,estimate_im,stderr_re,stderr_im,n,ess"
    );
    assert_eq!(lines.count(), 2);
    let records = read_records(&out).unwrap();
    assert_eq!(records[1].parameters["sweep"]["parameter"], 8.0);
    assert!(records[1].details["extra"]["residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn field_routes_agree_on_one_site() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "f.toml", "[model]\nlambda0 = 0.5\n[mc]\nsamples = 20000\n");
    let radial = only_record(&bose(&["field", "--config", &cfg]));
    let eta_cfg = write(
        dir.path(),
        "e.toml",
        "[model]\nlambda0 = 0.5\n[mc]\nsamples = 20000\n[field]\nkind = \"eta\"\n",
    );
    let eta = only_record(&bose(&["field", "--config", &eta_cfg]));
    assert!((radial.estimate.re - eta.estimate.re).abs() < 4.0 * eta.stderr.re);
}

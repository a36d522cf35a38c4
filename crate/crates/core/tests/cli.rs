use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn smoke_text() -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/smoke.scenario")).unwrap()
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn cpsd(args: &[&str], workers: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cpsd"));
    c.args(args).env_remove("CPSD_WORKERS");
    if let Some(w) = workers {
        c.env("CPSD_WORKERS", w);
    }
    c.output().unwrap()
}

fn run_into(cfg: &Path, out: &Path, workers: Option<&str>) -> Output {
    cpsd(&["run", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()], workers)
}

#[test]
fn run_writes_outputs_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), "smoke.scenario", &smoke_text());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = run_into(&cfg, &a, Some("1"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(run_into(&cfg, &b, Some("3")).status.code(), Some(0));
    for f in ["spectrum_plot.csv", "spectrum_raw.csv", "angular_marginal.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }

    let plot = fs::read_to_string(a.join("spectrum_plot.csv")).unwrap();
    let lines: Vec<&str> = plot.lines().collect();
    assert_eq!(lines.len(), 1 + 15);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(header.len(), 1 + 15);
    let freqs: Vec<f64> = header[1..].iter().map(|v| v.parse().unwrap()).collect();
    assert!(freqs.windows(2).all(|w| w[0] < w[1]));
    assert!(freqs[0] > -std::f64::consts::PI && freqs[14] <= std::f64::consts::PI);
    let angles: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!((angles[7] - 0.0).abs() < 1e-12);
    for l in &lines[1..] {
        assert!(l.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() >= 0.0));
    }
    let raw = fs::read_to_string(a.join("spectrum_raw.csv")).unwrap();
    assert!(raw.lines().nth(1).unwrap().split(',').nth(1).unwrap().ends_with('j'));

    let report: Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let d = &report["design"];
    assert_eq!(d["temporal_compression_rate"].as_f64().unwrap(), 5.0 / 8.0);
    assert_eq!(d["spatial_compression_rate"].as_f64().unwrap(), 5.0 / 8.0);
    assert_eq!(report["seed"].as_u64(), Some(3));
    assert_eq!(report["workers"].as_u64(), Some(1));
    assert_eq!(report["detections"].as_array().unwrap().len(), 3);
}

#[test]
fn seed_override_changes_numbers() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), "smoke.scenario", &smoke_text());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run_into(&cfg, &a, Some("2")).status.code(), Some(0));
    let out = cpsd(&["run", cfg.to_str().unwrap(), "--output-dir", b.to_str().unwrap(), "--seed", "4"], Some("2"));
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(fs::read(a.join("spectrum_raw.csv")).unwrap(), fs::read(b.join("spectrum_raw.csv")).unwrap());
}

#[test]
fn compressed_dump_layout() {
    let tmp = TempDir::new().unwrap();
    let text = smoke_text().replace("snapshots = 500", "snapshots = 20\ndump = \"compressed\"");
    let cfg = write_scenario(tmp.path(), "dump.scenario", &text);
    let out = tmp.path().join("o");
    assert_eq!(run_into(&cfg, &out, None).status.code(), Some(0));
    let bytes = fs::read(out.join("snapshots.bin")).unwrap();
    assert_eq!(&bytes[..8], b"CPSDSNP1");
    let field = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
    assert_eq!((field(0), field(1), field(2)), (5, 5, 20));
    assert_eq!(bytes.len(), 32 + 20 * 5 * 5 * 16);
}

#[test]
fn config_error_exits_2() {
    let tmp = TempDir::new().unwrap();
    let bad = write_scenario(tmp.path(), "bad.scenario", &format!("bogus_key = 1\n{}", smoke_text()));
    assert_eq!(run_into(&bad, &tmp.path().join("o"), None).status.code(), Some(2));
    let missing = tmp.path().join("nope.scenario");
    assert_eq!(run_into(&missing, &tmp.path().join("o"), None).status.code(), Some(2));
    let zero_workers = write_scenario(tmp.path(), "smoke.scenario", &smoke_text());
    assert_eq!(run_into(&zero_workers, &tmp.path().join("o"), Some("0")).status.code(), Some(2));
}

#[test]
fn coset_gate_failure_exits_3() {
    let tmp = TempDir::new().unwrap();
    let text = smoke_text()
        .replace("n_t = 8\nm_t = 5\nruler = [0, 1, 2, 3, 7]", "n_t = 84\nm_t = 5")
        .replace("snapshots = 500", "snapshots = 10");
    let cfg = write_scenario(tmp.path(), "gate.scenario", &text);
    let out_dir = tmp.path().join("o");
    let out = run_into(&cfg, &out_dir, None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.join("spectrum_plot.csv").exists());
}

#[test]
fn certify_reports_failed_theorem() {
    let tmp = TempDir::new().unwrap();
    let text = smoke_text().replace("marks = [0, 1, 2, 3, 7]", "marks = [0, 2, 4, 6]");
    let cfg = write_scenario(tmp.path(), "even.scenario", &text);
    let out_dir = tmp.path().join("o");
    let out = cpsd(&["certify", cfg.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("theorem1 fail"));
    let cert: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["theorem1"]["passed"], Value::Bool(false));
    assert_eq!(cert["kr_rank"]["full_column_rank"], Value::Bool(false));
}

#[test]
fn certify_paper_scenario() {
    let tmp = TempDir::new().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/paper.scenario");
    let out = cpsd(&["certify", cfg.to_str().unwrap(), "--output-dir", tmp.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    let cert: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["theorem1"]["passed"], Value::Bool(true));
    assert_eq!(cert["theorem2"]["witness"]["count"].as_u64(), Some(71));
    assert_eq!(cert["kr_rank"]["rank"].as_u64(), Some(71));
    assert!((cert["temporal_compression_rate"].as_f64().unwrap() - 34.0 / 84.0).abs() < 1e-15);
}

#[test]
fn sweep_rows() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), "smoke.scenario", &smoke_text());
    let dir = tmp.path().join("empty");
    let out = cpsd(
        &["sweep", cfg.to_str().unwrap(), "--output-dir", dir.to_str().unwrap(), "--values", ""],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("parameter,value,seed"));

    let dir = tmp.path().join("seeds");
    let out = cpsd(
        &["sweep", cfg.to_str().unwrap(), "--output-dir", dir.to_str().unwrap(), "--values", "200", "--seeds", "5"],
        Some("2"),
    );
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    let seeds: Vec<&str> = rows.iter().map(|r| r.split(',').nth(2).unwrap()).collect();
    assert_eq!(seeds, ["3", "4", "5", "6", "7"]);
}

#[test]
fn sweep_error_decreases_with_snapshots() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), "smoke.scenario", &smoke_text());
    let dir = tmp.path().join("o");
    let out = cpsd(
        &["sweep", cfg.to_str().unwrap(), "--output-dir", dir.to_str().unwrap(), "--values", "100,1000,10000"],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let errs: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(errs.len(), 3);
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn bad_sweep_values_exit_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), "smoke.scenario", &smoke_text());
    let out = cpsd(
        &["sweep", cfg.to_str().unwrap(), "--output-dir", tmp.path().to_str().unwrap(), "--values", "ten"],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}

//! End-to-end runs of the `ccotdr` binary on a small fiber.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ccotdr::fibersim::{Connector, EventSpec};
use ccotdr::fingerprint::{Polarization, Section, SectionPhaseWaterfall};
use ccotdr_cli::config::{desk_preset, ScenarioConfig};
use ccotdr_cli::files::{parse_trace_csv, WaterfallFile};
use serde_json::Value;

fn ccotdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccotdr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_scenario() -> ScenarioConfig {
    let mut cfg = desk_preset();
    cfg.fiber.length = 200.0;
    cfg.fiber.connectors = vec![Connector { position: 60.0, return_loss_db: -45.0 }];
    cfg.probe.prbs_order = 9;
    cfg.probe.padding_symbols = 400;
    cfg.events = vec![EventSpec::HarmonicVibration {
        span: [20.0, 28.0],
        frequency: 50.0,
        strain_amplitude: 3.5e-8,
        phase_offset: 0.0,
    }];
    cfg.record_duration = 0.25;
    cfg.frame_stride = 128;
    cfg
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Runs simulate and process into `dir`; returns the process output dir.
fn simulate_and_process(dir: &Path, cfg: &ScenarioConfig) -> PathBuf {
    let config = dir.join("scenario.json");
    write_json(&config, cfg);
    let capture = dir.join("run.ccot");
    ok(&ccotdr(&["simulate", "--config", p(&config), "--out", p(&capture)]));
    let proc_dir = dir.join("proc");
    ok(&ccotdr(&["process", "--capture", p(&capture), "--out-dir", p(&proc_dir)]));
    proc_dir
}

#[test]
fn pipeline_reports_connector_and_tone() {
    let dir = tempfile::tempdir().unwrap();
    let proc_dir = simulate_and_process(dir.path(), &small_scenario());
    for name in [
        "trace.csv",
        "peaks.json",
        "amplitude.ccwf",
        "phase_x.ccwf",
        "phase_y.ccwf",
        "process.json",
    ] {
        assert!(proc_dir.join(name).is_file(), "{name} missing");
    }

    let rows = parse_trace_csv(&fs::read_to_string(proc_dir.join("trace.csv")).unwrap()).unwrap();
    let near: Vec<f64> = rows
        .iter()
        .filter(|(d, _)| (d - 60.0).abs() <= 0.5)
        .map(|r| r.1)
        .collect();
    let level = near.iter().copied().fold(f64::MIN, f64::max);
    assert!((level + 45.0).abs() <= 0.5, "connector at {level} dB");

    let report = dir.path().join("report.json");
    ok(&ccotdr(&[
        "analyze",
        "--waterfall",
        p(&proc_dir.join("phase_x.ccwf")),
        p(&proc_dir.join("phase_y.ccwf")),
        "--out",
        p(&report),
        "--svg",
    ]));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let tone = r["tones"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| (20.0..=28.0).contains(&t["section_center"].as_f64().unwrap()))
        .expect("tone in the vibrating span");
    assert!((tone["dominant_frequency"].as_f64().unwrap() - 50.0).abs() < 2.0);
    assert!(dir.path().join("report.waterfall.svg").is_file());

    let manifest = fs::read(dir.path().join("run.ccot.manifest.json")).unwrap();
    let hash = ccotdr_cli::files::sha256_hex(&manifest);
    assert_eq!(r["manifest_sha256"][0].as_str().unwrap(), hash);
}

#[test]
fn runs_are_byte_identical() {
    let cfg = small_scenario();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = simulate_and_process(a.path(), &cfg);
    let pb = simulate_and_process(b.path(), &cfg);
    for name in ["run.ccot", "run.ccot.manifest.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    for entry in fs::read_dir(&pa).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(pa.join(&name)).unwrap(),
            fs::read(pb.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn truncated_capture_is_rejected_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.json");
    let mut s = small_scenario();
    s.record_duration = 0.02;
    write_json(&cfg, &s);
    let capture = dir.path().join("run.ccot");
    ok(&ccotdr(&["simulate", "--config", p(&cfg), "--out", p(&capture)]));
    let len = fs::metadata(&capture).unwrap().len();
    let f = fs::OpenOptions::new().write(true).open(&capture).unwrap();
    f.set_len(len - 7).unwrap();
    let out_dir = dir.path().join("proc");
    let out = ccotdr(&["process", "--capture", p(&capture), "--out-dir", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!out_dir.exists() || fs::read_dir(&out_dir).unwrap().next().is_none());
}

#[test]
fn missing_capture_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccotdr(&[
        "process",
        "--capture",
        p(&dir.path().join("absent.ccot")),
        "--out-dir",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_config_points_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let mut text = serde_json::to_string_pretty(&small_scenario()).unwrap();
    text = text.replacen("\"baud_rate\": 125000000.0", "\"baud_rate\": \"fast\"", 1);
    let line = text.lines().position(|l| l.contains("\"fast\"")).unwrap() + 1;
    fs::write(&cfg, &text).unwrap();
    let out = ccotdr(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("bad.json:{line}:")), "{err}");

    let mut s = small_scenario();
    s.probe.padding_symbols = 10;
    write_json(&cfg, &s);
    let out = ccotdr(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("padding_symbols"), "{err}");
    assert!(!dir.path().join("x").exists());
}

#[test]
fn dry_run_writes_only_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let capture = dir.path().join("paper.ccot");
    ok(&ccotdr(&["simulate", "--preset", "paper", "--out", p(&capture), "--dry-run"]));
    assert!(!capture.exists());
    let m: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("paper.ccot.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(m["symbols_per_frame"], 29442);
    assert_eq!(m["frame_length"], 147210);
}

#[test]
fn presets_are_listed_and_round_trip() {
    let out = ccotdr(&["presets", "list"]);
    ok(&out);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "paper\ndesk\n");
    let out = ccotdr(&["presets", "show", "desk"]);
    ok(&out);
    let back: ScenarioConfig = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(back, desk_preset());
    assert_eq!(ccotdr(&["presets", "show", "nope"]).status.code(), Some(2));
}

fn burst_waterfall(polarization: Polarization, hash: u8, centers: &[f64]) -> WaterfallFile {
    let period = 1e-3;
    let rows = 300;
    let sections: Vec<Section> = centers
        .iter()
        .enumerate()
        .map(|(i, &c)| Section {
            center: c,
            lower_bin: 10 * i,
            upper_bin: 10 * i + 10,
            lower_peak: i,
            upper_peak: i + 1,
        })
        .collect();
    let matrix = (0..rows)
        .map(|k| {
            let t = k as f64 * period;
            centers
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    // small deterministic dither plus a ramp burst at 150 ms
                    let dither = 1e-4 * (((k * 7 + i * 13) % 11) as f64 - 5.0);
                    let burst = if t >= 0.150 { 0.05 * (t - 0.150) / period } else { 0.0 };
                    dither + burst.min(3.0)
                })
                .collect()
        })
        .collect();
    let w = SectionPhaseWaterfall {
        polarization,
        sections,
        matrix,
        frame_period: period,
        masked: vec![false; centers.len()],
    };
    WaterfallFile::from_phase(&w, [hash; 32])
}

#[test]
fn two_section_strike_is_underdetermined() {
    let dir = tempfile::tempdir().unwrap();
    let wf = dir.path().join("phase_x.ccwf");
    burst_waterfall(Polarization::X, 1, &[10.0, 12.0]).write(&wf).unwrap();
    let report = dir.path().join("r.json");
    ok(&ccotdr(&["analyze", "--waterfall", p(&wf), "--out", p(&report)]));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let strikes = r["strikes"].as_array().unwrap();
    assert_eq!(strikes.len(), 1);
    assert_eq!(strikes[0]["status"], "underdetermined");
    assert!(strikes[0]["fit"].is_null());
}

#[test]
fn mixed_provenance_needs_a_flag() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.ccwf");
    let y = dir.path().join("y.ccwf");
    let centers = [10.0, 12.0, 14.0];
    burst_waterfall(Polarization::X, 1, &centers).write(&x).unwrap();
    burst_waterfall(Polarization::Y, 2, &centers).write(&y).unwrap();
    let report = dir.path().join("r.json");
    let args = ["analyze", "--waterfall", p(&x), p(&y), "--out", p(&report)];
    assert_eq!(ccotdr(&args).status.code(), Some(2));
    assert!(!report.exists());
    let mut with_flag = args.to_vec();
    with_flag.push("--allow-mixed");
    ok(&ccotdr(&with_flag));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["manifest_sha256"].as_array().unwrap().len(), 2);
}

#[test]
fn corrupt_waterfall_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let wf = dir.path().join("x.ccwf");
    fs::write(&wf, b"CCWF\x01\x00\x00\x00").unwrap();
    let out = ccotdr(&["analyze", "--waterfall", p(&wf), "--out", p(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(4));
}

//! Tone, transient and localization report over phase waterfalls.

use std::path::{Path, PathBuf};

use ccotdr::analysis::{
    detect_tones, detect_transients, extract_arrival_times, fit_pressure_wave,
    fuse_polarizations, segment_strikes, ArrivalTimeSet, LocalizationFit, StrikeWindow,
    ToneReport, TransientEvent,
};
use ccotdr::fingerprint::{Polarization, SectionPhaseWaterfall};
use ccotdr::Error;
use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;
use crate::files::{write_bytes_atomic, WaterfallFile, WaterfallKind};
use crate::process::pretty_json;
use crate::svg;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneEntry {
    pub polarization: Polarization,
    #[serde(flatten)]
    pub tone: ToneReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEntry {
    pub polarization: Polarization,
    #[serde(flatten)]
    pub event: TransientEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    Underdetermined,
    DegenerateGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrikeReport {
    pub window: StrikeWindow,
    pub arrivals_x: ArrivalTimeSet,
    pub arrivals_y: ArrivalTimeSet,
    pub arrivals_fused: ArrivalTimeSet,
    pub status: FitStatus,
    pub fit: Option<LocalizationFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub manifest_sha256: Vec<String>,
    pub frame_period: f64,
    pub frames: usize,
    pub sections: usize,
    pub analysis: AnalysisConfig,
    pub tones: Vec<ToneEntry>,
    pub events: Vec<EventEntry>,
    pub strikes: Vec<StrikeReport>,
    pub notes: Vec<String>,
}

fn check_consistent(waterfalls: &[SectionPhaseWaterfall]) -> CliResult<()> {
    let Some(first) = waterfalls.first() else {
        return Err(CliError::Config("no waterfalls given".into()));
    };
    for w in &waterfalls[1..] {
        if w.frame_period != first.frame_period {
            return Err(CliError::Config("waterfalls have different frame periods".into()));
        }
        if w.frame_count() != first.frame_count() {
            return Err(CliError::Config("waterfalls have different frame counts".into()));
        }
        let same_grid = w.sections.len() == first.sections.len()
            && w.sections.iter().zip(&first.sections).all(|(a, b)| a.center == b.center);
        if !same_grid {
            return Err(CliError::Config("waterfalls have different section grids".into()));
        }
    }
    let mut pols: Vec<_> = waterfalls.iter().map(|w| w.polarization).collect();
    pols.sort_by_key(|p| *p as u8);
    pols.dedup();
    if pols.len() != waterfalls.len() {
        return Err(CliError::Config("a polarization is given twice".into()));
    }
    Ok(())
}

fn restrict(w: &SectionPhaseWaterfall, range: Option<[f64; 2]>) -> SectionPhaseWaterfall {
    let mut out = w.clone();
    if let Some([lo, hi]) = range {
        for (m, s) in out.masked.iter_mut().zip(&w.sections) {
            if s.center < lo || s.center > hi {
                *m = true;
            }
        }
    }
    out
}

/// Builds the report from one or two phase waterfalls of a single
/// acquisition.
pub fn analyze_waterfalls(
    waterfalls: &[SectionPhaseWaterfall],
    cfg: &AnalysisConfig,
    manifest_sha256: Vec<String>,
) -> CliResult<Report> {
    cfg.validate()
        .map_err(|e| CliError::Config(format!("{}: {}", e.path, e.message)))?;
    check_consistent(waterfalls)?;
    let first = &waterfalls[0];
    let mut notes = Vec::new();

    let restricted: Vec<SectionPhaseWaterfall> =
        waterfalls.iter().map(|w| restrict(w, cfg.fiber_range)).collect();
    let mut events = Vec::new();
    for w in &restricted {
        for e in detect_transients(w, &cfg.onset)? {
            events.push(EventEntry {
                polarization: w.polarization,
                event: e,
            });
        }
    }

    // A section with a transient is not reported as tonal.
    let mut tones: Vec<ToneEntry> = Vec::new();
    for w in waterfalls {
        match detect_tones(w, cfg.tone_min_frequency, cfg.tone_threshold_db) {
            Ok(found) => {
                for t in found {
                    let s = w
                        .sections
                        .iter()
                        .position(|s| s.center == t.section_center)
                        .expect("section of the waterfall");
                    if events.iter().any(|e| e.event.section == s) {
                        continue;
                    }
                    match tones.iter_mut().find(|e| e.tone.section_center == t.section_center) {
                        Some(e) if e.tone.power_ratio_db >= t.power_ratio_db => {}
                        Some(e) => {
                            *e = ToneEntry {
                                polarization: w.polarization,
                                tone: t,
                            }
                        }
                        None => tones.push(ToneEntry {
                            polarization: w.polarization,
                            tone: t,
                        }),
                    }
                }
            }
            Err(e) => {
                notes.push(format!("tone analysis skipped: {e}"));
                break;
            }
        }
    }
    tones.sort_by(|a, b| a.tone.section_center.total_cmp(&b.tone.section_center));

    let all: Vec<TransientEvent> = events.iter().map(|e| e.event).collect();
    let windows = segment_strikes(&all, cfg.strike_gap, cfg.strike_margin, cfg.min_quality);
    let empty = ArrivalTimeSet::default();
    let mut strikes = Vec::new();
    for window in windows {
        let span = (window.start, window.end);
        let mut sets = [empty.clone(), empty.clone()];
        for w in &restricted {
            let set = extract_arrival_times(w, span, &cfg.onset)?;
            match w.polarization {
                Polarization::Y => sets[1] = set,
                _ => sets[0] = set,
            }
        }
        let fused = fuse_polarizations(&sets[0], &sets[1]);
        let (status, fit, message) = match fit_pressure_wave(&fused, &cfg.fit) {
            Ok(f) => (FitStatus::Ok, Some(f), None),
            Err(e @ Error::Underdetermined { .. }) => {
                (FitStatus::Underdetermined, None, Some(e.to_string()))
            }
            Err(e @ Error::DegenerateGeometry(_)) => {
                (FitStatus::DegenerateGeometry, None, Some(e.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let [x, y] = sets;
        strikes.push(StrikeReport {
            window,
            arrivals_x: x,
            arrivals_y: y,
            arrivals_fused: fused,
            status,
            fit,
            message,
        });
    }

    Ok(Report {
        manifest_sha256,
        frame_period: first.frame_period,
        frames: first.frame_count(),
        sections: first.section_count(),
        analysis: cfg.clone(),
        tones,
        events,
        strikes,
        notes,
    })
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    out.with_file_name(format!("{stem}{suffix}"))
}

/// `analyze` command. Mixed-provenance inputs are refused unless
/// `allow_mixed` is set.
pub fn cmd_analyze(
    paths: &[PathBuf],
    out: &Path,
    want_svg: bool,
    cfg: &AnalysisConfig,
    allow_mixed: bool,
) -> CliResult<Report> {
    let files: Vec<WaterfallFile> = paths
        .iter()
        .map(|p| WaterfallFile::read(p))
        .collect::<CliResult<_>>()?;
    let mut hashes: Vec<String> = files.iter().map(WaterfallFile::manifest_hash_hex).collect();
    hashes.dedup();
    if hashes.len() > 1 && !allow_mixed {
        return Err(CliError::Config(
            "waterfalls come from different manifests (pass --allow-mixed to override)".into(),
        ));
    }
    if let Some(f) = files.iter().find(|f| f.kind != WaterfallKind::Phase) {
        return Err(CliError::Config(format!(
            "{:?} waterfall given; analyze expects phase waterfalls",
            f.kind
        )));
    }
    let waterfalls: Vec<SectionPhaseWaterfall> =
        files.iter().map(WaterfallFile::to_phase).collect::<CliResult<_>>()?;
    let report = analyze_waterfalls(&waterfalls, cfg, hashes)?;
    write_bytes_atomic(out, pretty_json(&report).as_bytes())?;
    if want_svg {
        write_bytes_atomic(
            &sibling(out, ".waterfall.svg"),
            svg::phase_heatmap(&waterfalls[0]).as_bytes(),
        )?;
        for (i, s) in report.strikes.iter().enumerate() {
            write_bytes_atomic(
                &sibling(out, &format!(".strike{}.svg", i + 1)),
                svg::arrival_plot(&s.arrivals_fused, s.fit.as_ref()).as_bytes(),
            )?;
        }
    }
    Ok(report)
}

//! Short in-memory runs through probe, fiber, receiver and correlator.

use std::sync::Arc;

use ccotdr::correlator::{return_loss_trace, Correlator};
use ccotdr::fibersim::{
    connector_jones, generate_scatterer_field, Connector, EventSpec, FiberSpec, FrameSynthesizer,
    ScattererField, StrainModel,
};
use ccotdr::fingerprint::{section_phase_differences, select_peaks, PhaseTrackBuilder};
use ccotdr::probegen::{frame_timing, ProbeConfig};
use ccotdr::receiver::{ImpairmentConfig, Impairments};
use num_complex::Complex64;

fn probe(order: u32, padding: usize) -> ProbeConfig {
    ProbeConfig {
        prbs_order: order,
        feedback_taps: None,
        initial_state: None,
        baud_rate: 125e6,
        padding_symbols: padding,
        samples_per_symbol: 5,
    }
}

fn fiber(length: f64, connectors: Vec<Connector>) -> FiberSpec {
    FiberSpec {
        length,
        group_index: FiberSpec::DEFAULT_GROUP_INDEX,
        attenuation: 0.2,
        scatterer_spacing: None,
        connectors,
        wavelength: 1550e-9,
        backscatter_level_db: -75.0,
        photoelastic_factor: 0.78,
    }
}

struct Rig {
    synth: FrameSynthesizer,
    correlator: Correlator,
    sample_rate: f64,
}

fn rig(cfg: &ProbeConfig, spec: &FiberSpec, field: ScattererField) -> Rig {
    let frame = cfg.build().unwrap();
    let sample_rate = cfg.sample_rate();
    let v = spec.group_velocity();
    let synth = FrameSynthesizer::new(
        &frame.waveform,
        frame.active_length * frame.samples_per_symbol,
        Arc::new(field),
        spec,
        sample_rate,
    )
    .unwrap();
    let correlator = Correlator::new(&frame, synth.frame_len(), None, sample_rate, v).unwrap();
    Rig {
        synth,
        correlator,
        sample_rate,
    }
}

#[test]
fn connector_reads_its_return_loss() {
    let cfg = probe(9, 300);
    let spec = fiber(150.0, vec![Connector { position: 60.0, return_loss_db: -45.0 }]);
    let res = frame_timing(&cfg, spec.group_velocity()).unwrap().spatial_resolution;
    let field = generate_scatterer_field(&spec, res, 3).unwrap();
    let rig = rig(&cfg, &spec, field);
    let record = rig.synth.synthesize(&StrainModel::new(&[], spec.length), 0.0);
    let trace = return_loss_trace(&rig.correlator.correlate(&record, 0).unwrap(), 0.0, -120.0);
    let bin = (60.0 / trace.distance_per_bin()).round() as usize;
    let level = trace.values[bin - 2..=bin + 2].iter().copied().fold(f64::MIN, f64::max);
    assert!((level + 45.0).abs() < 0.5, "connector at {level} dB");
}

#[test]
fn static_fiber_without_noise_gives_constant_sections() {
    let cfg = probe(9, 300);
    let spec = fiber(120.0, vec![]);
    let res = frame_timing(&cfg, spec.group_velocity()).unwrap().spatial_resolution;
    let field = generate_scatterer_field(&spec, res, 11).unwrap();
    let rig = rig(&cfg, &spec, field);
    let strain = StrainModel::new(&[], spec.length);
    let first = rig.correlator.correlate(&rig.synth.synthesize(&strain, 0.0), 0).unwrap();
    let peaks = select_peaks(&return_loss_trace(&first, 0.0, -120.0), 3.0, 0.8, -58.0).unwrap();
    let mut builder = PhaseTrackBuilder::new(&peaks);
    for k in 0..6 {
        let record = rig.synth.synthesize(&strain, k as f64 * 1e-3);
        builder.push(&rig.correlator.correlate(&record, k).unwrap()).unwrap();
    }
    let [wx, wy] = section_phase_differences(&builder.finish(), &peaks, 1e-3, 10.0).unwrap();
    for w in [wx, wy] {
        for row in &w.matrix {
            for (a, b) in row.iter().zip(&w.matrix[0]) {
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn downstream_phase_is_linear_in_small_strain() {
    let cfg = probe(8, 200);
    let spec = fiber(80.0, vec![]);
    let j = connector_jones();
    // The strain integral runs over the reflector grid, so a silent 0.1 m
    // grid carries it up to the one bright reflector at 50 m.
    let grid: Vec<_> = (1..=500)
        .map(|i| {
            let a = if i == 500 { 1e-3 } else { 0.0 };
            (i as f64 * 0.1, Complex64::new(a, 0.0), j)
        })
        .collect();
    let field = ScattererField::from_reflectors(&grid).unwrap();
    let rig = rig(&cfg, &spec, field);
    let bin = (50.0 / (spec.group_velocity() / (2.0 * rig.sample_rate))).round() as usize;
    let excursion = |amplitude: f64| {
        let events = [EventSpec::HarmonicVibration {
            span: [20.0, 30.0],
            frequency: 50.0,
            strain_amplitude: amplitude,
            phase_offset: 0.0,
        }];
        let strain = StrainModel::new(&events, spec.length);
        let phase = |t: f64| {
            let p = rig.correlator.correlate(&rig.synth.synthesize(&strain, t), 0).unwrap();
            p.x[bin].arg()
        };
        phase(5e-3) - phase(0.0)
    };
    let small = excursion(1e-9);
    let double = excursion(2e-9);
    let expected = 4.0 * std::f64::consts::PI * spec.group_index * 0.78 * 1e-9 * 10.0 / 1550e-9;
    assert!((small / expected - 1.0).abs() < 1e-2, "{small} vs {expected}");
    assert!((double / small - 2.0).abs() < 1e-9);
}

#[test]
fn laser_walk_is_common_mode() {
    let cfg = probe(9, 300);
    let spec = fiber(120.0, vec![]);
    let res = frame_timing(&cfg, spec.group_velocity()).unwrap().spatial_resolution;
    let field = generate_scatterer_field(&spec, res, 5).unwrap();
    let rig = rig(&cfg, &spec, field);
    let events = [EventSpec::HarmonicVibration {
        span: [40.0, 60.0],
        frequency: 80.0,
        strain_amplitude: 1e-8,
        phase_offset: 0.0,
    }];
    let strain = StrainModel::new(&events, spec.length);
    let period = 5e-4;
    let frames = 20;
    let run = |linewidth: f64| {
        let imp = Impairments::new(
            ImpairmentConfig {
                linewidth,
                noise_density: 1e-12,
                sample_rate: rig.sample_rate,
                seed: 9,
            },
            period,
            frames,
        )
        .unwrap();
        let profiles: Vec<_> = (0..frames)
            .map(|k| {
                let clean = rig.synth.synthesize(&strain, k as f64 * period);
                rig.correlator.correlate(&imp.apply(&clean, k).unwrap(), k).unwrap()
            })
            .collect();
        let peaks =
            select_peaks(&return_loss_trace(&profiles[0], 0.0, -120.0), 3.0, 0.8, -58.0).unwrap();
        let mut builder = PhaseTrackBuilder::new(&peaks);
        for p in &profiles {
            builder.push(p).unwrap();
        }
        section_phase_differences(&builder.finish(), &peaks, period, 10.0).unwrap()
    };
    let quiet = run(0.0);
    let walked = run(100.0);
    for (a, b) in quiet.iter().zip(&walked) {
        for (ra, rb) in a.matrix.iter().zip(&b.matrix) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
            }
        }
    }
}

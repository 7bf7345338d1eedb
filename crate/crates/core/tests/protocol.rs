//! Four-phase handshake behavior: measurement semantics, determinism,
//! jitter robustness, the reduced-CD guarantee, and STA soundness against
//! simulation.

use duorail_core::datapath::build_inference_datapath;
use duorail_core::sim::{
    measure_latency_distribution, run_handshake, DelayModel, HandshakeMode, HandshakeOptions,
    Operand, OperandSampler, SamplerKind,
};
use duorail_core::timing::{compute_timing, scale_delay_model, TimingOptions, VddTable};
use duorail_core::tm::TmConfig;
use duorail_core::vcd::write_vcd;
use rand::{Rng, SeedableRng};

fn canonical_config() -> TmConfig {
    let mut rng = rand::rngs::StdRng::seed_from_u64(42);
    let exclude: Vec<Vec<bool>> = (0..8).map(|_| (0..8).map(|_| rng.random()).collect()).collect();
    TmConfig::new(4, 8, exclude).unwrap()
}

#[test]
fn done_rise_is_po_valid_plus_cd_tree_delay() {
    let config = canonical_config();
    let model = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();
    let mut sampler = OperandSampler::new(SamplerKind::Uniform, 3);
    let ops: Vec<Operand> = (0..50).map(|_| sampler.next(&config)).collect();
    let run = run_handshake(&bundle, &ops, &model, HandshakeMode::DoneSignalled, HandshakeOptions::default()).unwrap();
    // CD tree for the 1-of-3 group is a single OR3 (nominal 25) into the
    // zero-rise transport element.
    for m in &run.measurements {
        assert_eq!(m.done_rise, m.t_spcw + 25, "operand {}", m.operand);
    }
}

#[test]
fn identical_operands_identical_measurements() {
    let config = canonical_config();
    let model = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();
    let op = Operand::from_config(vec![true, false, true, true], &config);
    let run = run_handshake(
        &bundle,
        &[op.clone(), op],
        &model,
        HandshakeMode::DoneSignalled,
        HandshakeOptions::default(),
    )
    .unwrap();
    let a = &run.measurements[0];
    let b = &run.measurements[1];
    assert_eq!(a.t_spcw, b.t_spcw);
    assert_eq!(a.t_cwsp, b.t_cwsp);
    assert_eq!(a.done_rise, b.done_rise);
    assert_eq!(a.done_fall, b.done_fall);
    assert_eq!(a.outcome, b.outcome);
    assert!(run.violations.is_empty());
}

#[test]
fn handshake_is_deterministic_under_fixed_seed() {
    let config = canonical_config();
    let model = DelayModel::nominal().with_jitter(0.5, 1.5, 11);
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();
    let sample = |seed: u64| {
        let mut sampler = OperandSampler::new(SamplerKind::Uniform, seed);
        let ops: Vec<Operand> = (0..100).map(|_| sampler.next(&config)).collect();
        run_handshake(&bundle, &ops, &model, HandshakeMode::DoneSignalled, HandshakeOptions::default())
            .unwrap()
            .measurements
    };
    assert_eq!(sample(5), sample(5));
    assert_ne!(sample(5), sample(6));
}

#[test]
fn jitter_preserves_outcomes_and_protocol() {
    let config = canonical_config();
    let base = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &base, TimingOptions::default()).unwrap();
    let mut sampler = OperandSampler::new(SamplerKind::RandomFe, 21);
    let ops: Vec<Operand> = (0..500).map(|_| sampler.next(&config)).collect();
    let clean = run_handshake(&bundle, &ops, &base, HandshakeMode::DoneSignalled, HandshakeOptions::default()).unwrap();
    assert!(clean.violations.is_empty());
    let jittered = base.clone().with_jitter(0.5, 1.5, 77);
    let noisy = run_handshake(&bundle, &ops, &jittered, HandshakeMode::DoneSignalled, HandshakeOptions::default()).unwrap();
    assert!(noisy.violations.is_empty());
    for (a, b) in clean.measurements.iter().zip(&noisy.measurements) {
        assert_eq!(a.outcome, b.outcome);
    }
}

#[test]
fn oracle_timed_mode_clean_at_zero_jitter() {
    let config = canonical_config();
    let model = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();
    let mut sampler = OperandSampler::new(SamplerKind::Uniform, 13);
    let ops: Vec<Operand> = (0..200).map(|_| sampler.next(&config)).collect();
    let run = run_handshake(&bundle, &ops, &model, HandshakeMode::OracleTimed, HandshakeOptions::default()).unwrap();
    assert!(run.violations.is_empty());
}

#[test]
fn done_fall_covers_internal_reset() {
    let config = canonical_config();
    let model = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();
    let mut sampler = OperandSampler::new(SamplerKind::RandomFe, 5);
    let ops: Vec<Operand> = (0..300).map(|_| sampler.next(&config)).collect();
    let run = run_handshake(&bundle, &ops, &model, HandshakeMode::DoneSignalled, HandshakeOptions::default()).unwrap();
    for m in &run.measurements {
        assert!(
            m.done_fall_abs >= m.spacer_settle_abs,
            "operand {}: done fell at {} but the circuit settled at {}",
            m.operand,
            m.done_fall_abs,
            m.spacer_settle_abs
        );
    }
}

#[test]
fn sta_bounds_hold_in_simulation() {
    let config = canonical_config();
    let model = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();
    let report = compute_timing(&bundle.netlist, &model, TimingOptions::default()).unwrap();
    assert_eq!(report.t_d_raw + report.t_io, report.t_int);
    assert!(report.t_done_fall >= report.t_int);
    let mut sampler = OperandSampler::new(SamplerKind::RandomFe, 17);
    let ops: Vec<Operand> = (0..1000).map(|_| sampler.next(&config)).collect();
    let run = run_handshake(&bundle, &ops, &model, HandshakeMode::DoneSignalled, HandshakeOptions::default()).unwrap();
    for m in &run.measurements {
        assert!(m.t_spcw <= report.max_t_spcw, "spacer-to-valid exceeded STA");
        assert!(m.t_cwsp <= report.t_int, "reset exceeded STA t_int");
    }
}

#[test]
fn latency_scales_exactly_with_delay_multiplier() {
    let config = canonical_config();
    let base = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &base, TimingOptions::default()).unwrap();
    let table = VddTable::default_shape();
    let mut sampler = OperandSampler::new(SamplerKind::Uniform, 31);
    let ops: Vec<Operand> = (0..100).map(|_| sampler.next(&config)).collect();
    let nominal = run_handshake(&bundle, &ops, &base, HandshakeMode::DoneSignalled, HandshakeOptions::default()).unwrap();
    let slow = scale_delay_model(&base, 0.6, &table).unwrap();
    let scaled = run_handshake(&bundle, &ops, &slow, HandshakeMode::DoneSignalled, HandshakeOptions::default()).unwrap();
    for (a, b) in nominal.measurements.iter().zip(&scaled.measurements) {
        assert_eq!(a.t_spcw * 4, b.t_spcw);
        assert_eq!(a.outcome, b.outcome);
    }
}

#[test]
fn latency_distribution_mean_below_max() {
    let config = canonical_config();
    let model = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();
    let mut sampler = OperandSampler::new(SamplerKind::Uniform, 41);
    let dist =
        measure_latency_distribution(&bundle, &mut sampler, 500, &model, HandshakeMode::DoneSignalled, 10)
            .unwrap();
    assert_eq!(dist.latencies.len(), 500);
    assert!(dist.mean < dist.max as f64);
    assert_eq!(dist.violations, 0);
    let total: u64 = dist.histogram.bins.iter().map(|&(_, c)| c).sum();
    assert_eq!(total, 500);
}

#[test]
fn handshake_trace_exports_as_vcd() {
    let config = TmConfig::all_excluded(2, 4).unwrap();
    let model = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();
    let op = Operand::from_config(vec![true, false], &config);
    let mut options = HandshakeOptions::default();
    options.keep_traces = true;
    let run = run_handshake(&bundle, &[op], &model, HandshakeMode::DoneSignalled, options).unwrap();
    let mut out = Vec::new();
    write_vcd(&bundle.netlist, &run.traces[0], &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("$timescale 1ps $end"));
    assert!(text.contains("done"));
}

//! Acceptance suite: one test per shipping criterion, each printing a
//! pass/fail line (visible with `--nocapture` or on failure).
//!
//! Run with: cargo test -p duorail-cli --test acceptance -- --nocapture

use std::collections::BTreeMap;
use std::path::PathBuf;

use duorail_cli::{run_bench, sweep_vdd, verify_exhaustive};
use duorail_core::datapath::{
    block_instances, build_comparator, build_inference_datapath, build_popcount8,
};
use duorail_core::dualrail::{
    auto_insert_spacer_inverters, direct_map, negative_gate_optimize,
};
use duorail_core::gen::{random_unate_netlists, RandomNetlistSpec};
use duorail_core::sim::{
    check_one_hot, run_handshake, simulate, DelayModel, HandshakeMode, HandshakeOptions, Operand,
    OperandSampler, SamplerKind, SimConfig, SamplerKind::RandomFe, Stimulus,
};
use duorail_core::timing::{compute_timing, TimingOptions, VddTable};
use duorail_core::tm::{compare_oracle, infer, popcount_oracle, TmConfig};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config_f4_c8() -> TmConfig {
    TmConfig::from_json_str(&std::fs::read_to_string(configs_dir().join("tm_f4_c8.json")).unwrap())
        .unwrap()
}

fn config_f2_c4() -> TmConfig {
    TmConfig::from_json_str(&std::fs::read_to_string(configs_dir().join("tm_f2_c4.json")).unwrap())
        .unwrap()
}

fn gate(criterion: u32, name: &str, ok: bool, detail: &str) -> bool {
    println!(
        "criterion {criterion} ({name}): {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

#[test]
fn criterion_1_oracle_equivalence_exhaustive() {
    let config = config_f2_c4();
    let model = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();

    // Zero-delay sweep over all 4 feature vectors x 65,536 exclude
    // matrices, against the software inference oracle.
    let checked = verify_exhaustive(&bundle).unwrap();
    let exhaustive_ok = checked == (1 << 2) * (1 << 16);

    // Timed simulation sampled on 200 random matrices.
    let mut sampler = OperandSampler::new(RandomFe, 11);
    let ops: Vec<Operand> = (0..200).map(|_| sampler.next(&config)).collect();
    let run = run_handshake(
        &bundle,
        &ops,
        &model,
        HandshakeMode::DoneSignalled,
        HandshakeOptions::default(),
    )
    .unwrap();
    let timed_ok = run.measurements.iter().zip(&ops).all(|(m, op)| {
        let cfg = TmConfig::new(2, 4, op.e.clone()).unwrap();
        m.outcome == infer(&op.f, &cfg).unwrap().comparator_outcome
    });

    let ok = gate(
        1,
        "oracle equivalence, exhaustive",
        exhaustive_ok && timed_ok,
        &format!("{checked} zero-delay assignments + 200 timed operands match the oracle"),
    );
    assert!(ok);
}

#[test]
fn criterion_2_popcount8_exhaustive_and_structure() {
    let pc = build_popcount8().unwrap();
    let mut functional = true;
    for x in 0..256usize {
        let bits: Vec<bool> = (0..8).map(|i| x & (1 << i) != 0).collect();
        if pc.eval(&bits).unwrap() != popcount_oracle(&bits) {
            functional = false;
            break;
        }
    }
    let blocks = block_instances(&pc.block_map);
    let structure = blocks.get("ha") == Some(&9)
        && blocks.get("fa") == Some(&2)
        && blocks.get("or") == Some(&2)
        && blocks.get("spinv") == Some(&2);
    let ok = gate(
        2,
        "popcount8 exhaustive + structural audit",
        functional && structure,
        &format!("256/256 inputs match; blocks = {blocks:?}"),
    );
    assert!(ok);
}

#[test]
fn criterion_3_comparator_exhaustive_timed() {
    let cmp = build_comparator(4).unwrap();
    let model = DelayModel::nominal();
    // Nets of the request-gated logic in the lower stages: the part early
    // propagation silences once the MSB pair differs. (The per-stage
    // equality sensors legitimately follow their own bit-pair inputs.)
    let gated_lower: Vec<duorail_core::NetId> = cmp
        .netlist
        .net_ids()
        .filter(|&n| {
            let label = cmp.netlist.net_label(n);
            (1..4).any(|s| {
                label == format!("cmp/s{s}_gt")
                    || label == format!("cmp/s{s}_lt")
                    || label == format!("cmp/s{s}_req")
            })
        })
        .collect();
    assert_eq!(gated_lower.len(), 9);
    let all_lower: Vec<duorail_core::NetId> = cmp
        .block_map
        .iter()
        .filter(|(_, l)| l.starts_with("cmp/stage") && *l != "cmp/stage0")
        .map(|(g, _)| {
            cmp.netlist
                .gate(cmp.netlist.gate_ids().nth(*g as usize).unwrap())
                .output
        })
        .collect();

    let mut outcomes_ok = true;
    let mut one_hot_ok = true;
    let mut gated_silent_ok = true;
    let mut all_differ_silent_ok = true;
    for a in 0..16usize {
        for b in 0..16usize {
            let mut changes = Vec::new();
            for i in 0..4 {
                let (va, vb) = (a & (1 << i) != 0, b & (1 << i) != 0);
                changes.push((1, cmp.netlist.pis()[2 * i], va));
                changes.push((1, cmp.netlist.pis()[2 * i + 1], !va));
                changes.push((1, cmp.netlist.pis()[2 * (4 + i)], vb));
                changes.push((1, cmp.netlist.pis()[2 * (4 + i) + 1], !vb));
            }
            // Valid phase, then return to spacer in the same trace.
            let mut spacer = Vec::new();
            for &(_, net, _) in &changes {
                spacer.push((2000, net, false));
            }
            changes.extend(spacer);
            let trace =
                simulate(&cmp.netlist, &model, &Stimulus { changes }, SimConfig::default())
                    .unwrap();
            let asserted = [
                (cmp.greater, compare_oracle(a, b) == duorail_core::tm::ComparatorOutcome::Greater),
                (cmp.equal, compare_oracle(a, b) == duorail_core::tm::ComparatorOutcome::Equal),
                (cmp.less, compare_oracle(a, b) == duorail_core::tm::ComparatorOutcome::Less),
            ];
            for (net, want) in asserted {
                if (trace.value_at(net, 1500)) != want {
                    outcomes_ok = false;
                }
            }
            if !check_one_hot(&trace, &[cmp.greater, cmp.equal, cmp.less], 0).is_empty() {
                one_hot_ok = false;
            }
            let msb_differs = (a >> 3) & 1 != (b >> 3) & 1;
            let moved = |nets: &[duorail_core::NetId]| {
                nets.iter().any(|n| !trace.transitions[n.index()].is_empty())
            };
            if msb_differs && moved(&gated_lower) {
                gated_silent_ok = false;
            }
            if (a ^ b) == 0b1111 && moved(&all_lower) {
                all_differ_silent_ok = false;
            }
        }
    }
    let ok = gate(
        3,
        "comparator exhaustive at w=4",
        outcomes_ok && one_hot_ok && gated_silent_ok && all_differ_silent_ok,
        &format!(
            "outcomes {} / one-hot {} / gated lower stages silent on MSB difference {} / all stage logic silent when every bit differs {}",
            outcomes_ok, one_hot_ok, gated_silent_ok, all_differ_silent_ok
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_4_protocol_robustness_under_jitter() {
    let config = config_f4_c8();
    let base = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &base, TimingOptions::default()).unwrap();
    let mut sampler = OperandSampler::new(SamplerKind::RandomFe, 404);
    let ops: Vec<Operand> = (0..10_000).map(|_| sampler.next(&config)).collect();
    let clean = run_handshake(
        &bundle,
        &ops,
        &base,
        HandshakeMode::DoneSignalled,
        HandshakeOptions::default(),
    )
    .unwrap();
    let jittered = base.clone().with_jitter(0.5, 1.5, 4040);
    let noisy = run_handshake(
        &bundle,
        &ops,
        &jittered,
        HandshakeMode::DoneSignalled,
        HandshakeOptions::default(),
    )
    .unwrap();
    let decisions_stable = clean
        .measurements
        .iter()
        .zip(&noisy.measurements)
        .all(|(a, b)| a.outcome == b.outcome);
    let ok = gate(
        4,
        "protocol robustness, 10k jittered handshakes",
        clean.violations.is_empty() && noisy.violations.is_empty() && decisions_stable,
        &format!(
            "violations {}+{}, decisions unchanged: {decisions_stable}",
            clean.violations.len(),
            noisy.violations.len()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_5_reduced_cd_timing() {
    let config = config_f4_c8();
    let model = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();
    let mut sampler = OperandSampler::new(SamplerKind::RandomFe, 55);
    let ops: Vec<Operand> = (0..1000).map(|_| sampler.next(&config)).collect();
    let run = run_handshake(
        &bundle,
        &ops,
        &model,
        HandshakeMode::DoneSignalled,
        HandshakeOptions::default(),
    )
    .unwrap();
    let covered = run
        .measurements
        .iter()
        .filter(|m| m.done_fall_abs >= m.spacer_settle_abs)
        .count();
    let report = compute_timing(&bundle.netlist, &model, TimingOptions::default()).unwrap();
    let formula_exact = report.t_d_raw + report.t_io == report.t_int;
    let ok = gate(
        5,
        "reduced-CD timing",
        covered == ops.len() && formula_exact,
        &format!(
            "done fall covers internal reset on {covered}/{} operands; t_d({}) + t_io({}) = t_int({}) exact: {formula_exact}",
            ops.len(),
            report.t_d_raw,
            report.t_io,
            report.t_int
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_6_early_propagation_latency() {
    let config = config_f4_c8();
    let model = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();
    let outcome = run_bench(
        &bundle,
        10_000,
        606,
        &model,
        HandshakeMode::DoneSignalled,
        SamplerKind::Uniform,
        10,
    )
    .unwrap();
    let r = &outcome.report;
    let ratio_ok = r.mean_over_max < 0.8;
    let speedup_ok = r.mean_latency_ps < r.baseline_period_ps as f64 && r.speedup > 1.0;
    let ok = gate(
        6,
        "early propagation",
        ratio_ok && speedup_ok,
        &format!(
            "mean/max = {:.3} (< 0.8: {ratio_ok}); mean {:.1} ps vs baseline {} ps, speedup {:.2} (> 1: {speedup_ok}); reference silicon figure {}x reported, not asserted",
            r.mean_over_max, r.mean_latency_ps, r.baseline_period_ps, r.speedup,
            r.silicon_reference_speedup
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_7_voltage_sweep_scaling() {
    let config = config_f4_c8();
    let model = DelayModel::nominal();
    let bundle = build_inference_datapath(&config, &model, TimingOptions::default()).unwrap();
    let table = VddTable::default_shape();
    let outcome = sweep_vdd(&bundle, &[1.2, 0.6, 0.25], &table, 300, 77, &model).unwrap();
    let base = outcome.rows[0].mean_latency_ps;
    let multipliers = [1.0, 4.0, 3000.0];
    // Integer delays scale exactly, so the means are in exactly these
    // ratios (tolerance would only be needed for fractional multipliers).
    let ratios_exact = outcome
        .rows
        .iter()
        .zip(multipliers)
        .all(|(row, m)| (row.mean_latency_ps - base * m).abs() < 1e-9);
    let clean = outcome.rows.iter().all(|r| r.violation_count == 0);
    let ok = gate(
        7,
        "voltage-sweep scaling",
        ratios_exact && clean && outcome.decisions_consistent,
        &format!(
            "means {:?} ps in exact 1:4:3000 ratios: {ratios_exact}; decisions identical: {}; violations clean: {clean}",
            outcome
                .rows
                .iter()
                .map(|r| r.mean_latency_ps)
                .collect::<Vec<_>>(),
            outcome.decisions_consistent
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_8_mapping_soundness() {
    let spec = RandomNetlistSpec::default();
    let netlists = random_unate_netlists(808, 100, &spec);
    let mut function_ok = true;
    let mut count_ok = true;
    let mut polarity_ok = true;
    for single in &netlists {
        let (dual, binding) = direct_map(single).unwrap();
        let (opt, opt_binding) = negative_gate_optimize(&dual, &binding);
        if opt.gate_count() > dual.gate_count() {
            count_ok = false;
        }
        let n_pi = single.pis().len();
        for bits in 0..(1u32 << n_pi) {
            let pis: Vec<bool> = (0..n_pi).map(|i| bits & (1 << i) != 0).collect();
            let want = single.po_values(&single.eval_zero_delay(&pis, false).unwrap());
            let dual_pis: Vec<bool> = pis.iter().flat_map(|&v| [v, !v]).collect();
            for (netlist, label) in [(&dual, "direct"), (&opt, "optimized")] {
                let got = netlist.po_values(&netlist.eval_zero_delay(&dual_pis, false).unwrap());
                for (i, w) in want.iter().enumerate() {
                    if got[2 * i] != *w || got[2 * i + 1] != w.not() {
                        eprintln!("{label} mapping mismatch at bits {bits:b}");
                        function_ok = false;
                    }
                }
            }
        }
        match auto_insert_spacer_inverters(opt, opt_binding, &BTreeMap::new()) {
            Ok(_) => {}
            Err(_) => polarity_ok = false,
        }
    }
    let ok = gate(
        8,
        "mapping soundness, 100 random unate netlists",
        function_ok && count_ok && polarity_ok,
        &format!(
            "function preserved: {function_ok}; optimize never grew: {count_ok}; polarity analysis passes: {polarity_ok}"
        ),
    );
    assert!(ok);
}

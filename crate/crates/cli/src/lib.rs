//! Library half of the `duorail` command-line tool: the benchmark engine,
//! the voltage-sweep driver, and the report formats the subcommands emit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use duorail_core::datapath::{
    build_inference_datapath, gates_per_block, kind_class, DatapathBundle, DpError,
};
use duorail_core::sim::{
    run_handshake, DelayModel, HandshakeMode, HandshakeOptions, Histogram, Operand,
    OperandMeasurement, OperandSampler, SamplerKind, SimError,
};
use duorail_core::timing::{compute_timing, scale_delay_model, TimingError, TimingOptions, VddTable};
use duorail_core::tm::{infer, ComparatorOutcome, TmConfig, TmError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("configuration: {0}")]
    Tm(#[from] TmError),
    #[error("datapath: {0}")]
    Dp(#[from] DpError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("timing: {0}")]
    Timing(#[from] TimingError),
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
}

pub fn parse_sampler(name: &str) -> Result<SamplerKind, CliError> {
    match name {
        "uniform" => Ok(SamplerKind::Uniform),
        "msb-skewed" => Ok(SamplerKind::MsbSkewed),
        "equal-counts" => Ok(SamplerKind::EqualCounts),
        "random-fe" => Ok(SamplerKind::RandomFe),
        other => Err(CliError::Usage(format!(
            "unknown sampler {other:?} (uniform, msb-skewed, equal-counts, random-fe)"
        ))),
    }
}

pub fn parse_mode(name: &str) -> Result<HandshakeMode, CliError> {
    match name {
        "done" => Ok(HandshakeMode::DoneSignalled),
        "oracle" => Ok(HandshakeMode::OracleTimed),
        other => Err(CliError::Usage(format!(
            "unknown mode {other:?} (done, oracle)"
        ))),
    }
}

/// Benchmark summary. The latency figures are spacer-to-valid times in
/// picoseconds; the synchronous baseline is the worst-case combinational
/// path used as a clock-period abstraction. The reference silicon design
/// this architecture follows reported a 10x average-latency improvement;
/// that figure is echoed for comparison, never asserted.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub operands: usize,
    pub seed: u64,
    pub mode: String,
    pub sampler: String,
    pub mean_latency_ps: f64,
    pub max_latency_ps: u64,
    pub min_latency_ps: u64,
    pub mean_over_max: f64,
    pub baseline_period_ps: u64,
    pub speedup: f64,
    pub silicon_reference_speedup: f64,
    pub mean_t_cwsp_ps: f64,
    pub max_t_cwsp_ps: u64,
    /// Throughput period under the spcw+spcw reading.
    pub throughput_period_spcw_spcw_ps: f64,
    /// Throughput period under the spcw+cwsp reading.
    pub throughput_period_spcw_cwsp_ps: f64,
    pub avg_inferences_per_s: f64,
    pub violation_count: usize,
    /// Total net transitions across the run (switching-activity proxy).
    pub switching_transitions: u64,
    pub gate_total: usize,
    /// Gate counts per datapath component and cell class.
    pub gate_counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub histogram: Histogram,
}

impl BenchReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Top-level component of a block label (`clause_3` -> `clause`,
/// `pcp/ha2` -> `pcp`, `cmp/stage1` -> `cmp`).
pub fn block_component(label: &str) -> String {
    if let Some(idx) = label.find('/') {
        return label[..idx].to_string();
    }
    label
        .trim_end_matches(|c: char| c.is_ascii_digit())
        .trim_end_matches('_')
        .to_string()
}

/// Gate counts per component and cell class.
pub fn gate_count_table(bundle: &DatapathBundle) -> BTreeMap<String, BTreeMap<String, usize>> {
    let mut table: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (raw, label) in &bundle.block_map {
        let gate = bundle
            .netlist
            .gate(bundle.netlist.gate_ids().nth(*raw as usize).unwrap());
        let comp = block_component(label);
        *table
            .entry(comp)
            .or_default()
            .entry(kind_class(gate.kind).to_string())
            .or_insert(0) += 1;
    }
    table
}

pub struct BenchOutcome {
    pub report: BenchReport,
    pub measurements: Vec<OperandMeasurement>,
}

/// Runs `n` sampled handshakes and assembles the benchmark report.
pub fn run_bench(
    bundle: &DatapathBundle,
    n: usize,
    seed: u64,
    delay_model: &DelayModel,
    mode: HandshakeMode,
    sampler_kind: SamplerKind,
    bin_width: u64,
) -> Result<BenchOutcome, CliError> {
    let mut sampler = OperandSampler::new(sampler_kind, seed);
    let operands: Vec<Operand> = (0..n).map(|_| sampler.next(&bundle.config)).collect();
    run_bench_on(bundle, operands, seed, delay_model, mode, sampler_kind, bin_width)
}

/// Benchmark over an explicit operand list (stimulus-file runs).
pub fn run_bench_on(
    bundle: &DatapathBundle,
    operands: Vec<Operand>,
    seed: u64,
    delay_model: &DelayModel,
    mode: HandshakeMode,
    sampler_kind: SamplerKind,
    bin_width: u64,
) -> Result<BenchOutcome, CliError> {
    let n = operands.len();
    let run = run_handshake(
        bundle,
        &operands,
        delay_model,
        mode,
        HandshakeOptions::default(),
    )?;
    let report = compute_timing(
        &bundle.netlist,
        &delay_model.without_jitter(),
        TimingOptions::default(),
    )?;
    let latencies: Vec<u64> = run.measurements.iter().map(|m| m.t_spcw).collect();
    let mean = latencies.iter().sum::<u64>() as f64 / latencies.len().max(1) as f64;
    let max = latencies.iter().copied().max().unwrap_or(0);
    let min = latencies.iter().copied().min().unwrap_or(0);
    let cwsp: Vec<u64> = run.measurements.iter().map(|m| m.t_cwsp).collect();
    let mean_cwsp = cwsp.iter().sum::<u64>() as f64 / cwsp.len().max(1) as f64;
    let max_cwsp = cwsp.iter().copied().max().unwrap_or(0);
    let avg_inferences = if mean + max_cwsp as f64 > 0.0 {
        1.0e12 / (mean + max_cwsp as f64)
    } else {
        0.0
    };
    let mode_name = match mode {
        HandshakeMode::DoneSignalled => "done",
        HandshakeMode::OracleTimed => "oracle",
    };
    let sampler_name = match sampler_kind {
        SamplerKind::Uniform => "uniform",
        SamplerKind::MsbSkewed => "msb-skewed",
        SamplerKind::EqualCounts => "equal-counts",
        SamplerKind::RandomFe => "random-fe",
    };
    let bench = BenchReport {
        operands: n,
        seed,
        mode: mode_name.to_string(),
        sampler: sampler_name.to_string(),
        mean_latency_ps: mean,
        max_latency_ps: max,
        min_latency_ps: min,
        mean_over_max: if max > 0 { mean / max as f64 } else { 0.0 },
        baseline_period_ps: report.max_t_spcw,
        speedup: if mean > 0.0 {
            report.max_t_spcw as f64 / mean
        } else {
            0.0
        },
        silicon_reference_speedup: 10.0,
        mean_t_cwsp_ps: mean_cwsp,
        max_t_cwsp_ps: max_cwsp,
        throughput_period_spcw_spcw_ps: 2.0 * mean,
        throughput_period_spcw_cwsp_ps: mean + mean_cwsp,
        avg_inferences_per_s: avg_inferences,
        violation_count: run.violations.len(),
        switching_transitions: run.measurements.iter().map(|m| m.transitions).sum(),
        gate_total: bundle.netlist.gate_count(),
        gate_counts: gate_count_table(bundle),
        histogram: Histogram::from_values(&latencies, bin_width),
    };
    Ok(BenchOutcome {
        report: bench,
        measurements: run.measurements,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub vdd: f64,
    pub multiplier: f64,
    pub mean_latency_ps: f64,
    pub max_latency_ps: u64,
    pub violation_count: usize,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Outcomes identical at every supply point.
    pub decisions_consistent: bool,
}

/// Benchmarks the bundle at each supply point with scaled delays and
/// re-verifies that the decisions are identical everywhere.
pub fn sweep_vdd(
    bundle: &DatapathBundle,
    vdds: &[f64],
    table: &VddTable,
    n: usize,
    seed: u64,
    delay_model: &DelayModel,
) -> Result<SweepOutcome, CliError> {
    let mut sampler = OperandSampler::new(SamplerKind::Uniform, seed);
    let operands: Vec<Operand> = (0..n).map(|_| sampler.next(&bundle.config)).collect();
    let mut rows = Vec::new();
    let mut outcomes: Option<Vec<ComparatorOutcome>> = None;
    let mut consistent = true;
    for &vdd in vdds {
        let scaled = scale_delay_model(delay_model, vdd, table)?;
        let run = run_handshake(
            bundle,
            &operands,
            &scaled,
            HandshakeMode::DoneSignalled,
            HandshakeOptions::default(),
        )?;
        let lat: Vec<u64> = run.measurements.iter().map(|m| m.t_spcw).collect();
        let mean = lat.iter().sum::<u64>() as f64 / lat.len().max(1) as f64;
        let these: Vec<ComparatorOutcome> =
            run.measurements.iter().map(|m| m.outcome).collect();
        match &outcomes {
            None => outcomes = Some(these),
            Some(first) => consistent &= *first == these,
        }
        rows.push(SweepRow {
            vdd,
            multiplier: table.multiplier(vdd)?,
            mean_latency_ps: mean,
            max_latency_ps: lat.iter().copied().max().unwrap_or(0),
            violation_count: run.violations.len(),
        });
    }
    Ok(SweepOutcome {
        rows,
        decisions_consistent: consistent,
    })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("vdd,multiplier,mean_latency_ps,max_latency_ps,violations\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.vdd, r.multiplier, r.mean_latency_ps, r.max_latency_ps, r.violation_count
        ));
    }
    out
}

pub fn histogram_csv(hist: &Histogram) -> String {
    let mut out = String::from("bin_start_ps,bin_end_ps,count\n");
    for &(start, count) in &hist.bins {
        out.push_str(&format!("{},{},{}\n", start, start + hist.bin_width, count));
    }
    out
}

/// Exhaustive oracle-equivalence sweep over every `(f, e)` assignment.
/// Returns the first counterexample as an error string.
pub fn verify_exhaustive(bundle: &DatapathBundle) -> Result<u64, CliError> {
    let features = bundle.config.features();
    let clauses = bundle.config.clauses();
    let e_bits = clauses * 2 * features;
    let total_bits = features + e_bits;
    if total_bits > 26 {
        return Err(CliError::Usage(format!(
            "exhaustive space is 2^{total_bits}; use --random N instead"
        )));
    }
    let mut checked = 0u64;
    for e_word in 0..(1u64 << e_bits) {
        let e: Vec<Vec<bool>> = (0..clauses)
            .map(|j| {
                (0..2 * features)
                    .map(|k| e_word & (1 << (j * 2 * features + k)) != 0)
                    .collect()
            })
            .collect();
        let config = TmConfig::new(features, clauses, e.clone())?;
        for f_word in 0..(1u32 << features) {
            let f: Vec<bool> = (0..features).map(|m| f_word & (1 << m) != 0).collect();
            let want = infer(&f, &config)?.comparator_outcome;
            let got = bundle.eval_outcome(&f, &e)?;
            if got != want {
                return Err(CliError::VerifyFailed(format!(
                    "f={f_word:0width$b} e={e_word:0ewidth$b}: circuit {} vs oracle {}",
                    got.name(),
                    want.name(),
                    width = features,
                    ewidth = e_bits,
                )));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Randomized oracle-equivalence sweep over `(f, e)` pairs.
pub fn verify_random(bundle: &DatapathBundle, n: usize, seed: u64) -> Result<u64, CliError> {
    let mut sampler = OperandSampler::new(SamplerKind::RandomFe, seed);
    for i in 0..n {
        let op = sampler.next(&bundle.config);
        let config = TmConfig::new(
            bundle.config.features(),
            bundle.config.clauses(),
            op.e.clone(),
        )?;
        let want = infer(&op.f, &config)?.comparator_outcome;
        let got = bundle.eval_outcome(&op.f, &op.e)?;
        if got != want {
            return Err(CliError::VerifyFailed(format!(
                "sample {i}: f={:?} circuit {} vs oracle {}",
                op.f,
                got.name(),
                want.name()
            )));
        }
    }
    Ok(n as u64)
}

pub fn load_config(path: &Path) -> Result<TmConfig, CliError> {
    Ok(TmConfig::from_json_str(&fs::read_to_string(path)?)?)
}

pub fn load_bundle(dir: &Path) -> Result<DatapathBundle, CliError> {
    Ok(DatapathBundle::from_json_str(&fs::read_to_string(
        dir.join("bundle.json"),
    )?)?)
}

pub fn load_delay_model(path: Option<&Path>) -> Result<DelayModel, CliError> {
    match path {
        Some(p) => Ok(DelayModel::from_json_str(&fs::read_to_string(p)?)?),
        None => Ok(DelayModel::nominal()),
    }
}

pub fn load_vdd_table(path: Option<&Path>) -> Result<VddTable, CliError> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            if p.extension().and_then(|e| e.to_str()) == Some("csv") {
                Ok(VddTable::from_csv_str(&text)?)
            } else {
                Ok(VddTable::from_json_str(&text)?)
            }
        }
        None => Ok(VddTable::default_shape()),
    }
}

/// Builds the bundle for a config and writes the bundle directory:
/// `bundle.json`, a copy of the configuration, and the timing report.
pub fn build_to_dir(
    config: &TmConfig,
    delay_model: &DelayModel,
    out: &Path,
) -> Result<DatapathBundle, CliError> {
    let bundle = build_inference_datapath(config, delay_model, TimingOptions::default())?;
    let report = compute_timing(&bundle.netlist, delay_model, TimingOptions::default())?;
    fs::create_dir_all(out)?;
    fs::write(out.join("bundle.json"), bundle.to_json_string())?;
    fs::write(out.join("config.json"), config.to_json_string())?;
    fs::write(out.join("timing.json"), report.to_json_string())?;
    Ok(bundle)
}

pub fn print_gate_table(bundle: &DatapathBundle) {
    let table = gate_count_table(bundle);
    println!("{:<12} {:>8} {:>8} {:>9} {:>7} {:>7}", "block", "complex", "simple", "inverter", "delay", "total");
    let mut grand = 0usize;
    for (comp, classes) in &table {
        let total: usize = classes.values().sum();
        grand += total;
        println!(
            "{:<12} {:>8} {:>8} {:>9} {:>7} {:>7}",
            comp,
            classes.get("complex").copied().unwrap_or(0),
            classes.get("simple").copied().unwrap_or(0),
            classes.get("inverter").copied().unwrap_or(0),
            classes.get("delay").copied().unwrap_or(0),
            total
        );
    }
    println!("{:<12} {:>43}", "total", grand);
    let blocks = gates_per_block(&bundle.block_map).len();
    println!("{blocks} blocks, {} nets", bundle.netlist.net_count());
}

//! `duorail`: build, verify, benchmark, and voltage-sweep self-timed
//! dual-rail inference datapaths.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use duorail_cli::*;
use duorail_core::sim::{measurements_csv, run_handshake, HandshakeOptions, Operand, OperandSampler};
use duorail_core::vcd::write_vcd;

#[derive(Parser)]
#[command(name = "duorail", version, about = "Self-timed dual-rail inference datapath toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate a datapath bundle from an inference configuration
    Build(BuildArgs),
    /// Check a bundle against the software inference oracle
    Verify(VerifyArgs),
    /// Latency benchmark against the worst-case-clocked baseline
    Bench(BenchArgs),
    /// Benchmark across supply voltages with scaled delays
    #[command(name = "sweep-vdd")]
    SweepVdd(SweepArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Inference configuration JSON
    #[arg(long)]
    config: PathBuf,
    /// Output bundle directory
    #[arg(long)]
    out: PathBuf,
    /// Delay model JSON (defaults to the nominal table)
    #[arg(long)]
    delays: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Bundle directory (from `build`)
    #[arg(long)]
    bundle: PathBuf,
    /// Check every (f, e) assignment
    #[arg(long, conflicts_with = "random")]
    exhaustive: bool,
    /// Check N random (f, e) samples
    #[arg(long, value_name = "N")]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Number of operands
    #[arg(short = 'n', long = "operands", default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Delay model JSON
    #[arg(long)]
    delays: Option<PathBuf>,
    /// Environment timing: done (delayed-done CD) or oracle (timed grace)
    #[arg(long, default_value = "done")]
    mode: String,
    /// Output directory for report.json / per_operand.csv / histogram.csv
    #[arg(long)]
    out: PathBuf,
    /// Operand sampler: uniform, msb-skewed, equal-counts, random-fe
    #[arg(long, default_value = "uniform")]
    sampler: String,
    /// Latency histogram bin width in picoseconds
    #[arg(long, default_value_t = 10)]
    bin_width: u64,
    /// Dump the first operand's trace as VCD
    #[arg(long)]
    vcd: Option<PathBuf>,
    /// Feature vectors from a stimulus file (one hex vector per line;
    /// the bundle's exclude matrix drives the e inputs) instead of a
    /// sampler
    #[arg(long, conflicts_with = "sampler")]
    stimulus: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Comma-separated supply voltages, e.g. 1.2,0.6,0.25
    #[arg(long)]
    vdds: String,
    /// Voltage table JSON or CSV (defaults to the built-in shape)
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(short = 'n', long = "operands", default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    delays: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Commands::Build(args) => {
            let config = load_config(&args.config)?;
            let model = load_delay_model(args.delays.as_deref())?;
            let bundle = build_to_dir(&config, &model, &args.out)?;
            println!(
                "built F={} C={} datapath: {} gates, {} nets -> {}",
                config.features(),
                config.clauses(),
                bundle.netlist.gate_count(),
                bundle.netlist.net_count(),
                args.out.display()
            );
            print_gate_table(&bundle);
            Ok(ExitCode::SUCCESS)
        }
        Commands::Verify(args) => {
            let bundle = load_bundle(&args.bundle)?;
            let result = if args.exhaustive {
                verify_exhaustive(&bundle)
            } else if let Some(n) = args.random {
                verify_random(&bundle, n, args.seed)
            } else {
                return Err(CliError::Usage(
                    "pass --exhaustive or --random N".to_string(),
                ));
            };
            match result {
                Ok(checked) => {
                    println!("verify: PASS ({checked} assignments match the oracle)");
                    Ok(ExitCode::SUCCESS)
                }
                Err(CliError::VerifyFailed(msg)) => {
                    println!("verify: FAIL ({msg})");
                    Ok(ExitCode::FAILURE)
                }
                Err(e) => Err(e),
            }
        }
        Commands::Bench(args) => {
            let bundle = load_bundle(&args.bundle)?;
            let model = load_delay_model(args.delays.as_deref())?;
            let mode = parse_mode(&args.mode)?;
            let sampler = parse_sampler(&args.sampler)?;
            let outcome = match &args.stimulus {
                Some(path) => {
                    let text = fs::read_to_string(path)?;
                    let vectors = duorail_core::tm::parse_stimulus(&text, bundle.config.features())
                        .map_err(duorail_cli::CliError::Tm)?;
                    let ops: Vec<Operand> = vectors
                        .into_iter()
                        .map(|f| Operand::from_config(f, &bundle.config))
                        .collect();
                    run_bench_on(&bundle, ops, args.seed, &model, mode, sampler, args.bin_width)?
                }
                None => run_bench(&bundle, args.n, args.seed, &model, mode, sampler, args.bin_width)?,
            };
            fs::create_dir_all(&args.out)?;
            fs::write(args.out.join("report.json"), outcome.report.to_json_string())?;
            fs::write(
                args.out.join("per_operand.csv"),
                measurements_csv(&outcome.measurements),
            )?;
            fs::write(
                args.out.join("histogram.csv"),
                histogram_csv(&outcome.report.histogram),
            )?;
            if let Some(vcd_path) = &args.vcd {
                let mut sampler = OperandSampler::new(sampler, args.seed);
                let first: Vec<Operand> = vec![sampler.next(&bundle.config)];
                let mut options = HandshakeOptions::default();
                options.keep_traces = true;
                let run = run_handshake(&bundle, &first, &model, mode, options)?;
                let mut out = Vec::new();
                write_vcd(&bundle.netlist, &run.traces[0], &mut out)?;
                fs::write(vcd_path, out)?;
            }
            let r = &outcome.report;
            println!(
                "bench: n={} mean={:.1} ps, max={} ps, mean/max={:.3}",
                r.operands, r.mean_latency_ps, r.max_latency_ps, r.mean_over_max
            );
            println!(
                "baseline period {} ps -> speedup {:.2} (reference silicon result: {}x)",
                r.baseline_period_ps, r.speedup, r.silicon_reference_speedup
            );
            println!(
                "throughput period: {:.1} ps (spcw+spcw) / {:.1} ps (spcw+cwsp); {:.1}M inferences/s",
                r.throughput_period_spcw_spcw_ps,
                r.throughput_period_spcw_cwsp_ps,
                r.avg_inferences_per_s / 1.0e6
            );
            println!("protocol violations: {}", r.violation_count);
            Ok(if r.violation_count == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Commands::SweepVdd(args) => {
            let bundle = load_bundle(&args.bundle)?;
            let model = load_delay_model(args.delays.as_deref())?;
            let table = load_vdd_table(args.table.as_deref())?;
            let vdds: Vec<f64> = args
                .vdds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Usage(format!("bad vdd {s:?}")))
                })
                .collect::<Result<_, _>>()?;
            let outcome = sweep_vdd(&bundle, &vdds, &table, args.n, args.seed, &model)?;
            fs::create_dir_all(&args.out)?;
            fs::write(args.out.join("sweep.csv"), sweep_csv(&outcome.rows))?;
            for row in &outcome.rows {
                println!(
                    "vdd {:>5}: x{:<8} mean={:.1} ps max={} ps violations={}",
                    row.vdd, row.multiplier, row.mean_latency_ps, row.max_latency_ps,
                    row.violation_count
                );
            }
            let clean = outcome.decisions_consistent
                && outcome.rows.iter().all(|r| r.violation_count == 0);
            println!(
                "decisions {} across {} supply points",
                if outcome.decisions_consistent { "identical" } else { "DIVERGED" },
                outcome.rows.len()
            );
            Ok(if clean { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

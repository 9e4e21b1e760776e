use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use convbench::algos::{BlockedDirect, Im2colGemm};
use convbench::convset::{ConvSet, FilterSpec};
use convbench::descriptor::ConvClass;
use convbench::harness::{self, ConvBench, DataGen, Mode, RunConfig, SignFlipped, Status};
use convbench::report;
use convbench::verify::{self, OracleConfig};
use convbench::Error;

const EXIT_CORRECTNESS: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "convbench", version, about = "Phase-level benchmarking of 2D convolution algorithms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark or check every operation of a convSet.
    Run(RunArgs),
    /// Write the filtered subset of a convSet.
    Filter {
        #[arg(long)]
        convset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        filter: FilterArgs,
    },
    /// Print class counts and shape ranges of a convSet.
    Stats {
        #[arg(long)]
        convset: PathBuf,
    },
    /// Compare a main and a baseline results file.
    Report {
        #[arg(long)]
        main: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        out_speedup: PathBuf,
        #[arg(long)]
        out_breakdown: PathBuf,
        #[arg(long)]
        out_summary: PathBuf,
    },
    /// Check both algorithms against the naive oracle, in parallel.
    Verify {
        #[arg(long)]
        convset: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Element type of the check.
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
        #[command(flatten)]
        filter: FilterArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    convset: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, value_parser = parse_data)]
    data: DataGen,
    #[arg(long, default_value_t = 1.0)]
    constant_value: f32,
    #[arg(long, default_value_t = 10)]
    warmups: usize,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Element type of correctness comparisons.
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(flatten)]
    filter: FilterArgs,
    /// Results CSV; written to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Corrupt the main algorithm on purpose.
    #[arg(long, hide = true, value_enum)]
    inject_fault: Option<Fault>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    SignFlip,
}

#[derive(Args)]
struct FilterArgs {
    /// Comma-separated classes: pointwise, grouped, dilated, rectangular, regular.
    #[arg(long, value_delimiter = ',', value_parser = parse_class)]
    filter: Vec<ConvClass>,
    #[arg(long)]
    exclude_padded: bool,
    #[arg(long)]
    min_flops: Option<u64>,
    #[arg(long)]
    max_flops: Option<u64>,
    /// Keep only operations with this stride in both dimensions.
    #[arg(long)]
    stride: Option<usize>,
}

impl FilterArgs {
    fn spec(&self) -> FilterSpec {
        FilterSpec {
            classes: self.filter.iter().copied().collect(),
            exclude_padded: self.exclude_padded,
            min_flops: self.min_flops,
            max_flops: self.max_flops,
            stride: self.stride,
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_data(s: &str) -> Result<DataGen, String> {
    s.parse()
}

fn parse_class(s: &str) -> Result<ConvClass, String> {
    s.parse()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io_or_schema() {
                ExitCode::from(EXIT_IO)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Run(args) => run(args),
        Command::Filter { convset, out, filter } => {
            let set = ConvSet::load_csv(&convset)?;
            let filtered = set.apply_filter(&filter.spec());
            filtered.save_csv(&out)?;
            eprintln!("kept {} of {} operations", filtered.len(), set.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats { convset } => {
            println!("{}", ConvSet::load_csv(&convset)?.stats());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report {
            main,
            baseline,
            out_speedup,
            out_breakdown,
            out_summary,
        } => {
            let main = report::read_results_csv(&main)?;
            let baseline = report::read_results_csv(&baseline)?;
            let join = report::compute_speedups(&main, &baseline)?;
            report::write_speedups_csv(&join.rows, &out_speedup)?;
            let sidecar = out_speedup.with_extension("unmatched.csv");
            report::write_unmatched_csv(&join.unmatched, &sidecar)?;
            if !join.unmatched.is_empty() {
                eprintln!("{} keys not compared, see {}", join.unmatched.len(), sidecar.display());
            }
            report::write_breakdown_csv(&report::breakdown_dataset(&main, &baseline), &out_breakdown)?;
            let summary = report::summarize(&join.rows);
            report::write_summary(&summary, &out_summary)?;
            print!("{summary}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            convset,
            seed,
            precision,
            filter,
        } => {
            let set = ConvSet::load_csv(&convset)?.apply_filter(&filter.spec());
            let cfg = OracleConfig {
                seed,
                ..Default::default()
            };
            let mut failures = 0;
            let results = match precision {
                Precision::F32 => verify::sweep_with::<f32>(set.entries(), &cfg),
                Precision::F64 => verify::sweep_with::<f64>(set.entries(), &cfg),
            };
            for (desc, result) in set.iter().zip(results) {
                match result {
                    Ok(check) if check.passed() => {}
                    Ok(check) => {
                        failures += 1;
                        println!(
                            "FAIL {desc}: baseline err {:.3e}, main err {}",
                            check.baseline.max_rel_err,
                            check.main.map_or("-".into(), |m| format!("{:.3e}", m.max_rel_err))
                        );
                    }
                    Err(e) => {
                        failures += 1;
                        println!("FAIL {desc}: {e}");
                    }
                }
            }
            println!("{} operations checked, {failures} failed", set.len());
            Ok(if failures > 0 {
                ExitCode::from(EXIT_CORRECTNESS)
            } else {
                ExitCode::SUCCESS
            })
        }
    }
}

fn run(args: RunArgs) -> Result<ExitCode, Error> {
    let set = ConvSet::load_csv(&args.convset)?;
    let cfg = RunConfig {
        mode: args.mode,
        data_gen: args.data,
        constant_value: args.constant_value,
        warmups: args.warmups,
        runs: args.runs,
        seed: args.seed,
        precision: match args.precision {
            Precision::F32 => harness::Precision::Single,
            Precision::F64 => harness::Precision::Double,
        },
        filter: args.filter.spec(),
        ..Default::default()
    };
    let bench = match args.inject_fault {
        None => ConvBench::from_config(&cfg),
        Some(Fault::SignFlip) => ConvBench::new(SignFlipped(BlockedDirect { cache: cfg.cache }))
            .with_baseline(Im2colGemm { blocking: cfg.blocking }),
    };
    let outcomes = bench.convset_exec_with(&set, &cfg, |done, total, o| {
        let detail = o.reason.as_deref().unwrap_or("");
        eprintln!("[{done}/{total}] {} {} {detail}", o.key, o.status);
    })?;

    match &args.out {
        Some(path) => report::write_results_csv(&outcomes, path)?,
        None => {
            let rows: Vec<_> = outcomes.iter().map(report::ResultRow::from).collect();
            report::write_result_rows_to(&rows, std::io::stdout().lock())
                .map_err(|e| Error::csv("<stdout>", e))?;
        }
    }

    let ok = outcomes.iter().filter(|o| o.status == Status::Ok).count();
    let skipped = outcomes.iter().filter(|o| o.status == Status::SkippedUnsupported).count();
    let mismatches = outcomes.iter().filter(|o| o.is_correctness_failure()).count();
    eprintln!(
        "{} operations: {ok} ok, {skipped} skipped, {} failed ({mismatches} correctness)",
        outcomes.len(),
        outcomes.len() - ok - skipped
    );
    Ok(if mismatches > 0 {
        ExitCode::from(EXIT_CORRECTNESS)
    } else {
        ExitCode::SUCCESS
    })
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ladder_core::capacity::MemoryBudget;
use ladder_experiment::{CliError, CliResult, ExperimentConfig, Pipeline};

#[derive(Parser)]
#[command(name = "ladder", version, about = "Driven Heisenberg ladder: work statistics from pure-state simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML, or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `run.output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed, overriding `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Memory budget in GiB (default: detected).
    #[arg(long)]
    memory_gib: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Density of states and inverse temperature.
    Dos(Common),
    /// Energy-filtered initial state and its LDOS.
    Prepare(Common),
    /// Field protocol at one or more rates (multiples of gamma0).
    Run {
        #[command(flatten)]
        common: Common,
        /// Rate multiplier; repeatable. Default: every configured rate.
        #[arg(long)]
        rate: Vec<f64>,
    },
    /// Work statistics from the outputs of `dos` and `run`.
    Analyze(Common),
    /// Full pipeline over several lengths at one rate.
    Scan {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ladder lengths. Default: `scan.lengths`.
        #[arg(long, value_delimiter = ',')]
        lengths: Vec<usize>,
        /// Rate multiplier. Default: `scan.rate`.
        #[arg(long)]
        rate: Option<f64>,
    },
}

fn pipeline(common: &Common) -> CliResult<Pipeline> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.run.output = out.clone();
    }
    let mut p = Pipeline::new(cfg);
    if let Some(gib) = common.memory_gib {
        if !(gib > 0.0 && gib.is_finite()) {
            return Err(CliError::Config(format!("--memory-gib must be positive, got {gib}")));
        }
        p = p.with_budget(MemoryBudget::from_gib(gib));
    }
    Ok(p)
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Dos(c) => {
            let p = pipeline(&c)?;
            let (dos, beta) = p.dos()?;
            println!("dos: {} grid points, resolution {}", dos.len(), dos.resolution);
            match (beta.beta, beta.error) {
                (Some(b), _) => println!("beta = {b} +- {}", beta.uncertainty),
                (None, Some(e)) => println!("beta fit failed: {e}"),
                _ => {}
            }
        }
        Command::Prepare(c) => {
            let p = pipeline(&c)?;
            let (_, p_ini) = p.prepare()?;
            let m = ladder_core::spectral::moments(&p_ini)?;
            println!("initial state: mean {} std {}", m.mean, m.std);
        }
        Command::Run { common, rate } => {
            let p = pipeline(&common)?;
            let rates = if rate.is_empty() { p.cfg.protocol.rates.clone() } else { rate };
            for r in p.run(&rates)? {
                println!("rate {}: gamma {} over {} steps", r.rate, r.gamma, r.steps);
            }
        }
        Command::Analyze(c) => {
            let p = pipeline(&c)?;
            let s = p.analyze()?;
            println!("{}", ladder_core::work::WorkReport::CSV_HEADER);
            for r in &s.reports {
                println!("{}", r.csv_row());
            }
            println!("largest deviation at gamma/gamma0 = {}", s.worst_gamma_over_gamma0);
        }
        Command::Scan { common, lengths, rate } => {
            let p = pipeline(&common)?;
            let scan = p.cfg.scan.clone();
            let lengths = if lengths.is_empty() {
                scan.as_ref().map(|s| s.lengths.clone()).unwrap_or_default()
            } else {
                lengths
            };
            let rate = rate
                .or(scan.map(|s| s.rate))
                .ok_or_else(|| CliError::Config("missing field `scan.rate` (or --rate)".into()))?;
            if lengths.is_empty() {
                return Err(CliError::Config("missing field `scan.lengths` (or --lengths)".into()));
            }
            let report = p.scan(&lengths, rate)?;
            println!("L,delta_E,Delta_E,ratio");
            for r in &report.rows {
                println!("{},{},{},{}", r.length, r.delta_e, r.spread_e, r.ratio);
            }
            println!(
                "Delta_E ~ c sqrt(L): c = {} (rms {}); ~ c L: c = {} (rms {})",
                report.spread_sqrt.c, report.spread_sqrt.rms, report.spread_linear.c, report.spread_linear.rms
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

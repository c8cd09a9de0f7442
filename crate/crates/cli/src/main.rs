use std::path::PathBuf;
use std::process::ExitCode;

use capgen::harness::{
    replay, run_experiment, write_outputs, ExperimentConfig, ExperimentKind, OutputFormat,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "capgen", version, about = "Certify capability-generalization bounds on cooperative MMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify every bound on randomly generated linear instance pairs.
    VerifyBounds(RunArgs),
    /// Reference team comparisons on the exact Fruit Forage desk instance.
    FruitForage(RunArgs),
    /// Capability-aware vs capability-blind Q-learning on Predator Prey.
    PredatorPrey(RunArgs),
    /// Bound certification over a grid of discounts and state counts.
    Sweep(RunArgs),
    /// Recompute the violations stored in a violations.json file.
    Replay {
        /// Path to violations.json.
        path: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; results land in <out>/<experiment>/<config-hash>/.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

fn run(kind: ExperimentKind, args: RunArgs) -> capgen::Result<ExitCode> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(kind),
    };
    if config.experiment != kind {
        return Err(capgen::Error::Config(format!(
            "config describes a {} experiment, not {}",
            config.experiment.as_str(),
            kind.as_str()
        )));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.display().to_string();
    }
    if let Some(f) = args.format {
        config.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    let outcome = run_experiment(&config, args.jobs)?;
    let dir = write_outputs(&outcome, &config, &PathBuf::from(&config.out_dir))?;
    println!("rows: {}", outcome.rows.len());
    println!("violations: {}", outcome.violations.len());
    println!("determinism hash: {}", outcome.determinism_hash);
    println!("output: {}", dir.display());
    if outcome.violations.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &outcome.violations {
            eprintln!(
                "violation: instance {} {} bound {} actual {}",
                v.instance, v.report.bound_name, v.report.bound_value, v.report.actual_value
            );
        }
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::VerifyBounds(a) => run(ExperimentKind::VerifyBounds, a),
        Command::FruitForage(a) => run(ExperimentKind::FruitForage, a),
        Command::PredatorPrey(a) => run(ExperimentKind::PredatorPrey, a),
        Command::Sweep(a) => run(ExperimentKind::Sweep, a),
        Command::Replay { path } => replay(&path).map(|r| {
            println!("checked: {}", r.checked);
            println!("reproduced: {}", r.reproduced);
            println!("skipped: {}", r.skipped);
            if r.reproduced > 0 {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use solarprob::Result;
use solarprob_cli::commands;
use solarprob_cli::config::RunConfig;

/// Probabilistic day-ahead PV power forecasting.
#[derive(Debug, Parser)]
#[command(name = "solarprob", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; defaults apply to everything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Model file written by `train` or `prune`.
    #[arg(long, global = true)]
    model: Option<PathBuf>,

    /// Interval coverages in percent, e.g. `68,95,99`.
    #[arg(long, global = true, value_delimiter = ',')]
    coverage: Option<Vec<f64>>,

    /// Index of the configured split to use.
    #[arg(long, global = true, default_value_t = 0)]
    split: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the input series and its feature correlations.
    Generate,
    /// Train the configured model on a split's training window.
    Train,
    /// Recursive forecast from one origin.
    Forecast {
        /// Forecast origin `YYYY-MM-DDTHH:MM`; defaults to the configured
        /// origin hour on the day before the split's test window.
        #[arg(long)]
        origin: Option<String>,
    },
    /// Rolling day-ahead evaluation over a split's test window.
    Evaluate,
    /// SHAP exports for an NGBoost model.
    Explain,
    /// Hyperparameter grid search for the configured model kind.
    Grid,
    /// SHAP-based feature pruning and retraining.
    Prune,
    /// Benchmark all models on all splits.
    Bench,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(c) = &cli.coverage {
        cfg.coverage = c.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    let model = cli.model.as_deref();
    match &cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Train => commands::train(&cfg, cli.split).map(|p| println!("{}", p.display())),
        Command::Forecast { origin } => commands::forecast(&cfg, model, cli.split, origin.as_deref()),
        Command::Evaluate => commands::evaluate(&cfg, model, cli.split).map(|_| ()),
        Command::Explain => commands::explain(&cfg, model, cli.split),
        Command::Grid => commands::grid(&cfg).map(|_| ()),
        Command::Prune => commands::prune(&cfg, model, cli.split).map(|o| {
            println!("dropped: {}", o.dropped.join(", "));
        }),
        Command::Bench => commands::bench(&cfg).map(|o| {
            for c in &o.checks {
                println!("{}: {} < {} -> {}", c.name, c.lhs, c.rhs, if c.passed { "pass" } else { "fail" });
            }
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}

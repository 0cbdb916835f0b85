use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

mod config;
mod run;

use config::{ConfigError, Experiment};
use run::RunError;

/// Spherical-means inversion experiments on convex domains.
#[derive(Parser, Debug)]
#[command(name = "ubp", version)]
struct Cli {
    /// Experiment to run; falls back to `experiment` in the config file.
    #[arg(value_enum)]
    experiment: Option<Experiment>,

    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Output directory (default `out/<experiment>`).
    #[arg(long, short)]
    out: Option<PathBuf>,

    /// Override a configuration value, e.g. `--set domain.exponent=6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,

    /// Seed for every random choice; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<String, RunError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError::new("--threads", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::Io(e.to_string()))?;
    }
    let mut cfg = config::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let experiment = cli
        .experiment
        .or(cfg.experiment)
        .ok_or_else(|| ConfigError::new("experiment", "no experiment given on the command line or in the config"))?;
    cfg.experiment = Some(experiment);
    let resolved = cfg.validate(experiment)?;
    let out = cli
        .out
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(experiment.to_string()));
    cfg.output_dir = Some(out.display().to_string());
    run::execute(&cfg, &resolved, experiment, &out)
}

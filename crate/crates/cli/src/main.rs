//! `srx`: discovery runs, problem synthesis, offline scoring and noise
//! sweeps.

mod discover;
mod manifest;
mod score_cmd;
mod synth_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use manifest::{ConfigError, Overrides};

/// Exit code for configuration and usage errors.
const EXIT_CONFIG: u8 = 2;
/// Exit code when some problem failed for infrastructure reasons.
const EXIT_PARTIAL: u8 = 1;

#[derive(Parser)]
#[command(name = "srx", version, about = "LLM-driven equation discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run discovery on every problem in a manifest.
    Discover(RunArgs),
    /// Turn skeleton specs into benchmark problems.
    Synth {
        /// Spec file, or a directory of `*.json` spec files.
        #[arg(long)]
        specs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Score predicted equations against a problem.
    Score {
        /// Problem manifest (`problem.json`).
        #[arg(long)]
        problem: PathBuf,
        /// One equation per line, or JSON lines with `id` and `equation`.
        #[arg(long)]
        predictions: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "tau")]
        taus: Vec<f64>,
    },
    /// Rerun discovery with Gaussian noise on the training targets.
    NoiseSweep {
        #[command(flatten)]
        run: RunArgs,
        /// Relative noise level; repeat for several.
        #[arg(long = "sigma", required = true, allow_negative_numbers = true)]
        sigmas: Vec<f64>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `scripted` or `remote`.
    #[arg(long)]
    backend: Option<String>,
    /// Scripted policy id, e.g. `oracle_after_k:3` or `poly_ladder`.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Accuracy tolerance to report; repeat for several.
    #[arg(long = "tau")]
    taus: Vec<f64>,
    /// Answer model calls from transcripts recorded under this directory.
    #[arg(long)]
    replay: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            backend: self.backend.clone(),
            policy: self.policy.clone(),
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            repeats: self.repeats,
            parallel: self.parallel,
            seed: self.seed,
            taus: self.taus.clone(),
            replay: self.replay.clone(),
        }
    }
}

enum Failure {
    Config(String),
    Run(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

fn batch_status(results: &[discover::ProblemRuns]) -> ExitCode {
    let failed: Vec<&discover::ProblemRuns> = results.iter().filter(|r| r.error.is_some()).collect();
    for f in &failed {
        eprintln!("problem {} failed: {}", f.id, f.error.as_deref().unwrap_or_default());
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_PARTIAL)
    }
}

fn real_main(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Discover(args) => {
            let cfg = manifest::load(&args.manifest, &args.overrides())?;
            let results = discover::discover(&cfg, 0.0, &cfg.out)?;
            println!("wrote {}", cfg.out.join("summary.csv").display());
            Ok(batch_status(&results))
        }
        Command::NoiseSweep { run, sigmas } => {
            if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
                return Err(Failure::Config(format!("noise level {s} must be finite and non-negative")));
            }
            let cfg = manifest::load(&run.manifest, &run.overrides())?;
            let all = discover::noise_sweep(&cfg, &sigmas)?;
            println!("wrote {}", cfg.out.join("noise_sweep.csv").display());
            let flat: Vec<discover::ProblemRuns> = all.into_iter().flatten().collect();
            Ok(batch_status(&flat))
        }
        Command::Synth {
            specs,
            out,
            seed,
            parallel,
        } => {
            if parallel == 0 {
                return Err(Failure::Config("parallelism must be at least 1".into()));
            }
            let specs = synth_cmd::read_specs(&specs)?;
            let rows = synth_cmd::synth(&specs, &out, seed, parallel)?;
            for r in &rows {
                match &r.rejected {
                    Some(reason) => println!("{}: rejected ({reason})", r.id),
                    None => println!("{}: accepted", r.id),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Score {
            problem,
            predictions,
            out,
            taus,
        } => {
            let taus = if taus.is_empty() { vec![0.01, 0.001] } else { taus };
            if let Some(t) = taus.iter().find(|t| !(**t > 0.0)) {
                return Err(Failure::Config(format!("tau {t} must be positive")));
            }
            let data = srx_core::dataset::load_problem(&problem).map_err(|e| Failure::Config(e.to_string()))?;
            let text = std::fs::read_to_string(&predictions)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", predictions.display())))?;
            let preds = score_cmd::parse_predictions(&text).map_err(|e| Failure::Config(format!("{e:#}")))?;
            let csv = score_cmd::score(&data, &preds, &taus, &srx_core::fit::FitConfig::default())?;
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(|e| Failure::Run(e.into()))?,
                None => print!("{csv}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}

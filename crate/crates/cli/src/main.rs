use std::path::{Path, PathBuf};
use std::process::ExitCode;

use boloc_core::experiment::{self, ExperimentConfig};
use boloc_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Multi-fidelity Bayesian optimisation of localisation networks.
#[derive(Parser)]
#[command(name = "boloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in experiment preset, used when no config file is given.
    #[arg(long, value_parser = ["localisation-wifi", "localisation-uwb", "wifi-like", "uwb-like"])]
    preset: Option<String>,
    /// Single seed, replacing the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output (run) directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its scenario manifest.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the tuning sweep over methods and seeds.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        workers: Option<usize>,
        /// Tuning-time budget per run, in seconds.
        #[arg(long)]
        budget_s: Option<f64>,
        /// Cap on trials per run.
        #[arg(long)]
        max_trials: Option<usize>,
    },
    /// Retrain best configurations for the final number of epochs.
    Train {
        #[command(flatten)]
        common: Common,
        /// One best-config file; by default every one in the output directory.
        #[arg(long)]
        best_config: Option<PathBuf>,
        /// Defaults to the configured final epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Mean localisation error of a saved model on a dataset CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Summarise the outcome files of a run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(p)) => ExperimentConfig::preset(p)?,
        (None, None) => ExperimentConfig::preset("localisation-wifi")?,
    };
    if let Some(seed) = c.seed {
        cfg.tuner.seeds = vec![seed];
        if let Some(s) = cfg.dataset.synthetic.as_mut() {
            s.seed = seed;
        }
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            let path = experiment::cmd_generate(&cfg, &cfg.output_dir)?;
            println!("wrote {}", path.display());
        }
        Command::Tune {
            common,
            workers,
            budget_s,
            max_trials,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(w) = workers {
                cfg.tuner.workers = w;
            }
            if let Some(b) = budget_s {
                cfg.tuner.budget_s = Some(b);
            }
            if let Some(m) = max_trials {
                cfg.tuner.max_trials = Some(m);
            }
            cfg.validate()?;
            let runs = experiment::cmd_tune(&cfg)?;
            let mut failed = 0;
            for r in &runs {
                match &r.result {
                    Ok(t) => println!(
                        "{} seed {}: {} trials, best validation error {:.4} m",
                        r.method,
                        r.seed,
                        t.history.len(),
                        t.best_validation_error_m
                    ),
                    Err(e) => {
                        failed += 1;
                        eprintln!("{} seed {}: {e}", r.method, r.seed);
                    }
                }
            }
            if failed > 0 {
                return Err(Error::InvalidInput(format!("{failed} of {} runs failed", runs.len())));
            }
        }
        Command::Train {
            common,
            best_config,
            epochs,
        } => {
            let cfg = load_config(&common)?;
            let epochs = epochs.unwrap_or(cfg.final_epochs);
            let rows = match best_config {
                Some(p) => vec![experiment::cmd_train(&cfg, &p, epochs)?],
                None => experiment::cmd_train_all(&cfg, epochs)?,
            };
            for r in rows {
                println!(
                    "{} seed {}: train {:.4} m, val {:.4} m, test {:.4} m",
                    r.method, r.seed, r.train_error_m, r.val_error_m, r.test_error_m
                );
            }
        }
        Command::Eval {
            model,
            pipeline,
            dataset,
        } => {
            let err = experiment::cmd_eval(&model, &pipeline, &dataset)?;
            println!("{err}");
        }
        Command::Report { out } => {
            let report = experiment::cmd_report(Path::new(&out))?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

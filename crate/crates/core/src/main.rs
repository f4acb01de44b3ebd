use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tdks_learn::commands;
use tdks_learn::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "tdks-learn",
    version,
    about = "Learn correlation potentials for a 1D time-dependent Kohn-Sham system \
             from two-electron reference densities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Preset name: desk-pointwise, desk-functional, paper-pointwise,
    /// paper-functional.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the model kind: phi | density.
    #[arg(long)]
    kind: Option<String>,
    /// Override the training momenta, comma separated (e.g. -1.0,-1.8).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    train_p: Option<Vec<f64>>,
    /// Override the optimizer iteration limit.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Override the smoothness penalty strength.
    #[arg(long)]
    mu: Option<f64>,
    /// Override the initialization seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> tdks_learn::Result<RunConfig> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(name), None) => RunConfig::from_preset(name)?,
            (None, Some(path)) => RunConfig::load(path)?,
            _ => {
                return Err(tdks_learn::Error::Config(
                    "pass exactly one of --preset or --config".into(),
                ))
            }
        };
        if let Some(kind) = &self.kind {
            cfg.model.kind = kind.clone();
        }
        if let Some(train_p) = &self.train_p {
            cfg.train_momenta = train_p.clone();
        }
        if let Some(max_iter) = self.max_iter {
            cfg.optimizer.max_iter = max_iter;
        }
        if let Some(mu) = self.mu {
            cfg.mu = mu;
        }
        if let Some(seed) = self.seed {
            cfg.model.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the two-electron reference problem and write density
    /// trajectories plus Kohn-Sham initial pairs.
    GenerateReference {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
    },
    /// Re-invert Kohn-Sham initial pairs from existing reference files.
    InvertInitial {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
    },
    /// Learn pointwise correlation values on the space-time grid.
    TrainPointwise {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Resume from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Learn memory-functional model parameters.
    TrainFunctional {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Propagate a trained control, optionally past the training horizon.
    Rollout {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Momenta to roll out, comma separated; defaults to the training
        /// momenta.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        momenta: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        extra_steps: usize,
    },
    /// Score a checkpoint on the configured train and test momenta.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Export per-time CSV snapshots for plotting.
    ExportCsv {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        predicted: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Snapshot times in a.u., comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the gradient-oracle suites (dense Jacobian + finite
    /// differences).
    Gradcheck,
}

fn run() -> tdks_learn::Result<bool> {
    match Cli::parse().command {
        Command::GenerateReference { cfg, data_dir } => {
            let cfg = cfg.resolve()?;
            let written = commands::cmd_generate_reference(&cfg, &data_dir)?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::InvertInitial { cfg, data_dir } => {
            let cfg = cfg.resolve()?;
            for path in commands::cmd_invert_initial(&cfg, &data_dir)? {
                println!("wrote {}", path.display());
            }
        }
        Command::TrainPointwise { cfg, data_dir, out_dir, resume } => {
            let cfg = cfg.resolve()?;
            let summary = commands::cmd_train_pointwise(
                &cfg,
                &data_dir,
                &out_dir,
                resume.as_deref(),
                |rec| {
                    println!(
                        "iter {:4}  f {:.6e}  |g| {:.3e}  step {:.3e}  evals {}",
                        rec.iter, rec.objective, rec.grad_max, rec.step, rec.evals
                    );
                },
            )?;
            println!(
                "baseline MSE {:.6e} -> final MSE {:.6e} ({}x improvement, {})",
                summary.baseline_mse,
                summary.final_mse,
                summary.improvement_factor as u64,
                summary.termination
            );
        }
        Command::TrainFunctional { cfg, data_dir, out_dir, resume } => {
            let cfg = cfg.resolve()?;
            let summary = commands::cmd_train_functional(
                &cfg,
                &data_dir,
                &out_dir,
                resume.as_deref(),
                |rec| {
                    println!(
                        "iter {:4}  f {:.6e}  |g| {:.3e}  step {:.3e}  evals {}",
                        rec.iter, rec.objective, rec.grad_max, rec.step, rec.evals
                    );
                },
            )?;
            println!(
                "baseline MSE {:.6e} -> final MSE {:.6e} ({}x improvement, {})",
                summary.baseline_mse,
                summary.final_mse,
                summary.improvement_factor as u64,
                summary.termination
            );
            for score in &summary.per_trajectory {
                println!("  p={}: train MSE {:.6e}", score.label, score.mse);
            }
        }
        Command::Rollout { cfg, data_dir, out_dir, checkpoint, momenta, extra_steps } => {
            let cfg = cfg.resolve()?;
            let momenta = momenta.unwrap_or_else(|| cfg.train_momenta.clone());
            let summary = commands::cmd_rollout(
                &cfg,
                &data_dir,
                &out_dir,
                &checkpoint,
                &momenta,
                extra_steps,
            )?;
            for score in &summary.report.per_trajectory {
                println!("p={}: MSE {:.6e}", score.label, score.mse);
            }
            println!("overall MSE {:.6e}", summary.report.overall);
        }
        Command::Evaluate { cfg, data_dir, out_dir, checkpoint } => {
            let cfg = cfg.resolve()?;
            let summary = commands::cmd_evaluate(&cfg, &data_dir, &out_dir, &checkpoint)?;
            for (name, report) in [("train", &summary.train), ("test", &summary.test)] {
                for score in &report.per_trajectory {
                    println!("{name} p={}: MSE {:.6e}", score.label, score.mse);
                }
                if !report.per_trajectory.is_empty() {
                    println!("{name} overall MSE {:.6e}", report.overall);
                }
            }
        }
        Command::ExportCsv { reference, predicted, checkpoint, times, out_dir } => {
            let exports = commands::cmd_export_csv(
                &reference,
                predicted.as_deref(),
                checkpoint.as_deref(),
                &times,
                &out_dir,
            )?;
            for e in exports {
                println!(
                    "t = {} a.u. snapped to {} (frame {}): {}",
                    e.requested_time,
                    e.snapped_time,
                    e.frame,
                    e.path.display()
                );
            }
        }
        Command::Gradcheck => {
            let reports = tdks_learn::gradcheck::run_all()?;
            let mut ok = true;
            for report in &reports {
                println!("{report}");
                ok &= report.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

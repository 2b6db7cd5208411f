//! Command-line front end: train the learned pipelines, run the case-study
//! experiments, render plots, and gate releases on the invariants suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semcast_core::config::{load_config, SensLoss, Variant};
use semcast_core::error::Error;
use semcast_core::harness::{
    emit_plots, run_experiment, CheckpointSet, ExperimentId, ExperimentSpec,
};
use semcast_core::semantic::{
    save_checkpoint, train_csi_baseline, train_with_progress, Checkpoint, CheckpointKind,
    CsiModel, ModelState,
};

#[derive(Parser)]
#[command(
    name = "semcast",
    about = "Joint communication-and-sensing channel semantic acquisition: training, case-study experiments, plots, and the invariants selftest",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file ([scenario] and [net] tables); defaults to
    /// the case-study parameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one pipeline variant (or the CSI-feedback baseline) and write
    /// a checkpoint into --out.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// jcas | comm_only | sens_only | random_pilot | csi_baseline
        #[arg(long)]
        variant: String,
        /// Sensing-head loss: cosine (default) or nmse.
        #[arg(long, default_value = "cosine")]
        sens_loss: String,
        /// Optimization steps override.
        #[arg(long)]
        steps: Option<u64>,
        /// Batch size override.
        #[arg(long)]
        batch: Option<usize>,
        /// Checkpoint output directory.
        #[arg(long, default_value = "checkpoints")]
        out: PathBuf,
    },
    /// Run one experiment sweep and write a results file.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// fig3 | fig4 | fig5 | invariants_suite
        #[arg(long)]
        experiment: String,
        /// Directory holding the trained checkpoints.
        #[arg(long, default_value = "checkpoints")]
        checkpoints: PathBuf,
        /// Trials per (pipeline, sweep point) override.
        #[arg(long)]
        trials: Option<usize>,
        /// Results file path (line-delimited JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the plot for a results file.
    Plot {
        /// Results file produced by `evaluate`.
        #[arg(long)]
        results: PathBuf,
        /// Output directory for images.
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Run the invariants suite (acceptance criteria 1-5); nonzero exit on
    /// any failure.
    Selftest {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Train {
            common,
            variant,
            sens_loss,
            steps,
            batch,
            out,
        } => {
            let loaded = load_config(common.config.as_deref())?;
            let scenario = loaded.scenario;
            let mut net = loaded.net;
            if let Some(seed) = common.seed {
                net.seed = seed;
            }
            if let Some(s) = steps {
                net.steps = s;
            }
            if let Some(b) = batch {
                net.batch = b;
            }
            net.sens_loss = match sens_loss.as_str() {
                "cosine" => SensLoss::Cosine,
                "nmse" => SensLoss::Nmse,
                other => {
                    return Err(Error::Config(format!(
                        "unknown sensing loss '{other}'; valid: cosine, nmse"
                    )))
                }
            };
            std::fs::create_dir_all(&out)?;

            if variant == "csi_baseline" {
                let mut model = CsiModel::new(&scenario, scenario.feedback_bits, net.seed)?;
                println!(
                    "training csi_baseline: {} steps, batch {}, {} parameters",
                    net.steps,
                    net.batch,
                    model.params.n_scalars()
                );
                let report = train_csi_baseline(&mut model, net.steps, net.batch, net.lr)?;
                let path = out.join("csi_baseline.ckpt");
                save_checkpoint(
                    &path,
                    &Checkpoint {
                        kind: CheckpointKind::Csi(model),
                    },
                )?;
                println!(
                    "csi_baseline: nmse {:.4} -> {:.4}; wrote {}",
                    report.curve.first().map_or(f64::NAN, |p| p.loss),
                    report.curve.last().map_or(f64::NAN, |p| p.loss),
                    path.display()
                );
                return Ok(ExitCode::SUCCESS);
            }

            net.variant = Variant::parse(&variant)?;
            let stem = match (net.variant, net.sens_loss) {
                (Variant::Jcas, SensLoss::Nmse) => "jcas_nmse".to_string(),
                (v, _) => v.name().to_string(),
            };
            let mut state = ModelState::new(&scenario, &net)?;
            println!(
                "training {stem}: {} steps, batch {}, {} parameters",
                net.steps,
                net.batch,
                state.params.n_scalars()
            );
            let every = (net.steps / 20).max(1);
            let report = train_with_progress(&mut state, &mut |p| {
                if p.step % every == 0 || p.step + 1 == net.steps {
                    println!(
                        "  step {:>6}  loss {:>9.4}  ase {:>7}  cosine {:>7}",
                        p.step,
                        p.loss,
                        p.ase.map_or("-".into(), |v| format!("{v:.3}")),
                        p.cosine.map_or("-".into(), |v| format!("{v:.3}")),
                    );
                }
            })?;
            let path = out.join(format!("{stem}.ckpt"));
            save_checkpoint(
                &path,
                &Checkpoint {
                    kind: CheckpointKind::Variant(state),
                },
            )?;
            let curve_path = out.join(format!("{stem}.curve.json"));
            std::fs::write(
                &curve_path,
                serde_json::to_string_pretty(&report).map_err(|e| Error::Results(e.to_string()))?,
            )?;
            println!("wrote {} and {}", path.display(), curve_path.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Evaluate {
            common,
            experiment,
            checkpoints,
            trials,
            out,
        } => {
            let loaded = load_config(common.config.as_deref())?;
            let id = ExperimentId::parse(&experiment)?;
            let mut spec = ExperimentSpec::defaults(id);
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            if let Some(t) = trials {
                spec.n_trials_classical = t;
                spec.n_trials_learned = t;
            }
            let out_path =
                out.unwrap_or_else(|| PathBuf::from(format!("results/{}.jsonl", id.name())));
            let ckpts = CheckpointSet::new(&checkpoints);
            let summary = run_experiment(&spec, &loaded.scenario, &ckpts, &out_path)?;
            println!(
                "{}: {} records -> {}",
                id.name(),
                summary.n_records,
                summary.out_path.display()
            );
            if id == ExperimentId::InvariantsSuite && summary.selftest_failures > 0 {
                eprintln!("{} invariant criteria failed", summary.selftest_failures);
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Plot { results, out } => {
            let paths = emit_plots(&results, &out)?;
            for p in paths {
                println!("wrote {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Selftest { common } => {
            let loaded = load_config(common.config.as_deref())?;
            let reports = semcast_core::selftest::run_all(&loaded.scenario);
            let mut failures = 0;
            for r in &reports {
                println!("{}", r.line());
                if !r.pass {
                    failures += 1;
                }
            }
            if failures > 0 {
                eprintln!("{failures} of {} criteria failed", reports.len());
                Ok(ExitCode::from(1))
            } else {
                println!("all {} criteria passed", reports.len());
                Ok(ExitCode::SUCCESS)
            }
        }
    }
}

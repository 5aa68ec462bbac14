use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grurcn::config::{DataSource, ExperimentConfig};
use grurcn::experiment::{self, WallClock};
use grurcn::gradcheck::{self, Target};
use grurcn::{checkpoint, dataset, Error, Result};
use grurcn_core::model;
use grurcn_core::train::EpochRecord;

#[derive(Parser)]
#[command(
    name = "grurcn",
    version,
    about = "Convolutional GRU video classifiers on synthetic motion data"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Experiment configuration (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configured `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Write the synthetic dataset to the output directory.
    Generate,
    /// Train and evaluate the configured model.
    Train,
    /// Re-evaluate the checkpoint in the output directory on the test split.
    Evaluate,
    /// Print shapes, parameter counts and multiplication estimates.
    Describe,
    /// Finite-difference gradient checks of the cells and the full model.
    Gradcheck,
    /// Train every configured architecture (and the fused two-stream model).
    Compare,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> Result<PathBuf> {
    cli.out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set key out".into()))
}

fn report_epoch(name: &str, r: &EpochRecord) {
    eprintln!(
        "[{name}] epoch {:>3}  train {:.4}  val {:.4}  acc {:.3}  {:.1}s",
        r.epoch, r.train_loss, r.val_loss, r.val_acc, r.seconds
    );
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serialisable"));
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("serialisable");
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match cli.verb {
        Verb::Generate => {
            let out = out_dir(cli, &cfg)?;
            let DataSource::Generate { spec, sizes } = &cfg.data else {
                return Err(Error::Config(
                    "key data.path: generate writes a new dataset; remove data.path".into(),
                ));
            };
            let data = grurcn_core::data::generate_dataset(spec, *sizes, cfg.seed)?;
            dataset::save_dataset(&out, spec, cfg.seed, &data)?;
            eprintln!(
                "wrote {} + {} + {} clips to {}",
                sizes.train,
                sizes.val,
                sizes.test,
                out.display()
            );
        }
        Verb::Train => {
            let out = out_dir(cli, &cfg)?;
            let report =
                experiment::run_experiment(&cfg, &out, &WallClock::start(), &mut report_epoch)?;
            print_json(&report);
        }
        Verb::Compare => {
            let out = out_dir(cli, &cfg)?;
            let c = experiment::compare(&cfg, &out, &WallClock::start(), &mut report_epoch)?;
            print_json(&c.report);
        }
        Verb::Evaluate => {
            let out = out_dir(cli, &cfg)?;
            let model = checkpoint::load_checkpoint(&out.join(experiment::CHECKPOINT_DIR))?;
            let (data, _) = experiment::load_data(&cfg)?;
            let e = experiment::evaluate_model(&cfg, &model, &data)?;
            let summary = serde_json::json!({
                "test_accuracy": e.accuracy,
                "per_class_accuracy": e.per_class_accuracy(),
                "confusion": e.confusion,
            });
            write_json(&out.join("evaluation.json"), &summary)?;
            print_json(&summary);
        }
        Verb::Describe => {
            let summary = model::describe(&cfg.model, cfg.train.crop.steps)?;
            println!("{summary}");
            if let Some(out) = cli.out.as_ref().or(cfg.out.as_ref()) {
                std::fs::create_dir_all(out).map_err(|source| Error::Io {
                    path: out.clone(),
                    source,
                })?;
                let levels: Vec<_> = summary
                    .levels
                    .iter()
                    .map(|l| {
                        serde_json::json!({
                            "level": l.level,
                            "input": l.input,
                            "hidden": l.hidden,
                            "kernel": l.kernel,
                            "weights": l.weights,
                            "biases": l.biases,
                            "stacked_weights": l.stacked_weights,
                            "conv_multiplications_estimate": l.conv_multiplications.to_string(),
                            "dense_multiplications_estimate": l.dense_multiplications.to_string(),
                        })
                    })
                    .collect();
                let json = serde_json::json!({
                    "architecture": summary.architecture.name(),
                    "steps": summary.steps,
                    "levels": levels,
                    "head_parameters": summary.head_parameters,
                    "backbone_parameters": summary.backbone_parameters,
                    "recurrent_parameters": summary.recurrent_parameters(),
                });
                write_json(&out.join("describe.json"), &json)?;
            }
        }
        Verb::Gradcheck => {
            let mut worst: f64 = 0.0;
            for target in Target::ALL {
                let r = gradcheck::check(target, cfg.seed, 1e-5, None)?;
                worst = worst.max(r.max_error());
                println!(
                    "{:<22} max relative error {:.3e}",
                    target.name(),
                    r.max_error()
                );
                for b in &r.blocks {
                    println!("    {:<20} {:.3e}", b.name, b.max_relative_error);
                }
            }
            if worst >= 1e-5 {
                return Err(Error::Numerical(format!(
                    "gradient check error {worst:.3e} >= 1e-5"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use siamese_core::classify::{embed_dataset, search_spec, ClassifierKind, FittedClassifier};
use siamese_core::data::{mean_ir, Split};
use siamese_core::{metrics, BackboneConfig, ImbalanceLevel};
use siamese_harness::experiment::{load_datasets, train_cell, RunOutput};
use siamese_harness::report::{self, emit_report, execute, Command};
use siamese_harness::synthetic::{write_corpus, SynthSpec};
use siamese_harness::{
    export_weights, import_weights, load_manifest, parse_config, ExperimentConfig, Mode,
};

#[derive(Parser)]
#[command(
    name = "siamese",
    version,
    about = "Few-shot siamese experiments on imbalanced image sets"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// siamese or single_cnn.
    #[arg(long)]
    mode: Option<Mode>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let Some(path) = &self.config else {
            bail!("--config is required");
        };
        let mut cfg = parse_config(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(out) = &self.output {
            cfg.output_dir = Some(out.clone());
        }
        Ok(cfg)
    }

    fn output_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.output
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("results"))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate manifests and print class counts and MeanIR.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// A single manifest instead of a config.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
    /// Train one grid cell and write its weights and loss history.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset to train on (default: first grid source).
        #[arg(long)]
        from: Option<String>,
        #[arg(long, default_value = "N")]
        level: ImbalanceLevel,
        #[arg(long, default_value_t = 100)]
        majority: usize,
        #[arg(long, default_value_t = 0)]
        technique: usize,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Embed a dataset with given weights, fit a classifier on its train
    /// split and score the test split.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Fit the classifier on this manifest's train split instead.
        #[arg(long)]
        train_manifest: Option<PathBuf>,
        #[arg(long, default_value = "histogram")]
        classifier: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the full from/to × level × technique grid.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Re-run a previous run from its run_manifest.json.
        #[arg(long, conflicts_with = "config")]
        replay: Option<PathBuf>,
    },
    /// Run the grid at every configured majority count.
    Scaling {
        #[command(flatten)]
        common: Common,
    },
    /// Write the synthetic blob/ring corpus as PNGs plus manifest.csv.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 300)]
        train_per_class: usize,
        #[arg(long, default_value_t = 100)]
        test_per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0.08)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_counts(name: &str, ds: &siamese_core::Dataset) -> anyhow::Result<()> {
    println!(
        "{name}: {} samples, image shape {:?}",
        ds.len(),
        ds.image_shape()
    );
    for split in [Split::Train, Split::Test] {
        let part = ds.split(split);
        println!("  {split:?}: {:?}", part.class_counts());
    }
    println!("  MeanIR: {:.2}", mean_ir(&ds.class_counts())?);
    Ok(())
}

fn finish(run: &RunOutput, command: Command, dir: &Path) -> anyhow::Result<ExitCode> {
    emit_report(run, command, dir)?;
    let failures = run.table.failures();
    println!(
        "{} rows ({} failed) written to {}",
        run.table.rows.len(),
        failures,
        dir.display()
    );
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Cmd::Prepare { common, manifest } => {
            if let Some(path) = manifest {
                let ds = load_manifest(&path, "manifest", BackboneConfig::default().input_shape)?;
                print_counts(&path.display().to_string(), &ds)?;
            } else {
                let cfg = common.load()?;
                for (name, ds) in load_datasets(&cfg)? {
                    print_counts(&name, &ds)?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train {
            common,
            from,
            level,
            majority,
            technique,
            fold,
        } => {
            let cfg = common.load()?;
            let from = from.unwrap_or_else(|| cfg.sources()[0].to_string());
            let datasets = load_datasets(&cfg)?;
            let cell = train_cell(&cfg, &datasets, &from, level, majority, technique, fold)?;
            let dir = common.output_dir(&cfg);
            fs::create_dir_all(&dir)?;
            export_weights(&cell.params, &dir.join("weights.bin"))?;
            let summary = json!({
                "from": from,
                "level": level,
                "majority": majority,
                "technique": cfg.techniques[technique].signature(cfg.mode),
                "fold": fold,
                "seed": cell.seed,
                "train_ids": cell.train_ids,
                "history": cell.history,
            });
            fs::write(
                dir.join("history.json"),
                serde_json::to_string_pretty(&summary)?,
            )?;
            println!(
                "trained {} epochs, final loss {:.6}; weights in {}",
                cell.history.len(),
                cell.history.last().copied().unwrap_or(f64::NAN),
                dir.join("weights.bin").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Eval {
            weights,
            manifest,
            train_manifest,
            classifier,
            seed,
            output,
        } => {
            let params = import_weights(&weights, None)?;
            let kind: ClassifierKind = serde_json::from_value(json!(classifier))
                .with_context(|| format!("unknown classifier `{classifier}`"))?;
            let shape = params.config.input_shape;
            let test = load_manifest(&manifest, "eval", shape)?.split(Split::Test);
            let train = match &train_manifest {
                Some(p) => load_manifest(p, "fit", shape)?,
                None => load_manifest(&manifest, "eval", shape)?,
            }
            .split(Split::Train);
            let codes = embed_dataset(&params, &train)?;
            let spec = search_spec(&codes, kind, seed)?.spec;
            let model = FittedClassifier::fit(&codes, &spec)?;
            let test_codes = embed_dataset(&params, &test)?;
            let pred = model.predict_all(&test_codes)?;
            let mut classes = train.classes().clone();
            classes.extend(test.classes());
            let counts = metrics::confusion(&pred, &test_codes.labels, &classes)?;
            let per_class: BTreeMap<String, _> = counts
                .per_class
                .iter()
                .map(|(c, k)| {
                    (c.to_string(), json!({"precision": k.precision(), "recall": k.recall(), "f1": k.f1(), "tp": k.tp, "fp": k.fp, "fn": k.fn_}))
                })
                .collect();
            let doc = json!({
                "classifier": spec.describe(),
                "macro_f1": metrics::macro_f1(&counts),
                "accuracy": counts.correct() as f64 / counts.total as f64,
                "per_class": per_class,
            });
            let text = serde_json::to_string_pretty(&doc)?;
            println!("{text}");
            if let Some(dir) = output {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("metrics.json"), text)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Experiment { common, replay } => {
            if let Some(manifest) = replay {
                let m = report::load_run_manifest(&manifest)?;
                let dir = common
                    .output
                    .clone()
                    .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("replay"));
                let run = execute(m.command, &m.config)?;
                return finish(&run, m.command, &dir);
            }
            let cfg = common.load()?;
            let command = match cfg.mode {
                Mode::Siamese => Command::Experiment,
                Mode::SingleCnn => Command::SingleCnn,
            };
            let run = execute(command, &cfg)?;
            finish(&run, command, &common.output_dir(&cfg))
        }
        Cmd::Scaling { common } => {
            let cfg = common.load()?;
            let run = execute(Command::Scaling, &cfg)?;
            finish(&run, Command::Scaling, &common.output_dir(&cfg))
        }
        Cmd::Synth {
            output,
            train_per_class,
            test_per_class,
            size,
            noise,
            seed,
        } => {
            let spec = SynthSpec {
                size,
                train_per_class,
                test_per_class,
                noise,
                seed,
            };
            let manifest = write_corpus(&output, &spec)?;
            println!("wrote {}", manifest.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

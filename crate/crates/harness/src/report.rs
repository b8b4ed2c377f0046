//! Result files: raw fold rows, per-cell and averaged summaries, the run
//! manifest used for replay, and the audit log of draws and weights.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use siamese_core::metrics::aggregate;
use siamese_core::ImbalanceLevel;

use crate::config::ExperimentConfig;
use crate::experiment::{
    load_datasets, run_experiment_with, run_scaling_study_with, run_single_cnn_with, Domain,
    RawRow, ResultTable, RunOutput, Status,
};

pub const RAW_CSV: &str = "results_raw.csv";
pub const SUMMARY_CSV: &str = "results_summary.csv";
pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const RUN_LOG: &str = "run_log.jsonl";
pub const FOLD_PLANS: &str = "fold_plans.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Experiment,
    Scaling,
    SingleCnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: Command,
    pub seed: u64,
    pub code_version: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Cell,
    IntraAvg,
    InterAvg,
    GlobalAvg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scope: Scope,
    pub from: String,
    pub to: String,
    pub level: ImbalanceLevel,
    pub majority: usize,
    pub technique: String,
    pub classifier: String,
    /// Successful folds for cells, cells averaged for the averages.
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

type CellKey = (String, String, usize, ImbalanceLevel, String, String);
type GroupKey = (String, String, ImbalanceLevel, usize);

/// Per-cell fold mean/std, then for each (technique, classifier, level,
/// majority) the mean of the intra-domain, inter-domain and all cell means.
pub fn summarize(table: &ResultTable) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    let mut order: Vec<CellKey> = Vec::new();
    for r in &table.rows {
        let key = (
            r.from.clone(),
            r.to.clone(),
            r.majority,
            r.level,
            r.technique.clone(),
            r.classifier.clone(),
        );
        let entry = cells.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        if let (Status::Ok, Some(v)) = (r.status, r.macro_f1) {
            entry.push(v);
        }
    }
    let mut out = Vec::new();
    let mut groups: BTreeMap<GroupKey, Vec<(Domain, Option<f64>)>> = BTreeMap::new();
    let mut group_order = Vec::new();
    for key in order {
        let folds = &cells[&key];
        let agg = aggregate(folds).ok();
        let (from, to, majority, level, technique, classifier) = key;
        let domain = if from == to {
            Domain::Intra
        } else {
            Domain::Inter
        };
        let gk = (technique.clone(), classifier.clone(), level, majority);
        groups
            .entry(gk.clone())
            .or_insert_with(|| {
                group_order.push(gk);
                Vec::new()
            })
            .push((domain, agg.as_ref().map(|a| a.mean)));
        out.push(SummaryRow {
            scope: Scope::Cell,
            from,
            to,
            level,
            majority,
            technique,
            classifier,
            n: folds.len(),
            mean: agg.as_ref().map(|a| a.mean),
            std: agg.map(|a| a.std),
        });
    }
    for gk in group_order {
        let members = &groups[&gk];
        let (technique, classifier, level, majority) = gk;
        for (scope, keep) in [
            (Scope::IntraAvg, Some(Domain::Intra)),
            (Scope::InterAvg, Some(Domain::Inter)),
            (Scope::GlobalAvg, None),
        ] {
            let means: Vec<f64> = members
                .iter()
                .filter(|(d, _)| keep.is_none_or(|k| k == *d))
                .filter_map(|(_, m)| *m)
                .collect();
            out.push(SummaryRow {
                scope,
                from: String::new(),
                to: String::new(),
                level,
                majority,
                technique: technique.clone(),
                classifier: classifier.clone(),
                n: means.len(),
                mean: (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64),
                std: None,
            });
        }
    }
    out
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every result file of `run` into `dir`.
pub fn emit_report(run: &RunOutput, command: Command, dir: &Path) -> anyhow::Result<()> {
    if run.table.rows.is_empty() {
        bail!("result table is empty");
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv(&dir.join(RAW_CSV), &run.table.rows)?;
    write_csv(&dir.join(SUMMARY_CSV), &summarize(&run.table))?;
    let manifest = RunManifest {
        command,
        seed: run.config.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: run.config.clone(),
    };
    fs::write(
        dir.join(RUN_MANIFEST),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let mut log = fs::File::create(dir.join(RUN_LOG))?;
    for entry in &run.log {
        serde_json::to_writer(&mut log, entry)?;
        log.write_all(b"\n")?;
    }
    fs::write(
        dir.join(FOLD_PLANS),
        serde_json::to_string_pretty(&run.plans)?,
    )?;
    Ok(())
}

pub fn read_raw(path: &Path) -> anyhow::Result<Vec<RawRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn load_run_manifest(path: &Path) -> anyhow::Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).with_context(|| format!("parsing {}", path.display()))
}

/// Runs `command` on `cfg`, loading its datasets.
pub fn execute(command: Command, cfg: &ExperimentConfig) -> anyhow::Result<RunOutput> {
    let datasets = load_datasets(cfg)?;
    match command {
        Command::Experiment => run_experiment_with(cfg, &datasets),
        Command::Scaling => run_scaling_study_with(cfg, &datasets),
        Command::SingleCnn => run_single_cnn_with(cfg, &datasets),
    }
}

/// Re-runs the command recorded in a run manifest and writes the report to
/// `out_dir`.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> anyhow::Result<(RunOutput, PathBuf)> {
    let m = load_run_manifest(manifest_path)?;
    let run = execute(m.command, &m.config)?;
    emit_report(&run, m.command, out_dir)?;
    Ok((run, out_dir.join(RAW_CSV)))
}

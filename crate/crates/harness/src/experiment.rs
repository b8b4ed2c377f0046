//! The cross-validation grid: draws, training, embedding, classification
//! and scoring for every (from, to, level, technique, fold) combination.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use anyhow::{anyhow, bail, Context};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use siamese_core::classify::{embed_dataset, search_spec, FittedClassifier};
use siamese_core::data::{make_folds, Dataset, FoldPlan, ImbalanceSpec, Split};
use siamese_core::model::{
    pretrain_classifier, train_classifier, train_siamese, ClassifierHead, ParamSource, Parameters,
};
use siamese_core::{metrics, rng, ClassId, ImbalanceLevel};

use crate::config::{ExperimentConfig, Init, Mode, Technique};
use crate::manifest::load_manifest;
use crate::weights::{digest, import_weights};

const PLAN_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const CLASSIFY_STREAM: u64 = 3;
const PRETRAIN_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Intra,
    Inter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub from: String,
    pub to: String,
    pub domain: Domain,
    pub level: ImbalanceLevel,
    pub majority: usize,
    pub minority: usize,
    pub technique: String,
    pub classifier: String,
    pub fold: usize,
    pub macro_f1: Option<f64>,
    pub status: Status,
    /// Chosen classifier hyperparameters, or the error of a failed cell.
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<RawRow>,
}

impl ResultTable {
    pub fn failures(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.status == Status::Failed)
            .count()
    }
}

/// Audit record of one trained cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLog {
    pub from: String,
    pub level: ImbalanceLevel,
    pub majority: usize,
    pub technique: String,
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub weights_sha256: Option<String>,
    pub history: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub from: String,
    pub plan: FoldPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub table: ResultTable,
    pub log: Vec<CellLog>,
    pub plans: Vec<PlanRecord>,
}

/// Loads every configured manifest at the backbone's input shape.
pub fn load_datasets(cfg: &ExperimentConfig) -> anyhow::Result<BTreeMap<String, Dataset>> {
    cfg.datasets
        .iter()
        .map(|(name, path)| {
            let ds = load_manifest(path, name, cfg.backbone.input_shape)
                .with_context(|| format!("dataset `{name}` ({})", path.display()))?;
            Ok((name.clone(), ds))
        })
        .collect()
}

pub fn plan_seed(seed: u64, from: &str, majority: usize, level: ImbalanceLevel) -> u64 {
    let level_idx = ImbalanceLevel::ALL
        .iter()
        .position(|&l| l == level)
        .unwrap() as u64;
    rng::derive_path(
        seed,
        &[
            PLAN_STREAM,
            rng::label_hash(from),
            majority as u64,
            level_idx,
        ],
    )
}

fn cell_seed(plan_seed: u64, fold: usize) -> u64 {
    rng::derive_path(plan_seed, &[TRAIN_STREAM, fold as u64])
}

struct Job<'a> {
    from: &'a str,
    level: ImbalanceLevel,
    spec: ImbalanceSpec,
    technique: usize,
    fold: usize,
    plan: &'a Result<FoldPlan, String>,
}

#[derive(Clone, Copy)]
struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    train: &'a BTreeMap<String, Dataset>,
    test: &'a BTreeMap<String, Dataset>,
    inits: &'a [Result<Option<Parameters<f32>>, String>],
}

struct CellError(String);

impl<E: fmt::Display> From<E> for CellError {
    fn from(e: E) -> Self {
        CellError(e.to_string())
    }
}

fn classifier_names(cfg: &ExperimentConfig, t: &Technique) -> Vec<String> {
    match cfg.mode {
        Mode::Siamese => t.classifiers.iter().map(|k| k.name().to_string()).collect(),
        Mode::SingleCnn => vec!["softmax".to_string()],
    }
}

fn draw_pretrain_set(source: &Dataset, count: usize, seed: u64) -> Dataset {
    let n = count.min(source.len());
    let mut idx = sample(&mut rng::from_seed(seed), source.len(), n).into_vec();
    idx.sort_unstable();
    source.subset(&idx)
}

/// Initial weights per technique; `None` means scratch (seeded per cell).
fn prepare_inits(
    cfg: &ExperimentConfig,
    train: &BTreeMap<String, Dataset>,
) -> Vec<Result<Option<Parameters<f32>>, String>> {
    cfg.techniques
        .iter()
        .map(|t| match &t.init {
            Init::Scratch => Ok(None),
            Init::Imported(path) => import_weights(path, Some(&cfg.backbone))
                .map(|mut p| {
                    p.source = ParamSource::Imported;
                    Some(p)
                })
                .map_err(|e| format!("importing {}: {e}", path.display())),
            Init::Pretrain(src) => {
                let seed = rng::derive_path(
                    cfg.seed,
                    &[
                        PRETRAIN_STREAM,
                        rng::label_hash(src),
                        t.pretrain_count as u64,
                    ],
                );
                let set = draw_pretrain_set(&train[src], t.pretrain_count, seed);
                let tc = cfg.train.to_train_config(t.loss, seed);
                pretrain_classifier(&set, &cfg.backbone, &tc)
                    .map(Some)
                    .map_err(|e| format!("pretraining on `{src}`: {e}"))
            }
        })
        .collect()
}

fn macro_f1(
    pred: &[ClassId],
    truth: &[ClassId],
    extra: &BTreeSet<ClassId>,
) -> Result<f64, CellError> {
    let mut classes: BTreeSet<ClassId> = truth.iter().copied().collect();
    classes.extend(extra);
    Ok(metrics::macro_f1(&metrics::confusion(
        pred, truth, &classes,
    )?))
}

/// Weights of one trained cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedCell {
    pub draw: Dataset,
    pub train_ids: Vec<String>,
    pub params: Parameters<f32>,
    /// Softmax head, single-backbone mode only.
    pub head: Option<ClassifierHead<f32>>,
    pub history: Vec<f64>,
    pub seed: u64,
}

fn train_on_plan(
    cfg: &ExperimentConfig,
    technique: usize,
    init: &Option<Parameters<f32>>,
    train: &Dataset,
    plan: &FoldPlan,
    fold: usize,
) -> Result<TrainedCell, CellError> {
    let t = &cfg.techniques[technique];
    let draw = plan.materialize(train, fold)?;
    let train_ids = plan.draws[fold].ids().map(str::to_string).collect();
    let seed = cell_seed(plan.seed, fold);
    let init = match init {
        Some(p) => p.clone(),
        None => Parameters::scratch(&cfg.backbone, seed)?,
    };
    let tc = cfg.train.to_train_config(t.loss, seed);
    let (params, head, history) = match cfg.mode {
        Mode::Siamese => {
            let out = train_siamese(&draw, &t.pairing, &t.augment, &tc, &init)?;
            (out.params, None, out.history)
        }
        Mode::SingleCnn => {
            let out = train_classifier(&draw, &init, &t.augment, &tc)?;
            (out.params, Some(out.head), out.history)
        }
    };
    Ok(TrainedCell {
        draw,
        train_ids,
        params,
        head,
        history,
        seed,
    })
}

/// Trains the single grid cell `(from, level, majority, technique, fold)`
/// exactly as the full grid would.
pub fn train_cell(
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, Dataset>,
    from: &str,
    level: ImbalanceLevel,
    majority: usize,
    technique: usize,
    fold: usize,
) -> anyhow::Result<TrainedCell> {
    cfg.validate()?;
    if technique >= cfg.techniques.len() || fold >= cfg.folds {
        bail!("technique {technique} / fold {fold} outside the configured grid");
    }
    let train = datasets
        .get(from)
        .ok_or_else(|| anyhow!("unknown dataset `{from}`"))?
        .split(Split::Train);
    let spec = ImbalanceSpec::for_level(level, majority)?;
    let plan = make_folds(
        &train,
        &spec,
        cfg.folds,
        plan_seed(cfg.seed, from, majority, level),
    )?;
    let mut only = cfg.clone();
    only.techniques = vec![cfg.techniques[technique].clone()];
    let train_all: BTreeMap<String, Dataset> = datasets
        .iter()
        .map(|(k, d)| (k.clone(), d.split(Split::Train)))
        .collect();
    let init = prepare_inits(&only, &train_all)
        .remove(0)
        .map_err(|e| anyhow!(e))?;
    train_on_plan(cfg, technique, &init, &train, &plan, fold).map_err(|CellError(e)| anyhow!(e))
}

/// Runs one training cell and scores it on every target of `from`.
fn run_cell(
    ctx: Ctx<'_>,
    job: &Job<'_>,
    log: &mut CellLog,
) -> Result<Vec<(String, String, f64, String)>, CellError> {
    let cfg = ctx.cfg;
    let t = &cfg.techniques[job.technique];
    let plan = job.plan.as_ref().map_err(|e| CellError(e.clone()))?;
    log.train_ids = plan
        .draws
        .get(job.fold)
        .map(|d| d.ids().map(str::to_string).collect())
        .unwrap_or_default();
    let init = ctx.inits[job.technique]
        .as_ref()
        .map_err(|e| CellError(e.clone()))?;
    let cell = train_on_plan(
        cfg,
        job.technique,
        init,
        &ctx.train[job.from],
        plan,
        job.fold,
    )?;
    log.history = cell.history.clone();
    log.weights_sha256 = Some(digest(&cell.params));
    let draw = &cell.draw;
    let mut scores = Vec::new();
    match &cell.head {
        None => {
            let codes = embed_dataset(&cell.params, draw)?;
            // hyperparameters depend only on the training draw
            let search_seed = rng::derive_seed(cell.seed, CLASSIFY_STREAM);
            let mut fitted = Vec::new();
            for &kind in &t.classifiers {
                let chosen = search_spec(&codes, kind, search_seed)?;
                fitted.push((
                    kind,
                    chosen.spec.describe(),
                    FittedClassifier::fit(&codes, &chosen.spec)?,
                ));
            }
            // the same weights serve every target
            for to in cfg.targets(job.from) {
                let test_codes = embed_dataset(&cell.params, &ctx.test[to])?;
                for (kind, detail, model) in &fitted {
                    let pred = model.predict_all(&test_codes)?;
                    let f1 = macro_f1(&pred, &test_codes.labels, draw.classes())?;
                    scores.push((to.to_string(), kind.name().to_string(), f1, detail.clone()));
                }
            }
        }
        Some(head) => {
            for to in cfg.targets(job.from) {
                let test = &ctx.test[to];
                let pred = test
                    .samples()
                    .iter()
                    .map(|s| head.predict(&cell.params, &s.image))
                    .collect::<Result<Vec<_>, _>>()?;
                let truth: Vec<ClassId> = test.labels().collect();
                scores.push((
                    to.to_string(),
                    "softmax".to_string(),
                    macro_f1(&pred, &truth, draw.classes())?,
                    String::new(),
                ));
            }
        }
    }
    Ok(scores)
}

fn run_grid(
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, Dataset>,
) -> anyhow::Result<RunOutput> {
    cfg.validate()?;
    for name in cfg.datasets.keys() {
        if !datasets.contains_key(name) {
            bail!("dataset `{name}` was not loaded");
        }
    }
    let train: BTreeMap<String, Dataset> = datasets
        .iter()
        .map(|(k, d)| (k.clone(), d.split(Split::Train)))
        .collect();
    let test: BTreeMap<String, Dataset> = datasets
        .iter()
        .map(|(k, d)| (k.clone(), d.split(Split::Test)))
        .collect();
    for (_, to) in &cfg.grid {
        if test[to].is_empty() {
            bail!("dataset `{to}` has no test split");
        }
    }

    // fold plans depend only on (from, majority, level), so every technique
    // and both modes see the same draws
    let mut plans: Vec<(
        String,
        ImbalanceLevel,
        ImbalanceSpec,
        Result<FoldPlan, String>,
    )> = Vec::new();
    for from in cfg.sources() {
        for &majority in &cfg.majority_counts {
            for &level in &cfg.imbalance_levels {
                let spec = ImbalanceSpec::for_level(level, majority)?;
                let seed = plan_seed(cfg.seed, from, majority, level);
                let plan =
                    make_folds(&train[from], &spec, cfg.folds, seed).map_err(|e| e.to_string());
                plans.push((from.to_string(), level, spec, plan));
            }
        }
    }
    let inits = prepare_inits(cfg, &train);
    let ctx = Ctx {
        cfg,
        train: &train,
        test: &test,
        inits: &inits,
    };
    let mut jobs = Vec::new();
    for (from, level, spec, plan) in &plans {
        for technique in 0..cfg.techniques.len() {
            for fold in 0..cfg.folds {
                jobs.push(Job {
                    from,
                    level: *level,
                    spec: *spec,
                    technique,
                    fold,
                    plan,
                });
            }
        }
    }

    let results: Vec<(Vec<RawRow>, CellLog)> = jobs
        .par_iter()
        .map(|job| {
            let t = &cfg.techniques[job.technique];
            let signature = t.signature(cfg.mode);
            let mut log = CellLog {
                from: job.from.to_string(),
                level: job.level,
                majority: job.spec.majority_count,
                technique: signature.clone(),
                fold: job.fold,
                train_ids: Vec::new(),
                weights_sha256: None,
                history: Vec::new(),
                error: None,
            };
            let row = |to: &str, classifier: String, f1: Option<f64>, detail: String| RawRow {
                from: job.from.to_string(),
                to: to.to_string(),
                domain: if job.from == to {
                    Domain::Intra
                } else {
                    Domain::Inter
                },
                level: job.level,
                majority: job.spec.majority_count,
                minority: job.spec.minority_count,
                technique: signature.clone(),
                classifier,
                fold: job.fold,
                macro_f1: f1,
                status: if f1.is_some() {
                    Status::Ok
                } else {
                    Status::Failed
                },
                detail,
            };
            let rows = match run_cell(ctx, job, &mut log) {
                Ok(scores) => scores
                    .into_iter()
                    .map(|(to, c, f1, detail)| row(&to, c, Some(f1), detail))
                    .collect(),
                Err(CellError(msg)) => {
                    log.error = Some(msg.clone());
                    let mut rows = Vec::new();
                    for to in cfg.targets(job.from) {
                        for c in classifier_names(cfg, t) {
                            rows.push(row(to, c, None, msg.clone()));
                        }
                    }
                    rows
                }
            };
            (rows, log)
        })
        .collect();

    let mut table = ResultTable::default();
    let mut log = Vec::with_capacity(results.len());
    for (rows, entry) in results {
        table.rows.extend(rows);
        log.push(entry);
    }
    let plans = plans
        .into_iter()
        .filter_map(|(from, _, _, plan)| plan.ok().map(|plan| PlanRecord { from, plan }))
        .collect();
    Ok(RunOutput {
        config: cfg.clone(),
        table,
        log,
        plans,
    })
}

/// Runs the configured grid on already loaded datasets, in the config's mode.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, Dataset>,
) -> anyhow::Result<RunOutput> {
    run_grid(cfg, datasets)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<RunOutput> {
    run_grid(cfg, &load_datasets(cfg)?)
}

/// The grid repeated for every majority count, minority draws scaled with
/// the level (e.g. Medium gives 10, 20, 30 for 100, 200, 300). With a single
/// count this is exactly [`run_experiment_with`].
pub fn run_scaling_study_with(
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, Dataset>,
) -> anyhow::Result<RunOutput> {
    run_grid(cfg, datasets)
}

pub fn run_scaling_study(cfg: &ExperimentConfig) -> anyhow::Result<RunOutput> {
    run_scaling_study_with(cfg, &load_datasets(cfg)?)
}

/// The same grid with a single backbone and softmax head trained by
/// cross-entropy on each draw.
pub fn run_single_cnn_with(
    cfg: &ExperimentConfig,
    datasets: &BTreeMap<String, Dataset>,
) -> anyhow::Result<RunOutput> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::SingleCnn;
    run_grid(&cfg, datasets)
}

pub fn run_single_cnn(cfg: &ExperimentConfig) -> anyhow::Result<RunOutput> {
    run_single_cnn_with(cfg, &load_datasets(cfg)?)
}

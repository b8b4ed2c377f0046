//! Classification in embedding space: nearest code ("histogram"), k-NN,
//! SVM and random forest, plus the per-cell hyperparameter search.

mod forest;
mod nearest;
mod svm;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{rf_fit, rf_predict, Forest, Tree};
pub use nearest::{histogram_predict, knn_predict};
pub use svm::{svm_fit, Kernel, SvmModel, KKT_TOLERANCE};

use crate::data::Dataset;
use crate::metrics;
use crate::model::{ModelError, Parameters};
use crate::rng;
use crate::ClassId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("no training codes")]
    EmptyCodes,
    #[error("query has dimension {found}, codes have {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("k = {k} outside [1, {rows}]")]
    K { k: usize, rows: usize },
    #[error("binary classifier needs exactly 2 classes, found {0}")]
    Classes(usize),
    #[error("{0} embeddings for {1} labels")]
    RowCount(usize, usize),
    #[error("invalid classifier spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Embeddings of a dataset under fixed weights, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralCodes {
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<ClassId>,
    pub source_params_version: u32,
    dim: usize,
}

impl NeuralCodes {
    pub fn new(
        embeddings: Vec<Vec<f64>>,
        labels: Vec<ClassId>,
        source_params_version: u32,
    ) -> Result<Self, ClassifyError> {
        let dim = embeddings.first().map_or(0, Vec::len);
        Self::with_dim(dim, embeddings, labels, source_params_version)
    }

    pub fn with_dim(
        dim: usize,
        embeddings: Vec<Vec<f64>>,
        labels: Vec<ClassId>,
        source_params_version: u32,
    ) -> Result<Self, ClassifyError> {
        if embeddings.len() != labels.len() {
            return Err(ClassifyError::RowCount(embeddings.len(), labels.len()));
        }
        if let Some(row) = embeddings.iter().find(|r| r.len() != dim) {
            return Err(ClassifyError::Dimension {
                expected: dim,
                found: row.len(),
            });
        }
        Ok(Self {
            embeddings,
            labels,
            source_params_version,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> BTreeSet<ClassId> {
        self.labels.iter().copied().collect()
    }

    pub fn subset(&self, rows: &[usize]) -> NeuralCodes {
        NeuralCodes {
            embeddings: rows.iter().map(|&i| self.embeddings[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            source_params_version: self.source_params_version,
            dim: self.dim,
        }
    }
}

/// Runs every sample of `dataset` through the backbone.
pub fn embed_dataset(
    params: &Parameters<f32>,
    dataset: &Dataset,
) -> Result<NeuralCodes, ClassifyError> {
    let embeddings = dataset
        .samples()
        .iter()
        .map(|s| {
            Ok(params
                .forward(&s.image)?
                .into_iter()
                .map(f64::from)
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>, ModelError>>()?;
    NeuralCodes::with_dim(
        params.config.embedding_dim,
        embeddings,
        dataset.labels().collect(),
        params.version,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    #[serde(alias = "nearest")]
    Histogram,
    Knn,
    Svm,
    Rf,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Histogram => "histogram",
            Self::Knn => "knn",
            Self::Svm => "svm",
            Self::Rf => "rf",
        }
    }
}

pub const K_RANGE: (usize, usize) = (1, 15);
pub const COST_RANGE: (f64, f64) = (1.0, 9.0);
pub const TREE_RANGE: (usize, usize) = (10, 500);
/// Forest sizes tried by [`search_spec`].
pub const TREE_GRID: [usize; 5] = [10, 50, 100, 200, 500];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub k: usize,
    pub svm_kernel: Kernel,
    pub svm_cost: f64,
    pub rf_trees: usize,
    pub seed: u64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Histogram,
            k: 1,
            svm_kernel: Kernel::Rbf,
            svm_cost: 1.0,
            rf_trees: 100,
            seed: 0,
        }
    }
}

impl ClassifierSpec {
    pub fn of(kind: ClassifierKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        if !(K_RANGE.0..=K_RANGE.1).contains(&self.k) {
            return Err(ClassifyError::Spec(format!(
                "k = {} outside [1, 15]",
                self.k
            )));
        }
        if !(COST_RANGE.0..=COST_RANGE.1).contains(&self.svm_cost) {
            return Err(ClassifyError::Spec(format!(
                "svm_cost = {} outside [1, 9]",
                self.svm_cost
            )));
        }
        if !(TREE_RANGE.0..=TREE_RANGE.1).contains(&self.rf_trees) {
            return Err(ClassifyError::Spec(format!(
                "rf_trees = {} outside [10, 500]",
                self.rf_trees
            )));
        }
        Ok(())
    }

    /// Short description of the hyperparameters that matter for `kind`.
    pub fn describe(&self) -> String {
        match self.kind {
            ClassifierKind::Histogram => String::from("histogram"),
            ClassifierKind::Knn => format!("knn(k={})", self.k),
            ClassifierKind::Svm => {
                format!("svm({:?},c={})", self.svm_kernel, self.svm_cost).to_lowercase()
            }
            ClassifierKind::Rf => format!("rf(trees={})", self.rf_trees),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedClassifier {
    Histogram(NeuralCodes),
    Knn(NeuralCodes, usize),
    Svm(SvmModel),
    Rf(Forest),
}

impl FittedClassifier {
    pub fn fit(nc: &NeuralCodes, spec: &ClassifierSpec) -> Result<Self, ClassifyError> {
        spec.validate()?;
        if nc.is_empty() {
            return Err(ClassifyError::EmptyCodes);
        }
        Ok(match spec.kind {
            ClassifierKind::Histogram => Self::Histogram(nc.clone()),
            ClassifierKind::Knn => {
                if spec.k > nc.len() {
                    return Err(ClassifyError::K {
                        k: spec.k,
                        rows: nc.len(),
                    });
                }
                Self::Knn(nc.clone(), spec.k)
            }
            ClassifierKind::Svm => Self::Svm(svm_fit(nc, spec.svm_kernel, spec.svm_cost)?),
            ClassifierKind::Rf => Self::Rf(rf_fit(nc, spec.rf_trees, spec.seed)?),
        })
    }

    pub fn predict(&self, query: &[f64]) -> Result<ClassId, ClassifyError> {
        match self {
            Self::Histogram(nc) => histogram_predict(nc, query),
            Self::Knn(nc, k) => knn_predict(nc, query, *k),
            Self::Svm(m) => Ok(m.predict(query)),
            Self::Rf(f) => Ok(f.predict(query)),
        }
    }

    pub fn predict_all(&self, queries: &NeuralCodes) -> Result<Vec<ClassId>, ClassifyError> {
        queries.embeddings.iter().map(|q| self.predict(q)).collect()
    }
}

/// Stratified 80/20 split of row indices (per class, `round(0.2 n_c)` rows
/// go to validation, in shuffled order).
pub fn validation_split(nc: &NeuralCodes, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng::from_seed(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in nc.classes() {
        let mut rows: Vec<usize> = (0..nc.len()).filter(|&i| nc.labels[i] == class).collect();
        rows.shuffle(&mut r);
        let n_val = (rows.len() as f64 * 0.2 + 0.5) as usize;
        val.extend_from_slice(&rows[..n_val]);
        train.extend_from_slice(&rows[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Candidate specs for `kind` within the searched ranges.
pub fn spec_grid(kind: ClassifierKind, seed: u64) -> Vec<ClassifierSpec> {
    let base = ClassifierSpec {
        kind,
        seed,
        ..ClassifierSpec::default()
    };
    match kind {
        ClassifierKind::Histogram => alloc::vec![base],
        ClassifierKind::Knn => (K_RANGE.0..=K_RANGE.1)
            .map(|k| ClassifierSpec { k, ..base })
            .collect(),
        ClassifierKind::Svm => Kernel::ALL
            .iter()
            .flat_map(|&svm_kernel| {
                (1..=9).map(move |c| ClassifierSpec {
                    svm_kernel,
                    svm_cost: c as f64,
                    ..base
                })
            })
            .collect(),
        ClassifierKind::Rf => TREE_GRID
            .iter()
            .map(|&rf_trees| ClassifierSpec { rf_trees, ..base })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub spec: ClassifierSpec,
    /// Validation macro-F1 of the chosen spec.
    pub score: f64,
}

/// Picks the grid point with the best validation macro-F1 on an 80/20 split
/// of `nc` (first grid point wins ties). Grid points that cannot be fitted
/// on the training part are skipped.
pub fn search_spec(
    nc: &NeuralCodes,
    kind: ClassifierKind,
    seed: u64,
) -> Result<SearchOutcome, ClassifyError> {
    let grid = spec_grid(kind, seed);
    if grid.len() == 1 {
        return Ok(SearchOutcome {
            spec: grid[0],
            score: f64::NAN,
        });
    }
    let (train_rows, val_rows) = validation_split(nc, rng::derive_seed(seed, 0x5EA2C4));
    let (train, val) = (nc.subset(&train_rows), nc.subset(&val_rows));
    let classes = nc.classes();
    let mut best: Option<SearchOutcome> = None;
    for spec in grid {
        let Ok(model) = FittedClassifier::fit(&train, &spec) else {
            continue;
        };
        let pred = model.predict_all(&val)?;
        let score = metrics::macro_f1(
            &metrics::confusion(&pred, &val.labels, &classes).expect("labels come from nc"),
        );
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(SearchOutcome { spec, score });
        }
    }
    best.ok_or_else(|| {
        ClassifyError::Spec(format!("no {} configuration could be fitted", kind.name()))
    })
}

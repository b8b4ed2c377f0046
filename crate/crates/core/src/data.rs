//! Labeled image datasets, imbalanced few-shot draws, cross-validation fold
//! plans and the mean imbalance ratio.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;
use crate::rng;
use crate::ClassId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("empty dataset")]
    Empty,
    #[error("sample `{id}` has shape {found:?}, dataset `{dataset}` expects {expected:?}")]
    ShapeMismatch {
        dataset: String,
        id: String,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("expected exactly 2 classes, found {0}")]
    NotBinary(usize),
    #[error("class {class} has {available} samples, draw needs {needed} (short by {})", needed - available)]
    Capacity {
        class: ClassId,
        needed: usize,
        available: usize,
    },
    #[error("invalid imbalance spec: {0}")]
    InvalidSpec(String),
    #[error("class {0} has zero samples")]
    ZeroCount(String),
    #[error("fold {fold} out of range for a plan of {folds} folds")]
    FoldOutOfRange { fold: usize, folds: usize },
    #[error("sample id `{0}` not found in dataset")]
    UnknownId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One labeled image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: Raster,
    pub label: ClassId,
    pub source: String,
    pub split: Split,
}

/// An ordered collection of samples sharing one image shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    samples: Vec<Sample>,
    classes: BTreeSet<ClassId>,
    image_shape: (usize, usize, usize),
}

impl Dataset {
    /// Builds a dataset, inferring the image shape from the first sample.
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Result<Self, DataError> {
        let shape = samples.first().ok_or(DataError::Empty)?.image.shape();
        Self::with_shape(name, shape, samples)
    }

    /// Builds a possibly empty dataset with an explicit image shape.
    pub fn with_shape(
        name: impl Into<String>,
        image_shape: (usize, usize, usize),
        samples: Vec<Sample>,
    ) -> Result<Self, DataError> {
        let name = name.into();
        let mut ids = BTreeSet::new();
        let mut classes = BTreeSet::new();
        for s in &samples {
            if s.image.shape() != image_shape {
                return Err(DataError::ShapeMismatch {
                    dataset: name,
                    id: s.id.clone(),
                    expected: image_shape,
                    found: s.image.shape(),
                });
            }
            if !ids.insert(s.id.as_str()) {
                return Err(DataError::DuplicateId(s.id.clone()));
            }
            classes.insert(s.label);
        }
        Ok(Self {
            name,
            samples,
            classes,
            image_shape,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn classes(&self) -> &BTreeSet<ClassId> {
        &self.classes
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.image_shape
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.label).or_insert(0) += 1;
        }
        counts
    }

    /// Samples of one split, in order.
    pub fn split(&self, split: Split) -> Dataset {
        self.filter(|s| s.split == split)
    }

    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Dataset {
        let samples: Vec<Sample> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        let classes = samples.iter().map(|s| s.label).collect();
        Dataset {
            name: self.name.clone(),
            samples,
            classes,
            image_shape: self.image_shape,
        }
    }

    /// Samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let samples: Vec<Sample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let classes = samples.iter().map(|s| s.label).collect();
        Dataset {
            name: self.name.clone(),
            samples,
            classes,
            image_shape: self.image_shape,
        }
    }

    /// Samples with the given ids, in the given order.
    pub fn select_ids<S: AsRef<str>>(&self, ids: &[S]) -> Result<Dataset, DataError> {
        let pos: BTreeMap<&str, usize> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let indices = ids
            .iter()
            .map(|id| {
                pos.get(id.as_ref())
                    .copied()
                    .ok_or_else(|| DataError::UnknownId(id.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.subset(&indices))
    }

    /// `(majority, minority)` class of a two-class dataset. The larger class
    /// is the majority; on equal counts the lower class id is.
    pub fn binary_roles(&self) -> Result<(ClassId, ClassId), DataError> {
        let counts = self.class_counts();
        if counts.len() != 2 {
            return Err(DataError::NotBinary(counts.len()));
        }
        let mut it = counts.into_iter();
        let (a, na) = it.next().unwrap();
        let (b, nb) = it.next().unwrap();
        Ok(if nb > na { (b, a) } else { (a, b) })
    }
}

/// Named imbalance scenarios of the few-shot protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ImbalanceLevel {
    #[serde(rename = "H")]
    High,
    #[serde(rename = "M")]
    Medium,
    #[serde(rename = "L")]
    Low,
    #[serde(rename = "N")]
    None,
}

impl ImbalanceLevel {
    pub const ALL: [ImbalanceLevel; 4] = [Self::High, Self::Medium, Self::Low, Self::None];

    pub fn token(self) -> &'static str {
        match self {
            Self::High => "H",
            Self::Medium => "M",
            Self::Low => "L",
            Self::None => "N",
        }
    }

    /// Minority draw for a given majority draw: 1, 10, 50 and 100 per 100
    /// majority samples.
    pub fn minority_count(self, majority_count: usize) -> usize {
        let per_hundred = match self {
            Self::High => 1,
            Self::Medium => 10,
            Self::Low => 50,
            Self::None => 100,
        };
        majority_count * per_hundred / 100
    }
}

impl fmt::Display for ImbalanceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown imbalance level `{0}`, expected one of {{H, M, L, N}}")]
pub struct ParseLevelError(pub String);

impl FromStr for ImbalanceLevel {
    type Err = ParseLevelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "H" => Ok(Self::High),
            "M" => Ok(Self::Medium),
            "L" => Ok(Self::Low),
            "N" => Ok(Self::None),
            other => Err(ParseLevelError(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub level: ImbalanceLevel,
    pub majority_count: usize,
    pub minority_count: usize,
}

impl ImbalanceSpec {
    pub fn new(
        level: ImbalanceLevel,
        majority_count: usize,
        minority_count: usize,
    ) -> Result<Self, DataError> {
        let spec = Self {
            level,
            majority_count,
            minority_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The level's minority draw scaled to `majority_count`.
    pub fn for_level(level: ImbalanceLevel, majority_count: usize) -> Result<Self, DataError> {
        Self::new(level, majority_count, level.minority_count(majority_count))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.majority_count == 0 || self.minority_count == 0 {
            return Err(DataError::InvalidSpec(alloc::format!(
                "draw sizes must be positive (majority {}, minority {})",
                self.majority_count,
                self.minority_count
            )));
        }
        if self.minority_count > self.majority_count {
            return Err(DataError::InvalidSpec(alloc::format!(
                "minority draw {} exceeds majority draw {}",
                self.minority_count,
                self.majority_count
            )));
        }
        Ok(())
    }
}

/// Indices of one draw, each list sorted in dataset order.
fn draw_indices(
    dataset: &Dataset,
    spec: &ImbalanceSpec,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    spec.validate()?;
    let (majority, minority) = dataset.binary_roles()?;
    let pool = |class: ClassId| -> Vec<usize> {
        dataset
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect()
    };
    let (maj_pool, min_pool) = (pool(majority), pool(minority));
    for (class, pool, needed) in [
        (majority, &maj_pool, spec.majority_count),
        (minority, &min_pool, spec.minority_count),
    ] {
        if pool.len() < needed {
            return Err(DataError::Capacity {
                class,
                needed,
                available: pool.len(),
            });
        }
    }
    let mut rng = rng::from_seed(seed);
    let mut pick = |pool: &[usize], k: usize| {
        let mut chosen: Vec<usize> = index::sample(&mut rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        chosen.sort_unstable();
        chosen
    };
    let maj = pick(&maj_pool, spec.majority_count);
    let min = pick(&min_pool, spec.minority_count);
    Ok((maj, min))
}

/// Draws `majority_count` majority and `minority_count` minority samples
/// uniformly without replacement. The result keeps dataset order.
pub fn subsample_imbalanced(
    dataset: &Dataset,
    spec: &ImbalanceSpec,
    seed: u64,
) -> Result<Dataset, DataError> {
    let (maj, min) = draw_indices(dataset, spec, seed)?;
    let mut all: Vec<usize> = maj.into_iter().chain(min).collect();
    all.sort_unstable();
    Ok(dataset.subset(&all))
}

/// Sample ids of one fold's training draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldDraw {
    pub majority: Vec<String>,
    pub minority: Vec<String>,
}

impl FoldDraw {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.majority
            .iter()
            .chain(&self.minority)
            .map(String::as_str)
    }
}

/// Independent training draws for each cross-validation fold. Fold `i` uses
/// the stream `derive_seed(seed, i)`, so folds can be drawn in any order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub spec: ImbalanceSpec,
    pub fold_count: usize,
    pub draws: Vec<FoldDraw>,
}

impl FoldPlan {
    /// The training dataset of `fold`, in the source dataset's order.
    pub fn materialize(&self, dataset: &Dataset, fold: usize) -> Result<Dataset, DataError> {
        let draw = self.draws.get(fold).ok_or(DataError::FoldOutOfRange {
            fold,
            folds: self.draws.len(),
        })?;
        let wanted: BTreeSet<&str> = draw.ids().collect();
        let out = dataset.filter(|s| wanted.contains(s.id.as_str()));
        if out.len() != wanted.len() {
            let have: BTreeSet<&str> = out.samples.iter().map(|s| s.id.as_str()).collect();
            let missing = wanted.difference(&have).next().copied().unwrap_or_default();
            return Err(DataError::UnknownId(missing.to_string()));
        }
        Ok(out)
    }
}

pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    rng::derive_seed(seed, fold as u64)
}

pub fn make_folds(
    dataset: &Dataset,
    spec: &ImbalanceSpec,
    fold_count: usize,
    seed: u64,
) -> Result<FoldPlan, DataError> {
    if fold_count == 0 {
        return Err(DataError::InvalidSpec(
            "fold_count must be positive".to_string(),
        ));
    }
    let ids = |idx: Vec<usize>| {
        idx.into_iter()
            .map(|i| dataset.samples[i].id.clone())
            .collect()
    };
    let draws = (0..fold_count)
        .map(|fold| {
            let (maj, min) = draw_indices(dataset, spec, fold_seed(seed, fold))?;
            Ok(FoldDraw {
                majority: ids(maj),
                minority: ids(min),
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok(FoldPlan {
        seed,
        spec: *spec,
        fold_count,
        draws,
    })
}

/// Mean imbalance ratio: the average over classes of
/// `max_count / count_c`. Equals 1 exactly for balanced counts.
pub fn mean_ir<K: fmt::Debug>(class_counts: &BTreeMap<K, usize>) -> Result<f64, DataError> {
    if class_counts.is_empty() {
        return Err(DataError::Empty);
    }
    if let Some((k, _)) = class_counts.iter().find(|(_, &n)| n == 0) {
        return Err(DataError::ZeroCount(alloc::format!("{k:?}")));
    }
    let max = *class_counts.values().max().unwrap() as f64;
    let sum: f64 = class_counts.values().map(|&n| max / n as f64).sum();
    Ok(sum / class_counts.len() as f64)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    pub(crate) fn toy(name: &str, counts: &[(ClassId, usize)]) -> Dataset {
        let mut samples = Vec::new();
        for &(label, n) in counts {
            for i in 0..n {
                let v = ((samples.len() * 37) % 101) as f32 / 100.0;
                samples.push(Sample {
                    id: format!("{name}-{label}-{i}"),
                    image: Raster::from_fn(2, 2, 1, |y, x, _| (v + 0.1 * (y + x) as f32).min(1.0)),
                    label,
                    source: name.to_string(),
                    split: Split::Train,
                });
            }
        }
        Dataset::new(name, samples).unwrap()
    }

    #[test]
    fn dataset_invariants() {
        let ds = toy("t", &[(0, 2), (1, 1)]);
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.classes().iter().copied().collect::<Vec<_>>(), vec![0, 1]);
        assert!(matches!(Dataset::new("e", vec![]), Err(DataError::Empty)));

        let mut samples = ds.samples().to_vec();
        samples[1].id = samples[0].id.clone();
        assert!(matches!(
            Dataset::new("d", samples),
            Err(DataError::DuplicateId(_))
        ));

        let mut samples = ds.samples().to_vec();
        samples[2].image = Raster::zeros(3, 2, 1);
        assert!(matches!(
            Dataset::new("s", samples),
            Err(DataError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn roles_pick_larger_class() {
        assert_eq!(toy("a", &[(0, 3), (1, 5)]).binary_roles().unwrap(), (1, 0));
        assert_eq!(toy("b", &[(0, 4), (1, 4)]).binary_roles().unwrap(), (0, 1));
        assert_eq!(
            toy("c", &[(0, 4)]).binary_roles(),
            Err(DataError::NotBinary(1))
        );
    }

    #[test]
    fn level_tokens() {
        for level in ImbalanceLevel::ALL {
            assert_eq!(level.token().parse::<ImbalanceLevel>().unwrap(), level);
        }
        let err = "X".parse::<ImbalanceLevel>().unwrap_err();
        assert!(format!("{err}").contains("{H, M, L, N}"));
        let minority: Vec<_> = ImbalanceLevel::ALL
            .iter()
            .map(|l| l.minority_count(100))
            .collect();
        assert_eq!(minority, vec![1, 10, 50, 100]);
        assert_eq!(ImbalanceLevel::High.minority_count(300), 3);
        assert_eq!(ImbalanceLevel::Low.minority_count(300), 150);
    }

    #[test]
    fn spec_validation() {
        assert!(ImbalanceSpec::new(ImbalanceLevel::High, 100, 0).is_err());
        assert!(ImbalanceSpec::new(ImbalanceLevel::High, 10, 11).is_err());
        assert!(ImbalanceSpec::new(ImbalanceLevel::High, 100, 1).is_ok());
    }

    #[test]
    fn subsample_counts_and_determinism() {
        let ds = toy("p", &[(0, 110), (1, 10)]);
        let spec = ImbalanceSpec::for_level(ImbalanceLevel::High, 100).unwrap();
        let a = subsample_imbalanced(&ds, &spec, 5).unwrap();
        assert_eq!(a.len(), 101);
        assert_eq!(a.class_counts()[&1], 1);
        let b = subsample_imbalanced(&ds, &spec, 5).unwrap();
        let ids = |d: &Dataset| d.samples().iter().map(|s| s.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn subsample_capacity_error_names_class_and_shortfall() {
        let ds = toy("p", &[(0, 90), (1, 10)]);
        let spec = ImbalanceSpec::for_level(ImbalanceLevel::Medium, 100).unwrap();
        let err = subsample_imbalanced(&ds, &spec, 0).unwrap_err();
        assert_eq!(
            err,
            DataError::Capacity {
                class: 0,
                needed: 100,
                available: 90
            }
        );
        assert!(format!("{err}").contains("short by 10"));
    }

    #[test]
    fn majority_selection_is_uniform() {
        // Each of 200 majority samples is drawn with probability 100/200.
        let ds = toy("u", &[(0, 200), (1, 20)]);
        let spec = ImbalanceSpec::for_level(ImbalanceLevel::Medium, 100).unwrap();
        let mut hits: BTreeMap<String, usize> = BTreeMap::new();
        let runs = 1000;
        for seed in 0..runs {
            for s in subsample_imbalanced(&ds, &spec, seed).unwrap().samples() {
                if s.label == 0 {
                    *hits.entry(s.id.clone()).or_insert(0) += 1;
                }
            }
        }
        assert_eq!(hits.len(), 200);
        for (id, n) in hits {
            let freq = n as f64 / runs as f64;
            assert!((freq - 0.5).abs() <= 0.05, "{id}: {freq}");
        }
    }

    #[test]
    fn folds_follow_plan_invariants() {
        let ds = toy("f", &[(0, 900), (1, 100)]);
        let spec = ImbalanceSpec::for_level(ImbalanceLevel::Medium, 100).unwrap();
        let plan = make_folds(&ds, &spec, 10, 42).unwrap();
        assert_eq!(plan.draws.len(), 10);
        for draw in &plan.draws {
            let maj: BTreeSet<_> = draw.majority.iter().collect();
            let min: BTreeSet<_> = draw.minority.iter().collect();
            assert_eq!(maj.len(), 100);
            assert_eq!(min.len(), 10);
        }
        let first = &plan.draws[0];
        assert!(plan.draws[1..].iter().any(|d| d != first));
        assert!(plan.draws.windows(2).all(|w| w[0] != w[1]));

        let fold0 = plan.materialize(&ds, 0).unwrap();
        assert_eq!(fold0.len(), 110);
        assert!(matches!(
            plan.materialize(&ds, 10),
            Err(DataError::FoldOutOfRange { .. })
        ));
    }

    #[test]
    fn single_fold_matches_subsample_with_derived_seed() {
        let ds = toy("g", &[(0, 150), (1, 60)]);
        let spec = ImbalanceSpec::for_level(ImbalanceLevel::Low, 100).unwrap();
        let plan = make_folds(&ds, &spec, 1, 9).unwrap();
        let direct = subsample_imbalanced(&ds, &spec, fold_seed(9, 0)).unwrap();
        assert_eq!(plan.materialize(&ds, 0).unwrap(), direct);
    }

    #[test]
    fn mean_ir_values() {
        let c = |a: usize, b: usize| BTreeMap::from([("neg", a), ("pos", b)]);
        assert!((mean_ir(&c(20110, 294)).unwrap() - 34.7).abs() < 0.05);
        assert!((mean_ir(&c(14762, 1692)).unwrap() - 4.9).abs() < 0.05);
        assert!((mean_ir(&c(3173, 1692)).unwrap() - 1.4).abs() < 0.05);
        assert_eq!(mean_ir(&c(7, 7)).unwrap(), 1.0);
        assert!(matches!(mean_ir(&c(7, 0)), Err(DataError::ZeroCount(_))));
        assert!(matches!(
            mean_ir::<u32>(&BTreeMap::new()),
            Err(DataError::Empty)
        ));
    }

    proptest::proptest! {
        #[test]
        fn mean_ir_at_least_one(counts in proptest::collection::vec(1usize..10_000, 1..6)) {
            let map: BTreeMap<usize, usize> = counts.iter().copied().enumerate().collect();
            let ir = mean_ir(&map).unwrap();
            let all_equal = counts.iter().all(|&c| c == counts[0]);
            proptest::prop_assert!(ir >= 1.0);
            proptest::prop_assert_eq!(ir == 1.0, all_equal);
        }
    }
}

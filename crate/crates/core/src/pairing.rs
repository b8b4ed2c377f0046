//! Siamese training pairs: exhaustive enumeration, ratio-controlled pair
//! streams and minority oversampling.
//!
//! `y = 0` marks a same-class ("positive") pair and `y = 1` a different-class
//! ("negative") pair, whatever the diagnosis of the two images.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::rng::Rng;
use crate::ClassId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairingError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("pairing configuration error: {0}")]
    Config(String),
}

/// Two dataset indices and the dissimilarity indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub y: u8,
}

/// Same-class : different-class pair proportion, written `"P:N"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRatio {
    pub pos: u32,
    pub neg: u32,
}

impl PairRatio {
    /// The ratios studied for the pairing experiments.
    pub const STUDIED: [PairRatio; 5] = [
        PairRatio { pos: 5, neg: 1 },
        PairRatio { pos: 3, neg: 2 },
        PairRatio { pos: 1, neg: 1 },
        PairRatio { pos: 2, neg: 3 },
        PairRatio { pos: 1, neg: 5 },
    ];

    pub fn new(pos: u32, neg: u32) -> Result<Self, PairingError> {
        if pos == 0 || neg == 0 {
            return Err(PairingError::Config(format!(
                "ratio terms must be positive, got {pos}:{neg}"
            )));
        }
        Ok(Self { pos, neg })
    }

    /// `(same, different)` pair counts for an epoch of `total` pairs: the
    /// same-class count is `total * pos / (pos + neg)` rounded to nearest
    /// (halves up), the rest are different-class.
    pub fn split(&self, total: usize) -> (usize, usize) {
        let (p, n) = (self.pos as usize, self.neg as usize);
        let same = (2 * total * p + p + n) / (2 * (p + n));
        (same, total - same)
    }
}

impl Default for PairRatio {
    fn default() -> Self {
        Self { pos: 1, neg: 1 }
    }
}

impl fmt::Display for PairRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.pos, self.neg)
    }
}

impl FromStr for PairRatio {
    type Err = PairingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PairingError::Config(format!("ratio `{s}` is not of the form P:N"));
        let (p, n) = s.split_once(':').ok_or_else(bad)?;
        let p = p.trim().parse().map_err(|_| bad())?;
        let n = n.trim().parse().map_err(|_| bad())?;
        Self::new(p, n)
    }
}

impl Serialize for PairRatio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PairRatio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairingConfig {
    pub ratio: PairRatio,
    pub balanced_sampling: bool,
    /// Pairs per epoch; `None` means twice the training-set size.
    pub pairs_per_epoch: Option<usize>,
}

impl PairingConfig {
    pub fn epoch_pairs(&self, dataset_len: usize) -> usize {
        self.pairs_per_epoch.unwrap_or(2 * dataset_len)
    }
}

/// Every unordered pair `i < j`, labeled by class equality.
pub fn enumerate_pairs(dataset: &Dataset) -> Vec<Pair> {
    let labels: Vec<ClassId> = dataset.labels().collect();
    let n = labels.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            out.push(Pair {
                a,
                b,
                y: u8::from(labels[a] != labels[b]),
            });
        }
    }
    out
}

fn ratio_of(counts: &BTreeMap<ClassId, usize>) -> Result<f64, DataError> {
    if counts.len() != 2 {
        return Err(DataError::NotBinary(counts.len()));
    }
    if let Some((c, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(DataError::ZeroCount(c.to_string()));
    }
    let lo = *counts.values().min().unwrap();
    let hi = *counts.values().max().unwrap();
    Ok(lo as f64 / hi as f64)
}

/// Minority count over majority count, in `(0, 1]`.
pub fn imbalance_ratio(dataset: &Dataset) -> Result<f64, DataError> {
    ratio_of(&dataset.class_counts())
}

/// Multiset of dataset indices that pairs are drawn from. Oversampling
/// repeats indices instead of copying images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingView {
    indices: Vec<usize>,
    labels: Vec<ClassId>,
}

impl SamplingView {
    pub fn identity(dataset: &Dataset) -> Self {
        Self {
            indices: (0..dataset.len()).collect(),
            labels: dataset.labels().collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts = BTreeMap::new();
        for &i in &self.indices {
            *counts.entry(self.labels[i]).or_insert(0) += 1;
        }
        counts
    }

    pub fn imbalance_ratio(&self) -> Result<f64, DataError> {
        ratio_of(&self.class_counts())
    }
}

/// Repeats minority samples until both classes have the majority count:
/// each minority sample `⌊M/m⌋` times, plus `M mod m` further copies drawn
/// without replacement.
pub fn balance_by_oversampling(
    dataset: &Dataset,
    rng: &mut Rng,
) -> Result<SamplingView, DataError> {
    let (majority, minority) = dataset.binary_roles()?;
    let mut view = SamplingView::identity(dataset);
    let counts = dataset.class_counts();
    let (big, small) = (counts[&majority], counts[&minority]);
    if big == small {
        return Ok(view);
    }
    let pool: Vec<usize> = (0..dataset.len())
        .filter(|&i| view.labels[i] == minority)
        .collect();
    let extra_rounds = big / small - 1;
    for _ in 0..extra_rounds {
        view.indices.extend_from_slice(&pool);
    }
    let remainder = big % small;
    view.indices.extend(
        index::sample(rng, small, remainder)
            .into_iter()
            .map(|k| pool[k]),
    );
    Ok(view)
}

/// View positions grouped by class.
fn positions_by_class(view: &SamplingView) -> BTreeMap<ClassId, Vec<usize>> {
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (pos, &i) in view.indices.iter().enumerate() {
        by_class.entry(view.labels[i]).or_default().push(pos);
    }
    by_class
}

/// One epoch of pairs drawn from `view` with the exact composition of
/// `config.ratio`. Members are drawn uniformly with replacement across the
/// stream; within a pair the two members are distinct view positions.
pub fn sample_pairs_from_view(
    view: &SamplingView,
    config: &PairingConfig,
    total: usize,
    rng: &mut Rng,
) -> Result<Vec<Pair>, PairingError> {
    let (n_same, n_diff) = config.ratio.split(total);
    let by_class = positions_by_class(view);
    // positives: first member from a class that has at least two entries
    let pos_pool: Vec<usize> = by_class
        .values()
        .filter(|v| v.len() >= 2)
        .flatten()
        .copied()
        .collect();
    if n_same > 0 && pos_pool.is_empty() {
        return Err(PairingError::Config(
            "same-class pairs requested but no class has two samples".to_string(),
        ));
    }
    if n_diff > 0 && by_class.len() < 2 {
        return Err(PairingError::Config(
            "different-class pairs requested but only one class is present".to_string(),
        ));
    }
    let mut kinds: Vec<u8> = core::iter::repeat_n(0, n_same)
        .chain(core::iter::repeat_n(1, n_diff))
        .collect();
    kinds.shuffle(rng);

    let label_at = |pos: usize| view.labels[view.indices[pos]];
    let mut out = Vec::with_capacity(total);
    for y in kinds {
        let (pa, pb) = if y == 0 {
            let pa = pos_pool[rng.gen_range(0..pos_pool.len())];
            let same = &by_class[&label_at(pa)];
            // uniform over the class minus `pa`
            let mut k = rng.gen_range(0..same.len() - 1);
            if same[k] == pa {
                k = same.len() - 1;
            }
            (pa, same[k])
        } else {
            let pa = rng.gen_range(0..view.len());
            let la = label_at(pa);
            let others = view.len() - by_class[&la].len();
            let mut k = rng.gen_range(0..others);
            let mut pb = 0;
            for (&c, positions) in &by_class {
                if c == la {
                    continue;
                }
                if k < positions.len() {
                    pb = positions[k];
                    break;
                }
                k -= positions.len();
            }
            (pa, pb)
        };
        out.push(Pair {
            a: view.indices[pa],
            b: view.indices[pb],
            y,
        });
    }
    Ok(out)
}

/// One epoch of pairs for `dataset`, oversampling the minority class first
/// when `balanced_sampling` is set.
pub fn sample_pairs(
    dataset: &Dataset,
    config: &PairingConfig,
    rng: &mut Rng,
) -> Result<Vec<Pair>, PairingError> {
    let view = if config.balanced_sampling {
        balance_by_oversampling(dataset, rng)?
    } else {
        SamplingView::identity(dataset)
    };
    sample_pairs_from_view(&view, config, config.epoch_pairs(dataset.len()), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy;
    use crate::rng;
    use alloc::vec;

    #[test]
    fn enumeration_counts() {
        let ds = toy("e", &[(0, 3), (1, 2)]);
        let pairs = enumerate_pairs(&ds);
        assert_eq!(pairs.len(), 10);
        assert_eq!(pairs.iter().filter(|p| p.y == 0).count(), 4);
        assert_eq!(pairs.iter().filter(|p| p.y == 1).count(), 6);

        let single = toy("s", &[(0, 6)]);
        let pairs = enumerate_pairs(&single);
        assert_eq!(pairs.len(), 15);
        assert!(pairs.iter().all(|p| p.y == 0));

        assert_eq!(
            enumerate_pairs(&toy("o", &[(0, 1), (1, 1)])),
            vec![Pair { a: 0, b: 1, y: 1 }]
        );
    }

    #[test]
    fn ratios() {
        assert_eq!(
            imbalance_ratio(&toy("a", &[(0, 100), (1, 10)])).unwrap(),
            0.1
        );
        assert_eq!(
            imbalance_ratio(&toy("b", &[(0, 50), (1, 50)])).unwrap(),
            1.0
        );
        assert_eq!(
            imbalance_ratio(&toy("c", &[(0, 100), (1, 1)])).unwrap(),
            0.01
        );
        assert!(imbalance_ratio(&toy("d", &[(0, 4)])).is_err());
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(
            "3:2".parse::<PairRatio>().unwrap(),
            PairRatio { pos: 3, neg: 2 }
        );
        assert!("3-2".parse::<PairRatio>().is_err());
        assert!("0:2".parse::<PairRatio>().is_err());
        assert_eq!(PairRatio::new(1, 5).unwrap().to_string(), "1:5");
    }

    #[test]
    fn oversampling_cyclic_arithmetic() {
        let ds = toy("o", &[(0, 100), (1, 10)]);
        let view = balance_by_oversampling(&ds, &mut rng::from_seed(1)).unwrap();
        assert_eq!(view.class_counts(), BTreeMap::from([(0, 100), (1, 100)]));
        assert_eq!(view.imbalance_ratio().unwrap(), 1.0);
        let mut per_sample: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in view.indices() {
            *per_sample.entry(i).or_insert(0) += 1;
        }
        for (i, n) in per_sample {
            assert_eq!(n, if ds.samples()[i].label == 1 { 10 } else { 1 });
        }

        let single = toy("h", &[(0, 100), (1, 1)]);
        let view = balance_by_oversampling(&single, &mut rng::from_seed(1)).unwrap();
        let minority = single.samples().iter().position(|s| s.label == 1).unwrap();
        assert_eq!(
            view.indices().iter().filter(|&&i| i == minority).count(),
            100
        );

        let even = toy("b", &[(0, 100), (1, 100)]);
        assert_eq!(
            balance_by_oversampling(&even, &mut rng::from_seed(1)).unwrap(),
            SamplingView::identity(&even)
        );
    }

    #[test]
    fn oversampling_remainder_is_distinct() {
        let ds = toy("r", &[(0, 100), (1, 30)]);
        let view = balance_by_oversampling(&ds, &mut rng::from_seed(4)).unwrap();
        assert_eq!(view.imbalance_ratio().unwrap(), 1.0);
        let mut per_sample: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in view
            .indices()
            .iter()
            .filter(|&&i| ds.samples()[i].label == 1)
        {
            *per_sample.entry(i).or_insert(0) += 1;
        }
        assert_eq!(per_sample.values().filter(|&&n| n == 4).count(), 10);
        assert_eq!(per_sample.values().filter(|&&n| n == 3).count(), 20);
    }

    fn composition(pairs: &[Pair]) -> (usize, usize) {
        let same = pairs.iter().filter(|p| p.y == 0).count();
        (same, pairs.len() - same)
    }

    #[test]
    fn forced_compositions() {
        let ds = toy("c", &[(0, 50), (1, 50)]);
        let mut r = rng::from_seed(3);
        let mut cfg = PairingConfig {
            pairs_per_epoch: Some(200),
            ..Default::default()
        };
        assert_eq!(
            composition(&sample_pairs(&ds, &cfg, &mut r).unwrap()),
            (100, 100)
        );
        cfg.ratio = PairRatio::new(1, 5).unwrap();
        cfg.pairs_per_epoch = Some(600);
        assert_eq!(
            composition(&sample_pairs(&ds, &cfg, &mut r).unwrap()),
            (100, 500)
        );
    }

    #[test]
    fn default_epoch_is_twice_dataset() {
        let ds = toy("c", &[(0, 20), (1, 7)]);
        let pairs = sample_pairs(&ds, &PairingConfig::default(), &mut rng::from_seed(0)).unwrap();
        assert_eq!(pairs.len(), 54);
    }

    #[test]
    fn high_imbalance_stream_reuses_the_minority_sample() {
        let ds = toy("h", &[(0, 100), (1, 1)]);
        let minority = ds.samples().iter().position(|s| s.label == 1).unwrap();
        let cfg = PairingConfig {
            ratio: PairRatio::new(5, 1).unwrap(),
            pairs_per_epoch: Some(600),
            ..Default::default()
        };
        let pairs = sample_pairs(&ds, &cfg, &mut rng::from_seed(9)).unwrap();
        assert_eq!(composition(&pairs), (500, 100));
        for p in &pairs {
            if p.y == 1 {
                assert!(p.a == minority || p.b == minority);
            } else {
                assert!(p.a != minority && p.b != minority && p.a != p.b);
            }
        }
    }

    #[test]
    fn unconstructible_kinds_are_errors() {
        let one_class = toy("x", &[(0, 5)]);
        assert!(matches!(
            sample_pairs_from_view(
                &SamplingView::identity(&one_class),
                &PairingConfig::default(),
                10,
                &mut rng::from_seed(0)
            ),
            Err(PairingError::Config(_))
        ));
        let singletons = toy("y", &[(0, 1), (1, 1)]);
        assert!(matches!(
            sample_pairs_from_view(
                &SamplingView::identity(&singletons),
                &PairingConfig::default(),
                10,
                &mut rng::from_seed(0)
            ),
            Err(PairingError::Config(_))
        ));
    }

    #[test]
    fn stream_is_deterministic() {
        let ds = toy("d", &[(0, 30), (1, 5)]);
        let cfg = PairingConfig {
            balanced_sampling: true,
            ..Default::default()
        };
        let a = sample_pairs(&ds, &cfg, &mut rng::from_seed(12)).unwrap();
        let b = sample_pairs(&ds, &cfg, &mut rng::from_seed(12)).unwrap();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #[test]
        fn enumeration_matches_brute_force(n0 in 0usize..25, n1 in 0usize..25) {
            proptest::prop_assume!(n0 + n1 >= 2);
            let counts: Vec<(ClassId, usize)> = [(0, n0), (1, n1)].into_iter().filter(|c| c.1 > 0).collect();
            let ds = toy("p", &counts);
            let labels: Vec<ClassId> = ds.labels().collect();
            let (mut same, mut diff) = (0, 0);
            for i in 0..labels.len() {
                for j in 0..labels.len() {
                    if i < j {
                        if labels[i] == labels[j] { same += 1 } else { diff += 1 }
                    }
                }
            }
            let pairs = enumerate_pairs(&ds);
            proptest::prop_assert_eq!(composition(&pairs), (same, diff));
            proptest::prop_assert_eq!(same, n0 * n0.saturating_sub(1) / 2 + n1 * n1.saturating_sub(1) / 2);
            proptest::prop_assert_eq!(diff, n0 * n1);
        }

        #[test]
        fn streams_are_sound(seed in 0u64..1000, ratio in 0usize..5, total in 10usize..300, balanced in proptest::bool::ANY) {
            let ds = toy("s", &[(0, 40), (1, 6)]);
            let cfg = PairingConfig {
                ratio: PairRatio::STUDIED[ratio],
                balanced_sampling: balanced,
                pairs_per_epoch: Some(total),
            };
            let pairs = sample_pairs(&ds, &cfg, &mut rng::from_seed(seed)).unwrap();
            proptest::prop_assert_eq!(pairs.len(), total);
            let labels: Vec<ClassId> = ds.labels().collect();
            for p in &pairs {
                proptest::prop_assert_eq!(p.y == 0, labels[p.a] == labels[p.b]);
            }
            let (same, diff) = composition(&pairs);
            let r = cfg.ratio;
            let skew = (same as i64 * r.neg as i64 - diff as i64 * r.pos as i64).unsigned_abs();
            proptest::prop_assert!(skew <= u64::from(r.pos.max(r.neg)));
        }

        #[test]
        fn oversampling_keeps_majority_multiset(minority in 1usize..60, seed in 0u64..100) {
            let ds = toy("m", &[(0, 60), (1, minority)]);
            let view = balance_by_oversampling(&ds, &mut rng::from_seed(seed)).unwrap();
            let maj = |idx: &[usize]| {
                let mut v: Vec<usize> = idx.iter().copied().filter(|&i| ds.samples()[i].label == 0).collect();
                v.sort_unstable();
                v
            };
            proptest::prop_assert_eq!(maj(view.indices()), maj(SamplingView::identity(&ds).indices()));
            proptest::prop_assert_eq!(view.imbalance_ratio().unwrap(), 1.0);
        }
    }
}

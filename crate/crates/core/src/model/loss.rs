//! Euclidean distance, contrastive and class-weighted contrastive losses,
//! class weights, and the batch loss gradient of the weight-shared pair
//! network.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, Parameters, Scalar};
use super::ModelError;
use crate::data::{DataError, Dataset};
use crate::raster::Raster;
use crate::ClassId;

pub fn distance<F: Scalar>(a: &[F], b: &[F]) -> Result<F, ModelError> {
    if a.len() != b.len() {
        return Err(ModelError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<F>()
        .sqrt())
}

/// `(1 - y) D² + y max(0, m - D)²` with `y = 1` for different-class pairs.
pub fn contrastive_loss<F: Scalar>(d: F, y: u8, margin: F) -> F {
    if y == 0 {
        d * d
    } else {
        let gap = (margin - d).max(F::zero());
        gap * gap
    }
}

/// `∂L/∂D` of [`contrastive_loss`].
pub fn contrastive_loss_grad<F: Scalar>(d: F, y: u8, margin: F) -> F {
    let two = F::from_f64(2.0);
    if y == 0 {
        two * d
    } else {
        -two * (margin - d).max(F::zero())
    }
}

/// Contrastive loss scaled by the mean class weight of the pair members.
pub fn weighted_contrastive_loss<F: Scalar>(d: F, y: u8, margin: F, lambda_a: F, lambda_b: F) -> F {
    pair_weight(lambda_a, lambda_b) * contrastive_loss(d, y, margin)
}

fn pair_weight<F: Scalar>(lambda_a: F, lambda_b: F) -> F {
    (lambda_a + lambda_b) / F::from_f64(2.0)
}

/// `λ_c = |T| / (|C| · |T_c|)` for every class of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub BTreeMap<ClassId, f64>);

impl ClassWeights {
    pub fn from_counts(counts: &BTreeMap<ClassId, usize>) -> Result<Self, DataError> {
        if counts.is_empty() {
            return Err(DataError::Empty);
        }
        if let Some((c, _)) = counts.iter().find(|(_, &n)| n == 0) {
            return Err(DataError::ZeroCount(alloc::format!("{c}")));
        }
        let total: usize = counts.values().sum();
        let k = counts.len();
        Ok(Self(
            counts
                .iter()
                .map(|(&c, &n)| (c, total as f64 / (k * n) as f64))
                .collect(),
        ))
    }

    pub fn get(&self, class: ClassId) -> Option<f64> {
        self.0.get(&class).copied()
    }
}

pub fn class_weights(dataset: &Dataset) -> Result<ClassWeights, DataError> {
    ClassWeights::from_counts(&dataset.class_counts())
}

/// One training pair with its images and loss weight `(λ_a + λ_b) / 2`
/// (1 for the plain loss).
#[derive(Debug, Clone, Copy)]
pub struct PairExample<'a> {
    pub a: &'a Raster,
    pub b: &'a Raster,
    pub y: u8,
    pub weight: f64,
}

/// Mean loss over `batch` and its exact gradient. Both branches share the
/// weights, so each pair contributes two backward passes into one buffer.
pub fn loss_gradient<F: Scalar>(
    params: &Parameters<F>,
    batch: &[PairExample<'_>],
    margin: f64,
) -> Result<(F, Gradients<F>), ModelError> {
    let mut grads = params.zero_gradients();
    if batch.is_empty() {
        return Ok((F::zero(), grads));
    }
    let m = F::from_f64(margin);
    let inv_n = F::one() / F::from_f64(batch.len() as f64);
    let mut total = F::zero();
    for ex in batch {
        let ta = params.forward_trace(ex.a)?;
        let tb = params.forward_trace(ex.b)?;
        let d = distance(&ta.embedding, &tb.embedding)?;
        let w = F::from_f64(ex.weight);
        total += w * contrastive_loss(d, ex.y, m);

        // ∂L/∂e_a = ∂L/∂D · (e_a - e_b) / D; for y = 0 this is 2 (e_a - e_b)
        // and stays defined at D = 0.
        let coeff = if ex.y == 0 {
            F::from_f64(2.0)
        } else if d > F::zero() {
            contrastive_loss_grad(d, ex.y, m) / d
        } else {
            F::zero()
        };
        let scale = coeff * w * inv_n;
        if scale == F::zero() {
            continue;
        }
        let ga: Vec<F> = ta
            .embedding
            .iter()
            .zip(&tb.embedding)
            .map(|(&x, &y)| scale * (x - y))
            .collect();
        let gb: Vec<F> = ga.iter().map(|&g| -g).collect();
        params.backward(&ta, &ga, &mut grads);
        params.backward(&tb, &gb, &mut grads);
    }
    if !grads.is_finite() {
        return Err(ModelError::NonFiniteGradient);
    }
    Ok((total * inv_n, grads))
}

/// Mean batch loss without gradients.
pub fn batch_loss<F: Scalar>(
    params: &Parameters<F>,
    batch: &[PairExample<'_>],
    margin: f64,
) -> Result<F, ModelError> {
    if batch.is_empty() {
        return Ok(F::zero());
    }
    let m = F::from_f64(margin);
    let mut total = F::zero();
    for ex in batch {
        let d = distance(&params.forward(ex.a)?, &params.forward(ex.b)?)?;
        total += F::from_f64(ex.weight) * contrastive_loss(d, ex.y, m);
    }
    Ok(total / F::from_f64(batch.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy;

    #[test]
    fn distances() {
        assert_eq!(distance(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(distance(&[0.6f64, 0.8], &[-0.6, -0.8]).unwrap(), 2.0);
        assert_eq!(distance(&[0.0f64, 3.0], &[4.0, 0.0]).unwrap(), 5.0);
        assert!(matches!(
            distance(&[0.0f64], &[1.0, 2.0]),
            Err(ModelError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn loss_values() {
        assert_eq!(contrastive_loss(0.0f64, 0, 1.0), 0.0);
        assert_eq!(contrastive_loss(0.0f64, 1, 1.0), 1.0);
        assert_eq!(contrastive_loss(1.0f64, 1, 1.0), 0.0);
        assert_eq!(contrastive_loss(2.5f64, 1, 1.0), 0.0);
        assert_eq!(contrastive_loss(0.5f64, 0, 1.0), 0.25);
    }

    #[test]
    fn loss_derivative_by_hand() {
        assert_eq!(contrastive_loss_grad(0.25f64, 0, 1.0), 0.5);
        assert_eq!(contrastive_loss_grad(1.5f64, 0, 1.0), 3.0);
        assert_eq!(contrastive_loss_grad(0.25f64, 1, 1.0), -1.5);
        assert_eq!(contrastive_loss_grad(1.5f64, 1, 1.0), 0.0);
        // central differences away from the hinge
        for (d, y) in [(0.25f64, 0), (1.5, 0), (0.25, 1), (0.7, 1)] {
            let h = 1e-6;
            let fd =
                (contrastive_loss(d + h, y, 1.0) - contrastive_loss(d - h, y, 1.0)) / (2.0 * h);
            assert!((fd - contrastive_loss_grad(d, y, 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn class_weight_values() {
        let w = class_weights(&toy("w", &[(0, 100), (1, 10)])).unwrap();
        assert!((w.get(0).unwrap() - 0.55).abs() < 1e-15);
        assert!((w.get(1).unwrap() - 5.5).abs() < 1e-15);
        let w = class_weights(&toy("b", &[(0, 50), (1, 50)])).unwrap();
        assert_eq!((w.get(0), w.get(1)), (Some(1.0), Some(1.0)));
        let w = class_weights(&toy("h", &[(0, 100), (1, 1)])).unwrap();
        assert_eq!(w.get(1), Some(50.5));
        assert!(ClassWeights::from_counts(&BTreeMap::from([(0, 3), (1, 0)])).is_err());
    }

    #[test]
    fn weighted_loss_values() {
        let (ln, lp) = (0.55f64, 5.5f64);
        let v = weighted_contrastive_loss(0.5, 1, 1.0, ln, lp);
        assert!((v - 3.025 * 0.25).abs() < 1e-12);
        assert!((v - 0.75625).abs() < 1e-12);
        assert_eq!(weighted_contrastive_loss(0.0f64, 0, 1.0, 3.0, 0.1), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn unit_weights_match_plain_bitwise(d in 0.0f64..4.0, y in 0u8..2, m in 0.1f64..8.0) {
            proptest::prop_assert_eq!(
                weighted_contrastive_loss(d, y, m, 1.0, 1.0).to_bits(),
                contrastive_loss(d, y, m).to_bits()
            );
        }

        #[test]
        fn loss_zero_set(d in 0.0f64..3.0, y in 0u8..2, m in 0.1f64..2.0) {
            let l = contrastive_loss(d, y, m);
            proptest::prop_assert!(l >= 0.0);
            proptest::prop_assert_eq!(l == 0.0, (y == 0 && d == 0.0) || (y == 1 && d >= m));
        }

        #[test]
        fn class_weight_identity(a in 1usize..100_000, b in 1usize..100_000) {
            let counts = BTreeMap::from([(0, a), (1, b)]);
            let w = ClassWeights::from_counts(&counts).unwrap();
            let s: f64 = counts.iter().map(|(c, &n)| w.get(*c).unwrap() * n as f64).sum();
            proptest::prop_assert!((s - (a + b) as f64).abs() <= 1e-9 * (a + b) as f64);
        }
    }
}

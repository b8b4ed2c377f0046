//! Soft-margin binary SVM trained on its dual by sequential minimal
//! optimization with second-order working-set selection.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::nearest::squared_distance;
use super::{ClassifyError, NeuralCodes};
use crate::ClassId;

const TAU: f64 = 1e-12;
/// KKT violation tolerance of the stopping rule.
pub const KKT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `⟨x, z⟩`
    Linear,
    /// `(⟨x, z⟩ + 1)³`
    Polynomial,
    /// `exp(-γ ‖x − z‖²)` with `γ = 1 / dim`
    Rbf,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Linear, Kernel::Polynomial, Kernel::Rbf];

    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => dot(a, b),
            Kernel::Polynomial => (dot(a, b) + 1.0).powi(3),
            Kernel::Rbf => Float::exp(-squared_distance(a, b) / a.len().max(1) as f64),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub cost: f64,
    /// `[negative, positive]` class ids; `classes[1]` maps to `y = +1`.
    pub classes: [ClassId; 2],
    pub support: Vec<Vec<f64>>,
    /// `α_i y_i` for each support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    /// Full dual solution, aligned with the training rows.
    pub alpha: Vec<f64>,
    pub y: Vec<f64>,
    pub iterations: usize,
}

impl SvmModel {
    pub fn decision(&self, query: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * self.kernel.eval(sv, query))
            .sum::<f64>()
            - self.rho
    }

    pub fn predict(&self, query: &[f64]) -> ClassId {
        if self.decision(query) > 0.0 {
            self.classes[1]
        } else {
            self.classes[0]
        }
    }
}

pub fn svm_fit(nc: &NeuralCodes, kernel: Kernel, cost: f64) -> Result<SvmModel, ClassifyError> {
    let classes: Vec<ClassId> = nc.classes().into_iter().collect();
    if classes.len() != 2 {
        return Err(ClassifyError::Classes(classes.len()));
    }
    if !(cost > 0.0 && cost.is_finite()) {
        return Err(ClassifyError::Spec(alloc::format!(
            "cost must be positive, got {cost}"
        )));
    }
    let n = nc.len();
    let y: Vec<f64> = nc
        .labels
        .iter()
        .map(|&l| if l == classes[1] { 1.0 } else { -1.0 })
        .collect();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| kernel.eval(&nc.embeddings[i], &nc.embeddings[j]))
                .collect()
        })
        .collect();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    let c = cost;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let max_iter = 10_000_000usize.max(100 * n);
    let mut iter = 0;

    while iter < max_iter {
        // i: maximal violator in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let in_up = if y[t] > 0.0 {
                !upper(alpha[t])
            } else {
                !lower(alpha[t])
            };
            if in_up && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            break;
        }
        // j: second-order choice in I_low
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            let in_low = if y[t] > 0.0 {
                !lower(alpha[t])
            } else {
                !upper(alpha[t])
            };
            if !in_low {
                continue;
            }
            let yg = y[t] * grad[t];
            gmax2 = gmax2.max(yg);
            let diff = gmax + yg;
            if diff > 0.0 {
                let quad = (k[i][i] + k[t][t] - 2.0 * y[i] * y[t] * k[i][t]).max(TAU);
                let obj = -(diff * diff) / quad;
                if obj <= obj_min {
                    obj_min = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < KKT_TOLERANCE || j == usize::MAX {
            break;
        }
        iter += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (k[i][i] + k[j][j] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k[i][i] + k[j][j] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    // offset from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };

    let (mut support, mut coef) = (Vec::new(), Vec::new());
    for t in 0..n {
        if alpha[t] > 0.0 {
            support.push(nc.embeddings[t].clone());
            coef.push(alpha[t] * y[t]);
        }
    }
    Ok(SvmModel {
        kernel,
        cost,
        classes: [classes[0], classes[1]],
        support,
        coef,
        rho,
        alpha,
        y,
        iterations: iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use rand::Rng as _;

    fn xor() -> NeuralCodes {
        NeuralCodes::new(
            vec![
                vec![0.0, 0.0],
                vec![1.0, 1.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0],
            ],
            vec![0, 0, 1, 1],
            0,
        )
        .unwrap()
    }

    fn blobs(seed: u64, n: usize) -> NeuralCodes {
        let mut r = rng::from_seed(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = (i % 2) as ClassId;
            let cx = if label == 0 { -2.0 } else { 2.0 };
            rows.push(vec![
                cx + r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
            ]);
            labels.push(label);
        }
        NeuralCodes::new(rows, labels, 0).unwrap()
    }

    fn train_accuracy(nc: &NeuralCodes, m: &SvmModel) -> f64 {
        let hits = nc
            .embeddings
            .iter()
            .zip(&nc.labels)
            .filter(|(x, &l)| m.predict(x) == l)
            .count();
        hits as f64 / nc.len() as f64
    }

    fn assert_feasible(m: &SvmModel) {
        assert!(m.alpha.iter().all(|&a| (0.0..=m.cost).contains(&a)));
        let s: f64 = m.alpha.iter().zip(&m.y).map(|(a, y)| a * y).sum();
        assert!(s.abs() < 1e-6, "Σαy = {s}");
    }

    #[test]
    fn separable_blobs_linear() {
        let nc = blobs(1, 40);
        let m = svm_fit(&nc, Kernel::Linear, 1.0).unwrap();
        assert_eq!(train_accuracy(&nc, &m), 1.0);
        assert_feasible(&m);
        // a point deep inside the positive side
        assert_eq!(m.predict(&[6.0, 0.0, 0.0]), 1);
        assert_eq!(m.predict(&[-6.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn xor_needs_a_kernel() {
        let nc = xor();
        let rbf = svm_fit(&nc, Kernel::Rbf, 9.0).unwrap();
        assert_eq!(train_accuracy(&nc, &rbf), 1.0);
        assert_feasible(&rbf);
        let lin = svm_fit(&nc, Kernel::Linear, 9.0).unwrap();
        assert!(train_accuracy(&nc, &lin) < 1.0);
        assert_feasible(&lin);
        let poly = svm_fit(&nc, Kernel::Polynomial, 9.0).unwrap();
        assert_eq!(train_accuracy(&nc, &poly), 1.0);
    }

    #[test]
    fn kkt_conditions_hold_at_solution() {
        let nc = blobs(5, 30);
        for kernel in Kernel::ALL {
            let m = svm_fit(&nc, kernel, 3.0).unwrap();
            assert_feasible(&m);
            // y_i f(x_i) ≥ 1 for α = 0, = 1 for free, ≤ 1 at the bound
            for (i, x) in nc.embeddings.iter().enumerate() {
                let margin = m.y[i] * m.decision(x);
                let a = m.alpha[i];
                let tol = 2.0 * KKT_TOLERANCE;
                if a <= 0.0 {
                    assert!(margin >= 1.0 - tol, "{kernel:?} row {i}: {margin}");
                } else if a >= m.cost {
                    assert!(margin <= 1.0 + tol, "{kernel:?} row {i}: {margin}");
                } else {
                    assert!((margin - 1.0).abs() <= tol, "{kernel:?} row {i}: {margin}");
                }
            }
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let nc = NeuralCodes::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![3, 3], 0).unwrap();
        assert_eq!(
            svm_fit(&nc, Kernel::Linear, 1.0).unwrap_err(),
            ClassifyError::Classes(1)
        );
    }
}

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::iter::Sum;
use core::ops::AddAssign;

use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{BackboneConfig, ModelError};
use crate::rng;

/// Floating-point type the network runs in: `f32` for training, `f64` for
/// gradient checks.
pub trait Scalar: Float + Default + Debug + Sum + AddAssign + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Version of the parameter layout; bumped whenever tensor order or naming
/// changes.
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSource {
    Scratch,
    Imported,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

/// Backbone weights in [`BackboneConfig::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F = f32> {
    pub config: BackboneConfig,
    pub tensors: Vec<Tensor<F>>,
    pub version: u32,
    pub source: ParamSource,
}

impl<F: Scalar> Parameters<F> {
    /// Variance-scaled uniform initialization: conv kernels use
    /// `±sqrt(6 / fan_in)`, the dense projection `±sqrt(6 / (fan_in + fan_out))`,
    /// biases start at zero.
    pub fn scratch(config: &BackboneConfig, seed: u64) -> Result<Self, ModelError> {
        let layout = config.layout()?;
        let mut r = rng::from_seed(seed);
        let tensors = layout
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let data = if name.ends_with(".bias") {
                    alloc::vec![F::zero(); len]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let limit = if name.starts_with("embed") {
                        (6.0 / (fan_in + shape[0]) as f64).sqrt()
                    } else {
                        (6.0 / fan_in as f64).sqrt()
                    };
                    (0..len)
                        .map(|_| F::from_f64(r.gen_range(-limit..limit)))
                        .collect()
                };
                Tensor { name, shape, data }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
            version: PARAMS_VERSION,
            source: ParamSource::Scratch,
        })
    }

    /// Checks `tensors` against the layout of `config`.
    pub fn from_tensors(
        config: &BackboneConfig,
        tensors: Vec<Tensor<F>>,
        source: ParamSource,
    ) -> Result<Self, ModelError> {
        let layout = config.layout()?;
        if layout.len() != tensors.len() {
            return Err(ModelError::Shape {
                layer: String::from("<tensor count>"),
                expected: alloc::vec![layout.len()],
                found: alloc::vec![tensors.len()],
            });
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if *name != t.name
                || *shape != t.shape
                || t.data.len() != shape.iter().product::<usize>()
            {
                return Err(ModelError::Shape {
                    layer: name.clone(),
                    expected: shape.clone(),
                    found: t.shape.clone(),
                });
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteWeights(name.clone()));
            }
        }
        Ok(Self {
            config: config.clone(),
            tensors,
            version: PARAMS_VERSION,
            source,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<F>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn cast<G: Scalar>(&self) -> Parameters<G> {
        Parameters {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| G::from_f64(v.to_f64())).collect(),
                })
                .collect(),
            version: self.version,
            source: self.source,
        }
    }

    pub fn zero_gradients(&self) -> Gradients<F> {
        Gradients(
            self.tensors
                .iter()
                .map(|t| alloc::vec![F::zero(); t.data.len()])
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flat iterator over every parameter value.
    pub fn values(&self) -> impl Iterator<Item = F> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }
}

/// Per-tensor gradient buffers aligned with [`Parameters::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F>(pub Vec<Vec<F>>);

impl<F: Scalar> Gradients<F> {
    pub fn scale(&mut self, k: F) {
        for g in self.0.iter_mut().flatten() {
            *g = *g * k;
        }
    }

    pub fn add(&mut self, other: &Gradients<F>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> F {
        self.0
            .iter()
            .flatten()
            .fold(F::zero(), |m, v| m.max(v.abs()))
    }

    pub fn flat(&self) -> impl Iterator<Item = F> + '_ {
        self.0.iter().flatten().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConvBlock;

    #[test]
    fn scratch_is_deterministic_and_bounded() {
        let cfg = BackboneConfig::default();
        let a = Parameters::<f32>::scratch(&cfg, 3).unwrap();
        let b = Parameters::<f32>::scratch(&cfg, 3).unwrap();
        let c = Parameters::<f32>::scratch(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.parameter_count(), cfg.parameter_count().unwrap());
        let w = a.tensor("conv0.weight").unwrap();
        let limit = (6.0f32 / 9.0).sqrt();
        assert!(w.data.iter().all(|v| v.abs() < limit));
        assert!(a
            .tensor("conv0.bias")
            .unwrap()
            .data
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn from_tensors_reports_layer() {
        let cfg = BackboneConfig {
            input_shape: (4, 4, 1),
            conv_blocks: alloc::vec![ConvBlock::new(2, 3, 1, 2)],
            embedding_dim: 3,
            normalize: true,
            bias: true,
        };
        let p = Parameters::<f32>::scratch(&cfg, 0).unwrap();
        let mut tensors = p.tensors.clone();
        tensors[2].data.pop();
        match Parameters::from_tensors(&cfg, tensors, ParamSource::Imported) {
            Err(ModelError::Shape { layer, .. }) => assert_eq!(layer, "embed.weight"),
            other => panic!("unexpected {other:?}"),
        }
        let ok = Parameters::from_tensors(&cfg, p.tensors.clone(), ParamSource::Imported).unwrap();
        assert_eq!(ok.tensors, p.tensors);
    }

    #[test]
    fn cast_round_trip_through_f64_is_exact() {
        let p = Parameters::<f32>::scratch(&BackboneConfig::default(), 1).unwrap();
        assert_eq!(p.cast::<f64>().cast::<f32>(), p);
    }
}

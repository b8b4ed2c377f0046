//! Siamese training loop and the softmax-head classifier used for
//! transfer-learning pretraining and the single-backbone baseline.

use alloc::borrow::Cow;
use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::loss::{class_weights, loss_gradient, PairExample};
use super::optim::Sgd;
use super::params::{ParamSource, Parameters, Scalar};
use super::{BackboneConfig, LossKind, ModelError, TrainConfig};
use crate::augment::{random_augment, AugmentConfig};
use crate::data::Dataset;
use crate::pairing::{sample_pairs, PairingConfig};
use crate::raster::Raster;
use crate::rng::{self, Rng};
use crate::ClassId;

const PAIR_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const HEAD_INIT_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Parameters<f32>,
    /// Mean training loss of each epoch.
    pub history: Vec<f64>,
}

fn wrap(epoch: usize, batch: usize, e: ModelError) -> ModelError {
    ModelError::Training {
        epoch,
        batch,
        source: Box::new(e),
    }
}

fn maybe_augment<'a>(
    image: &'a Raster,
    augment: &AugmentConfig,
    rng: &mut Rng,
) -> Result<Cow<'a, Raster>, ModelError> {
    if augment.is_identity() {
        Ok(Cow::Borrowed(image))
    } else {
        Ok(Cow::Owned(random_augment(image, augment, rng)?))
    }
}

/// Trains the weight-shared pair network on pairs drawn from `dataset`.
///
/// Each epoch draws a fresh pair stream and, when enabled, augments both
/// members of every pair independently. Class weights for the weighted loss
/// come from the counts of `dataset` itself, before any oversampling.
pub fn train_siamese(
    dataset: &Dataset,
    pairing: &PairingConfig,
    augment: &AugmentConfig,
    config: &TrainConfig,
    init: &Parameters<f32>,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    augment.validate()?;
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            params: init.clone(),
            history: Vec::new(),
        });
    }
    if dataset.len() < 2 {
        return Err(ModelError::Config(alloc::format!(
            "pair training needs at least 2 samples, got {}",
            dataset.len()
        )));
    }
    let weights = match config.loss {
        LossKind::Plain => None,
        LossKind::Weighted => Some(class_weights(dataset)?),
    };
    let lambda = |c: ClassId| weights.as_ref().and_then(|w| w.get(c)).unwrap_or(1.0);

    let mut params = init.clone();
    let mut opt = Sgd::<f32>::new(config.learning_rate, config.momentum, config.decay);
    let mut history = Vec::with_capacity(config.epochs);
    let samples = dataset.samples();
    let pair_seed = rng::derive_seed(config.seed, PAIR_STREAM);
    let aug_seed = rng::derive_seed(config.seed, AUGMENT_STREAM);

    for epoch in 0..config.epochs {
        let mut pair_rng = rng::stream(pair_seed, epoch as u64);
        let mut aug_rng = rng::stream(aug_seed, epoch as u64);
        let pairs =
            sample_pairs(dataset, pairing, &mut pair_rng).map_err(|e| wrap(epoch, 0, e.into()))?;
        let mut epoch_loss = 0.0f64;
        for (bi, chunk) in pairs.chunks(config.batch_size).enumerate() {
            let mut images = Vec::with_capacity(chunk.len());
            for p in chunk {
                let a = maybe_augment(&samples[p.a].image, augment, &mut aug_rng)?;
                let b = maybe_augment(&samples[p.b].image, augment, &mut aug_rng)?;
                let w = (lambda(samples[p.a].label) + lambda(samples[p.b].label)) / 2.0;
                images.push((a, b, p.y, w));
            }
            let batch: Vec<PairExample<'_>> = images
                .iter()
                .map(|(a, b, y, w)| PairExample {
                    a,
                    b,
                    y: *y,
                    weight: *w,
                })
                .collect();
            let (loss, grads) =
                loss_gradient(&params, &batch, config.margin).map_err(|e| wrap(epoch, bi, e))?;
            epoch_loss += f64::from(loss) * chunk.len() as f64;
            opt.step(&mut params, &grads);
            if !params.is_finite() {
                return Err(wrap(epoch, bi, ModelError::NonFiniteGradient));
            }
        }
        history.push(epoch_loss / pairs.len().max(1) as f64);
    }
    Ok(TrainOutcome { params, history })
}

/// Linear softmax head over backbone embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<F = f32> {
    pub classes: Vec<ClassId>,
    /// `classes.len() × embedding_dim`, row major.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> ClassifierHead<F> {
    fn init(classes: Vec<ClassId>, dim: usize, seed: u64) -> Self {
        let k = classes.len();
        let limit = num_traits::Float::sqrt(6.0 / (dim + k) as f64);
        let mut r = rng::from_seed(seed);
        Self {
            weight: (0..k * dim)
                .map(|_| F::from_f64(r.gen_range(-limit..limit)))
                .collect(),
            bias: vec![F::zero(); k],
            classes,
        }
    }

    pub fn logits(&self, embedding: &[F]) -> Vec<F> {
        let n = embedding.len();
        self.bias
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                b + self.weight[k * n..(k + 1) * n]
                    .iter()
                    .zip(embedding)
                    .map(|(&w, &e)| w * e)
                    .sum::<F>()
            })
            .collect()
    }

    pub fn predict_embedding(&self, embedding: &[F]) -> ClassId {
        let logits = self.logits(embedding);
        let mut best = 0;
        for (k, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = k;
            }
        }
        self.classes[best]
    }

    pub fn predict(&self, params: &Parameters<F>, image: &Raster) -> Result<ClassId, ModelError> {
        Ok(self.predict_embedding(&params.forward(image)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutcome {
    pub params: Parameters<f32>,
    pub head: ClassifierHead<f32>,
    pub history: Vec<f64>,
}

/// Trains backbone and a softmax head jointly under cross-entropy.
pub fn train_classifier(
    dataset: &Dataset,
    init: &Parameters<f32>,
    augment: &AugmentConfig,
    config: &TrainConfig,
) -> Result<ClassifierOutcome, ModelError> {
    config.validate()?;
    augment.validate()?;
    let classes: Vec<ClassId> = dataset.classes().iter().copied().collect();
    if classes.len() < 2 {
        return Err(ModelError::Config(alloc::format!(
            "classifier training needs at least 2 classes, got {}",
            classes.len()
        )));
    }
    let dim = init.config.embedding_dim;
    let mut head = ClassifierHead::<f32>::init(
        classes.clone(),
        dim,
        rng::derive_seed(config.seed, HEAD_INIT_STREAM),
    );
    let mut params = init.clone();
    let mut history = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok(ClassifierOutcome {
            params,
            head,
            history,
        });
    }
    let mut opt = Sgd::<f32>::new(config.learning_rate, config.momentum, config.decay);
    let shuffle_seed = rng::derive_seed(config.seed, SHUFFLE_STREAM);
    let aug_seed = rng::derive_seed(config.seed, AUGMENT_STREAM);
    let samples = dataset.samples();
    let class_index = |c: ClassId| classes.iter().position(|&k| k == c).unwrap();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng::stream(shuffle_seed, epoch as u64));
        let mut aug_rng = rng::stream(aug_seed, epoch as u64);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut grads = params.zero_gradients();
            let mut gw = vec![0.0f32; head.weight.len()];
            let mut gb = vec![0.0f32; head.bias.len()];
            let inv_n = 1.0 / chunk.len() as f32;
            for &i in chunk {
                let image = maybe_augment(&samples[i].image, augment, &mut aug_rng)?;
                let trace = params
                    .forward_trace(&image)
                    .map_err(|e| wrap(epoch, bi, e))?;
                let logits = head.logits(&trace.embedding);
                let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let exp: Vec<f32> = logits
                    .iter()
                    .map(|&l| num_traits::Float::exp(l - max))
                    .collect();
                let z: f32 = exp.iter().sum();
                let target = class_index(samples[i].label);
                epoch_loss += f64::from(num_traits::Float::ln(z) - (logits[target] - max));
                // ∂CE/∂logits = softmax - onehot
                let g_logits: Vec<f32> = exp
                    .iter()
                    .enumerate()
                    .map(|(k, &e)| (e / z - if k == target { 1.0 } else { 0.0 }) * inv_n)
                    .collect();
                let mut g_emb = vec![0.0f32; dim];
                for (k, &g) in g_logits.iter().enumerate() {
                    gb[k] += g;
                    for d in 0..dim {
                        gw[k * dim + d] += g * trace.embedding[d];
                        g_emb[d] += g * head.weight[k * dim + d];
                    }
                }
                params.backward(&trace, &g_emb, &mut grads);
            }
            if !grads.is_finite() || gw.iter().chain(&gb).any(|v| !v.is_finite()) {
                return Err(wrap(epoch, bi, ModelError::NonFiniteGradient));
            }
            let mut bufs: Vec<&mut [f32]> = params
                .tensors
                .iter_mut()
                .map(|t| t.data.as_mut_slice())
                .collect();
            bufs.push(&mut head.weight);
            bufs.push(&mut head.bias);
            let mut g: Vec<&[f32]> = grads.0.iter().map(Vec::as_slice).collect();
            g.push(&gw);
            g.push(&gb);
            opt.step_buffers(&mut bufs, &g);
        }
        history.push(epoch_loss / samples.len() as f64);
    }
    Ok(ClassifierOutcome {
        params,
        head,
        history,
    })
}

/// Pretrains a fresh backbone as a plain classifier and discards the head.
pub fn pretrain_classifier(
    dataset: &Dataset,
    backbone: &BackboneConfig,
    config: &TrainConfig,
) -> Result<Parameters<f32>, ModelError> {
    let init = Parameters::scratch(backbone, config.seed)?;
    if config.epochs == 0 {
        return Ok(init);
    }
    let mut params = train_classifier(dataset, &init, &AugmentConfig::default(), config)?.params;
    params.source = ParamSource::Pretrained;
    Ok(params)
}

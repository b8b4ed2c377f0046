//! Few-shot Siamese metric learning for binary image classification under
//! severe class imbalance.
//!
//! The crate is `no_std` (it needs `alloc`) and carries only the algorithmic
//! pieces: raster resampling, imbalanced few-shot draws, the restricted
//! augmentation family, pair streams, a small convolutional embedding
//! backbone with hand-written reverse-mode gradients, contrastive and
//! class-weighted contrastive losses, Nesterov SGD, embedding-space
//! classifiers and the macro-F1 metrics. File formats, image decoding and the
//! experiment CLI live in the `siamese-harness` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod augment;
pub mod classify;
pub mod data;
pub mod metrics;
pub mod model;
pub mod pairing;
pub mod raster;
pub mod rng;

pub use augment::AugmentConfig;
pub use classify::{ClassifierKind, ClassifierSpec, NeuralCodes};
pub use data::{Dataset, FoldPlan, ImbalanceLevel, ImbalanceSpec, Sample, Split};
pub use metrics::{ConfusionCounts, FoldResults};
pub use model::{BackboneConfig, ClassWeights, LossKind, Parameters, TrainConfig};
pub use pairing::{Pair, PairingConfig};
pub use raster::Raster;

/// Class identifier. Binary tasks use `0` for the negative (majority) class.
pub type ClassId = u32;

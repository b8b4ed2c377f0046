//! Embedding backbone, losses, optimizer and training loops.

mod config;
mod loss;
mod network;
mod optim;
mod params;
mod train;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

pub use config::{BackboneConfig, ConvBlock, LossKind, TrainConfig};
pub use loss::{
    batch_loss, class_weights, contrastive_loss, contrastive_loss_grad, distance, loss_gradient,
    weighted_contrastive_loss, ClassWeights, PairExample,
};
pub use network::Trace;
pub use optim::Sgd;
pub use params::{Gradients, ParamSource, Parameters, Scalar, Tensor, PARAMS_VERSION};
pub use train::{
    pretrain_classifier, train_classifier, train_siamese, ClassifierHead, ClassifierOutcome,
    TrainOutcome,
};

use crate::augment::AugmentError;
use crate::data::DataError;
use crate::pairing::PairingError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("layer `{layer}`: expected shape {expected:?}, found {found:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("layer `{0}` holds non-finite weights")]
    NonFiniteWeights(String),
    #[error("input shape {found:?} does not match backbone input {expected:?}")]
    InputShape {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("non-finite activation at layer {layer}")]
    NumericFault { layer: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("embedding lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<ModelError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

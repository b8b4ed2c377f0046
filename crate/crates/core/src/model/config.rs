use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// One convolution stage: `kernel × kernel` convolution with "same" padding
/// (`kernel / 2`), ReLU, then `pool × pool` max pooling (`pool = 1` skips it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
}

impl ConvBlock {
    pub fn new(filters: usize, kernel: usize, stride: usize, pool: usize) -> Self {
        Self {
            filters,
            kernel,
            stride,
            pool,
        }
    }
}

/// Architecture of the embedding backbone: conv blocks, a dense projection
/// to `embedding_dim`, then optional ℓ2 normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// `(height, width, channels)`
    pub input_shape: (usize, usize, usize),
    pub conv_blocks: Vec<ConvBlock>,
    pub embedding_dim: usize,
    pub normalize: bool,
    pub bias: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_shape: (32, 32, 1),
            conv_blocks: vec![
                ConvBlock::new(8, 3, 1, 2),
                ConvBlock::new(16, 3, 1, 2),
                ConvBlock::new(32, 3, 1, 2),
            ],
            embedding_dim: 64,
            normalize: true,
            bias: true,
        }
    }
}

/// Resolved shapes of one conv block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub conv_h: usize,
    pub conv_w: usize,
    pub pool: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl BackboneConfig {
    pub(crate) fn geometry(&self) -> Result<Vec<ConvGeometry>, ModelError> {
        let (mut h, mut w, mut c) = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(ModelError::Config(format!(
                "input shape {:?} has a zero dimension",
                self.input_shape
            )));
        }
        let mut out = Vec::with_capacity(self.conv_blocks.len());
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.filters == 0 || b.kernel == 0 || b.stride == 0 || b.pool == 0 {
                return Err(ModelError::Config(format!(
                    "conv block {i} has a zero field: {b:?}"
                )));
            }
            let pad = b.kernel / 2;
            if h + 2 * pad < b.kernel || w + 2 * pad < b.kernel {
                return Err(ModelError::Config(format!(
                    "conv block {i}: kernel {} exceeds padded input {h}x{w}",
                    b.kernel
                )));
            }
            let conv_h = (h + 2 * pad - b.kernel) / b.stride + 1;
            let conv_w = (w + 2 * pad - b.kernel) / b.stride + 1;
            let (out_h, out_w) = (conv_h / b.pool, conv_w / b.pool);
            if out_h == 0 || out_w == 0 {
                return Err(ModelError::Config(format!(
                    "conv block {i}: {conv_h}x{conv_w} map too small for {0}x{0} pooling",
                    b.pool
                )));
            }
            out.push(ConvGeometry {
                in_c: c,
                in_h: h,
                in_w: w,
                out_c: b.filters,
                kernel: b.kernel,
                stride: b.stride,
                pad,
                conv_h,
                conv_w,
                pool: b.pool,
                out_h,
                out_w,
            });
            (h, w, c) = (out_h, out_w, b.filters);
        }
        Ok(out)
    }

    /// Length of the flattened feature map entering the dense projection.
    pub fn flat_len(&self) -> Result<usize, ModelError> {
        let geo = self.geometry()?;
        Ok(match geo.last() {
            Some(g) => g.out_c * g.out_h * g.out_w,
            None => self.input_shape.0 * self.input_shape.1 * self.input_shape.2,
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embedding_dim < 2 {
            return Err(ModelError::Config(format!(
                "embedding_dim must be at least 2, got {}",
                self.embedding_dim
            )));
        }
        self.flat_len().map(|_| ())
    }

    /// `(name, shape)` of every tensor in declaration order.
    pub fn layout(&self) -> Result<Vec<(String, Vec<usize>)>, ModelError> {
        self.validate()?;
        let mut out = Vec::new();
        for (i, g) in self.geometry()?.iter().enumerate() {
            out.push((
                format!("conv{i}.weight"),
                vec![g.out_c, g.in_c, g.kernel, g.kernel],
            ));
            if self.bias {
                out.push((format!("conv{i}.bias"), vec![g.out_c]));
            }
        }
        out.push((
            String::from("embed.weight"),
            vec![self.embedding_dim, self.flat_len()?],
        ));
        if self.bias {
            out.push((String::from("embed.bias"), vec![self.embedding_dim]));
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> Result<usize, ModelError> {
        Ok(self
            .layout()?
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Plain,
    Weighted,
}

/// Optimization settings. Defaults:
/// 200 epochs, batches of 32, SGD with Nesterov momentum 0.9, learning
/// rate 1e-2 with inverse-time decay 1e-6, margin 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub margin: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-2,
            momentum: 0.9,
            decay: 1e-6,
            margin: 1.0,
            loss: LossKind::Plain,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.batch_size == 0 {
            return bad(String::from("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return bad(format!("decay must be non-negative, got {}", self.decay));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        Ok(())
    }
}

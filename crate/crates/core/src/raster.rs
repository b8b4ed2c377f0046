//! Rank-3 rasters (height × width × channels) with values in `[0, 1]`, and
//! the bilinear resampling used by preprocessing and augmentation.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("raster dimensions must be positive, got {height}x{width}x{channels}")]
    EmptyShape {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error(
        "raster buffer holds {found} values, shape {height}x{width}x{channels} needs {expected}"
    )]
    BufferSize {
        height: usize,
        width: usize,
        channels: usize,
        expected: usize,
        found: usize,
    },
    #[error("raster value {value} at index {index} is not finite")]
    NonFinite { index: usize, value: f32 },
}

/// Interleaved (HWC) image buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, RasterError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(RasterError::EmptyShape {
                height,
                width,
                channels,
            });
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(RasterError::BufferSize {
                height,
                width,
                channels,
                expected,
                found: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(RasterError::NonFinite { index, value });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// All-zero raster.
    ///
    /// # Panics
    /// If any dimension is zero.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(
            height > 0 && width > 0 && channels > 0,
            "raster dimensions must be positive"
        );
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Raster filled from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut r = Self::zeros(height, width, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    r.data[(y * width + x) * channels + c] = f(y, x, c);
                }
            }
        }
        r
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// True when every value lies in `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integers). Points outside `[0, h-1] × [0, w-1]` read as zero.
    pub fn sample_zero_fill(&self, y: f64, x: f64, c: usize) -> f32 {
        const EPS: f64 = 1e-9;
        let (h, w) = ((self.height - 1) as f64, (self.width - 1) as f64);
        if !(y >= -EPS && y <= h + EPS && x >= -EPS && x <= w + EPS) {
            return 0.0;
        }
        self.sample_clamped(y.clamp(0.0, h), x.clamp(0.0, w), c)
    }

    /// Bilinear sample with coordinates already inside the raster.
    fn sample_clamped(&self, y: f64, x: f64, c: usize) -> f32 {
        let y0 = Float::floor(y) as usize;
        let x0 = Float::floor(x) as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let ty = (y - y0 as f64) as f32;
        let tx = (x - x0 as f64) as f32;
        let lerp = |a: f32, b: f32, t: f32| if t == 0.0 { a } else { a + t * (b - a) };
        let top = lerp(self.get(y0, x0, c), self.get(y0, x1, c), tx);
        let bottom = lerp(self.get(y1, x0, c), self.get(y1, x1, c), tx);
        lerp(top, bottom, ty)
    }
}

/// Bilinear resize to `height × width` (half-pixel-center convention, edge
/// clamped) followed by clamping to `[0, 1]`. Same-size input is copied
/// unchanged apart from the clamp.
pub fn preprocess(image: &Raster, height: usize, width: usize) -> Result<Raster, RasterError> {
    if height == 0 || width == 0 {
        return Err(RasterError::EmptyShape {
            height,
            width,
            channels: image.channels,
        });
    }
    let mut out = if (height, width) == (image.height, image.width) {
        image.clone()
    } else {
        resize_bilinear(image, height, width)
    };
    out.clamp_unit();
    Ok(out)
}

fn resize_bilinear(image: &Raster, height: usize, width: usize) -> Raster {
    let sy = image.height as f64 / height as f64;
    let sx = image.width as f64 / width as f64;
    let max_y = (image.height - 1) as f64;
    let max_x = (image.width - 1) as f64;
    let mut out = Raster::zeros(height, width, image.channels);
    for y in 0..height {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        for x in 0..width {
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            for c in 0..image.channels {
                out.set(y, x, c, image.sample_clamped(src_y, src_x, c));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_malformed_buffers() {
        assert!(matches!(
            Raster::new(0, 2, 1, vec![]),
            Err(RasterError::EmptyShape { .. })
        ));
        assert!(matches!(
            Raster::new(2, 2, 1, vec![0.0; 3]),
            Err(RasterError::BufferSize { .. })
        ));
        assert!(matches!(
            Raster::new(1, 1, 1, vec![f32::NAN]),
            Err(RasterError::NonFinite { index: 0, .. })
        ));
    }

    #[test]
    fn same_size_is_identity() {
        let img = Raster::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f32 / 105.0);
        assert_eq!(preprocess(&img, 5, 7).unwrap(), img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Raster::from_fn(6, 9, 1, |_, _, _| 0.37);
        for (h, w) in [(3, 3), (12, 18), (7, 4), (32, 32)] {
            let out = preprocess(&img, h, w).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.37), "{h}x{w}");
        }
    }

    #[test]
    fn checkerboard_upsample_hand_weights() {
        // Source pixel centers map to 0.25/0.75 for the interior of a 2→4
        // upsample: value = Σ bilinear weights × checker values.
        let img = Raster::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = preprocess(&img, 4, 4).unwrap();
        let expect = |ty: f32, tx: f32| (1.0 - ty) * tx + ty * (1.0 - tx);
        for (y, ty) in [(1, 0.25f32), (2, 0.75)] {
            for (x, tx) in [(1, 0.25f32), (2, 0.75)] {
                let v = out.get(y, x, 0);
                assert!(v > 0.0 && v < 1.0);
                assert!((v - expect(ty, tx)).abs() < 1e-6, "({y},{x}) = {v}");
            }
        }
        assert!((out.get(1, 1, 0) - 0.375).abs() < 1e-6);
        assert!((out.get(1, 2, 0) - 0.625).abs() < 1e-6);
    }

    #[test]
    fn preprocess_clamps_and_is_idempotent() {
        let img = Raster::from_fn(10, 13, 1, |y, x, _| {
            ((y * 31 + x * 17) % 23) as f32 / 11.0 - 0.5
        });
        let once = preprocess(&img, 8, 8).unwrap();
        assert!(once.in_unit_range());
        let twice = preprocess(&once, 8, 8).unwrap();
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn zero_fill_outside_support() {
        let img = Raster::from_fn(3, 3, 1, |_, _, _| 1.0);
        assert_eq!(img.sample_zero_fill(-0.5, 1.0, 0), 0.0);
        assert_eq!(img.sample_zero_fill(1.0, 2.5, 0), 0.0);
        assert_eq!(img.sample_zero_fill(1.3, 0.2, 0), 1.0);
    }
}

//! Geometry-preserving augmentation: shifts, scaling and small rotations.
//!
//! Mirror transforms are deliberately absent: they would move anatomy (the
//! heart changes side). Exposed regions are zero filled and every output
//! stays in `[0, 1]` with the input's shape.

use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;
use crate::rng::Rng;

pub const MAX_ALPHA: f64 = 45.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("alpha {0} outside [0, 45]")]
    Alpha(f64),
    #[error("shift ({dx}, {dy}) exceeds half the image extent")]
    Shift { dx: f64, dy: f64 },
    #[error("scale factor {0} outside [0.5, 1.5]")]
    Scale(f64),
    #[error("rotation {0}° outside [-45°, 45°]")]
    Rotation(f64),
}

/// Magnitude `alpha` is a percentage for shift and scale and degrees for
/// rotation; each enabled transform draws its parameter from `[-alpha, alpha]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub alpha: f64,
    pub enable_shift: bool,
    pub enable_scale: bool,
    pub enable_rotate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            enable_shift: true,
            enable_scale: true,
            enable_rotate: true,
        }
    }
}

impl AugmentConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=MAX_ALPHA).contains(&self.alpha) {
            return Err(AugmentError::Alpha(self.alpha));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.alpha == 0.0 || !(self.enable_shift || self.enable_scale || self.enable_rotate)
    }
}

/// Parameters of one random augmentation, in application order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentParams {
    /// Shift as fractions of width and height.
    pub shift: Option<(f64, f64)>,
    pub scale: Option<f64>,
    pub degrees: Option<f64>,
}

fn shift_pixels(image: &Raster, px: f64, py: f64) -> Raster {
    let (h, w, ch) = image.shape();
    let mut out = Raster::zeros(h, w, ch);
    let (rx, ry) = (Float::round(px), Float::round(py));
    if (px - rx).abs() < 1e-6 && (py - ry).abs() < 1e-6 {
        let (sx, sy) = (rx as isize, ry as isize);
        for y in 0..h as isize {
            let src_y = y - sy;
            if src_y < 0 || src_y >= h as isize {
                continue;
            }
            for x in 0..w as isize {
                let src_x = x - sx;
                if src_x < 0 || src_x >= w as isize {
                    continue;
                }
                for c in 0..ch {
                    out.set(
                        y as usize,
                        x as usize,
                        c,
                        image.get(src_y as usize, src_x as usize, c),
                    );
                }
            }
        }
        return out;
    }
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let v = image.sample_zero_fill(y as f64 - py, x as f64 - px, c);
                out.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Translates content by `dx` of the width and `dy` of the height. Whole
/// pixel offsets copy exactly; fractional ones resample bilinearly.
pub fn shift(image: &Raster, dx: f64, dy: f64) -> Result<Raster, AugmentError> {
    if !(dx.abs() <= 0.5 && dy.abs() <= 0.5) {
        return Err(AugmentError::Shift { dx, dy });
    }
    if dx == 0.0 && dy == 0.0 {
        return Ok(image.clone());
    }
    Ok(shift_pixels(
        image,
        dx * image.width() as f64,
        dy * image.height() as f64,
    ))
}

/// Maps each output pixel through `src(y, x)` (offsets from the center) and
/// samples bilinearly with zero fill.
fn warp(image: &Raster, src: impl Fn(f64, f64) -> (f64, f64)) -> Raster {
    let (h, w, ch) = image.shape();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Raster::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y as f64 - cy, x as f64 - cx);
            for c in 0..ch {
                let v = image.sample_zero_fill(sy + cy, sx + cx, c);
                out.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Rescales content about the image center. Factors below one shrink the
/// content inside a zero border, factors above one crop centrally.
pub fn scale(image: &Raster, factor: f64) -> Result<Raster, AugmentError> {
    if !(0.5..=1.5).contains(&factor) {
        return Err(AugmentError::Scale(factor));
    }
    if factor == 1.0 {
        return Ok(image.clone());
    }
    Ok(warp(image, |oy, ox| (oy / factor, ox / factor)))
}

/// Rotates content counterclockwise (as displayed, rows growing downward)
/// about the image center.
pub fn rotate(image: &Raster, degrees: f64) -> Result<Raster, AugmentError> {
    if degrees.is_nan() || degrees.abs() > 45.0 {
        return Err(AugmentError::Rotation(degrees));
    }
    if degrees == 0.0 {
        return Ok(image.clone());
    }
    Ok(rotate_unchecked(image, degrees))
}

pub(crate) fn rotate_unchecked(image: &Raster, degrees: f64) -> Raster {
    let (s, c) = Float::sin_cos(degrees.to_radians());
    warp(image, |oy, ox| (ox * s + oy * c, ox * c - oy * s))
}

/// Draws the parameters of one augmentation. Draws nothing when the config
/// is the identity.
pub fn draw_params(config: &AugmentConfig, rng: &mut Rng) -> AugmentParams {
    let mut params = AugmentParams::default();
    if config.is_identity() {
        return params;
    }
    let a = config.alpha;
    if config.enable_shift {
        let dx = rng.gen_range(-a..=a) / 100.0;
        let dy = rng.gen_range(-a..=a) / 100.0;
        params.shift = Some((dx, dy));
    }
    if config.enable_scale {
        params.scale = Some(1.0 + rng.gen_range(-a..=a) / 100.0);
    }
    if config.enable_rotate {
        params.degrees = Some(rng.gen_range(-a..=a));
    }
    params
}

/// Applies `params` in the fixed order shift, scale, rotate.
pub fn apply(image: &Raster, params: &AugmentParams) -> Result<Raster, AugmentError> {
    let mut out = match params.shift {
        Some((dx, dy)) => shift(image, dx, dy)?,
        None => image.clone(),
    };
    if let Some(f) = params.scale {
        out = scale(&out, f)?;
    }
    if let Some(d) = params.degrees {
        out = rotate(&out, d)?;
    }
    Ok(out)
}

pub fn random_augment(
    image: &Raster,
    config: &AugmentConfig,
    rng: &mut Rng,
) -> Result<Raster, AugmentError> {
    config.validate()?;
    if config.is_identity() {
        return Ok(image.clone());
    }
    apply(image, &draw_params(config, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn noise(h: usize, w: usize, seed: u64) -> Raster {
        let mut r = rng::from_seed(seed);
        Raster::from_fn(h, w, 1, |_, _, _| r.gen_range(0.0..=1.0))
    }

    #[test]
    fn identities() {
        let img = noise(12, 10, 1);
        assert_eq!(shift(&img, 0.0, 0.0).unwrap(), img);
        assert_eq!(scale(&img, 1.0).unwrap(), img);
        assert_eq!(rotate(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn unit_translation_moves_pixel() {
        let (h, w) = (6, 8);
        let mut img = Raster::zeros(h, w, 1);
        img.set(2, 3, 0, 1.0);
        let out = shift(&img, 1.0 / w as f64, 0.0).unwrap();
        assert_eq!(out.get(2, 4, 0), 1.0);
        assert_eq!(out.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert!((0..h).all(|y| out.get(y, 0, 0) == 0.0));
    }

    #[test]
    fn shift_round_trip_with_margin() {
        // 30x30 image with content only inside a 3-pixel (10%) margin.
        let mut r = rng::from_seed(3);
        let img = Raster::from_fn(30, 30, 1, |y, x, _| {
            if (3..27).contains(&y) && (3..27).contains(&x) {
                r.gen_range(0.0..=1.0)
            } else {
                0.0
            }
        });
        let moved = shift(&img, 0.1, -0.1).unwrap();
        assert_ne!(moved, img);
        assert_eq!(shift(&moved, -0.1, 0.1).unwrap(), img);
    }

    #[test]
    fn fractional_shift_interpolates() {
        let img = Raster::from_fn(1, 4, 1, |_, x, _| if x == 1 { 1.0 } else { 0.0 });
        let out = shift(&img, 0.125, 0.0).unwrap(); // half a pixel
        assert!((out.get(0, 1, 0) - 0.5).abs() < 1e-6);
        assert!((out.get(0, 2, 0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn zoom_in_keeps_constant() {
        let img = Raster::from_fn(9, 11, 2, |_, _, _| 0.6);
        for f in [1.0, 1.1, 1.37, 1.5] {
            assert!(scale(&img, f).unwrap().data().iter().all(|&v| v == 0.6));
        }
    }

    #[test]
    fn half_scale_geometry() {
        // Output column x samples source column 15.5 + 2 (x - 15.5), which is
        // inside [0, 31] exactly for x in 8..=23.
        let img = Raster::from_fn(32, 32, 1, |_, _, _| 1.0);
        let out = scale(&img, 0.5).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let inside = (8..24).contains(&y) && (8..24).contains(&x);
                assert_eq!(
                    out.get(y, x, 0),
                    if inside { 1.0 } else { 0.0 },
                    "({y},{x})"
                );
            }
        }
    }

    #[test]
    fn rotation_of_radial_image() {
        let n = 33;
        let c = 16.0;
        let img = Raster::from_fn(n, n, 1, |y, x, _| {
            let r2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            (Float::exp(-r2 / 50.0)) as f32
        });
        for deg in [-45.0, -17.0, 5.0, 30.0, 45.0] {
            let out = rotate(&img, deg).unwrap();
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn quarter_turn_matches_transpose_flip() {
        let n = 9;
        // horizontal bar in rows 2..4, columns 1..7
        let img = Raster::from_fn(n, n, 1, |y, x, _| {
            if (2..4).contains(&y) && (1..7).contains(&x) {
                1.0
            } else {
                0.0
            }
        });
        let out = rotate_unchecked(&img, 90.0);
        for y in 0..n {
            for x in 0..n {
                let expect = img.get(x, n - 1 - y, 0);
                assert!((out.get(y, x, 0) - expect).abs() < 1e-5, "({y},{x})");
            }
        }
        // the bar now spans rows and occupies two columns
        let lit: Vec<(usize, usize)> = (0..n)
            .flat_map(|y| (0..n).map(move |x| (y, x)))
            .filter(|&(y, x)| out.get(y, x, 0) > 0.5)
            .collect();
        let cols: std::collections::BTreeSet<_> = lit.iter().map(|p| p.1).collect();
        let rows: std::collections::BTreeSet<_> = lit.iter().map(|p| p.0).collect();
        assert_eq!(cols.len(), 2);
        assert_eq!(rows.len(), 6);
    }

    #[test]
    fn parameter_ranges_enforced() {
        let img = noise(4, 4, 0);
        assert!(shift(&img, 0.6, 0.0).is_err());
        assert!(scale(&img, 0.4).is_err());
        assert!(rotate(&img, 46.0).is_err());
        assert!(AugmentConfig::with_alpha(46.0).validate().is_err());
        assert!(AugmentConfig::with_alpha(-1.0).validate().is_err());
    }

    #[test]
    fn alpha_zero_is_identity_and_draws_nothing() {
        let img = noise(16, 16, 5);
        let mut r = rng::from_seed(1);
        let out = random_augment(&img, &AugmentConfig::with_alpha(0.0), &mut r).unwrap();
        assert_eq!(out, img);
        assert_eq!(
            draw_params(&AugmentConfig::with_alpha(0.0), &mut r),
            AugmentParams::default()
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let img = noise(16, 16, 5);
        let cfg = AugmentConfig::with_alpha(10.0);
        let a = random_augment(&img, &cfg, &mut rng::from_seed(77)).unwrap();
        let b = random_augment(&img, &cfg, &mut rng::from_seed(77)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn drawn_parameters_uniform() {
        // χ² over 10 equal bins on [-15, 15]; critical value of χ²(9) at
        // p = 0.01 is 21.666.
        let cfg = AugmentConfig::with_alpha(15.0);
        let mut r = rng::from_seed(2024);
        let draws = 1000;
        let mut bins = [[0usize; 10]; 3];
        for _ in 0..draws {
            let p = draw_params(&cfg, &mut r);
            let (dx, _) = p.shift.unwrap();
            let values = [
                dx * 100.0,
                (p.scale.unwrap() - 1.0) * 100.0,
                p.degrees.unwrap(),
            ];
            for (k, v) in values.into_iter().enumerate() {
                assert!((-15.0..=15.0).contains(&v));
                let b = (((v + 15.0) / 3.0) as usize).min(9);
                bins[k][b] += 1;
            }
        }
        let expected = draws as f64 / 10.0;
        for hist in bins {
            let chi2: f64 = hist
                .iter()
                .map(|&o| (o as f64 - expected).powi(2) / expected)
                .sum();
            assert!(chi2 < 21.666, "chi2 = {chi2}, {hist:?}");
        }
    }

    proptest::proptest! {
        #[test]
        fn outputs_stay_in_range(seed in 0u64..500, alpha in 0.0f64..45.0) {
            let img = noise(10, 14, seed);
            let out = random_augment(&img, &AugmentConfig::with_alpha(alpha), &mut rng::from_seed(seed)).unwrap();
            proptest::prop_assert_eq!(out.shape(), img.shape());
            proptest::prop_assert!(out.in_unit_range());
        }
    }
}

#![allow(dead_code)]

use rand::Rng as _;
use siamese_core::data::{Dataset, Sample, Split};
use siamese_core::rng;
use siamese_core::{ClassId, Raster};

/// Bright centred blob (class 0) or thin dark-on-grey ring (class 1), with noise.
pub fn shape_image(class: ClassId, size: usize, seed: u64) -> Raster {
    let mut r = rng::from_seed(seed);
    let c = (size as f32 - 1.0) / 2.0 + r.gen_range(-1.0..1.0);
    let rad = size as f32 * r.gen_range(0.22..0.3);
    Raster::from_fn(size, size, 1, |y, x, _| {
        let d = ((y as f32 - c).powi(2) + (x as f32 - c).powi(2)).sqrt();
        let base = if class == 0 {
            if d < rad {
                0.9
            } else {
                0.1
            }
        } else if (d - rad).abs() < 1.2 {
            0.05
        } else {
            0.5
        };
        (base + r.gen_range(-0.05f32..0.05)).clamp(0.0, 1.0)
    })
}

pub fn shapes(name: &str, counts: &[(ClassId, usize)], size: usize, seed: u64) -> Dataset {
    let mut samples = Vec::new();
    for &(class, n) in counts {
        for i in 0..n {
            samples.push(Sample {
                id: format!("{class}-{i}"),
                image: shape_image(
                    class,
                    size,
                    rng::derive_seed(seed, (u64::from(class) << 32) | i as u64),
                ),
                label: class,
                source: name.to_string(),
                split: Split::Train,
            });
        }
    }
    Dataset::new(name, samples).unwrap()
}

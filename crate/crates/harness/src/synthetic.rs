//! Two-class synthetic corpus: a Gaussian bright blob (class 0) versus a
//! dark ring on a grey background (class 1), both with additive noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use siamese_core::data::{Dataset, Sample, Split};
use siamese_core::rng;
use siamese_core::{ClassId, Raster};

use crate::manifest::{write_manifest, write_png};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            size: 32,
            train_per_class: 300,
            test_per_class: 100,
            noise: 0.08,
            seed: 0,
        }
    }
}

pub fn blob_or_ring(class: ClassId, size: usize, noise: f64, seed: u64) -> Raster {
    let mut r = rng::from_seed(seed);
    let n = size as f64;
    let (cy, cx) = (
        n / 2.0 + r.gen_range(-0.1..0.1) * n,
        n / 2.0 + r.gen_range(-0.1..0.1) * n,
    );
    let radius = n * r.gen_range(0.18..0.28);
    let width = n * r.gen_range(0.04..0.07);
    let gauss = Normal::new(0.0, noise).expect("noise is finite and non-negative");
    Raster::from_fn(size, size, 1, |y, x, _| {
        let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
        let v = if class == 0 {
            0.1 + 0.8 * (-(d * d) / (2.0 * (radius * 0.6).powi(2))).exp()
        } else {
            0.6 - 0.5 * (-((d - radius) / width).powi(2) / 2.0).exp()
        };
        (v + gauss.sample(&mut r)).clamp(0.0, 1.0) as f32
    })
}

fn sample_id(split: Split, class: ClassId, i: usize) -> String {
    let s = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    format!("{s}/c{class}_{i:04}.png")
}

fn items(spec: &SynthSpec) -> Vec<(Split, ClassId, usize)> {
    let mut out = Vec::new();
    for (split, n) in [
        (Split::Train, spec.train_per_class),
        (Split::Test, spec.test_per_class),
    ] {
        for class in [0, 1] {
            out.extend((0..n).map(|i| (split, class, i)));
        }
    }
    out
}

fn image_seed(spec: &SynthSpec, split: Split, class: ClassId, i: usize) -> u64 {
    rng::derive_path(
        spec.seed,
        &[u64::from(split == Split::Test), u64::from(class), i as u64],
    )
}

/// The corpus in memory; ids match the paths [`write_corpus`] would use.
pub fn generate(name: &str, spec: &SynthSpec) -> Dataset {
    let samples = items(spec)
        .into_iter()
        .map(|(split, class, i)| Sample {
            id: sample_id(split, class, i),
            image: blob_or_ring(
                class,
                spec.size,
                spec.noise,
                image_seed(spec, split, class, i),
            ),
            label: class,
            source: name.to_string(),
            split,
        })
        .collect();
    Dataset::new(name, samples).expect("synthetic corpus is non-empty")
}

/// Writes the corpus as PNGs under `dir` and returns the manifest path.
pub fn write_corpus(dir: &Path, spec: &SynthSpec) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir.join("train"))?;
    fs::create_dir_all(dir.join("test"))?;
    let mut rows = Vec::new();
    for (split, class, i) in items(spec) {
        let id = sample_id(split, class, i);
        let img = blob_or_ring(
            class,
            spec.size,
            spec.noise,
            image_seed(spec, split, class, i),
        );
        write_png(&img, &dir.join(&id))?;
        rows.push((id, class, split));
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

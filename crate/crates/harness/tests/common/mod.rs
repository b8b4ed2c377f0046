#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use siamese_core::model::ConvBlock;
use siamese_core::{BackboneConfig, Dataset};
use siamese_harness::synthetic::{generate, SynthSpec};
use siamese_harness::{ExperimentConfig, TrainSettings};

pub fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        input_shape: (16, 16, 1),
        conv_blocks: vec![ConvBlock::new(4, 3, 1, 2), ConvBlock::new(8, 3, 1, 2)],
        embedding_dim: 16,
        ..BackboneConfig::default()
    }
}

pub fn tiny_corpus(name: &str, seed: u64) -> Dataset {
    generate(
        name,
        &SynthSpec {
            size: 16,
            train_per_class: 120,
            test_per_class: 30,
            seed,
            ..SynthSpec::default()
        },
    )
}

/// An in-memory config over `names` (manifest paths are placeholders).
pub fn tiny_config(names: &[&str], grid: &[(&str, &str)]) -> ExperimentConfig {
    let datasets: BTreeMap<String, PathBuf> = names
        .iter()
        .map(|n| (n.to_string(), PathBuf::from(format!("{n}.csv"))))
        .collect();
    let mut cfg = ExperimentConfig::new(
        datasets,
        grid.iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
    );
    cfg.backbone = tiny_backbone();
    cfg.folds = 2;
    cfg.train = TrainSettings {
        epochs: 2,
        batch_size: 16,
        learning_rate: 0.05,
        ..TrainSettings::default()
    };
    cfg
}

pub fn corpora(names: &[&str]) -> BTreeMap<String, Dataset> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.to_string(), tiny_corpus(n, i as u64 + 1)))
        .collect()
}

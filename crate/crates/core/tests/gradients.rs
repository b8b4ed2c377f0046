mod common;

use rand::Rng as _;
use siamese_core::model::{
    batch_loss, loss_gradient, BackboneConfig, ConvBlock, PairExample, Parameters,
};
use siamese_core::{rng, Raster};

fn random_net(seed: u64) -> (BackboneConfig, Parameters<f64>) {
    let mut r = rng::from_seed(seed);
    let size = r.gen_range(5..9);
    let channels = r.gen_range(1..3);
    let blocks = r.gen_range(1..3);
    let conv_blocks = (0..blocks)
        .map(|_| {
            ConvBlock::new(
                r.gen_range(2..5),
                [1, 3][r.gen_range(0..2)],
                1,
                r.gen_range(1..3),
            )
        })
        .collect();
    let cfg = BackboneConfig {
        input_shape: (size, size, channels),
        conv_blocks,
        embedding_dim: r.gen_range(3..9),
        normalize: r.gen_bool(0.75),
        bias: true,
    };
    let mut params = Parameters::<f32>::scratch(&cfg, seed)
        .unwrap()
        .cast::<f64>();
    // non-zero biases so their gradients are exercised too
    for t in params
        .tensors
        .iter_mut()
        .filter(|t| t.name.ends_with("bias"))
    {
        for v in &mut t.data {
            *v = r.gen_range(-0.1..0.1);
        }
    }
    (cfg, params)
}

fn random_image(cfg: &BackboneConfig, r: &mut rng::Rng) -> Raster {
    let (h, w, c) = cfg.input_shape;
    Raster::from_fn(h, w, c, |_, _, _| r.gen_range(0.0..1.0))
}

/// Worst per-net relative error `|g - fd| / max(|g|, |fd|, 1e-6)` over all
/// coordinates, skipping coordinates where a ReLU/max-pool kink is crossed.
fn check(seed: u64, weighted: bool) -> f64 {
    let (cfg, mut params) = random_net(seed);
    assert!(params.parameter_count() <= 5000);
    let mut r = rng::from_seed(seed ^ 0xF00D);
    let images: Vec<Raster> = (0..8).map(|_| random_image(&cfg, &mut r)).collect();
    let batch: Vec<PairExample<'_>> = (0..4)
        .map(|i| PairExample {
            a: &images[2 * i],
            b: &images[2 * i + 1],
            y: (i % 2) as u8,
            weight: if weighted { r.gen_range(0.2..3.0) } else { 1.0 },
        })
        .collect();
    let margin = 2.0;
    let (_, grads) = loss_gradient(&params, &batch, margin).unwrap();
    let h = 1e-4;
    let (mut worst, mut skipped, mut total) = (0.0f64, 0usize, 0usize);
    for t in 0..params.tensors.len() {
        for i in 0..params.tensors[t].data.len() {
            let orig = params.tensors[t].data[i];
            params.tensors[t].data[i] = orig + h;
            let up = batch_loss(&params, &batch, margin).unwrap();
            params.tensors[t].data[i] = orig + h / 2.0;
            let up_half = batch_loss(&params, &batch, margin).unwrap();
            params.tensors[t].data[i] = orig - h;
            let down = batch_loss(&params, &batch, margin).unwrap();
            params.tensors[t].data[i] = orig - h / 2.0;
            let down_half = batch_loss(&params, &batch, margin).unwrap();
            params.tensors[t].data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let fd_half = (up_half - down_half) / h;
            total += 1;
            // the two step sizes disagree only when a kink lies inside the stencil
            if (fd - fd_half).abs() > 1e-6 * fd.abs().max(1e-3) {
                skipped += 1;
                continue;
            }
            let g = grads.0[t][i];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-6));
        }
    }
    assert!(
        skipped * 20 <= total,
        "net {seed}: skipped {skipped} of {total}"
    );
    worst
}

#[test]
fn plain_loss_gradients_match_finite_differences() {
    for seed in 0..20 {
        let err = check(seed, false);
        assert!(err < 1e-4, "net {seed}: relative error {err}");
    }
}

#[test]
fn weighted_loss_gradients_match_finite_differences() {
    for seed in 100..120 {
        let err = check(seed, true);
        assert!(err < 1e-4, "net {seed}: relative error {err}");
    }
}

#[test]
fn swapping_pair_members_leaves_loss_and_gradient_unchanged() {
    let (cfg, params) = random_net(7);
    let mut r = rng::from_seed(1);
    let (a, b) = (random_image(&cfg, &mut r), random_image(&cfg, &mut r));
    for y in [0, 1] {
        let ab = [PairExample {
            a: &a,
            b: &b,
            y,
            weight: 1.3,
        }];
        let ba = [PairExample {
            a: &b,
            b: &a,
            y,
            weight: 1.3,
        }];
        let (l1, g1) = loss_gradient(&params, &ab, 2.0).unwrap();
        let (l2, g2) = loss_gradient(&params, &ba, 2.0).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (x, y) in g1.flat().zip(g2.flat()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_loss_batch_has_zero_gradient() {
    let (cfg, params) = random_net(3);
    let mut r = rng::from_seed(2);
    let a = random_image(&cfg, &mut r);
    // identical same-class pair: D = 0
    let batch = [PairExample {
        a: &a,
        b: &a,
        y: 0,
        weight: 1.0,
    }];
    let (loss, grads) = loss_gradient(&params, &batch, 1.0).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(grads.max_abs(), 0.0);
    // different-class pair beyond the margin
    let b = random_image(&cfg, &mut r);
    let d =
        siamese_core::model::distance(&params.forward(&a).unwrap(), &params.forward(&b).unwrap())
            .unwrap();
    let batch = [PairExample {
        a: &a,
        b: &b,
        y: 1,
        weight: 1.0,
    }];
    let (loss, grads) = loss_gradient(&params, &batch, d * 0.5).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(grads.max_abs(), 0.0);
}

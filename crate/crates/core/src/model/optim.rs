use alloc::vec::Vec;

use super::params::{Gradients, Parameters, Scalar};

/// SGD with Nesterov momentum and inverse-time learning-rate decay
/// `lr_t = lr / (1 + decay · t)`, `t` counting completed updates.
///
/// Update (velocity form): `v ← μ v − lr_t g`, `θ ← θ + μ v − lr_t g`.
#[derive(Debug, Clone)]
pub struct Sgd<F> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    steps: u64,
    velocity: Vec<Vec<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(learning_rate: f64, momentum: f64, decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            decay,
            steps: 0,
            velocity: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn current_learning_rate(&self) -> f64 {
        self.learning_rate / (1.0 + self.decay * self.steps as f64)
    }

    /// Updates raw buffers in place; `params` and `grads` must align.
    pub fn step_buffers(&mut self, params: &mut [&mut [F]], grads: &[&[F]]) {
        if self.velocity.is_empty() {
            self.velocity = grads
                .iter()
                .map(|g| alloc::vec![F::zero(); g.len()])
                .collect();
        }
        let lr = F::from_f64(self.current_learning_rate());
        let mu = F::from_f64(self.momentum);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vv = mu * *vv - lr * gv;
                *pv = *pv + mu * *vv - lr * gv;
            }
        }
        self.steps += 1;
    }

    pub fn step(&mut self, params: &mut Parameters<F>, grads: &Gradients<F>) {
        let mut bufs: Vec<&mut [F]> = params
            .tensors
            .iter_mut()
            .map(|t| t.data.as_mut_slice())
            .collect();
        let g: Vec<&[F]> = grads.0.iter().map(Vec::as_slice).collect();
        self.step_buffers(&mut bufs, &g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn run(x0: f64, lr: f64, mu: f64, decay: f64, steps: usize, grad: impl Fn(f64) -> f64) -> f64 {
        let mut opt = Sgd::<f64>::new(lr, mu, decay);
        let mut x = vec![x0];
        for _ in 0..steps {
            let g = [grad(x[0])];
            opt.step_buffers(&mut [x.as_mut_slice()], &[&g]);
        }
        x[0]
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        assert_eq!(run(0.7, 0.1, 0.9, 0.0, 10, |_| 0.0), 0.7);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut opt = Sgd::<f64>::new(0.1, 0.0, 0.0);
        let mut p = vec![1.0, -2.0];
        opt.step_buffers(&mut [p.as_mut_slice()], &[&[0.5, 1.0]]);
        assert_eq!(p, vec![1.0 - 0.1 * 0.5, -2.0 - 0.1 * 1.0]);
    }

    #[test]
    fn quadratic_converges_like_scalar_oracle() {
        // independent scalar simulation of the same recursion
        let (mut x, mut v) = (1.0f64, 0.0f64);
        for _ in 0..100 {
            let g = 2.0 * x;
            v = 0.9 * v - 0.1 * g;
            x += 0.9 * v - 0.1 * g;
        }
        let got = run(1.0, 0.1, 0.9, 0.0, 100, |x| 2.0 * x);
        assert!((got - x).abs() <= 1e-12 * x.abs());
        assert!(got.abs() < 1e-3);
    }

    #[test]
    fn decay_schedule() {
        let mut opt = Sgd::<f64>::new(1e-2, 0.9, 1e-6);
        assert_eq!(opt.current_learning_rate(), 1e-2);
        let mut p = vec![0.0];
        for _ in 0..1000 {
            opt.step_buffers(&mut [p.as_mut_slice()], &[&[0.0]]);
        }
        assert_eq!(opt.steps(), 1000);
        assert!((opt.current_learning_rate() - 1e-2 / 1.001).abs() < 1e-15);
    }
}

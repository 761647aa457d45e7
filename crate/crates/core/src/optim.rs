//! Adaptive moment estimation with decoupled weight decay.
//!
//! One [`AdamState`] tracks first/second moments for a flat parameter
//! tensor. Decay is decoupled: it scales the parameter directly instead of
//! being folded into the gradient, so adaptive scaling never touches it.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            weight_decay: 0.0,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One descent step on `params` along `grads`.
    ///
    /// A parameter whose gradient has been identically zero since
    /// initialization never moves: its moments stay zero and decoupled decay
    /// is skipped for exact zeros, which is what keeps frozen belief entries
    /// pinned.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &AdamConfig) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - crate::math::powf(cfg.beta1, self.t as f64);
        let bc2 = 1.0 - crate::math::powf(cfg.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            if *m == 0.0 && *v == 0.0 {
                continue;
            }
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            params[i] -= cfg.lr * (m_hat / (sqrt(v_hat) + cfg.eps) + cfg.weight_decay * params[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        // f(x) = (x - 3)^2, grad = 2(x - 3).
        let mut x = vec![0.0f64];
        let mut opt = AdamState::new(1);
        let cfg = AdamConfig::with_lr(0.05);
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] - 3.0)];
            opt.step(&mut x, &g, &cfg);
        }
        assert!((x[0] - 3.0).abs() < 1e-3, "x = {}", x[0]);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // With bias correction, |step 1| ~ lr * g/(g + eps) for any scale.
        for &g in &[1e-6, 1.0, 1e6] {
            let mut x = vec![0.0f64];
            let mut opt = AdamState::new(1);
            opt.step(&mut x, &[g], &AdamConfig::with_lr(0.01));
            assert!((x[0].abs() - 0.01).abs() < 2e-4, "g={g} -> x={}", x[0]);
        }
    }

    #[test]
    fn zero_gradient_history_leaves_parameter_pinned() {
        let mut x = vec![7.5f64];
        let mut opt = AdamState::new(1);
        let mut cfg = AdamConfig::with_lr(0.1);
        cfg.weight_decay = 0.01;
        for _ in 0..100 {
            opt.step(&mut x, &[0.0], &cfg);
        }
        assert_eq!(x[0], 7.5);
    }

    #[test]
    fn decoupled_decay_shrinks_stationary_parameters() {
        // Once gradients have been seen, decay applies even at grad 0.
        let mut x = vec![1.0f64];
        let mut opt = AdamState::new(1);
        let mut cfg = AdamConfig::with_lr(0.1);
        cfg.weight_decay = 0.1;
        opt.step(&mut x, &[1.0], &cfg);
        let after_grad = x[0];
        for _ in 0..200 {
            opt.step(&mut x, &[0.0], &cfg);
        }
        assert!(x[0].abs() < after_grad.abs());
    }
}

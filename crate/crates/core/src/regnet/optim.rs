//! Adam and a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use crate::real::Real;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().map(|t| vec![T::zero(); t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected step. Fails without touching anything if a gradient is not finite.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("optimizer gradient".into()));
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step = T::of(lr / c1);
        let c2s = T::of(c2.sqrt());
        let eps = T::of(self.eps);
        let one = T::one();
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() / c2s + eps);
            }
        }
        Ok(())
    }
}

/// Halve-on-plateau schedule driven by validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    /// `baseline` is the validation loss before the first epoch.
    pub fn new(lr: f64, factor: f64, patience: usize, min_delta: f64, min_lr: f64, baseline: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_delta,
            min_lr,
            best: baseline,
            wait: 0,
        }
    }

    /// Record one epoch's validation loss and return the learning rate for the next one.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regnet::model::ModelConfig;

    fn scalar_params(v: f64) -> ModelParams<f64> {
        let cfg = ModelConfig {
            enc_features: vec![1],
            dec_features: vec![1],
            kernel_size: 1,
            leaky_slope: 0.2,
            patch_size: 2,
        };
        let mut p = ModelParams::zeros(&cfg).unwrap();
        p.convs[0].kernel[0] = v;
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_params(1.0);
        let mut g = p.zeros_like();
        g.convs[0].kernel[0] = 3.7;
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 1e-3).unwrap();
        assert!((p.convs[0].kernel[0] - (1.0 - 1e-3)).abs() < 1e-9);
        // untouched components stay put
        assert_eq!(p.convs[0].kernel[1], 0.0);
    }

    #[test]
    fn two_steps_follow_hand_recursion() {
        let mut p = scalar_params(0.5);
        let mut g = p.zeros_like();
        g.convs[0].kernel[0] = 2.0;
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 0.1).unwrap();
        adam.step(&mut p, &g, 0.1).unwrap();
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * 2.0;
            v = 0.999 * v + 0.001 * 4.0;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.convs[0].kernel[0] - w).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_is_a_no_op_and_nan_fails() {
        let mut p = scalar_params(0.25);
        let before = p.clone();
        let g = p.zeros_like();
        let mut adam = Adam::new(&p);
        for _ in 0..5 {
            adam.step(&mut p, &g, 0.01).unwrap();
        }
        assert_eq!(p, before);
        let mut bad = g.clone();
        bad.convs[0].bias[0] = f64::NAN;
        assert!(adam.step(&mut p, &bad, 0.01).is_err());
    }

    #[test]
    fn never_improving_sequence_reduces_every_patience_epochs() {
        let epochs = 35;
        let mut s = PlateauScheduler::new(1e-3, 0.5, 10, 1e-4, 1e-5, 1.0);
        let mut reductions = 0;
        let mut lr = s.lr;
        for _ in 0..epochs {
            let next = s.step(1.0);
            if next < lr {
                reductions += 1;
            }
            lr = next;
        }
        assert_eq!(reductions, epochs / 10);
        let mut floor = PlateauScheduler::new(1e-3, 0.5, 1, 1e-4, 1e-5, 1.0);
        for _ in 0..50 {
            floor.step(2.0);
        }
        assert_eq!(floor.lr, 1e-5);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = PlateauScheduler::new(1e-3, 0.5, 2, 1e-4, 1e-5, 1.0);
        s.step(1.0);
        s.step(0.9);
        s.step(0.9);
        assert_eq!(s.lr, 1e-3);
        s.step(0.9);
        assert_eq!(s.lr, 5e-4);
    }
}

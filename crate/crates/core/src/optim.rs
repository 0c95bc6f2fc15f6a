//! First-order optimizers over flat parameter slots.
//!
//! A model exposes its parameters as an ordered list of slices ("slots");
//! gradients come in the same order. Optimizers keep per-slot state sized
//! lazily on first use.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    #[default]
    #[serde(alias = "sgd")]
    Gd,
    RmsProp,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gd" | "sgd" => Ok(Self::Gd),
            "rmsprop" => Ok(Self::RmsProp),
            other => Err(format!("unknown optimizer `{other}` (expected gd or rmsprop)")),
        }
    }
}

pub trait Optimizer {
    fn step(&mut self, slot: usize, params: &mut [f64], grads: &[f64]);
}

pub struct GradientDescent {
    pub learning_rate: f64,
}

impl Optimizer for GradientDescent {
    fn step(&mut self, _slot: usize, params: &mut [f64], grads: &[f64]) {
        for (p, g) in params.iter_mut().zip(grads) {
            *p -= self.learning_rate * g;
        }
    }
}

/// RMSProp: `cache = ρ·cache + (1-ρ)·g²`, `p -= lr·g / (√cache + ε)`.
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    cache: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            decay: 0.9,
            epsilon: 1e-8,
            cache: Vec::new(),
        }
    }
}

impl Optimizer for RmsProp {
    fn step(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) {
        if self.cache.len() <= slot {
            self.cache.resize_with(slot + 1, Vec::new);
        }
        let cache = &mut self.cache[slot];
        if cache.len() != params.len() {
            *cache = vec![0.0; params.len()];
        }
        for ((p, g), c) in params.iter_mut().zip(grads).zip(cache.iter_mut()) {
            *c = self.decay * *c + (1.0 - self.decay) * g * g;
            *p -= self.learning_rate * g / (c.sqrt() + self.epsilon);
        }
    }
}

pub fn build(kind: OptimizerKind, learning_rate: f64) -> Box<dyn Optimizer + Send> {
    match kind {
        OptimizerKind::Gd => Box::new(GradientDescent { learning_rate }),
        OptimizerKind::RmsProp => Box::new(RmsProp::new(learning_rate)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmsprop_first_step_is_scaled_sign() {
        let mut opt = RmsProp::new(0.01);
        let mut p = vec![1.0, 1.0];
        opt.step(0, &mut p, &[4.0, -0.5]);
        // cache = 0.1 g², step = lr·g/(|g|·√0.1)
        let expected = 0.01 / 0.1f64.sqrt();
        assert!((1.0 - p[0] - expected).abs() < 1e-6);
        assert!((p[1] - 1.0 - expected).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_minimizes_quadratic() {
        let mut opt = RmsProp::new(0.05);
        let mut p = vec![3.0, -2.0];
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(0, &mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 0.1), "{p:?}");
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let mut p = vec![0.5];
        build(OptimizerKind::Gd, 0.0).step(0, &mut p, &[3.0]);
        build(OptimizerKind::RmsProp, 0.0).step(0, &mut p, &[3.0]);
        assert_eq!(p, vec![0.5]);
    }
}

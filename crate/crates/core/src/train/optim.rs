use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::network::Grads;
use crate::model::params::ModelParams;
use crate::nn::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction. Only names returned by
/// [`ModelParams::trainable`] are ever updated.
pub struct Adam<S> {
    cfg: AdamConfig,
    step: i32,
    first: BTreeMap<String, Vec<S>>,
    second: BTreeMap<String, Vec<S>>,
}

impl<S: Real> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<S>, grads: &Grads<S>) {
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = S::of(self.cfg.learning_rate);
        let eps = S::of(self.cfg.epsilon);
        let (b1s, b2s) = (S::of(b1), S::of(b2));
        let (c1s, c2s) = (S::of(c1), S::of(c2));
        for name in params.trainable() {
            let Some(g) = grads.get(&name) else { continue };
            let w = params.get_mut(&name);
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![S::zero(); w.len()]);
            let v = self
                .second
                .entry(name)
                .or_insert_with(|| vec![S::zero(); w.len()]);
            for i in 0..w.len() {
                m[i] = b1s * m[i] + (S::one() - b1s) * g[i];
                v[i] = b2s * v[i] + (S::one() - b2s) * g[i] * g[i];
                let mhat = m[i] / c1s;
                let vhat = v[i] / c2s;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::model::params::init_params;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p: ModelParams<f64> = init_params(&ModelConfig::desk(2, 64, 2), 0).unwrap();
        let before = p.get("classifier.fc2.bias").to_vec();
        let mut grads = Grads::new();
        grads.insert("classifier.fc2.bias".to_string(), vec![0.5, -2.0]);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut p, &grads);
        let after = p.get("classifier.fc2.bias");
        assert!((after[0] - (before[0] - 1e-3)).abs() < 1e-9);
        assert!((after[1] - (before[1] + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn frozen_and_buffers_untouched() {
        let mut p: ModelParams<f64> = init_params(&ModelConfig::desk(2, 64, 2), 0).unwrap();
        p.freeze_extractor();
        let snapshot = p.clone();
        let grads: Grads<f64> = p
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), vec![1.0; t.data.len()]))
            .collect();
        Adam::new(AdamConfig::default()).step(&mut p, &grads);
        for (n, t) in &p.tensors {
            let same = *t == snapshot.tensors[n];
            assert_eq!(same, n.starts_with("extractor."), "{n}");
        }
    }
}

//! L2-regularized logistic regression trained by full-batch gradient descent.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TrainError {
    #[error("training set needs at least one example of each class")]
    SingleClass,
    #[error("example {0} has {1} features, expected {2}")]
    Dimension(usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 400, learning_rate: 1.0, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainConfig,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LinearModel {
    pub fn zeros(dim: usize, meta: TrainConfig) -> Self {
        Self { weights: vec![0.0; dim], bias: 0.0, meta }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).fold(self.bias, |acc, (w, v)| acc + w * v)
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Mean log loss plus `l2 / 2 * |w|^2` (bias unpenalized).
    pub fn loss(&self, data: &[(Vec<f64>, bool)]) -> f64 {
        let n = data.len() as f64;
        let ll: f64 = data
            .iter()
            .map(|(x, y)| {
                let z = self.logit(x);
                if *y {
                    softplus(-z)
                } else {
                    softplus(z)
                }
            })
            .sum();
        ll / n + 0.5 * self.meta.l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Analytic gradient of [`loss`](Self::loss): (dL/dw, dL/db).
    pub fn gradient(&self, data: &[(Vec<f64>, bool)]) -> (Vec<f64>, f64) {
        let n = data.len() as f64;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = 0.0;
        for (x, y) in data {
            let r = self.predict_proba(x) - if *y { 1.0 } else { 0.0 };
            for (g, v) in gw.iter_mut().zip(x) {
                *g += r * v;
            }
            gb += r;
        }
        for (g, w) in gw.iter_mut().zip(&self.weights) {
            *g = *g / n + self.meta.l2 * w;
        }
        (gw, gb / n)
    }
}

/// Trains from zero weights for a fixed number of epochs.
pub fn train_linear(data: &[(Vec<f64>, bool)], cfg: &TrainConfig) -> Result<LinearModel, TrainError> {
    if !(data.iter().any(|(_, y)| *y) && data.iter().any(|(_, y)| !*y)) {
        return Err(TrainError::SingleClass);
    }
    let dim = data[0].0.len();
    if let Some((i, (x, _))) = data.iter().enumerate().find(|(_, (x, _))| x.len() != dim) {
        return Err(TrainError::Dimension(i, x.len(), dim));
    }
    let mut model = LinearModel::zeros(dim, *cfg);
    for _ in 0..cfg.epochs {
        let (gw, gb) = model.gradient(data);
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * g;
        }
        model.bias -= cfg.learning_rate * gb;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize, dim: usize) -> Vec<(Vec<f64>, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<(Vec<f64>, bool)> = (0..n)
            .map(|_| ((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), rng.random_bool(0.4)))
            .collect();
        data[0].1 = true;
        data[1].1 = false;
        data
    }

    /// Central finite differences of the loss.
    fn numeric_gradient(m: &LinearModel, data: &[(Vec<f64>, bool)], h: f64) -> (Vec<f64>, f64) {
        let mut gw = Vec::new();
        for k in 0..m.weights.len() {
            let (mut up, mut down) = (m.clone(), m.clone());
            up.weights[k] += h;
            down.weights[k] -= h;
            gw.push((up.loss(data) - down.loss(data)) / (2.0 * h));
        }
        let (mut up, mut down) = (m.clone(), m.clone());
        up.bias += h;
        down.bias -= h;
        (gw, (up.loss(data) - down.loss(data)) / (2.0 * h))
    }

    fn max_grad_error(seed: u64) -> f64 {
        let data = random_set(seed, 20, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let m = LinearModel {
            weights: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: rng.random_range(-1.0..1.0),
            meta: TrainConfig { l2: 0.05, ..Default::default() },
        };
        let (aw, ab) = m.gradient(&data);
        let (nw, nb) = numeric_gradient(&m, &data, 1e-5);
        aw.iter().zip(&nw).map(|(a, n)| (a - n).abs()).fold((ab - nb).abs(), f64::max)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let err = max_grad_error(seed);
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn separable_pair_is_fit() {
        let data = vec![(vec![1.0], true), (vec![-1.0], false)];
        let m = train_linear(&data, &TrainConfig { epochs: 200, learning_rate: 1.0, l2: 0.0 }).unwrap();
        assert!(m.predict_proba(&[1.0]) > 0.5 && m.predict_proba(&[-1.0]) < 0.5);
    }

    #[test]
    fn duplicated_data_gives_same_model() {
        let data = random_set(3, 30, 4);
        let doubled: Vec<_> = data.iter().chain(&data).cloned().collect();
        let cfg = TrainConfig::default();
        let (a, b) = (train_linear(&data, &cfg).unwrap(), train_linear(&doubled, &cfg).unwrap());
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!((a.bias - b.bias).abs() < 1e-10);
    }

    #[test]
    fn deterministic_and_loss_non_increasing() {
        let data = random_set(5, 50, 3);
        let cfg = TrainConfig { epochs: 1, learning_rate: 0.1, l2: 0.01 };
        let mut prev = LinearModel::zeros(3, cfg).loss(&data);
        let mut m = LinearModel::zeros(3, cfg);
        for _ in 0..100 {
            let (gw, gb) = m.gradient(&data);
            m.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= 0.1 * g);
            m.bias -= 0.1 * gb;
            let l = m.loss(&data);
            assert!(l <= prev + 1e-15);
            prev = l;
        }
        let full = TrainConfig::default();
        assert_eq!(train_linear(&data, &full).unwrap(), train_linear(&data, &full).unwrap());
    }

    #[test]
    fn single_class_rejected() {
        let data = vec![(vec![1.0], true), (vec![2.0], true)];
        assert_eq!(train_linear(&data, &TrainConfig::default()), Err(TrainError::SingleClass));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn gradient_check_random(seed in any::<u64>()) {
            prop_assert!(max_grad_error(seed) < 1e-6);
        }
    }
}

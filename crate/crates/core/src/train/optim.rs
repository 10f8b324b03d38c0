use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nn::Params;

/// Softmax cross-entropy for one example.
///
/// Returns `-w * ln(max(p_y, 1e-12))` and the logit gradient `w * (p - onehot(y))`.
pub fn cross_entropy(probs: &[f64], label: usize, weight: f64) -> Result<(f64, Vec<f64>), TrainError> {
    if label >= probs.len() {
        return Err(TrainError::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    let loss = -weight * probs[label].max(1e-12).ln();
    let grad = probs
        .iter()
        .enumerate()
        .map(|(c, &p)| weight * (p - if c == label { 1.0 } else { 0.0 }))
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
    pub lr: f64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(like: &Params, lr: f64, config: AdamConfig) -> Self {
        let mut m = like.clone();
        m.zero_();
        OptimizerState {
            v: m.clone(),
            m,
            step: 0,
            lr,
            config,
        }
    }
}

/// One bias-corrected Adam update on a flat buffer.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Apply one Adam step to every parameter. Nothing is updated if any
/// gradient is non-finite.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut OptimizerState) -> Result<(), TrainError> {
    if let Some((name, _)) = grads.named().into_iter().find(|(_, t)| !t.is_finite()) {
        return Err(TrainError::NonFiniteGradient { tensor: name });
    }
    state.step += 1;
    let (step, lr, cfg) = (state.step, state.lr, state.config);
    let grads = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), step, lr, &cfg);
    }
    Ok(())
}

/// Reduce-on-plateau learning rate schedule driven by a metric to maximise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        PlateauScheduler {
            lr,
            factor: 0.5,
            patience: 5,
            threshold: 1e-6,
            min_lr: 0.0,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Record one epoch's metric and return the learning rate to use next.
    pub fn step(&mut self, metric: f64) -> f64 {
        let improved = match self.best {
            None => true,
            Some(best) => metric > best + self.threshold,
        };
        if improved {
            self.best = Some(metric);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn cross_entropy_values() {
        let (loss, g) = cross_entropy(&[0.0, 1.0], 1, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        let uniform = vec![1.0 / 78.0; 78];
        let (loss, _) = cross_entropy(&uniform, 5, 1.0).unwrap();
        assert!((loss - 78f64.ln()).abs() < 1e-12);
        assert!((loss - 4.3567).abs() < 1e-4);
        let p = [0.2, 0.5, 0.3];
        let (l1, g1) = cross_entropy(&p, 2, 1.0).unwrap();
        let (l2, g2) = cross_entropy(&p, 2, 2.0).unwrap();
        assert_eq!(l2, 2.0 * l1);
        assert!(g1.iter().zip(&g2).all(|(a, b)| *b == 2.0 * a));
        assert_eq!(g1, vec![0.2, 0.5, 0.3 - 1.0]);
        assert!(cross_entropy(&p, 3, 1.0).is_err());
        assert!(cross_entropy(&[0.0, 1.0], 0, 1.0).unwrap().0.is_finite());
    }

    #[test]
    fn adam_first_step() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, 1e-4, &cfg);
        assert!((p[0].abs() - 1e-4 / (1.0 + 1e-8)).abs() < 1e-9);
        let (mut p, mut m, mut v) = ([0.5], [0.0], [0.0]);
        adam_update(&mut p, &[0.0], &mut m, &mut v, 1, 1e-4, &cfg);
        assert_eq!(p[0], 0.5);
    }

    #[test]
    fn scheduler_halves_after_patience() {
        let mut s = PlateauScheduler::new(1e-4);
        let lrs: Vec<f64> = [0.5; 6].iter().map(|&m| s.step(m)).collect();
        assert_eq!(lrs[..5], [1e-4; 5]);
        assert_eq!(lrs[5], 5e-5);

        let mut s = PlateauScheduler::new(1e-4);
        for i in 0..20 {
            assert_eq!(s.step(i as f64 * 0.01), 1e-4);
        }

        let mut s = PlateauScheduler::new(1e-4);
        for m in [0.5, 0.5, 0.5, 0.5, 0.5, 0.6] {
            assert_eq!(s.step(m), 1e-4);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let cfg = crate::nn::ArchitectureConfig {
            vocab_size: 5,
            embedding_dim: 2,
            hidden_size: 2,
            feature_dim: 2,
            dense_widths: vec![],
            num_classes: 2,
            ..Default::default()
        };
        let mut p = Params::zeros(&cfg);
        let mut g = Params::zeros(&cfg);
        g.feature_b = Tensor::from_vec(&[2], vec![f64::NAN, 0.0]).unwrap();
        let mut st = OptimizerState::new(&p, 1e-3, AdamConfig::default());
        let before = p.clone();
        assert!(matches!(adam_step(&mut p, &g, &mut st), Err(TrainError::NonFiniteGradient { .. })));
        assert_eq!(p, before);
        assert_eq!(st.step, 0);
    }
}

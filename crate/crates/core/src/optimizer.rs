//! Adam with L2 weight decay.
//!
//! In the default coupled mode the decay term is folded into the gradient
//! before the moment updates, `g' = g + λθ`, followed by bias-corrected Adam:
//!
//! ```text
//! m ← β1 m + (1-β1) g'      v ← β2 v + (1-β2) g'²
//! θ ← θ - lr · m̂ / (√v̂ + ε)     m̂ = m / (1-β1^t), v̂ = v / (1-β2^t)
//! ```
//!
//! Decoupled mode instead subtracts `lr·λ·θ` after the Adam step.
//!
//! Embedding rows are updated lazily: a row absent from the gradient keeps its
//! parameters and moments untouched in that step, decay included.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, LstmModel, ParamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    #[default]
    Coupled,
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
    /// Skip decay on gate and head biases.
    pub exempt_biases: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            decay_mode: DecayMode::Coupled,
            exempt_biases: false,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Adam hyperparameters: {self:?}")))
        }
    }
}

/// First and second moments for every trainable tensor plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub embedding_first: Option<Array2<f64>>,
    pub embedding_second: Option<Array2<f64>>,
}

#[derive(Clone, Copy)]
struct Update {
    lr: f64,
    beta1: f64,
    beta2: f64,
    correction1: f64,
    correction2: f64,
    epsilon: f64,
    decay: f64,
    mode: DecayMode,
}

impl Update {
    #[inline]
    fn apply(&self, theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]) {
        let coupled = if self.mode == DecayMode::Coupled { self.decay } else { 0.0 };
        let decoupled = if self.mode == DecayMode::Decoupled { self.decay } else { 0.0 };
        for k in 0..theta.len() {
            let g = grad[k] + coupled * theta[k];
            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
            v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = m[k] / self.correction1;
            let v_hat = v[k] / self.correction2;
            theta[k] -= self.lr * (m_hat / (v_hat.sqrt() + self.epsilon) + decoupled * theta[k]);
        }
    }
}

impl AdamState {
    pub fn new(model: &LstmModel, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = ParamId::ALL.iter().map(|&id| vec![0.0; model.param(id).len()]).collect();
        let emb = model
            .embedding
            .as_ref()
            .filter(|e| e.trainable)
            .map(|e| Array2::zeros(e.table.raw_dim()));
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            embedding_first: emb.clone(),
            embedding_second: emb,
        }
    }

    /// Apply one update. Gradients are validated before any parameter changes.
    pub fn step(&mut self, model: &mut LstmModel, grads: &Gradients) -> Result<()> {
        for (slot, &id) in ParamId::ALL.iter().enumerate() {
            let expected = model.param_shape(id);
            let found = grads.dense_shape(id);
            if expected != found || self.first_moment[slot].len() != model.param(id).len() {
                return Err(Error::ShapeMismatch {
                    tensor: id.name().into(),
                    expected,
                    found,
                });
            }
            if !grads.dense(id).iter().all(|g| g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    tensor: id.name().into(),
                });
            }
        }
        let emb_rows = model.embedding.as_ref().map_or(0, |e| e.table.nrows());
        let emb_cols = model.input_dim();
        for (&row, g) in &grads.embedding {
            if row as usize >= emb_rows || g.len() != emb_cols {
                return Err(Error::ShapeMismatch {
                    tensor: format!("embedding[{row}]"),
                    expected: vec![emb_cols],
                    found: vec![g.len()],
                });
            }
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    tensor: format!("embedding[{row}]"),
                });
            }
        }

        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let base = Update {
            lr: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            correction1: 1.0 - c.beta1.powi(t),
            correction2: 1.0 - c.beta2.powi(t),
            epsilon: c.epsilon,
            decay: c.weight_decay,
            mode: c.decay_mode,
        };

        for (slot, &id) in ParamId::ALL.iter().enumerate() {
            let decay = if c.exempt_biases && id.is_bias() { 0.0 } else { c.weight_decay };
            let upd = Update { decay, ..base };
            upd.apply(
                model.param_mut(id),
                grads.dense(id),
                &mut self.first_moment[slot],
                &mut self.second_moment[slot],
            );
        }

        if let Some(emb) = model.embedding.as_mut().filter(|e| e.trainable) {
            let m = self.embedding_first.get_or_insert_with(|| Array2::zeros(emb.table.raw_dim()));
            let v = self.embedding_second.get_or_insert_with(|| Array2::zeros(emb.table.raw_dim()));
            for (&row, g) in &grads.embedding {
                let r = row as usize;
                base.apply(
                    emb.table.row_mut(r).into_slice().expect("contiguous"),
                    g.as_slice().expect("contiguous"),
                    m.row_mut(r).into_slice().expect("contiguous"),
                    v.row_mut(r).into_slice().expect("contiguous"),
                );
            }
        }
        Ok(())
    }
}

//! Score-level losses and the evolutionary-improvement weights.
//!
//! Everything here works on plain score vectors and returns derivatives with
//! respect to those scores; the model-level objective chains them into
//! parameter gradients.

use serde::{Deserialize, Serialize};

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Huber loss with threshold `delta`.
#[inline]
pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to the residual.
#[inline]
pub fn huber_grad(residual: f64, delta: f64) -> f64 {
    residual.clamp(-delta, delta)
}

/// Weighted binary cross-entropy over positives and negatives:
/// `-Σ pos_w·log σ(s⁺) - Σ neg_w·log(1 - σ(s⁻))`.
#[derive(Debug, Clone, PartialEq)]
pub struct HardLabelLoss {
    pub value: f64,
    /// Per-positive term `-log σ(s)` before weighting.
    pub pos_terms: Vec<f64>,
    /// Per-negative term `-log(1 - σ(s))` before weighting.
    pub neg_terms: Vec<f64>,
    /// `∂value/∂s` for each positive score.
    pub d_pos: Vec<f64>,
    /// `∂value/∂s` for each negative score.
    pub d_neg: Vec<f64>,
}

pub fn hard_label_loss(pos: &[f64], neg: &[f64], pos_w: &[f64], neg_w: &[f64]) -> HardLabelLoss {
    debug_assert_eq!(pos.len(), pos_w.len());
    debug_assert_eq!(neg.len(), neg_w.len());
    let pos_terms: Vec<f64> = pos.iter().map(|&s| softplus(-s)).collect();
    let neg_terms: Vec<f64> = neg.iter().map(|&s| softplus(s)).collect();
    let mut value = 0.0;
    for (w, l) in pos_w.iter().zip(&pos_terms) {
        value += w * l;
    }
    for (w, l) in neg_w.iter().zip(&neg_terms) {
        value += w * l;
    }
    let d_pos = pos
        .iter()
        .zip(pos_w)
        .map(|(&s, &w)| w * (sigmoid(s) - 1.0))
        .collect();
    let d_neg = neg.iter().zip(neg_w).map(|(&s, &w)| w * sigmoid(s)).collect();
    HardLabelLoss {
        value,
        pos_terms,
        neg_terms,
        d_pos,
        d_neg,
    }
}

/// `1/len` repeated `len` times.
pub fn uniform_weights(len: usize) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    vec![1.0 / len as f64; len]
}

/// Plain KGE loss: the mean of `-log σ(s)` over positives plus the mean of
/// `-log(1 - σ(s))` over negatives.
pub fn kge_loss_split(pos: &[f64], neg: &[f64]) -> HardLabelLoss {
    hard_label_loss(pos, neg, &uniform_weights(pos.len()), &uniform_weights(neg.len()))
}

/// Plain KGE loss for scores with 0/1 labels.
pub fn kge_loss(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (&s, &y) in scores.iter().zip(labels) {
        if y != 0 {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    kge_loss_split(&pos, &neg).value
}

/// Transform applied to teacher scores before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EiWeightInput {
    #[default]
    Sigmoid,
    Raw,
}

/// Smallest magnitude a raw teacher score may have before `1/s`.
pub const RAW_EPSILON: f64 = 1e-6;

/// Softmax weights over a batch together with the logit multipliers, so the
/// derivative with respect to the scaling parameter can be formed.
#[derive(Debug, Clone, PartialEq)]
pub struct EiWeights {
    pub weights: Vec<f64>,
    /// `∂logit_k/∂w`: `1/g(s)` for positives, `g(s)` for negatives. Empty for
    /// the uniform branch, which has no scaling parameter.
    pub features: Vec<f64>,
    /// Raw-mode scores clamped away from zero.
    pub clamped: usize,
}

impl EiWeights {
    fn uniform(len: usize) -> Self {
        Self {
            weights: uniform_weights(len),
            features: Vec::new(),
            clamped: 0,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.features.is_empty()
    }

    /// `∂(Σ_k weight_k·term_k)/∂w` for the scaling parameter `w`.
    pub fn scale_grad(&self, terms: &[f64]) -> f64 {
        if self.is_uniform() {
            return 0.0;
        }
        let mean: f64 = self
            .weights
            .iter()
            .zip(&self.features)
            .map(|(p, u)| p * u)
            .sum();
        self.weights
            .iter()
            .zip(&self.features)
            .zip(terms)
            .map(|((p, u), l)| p * (u - mean) * l)
            .sum()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Weights for positives of sub-model `i`. At `i = 1` they are uniform;
/// otherwise the softmax of `w1 / g(s^{i-1})` so positives the smaller
/// neighbour already scores highly get less weight.
pub fn ei_weights_pos(teacher: &[f64], w1: f64, i: usize, input: EiWeightInput) -> EiWeights {
    if i <= 1 || teacher.is_empty() {
        return EiWeights::uniform(teacher.len());
    }
    let mut clamped = 0;
    let features: Vec<f64> = teacher
        .iter()
        .map(|&s| match input {
            EiWeightInput::Sigmoid => 1.0 / sigmoid(s),
            EiWeightInput::Raw => {
                if s.abs() < RAW_EPSILON {
                    clamped += 1;
                    if s < 0.0 {
                        -1.0 / RAW_EPSILON
                    } else {
                        1.0 / RAW_EPSILON
                    }
                } else {
                    1.0 / s
                }
            }
        })
        .collect();
    let logits: Vec<f64> = features.iter().map(|u| w1 * u).collect();
    EiWeights {
        weights: softmax(&logits),
        features,
        clamped,
    }
}

/// Weights for negatives of sub-model `i`: uniform at `i = 1`, otherwise the
/// softmax of `w2 · g(s^{i-1})` over the whole negative batch.
pub fn ei_weights_neg(teacher: &[f64], w2: f64, i: usize, input: EiWeightInput) -> EiWeights {
    if i <= 1 || teacher.is_empty() {
        return EiWeights::uniform(teacher.len());
    }
    let features: Vec<f64> = teacher
        .iter()
        .map(|&s| match input {
            EiWeightInput::Sigmoid => sigmoid(s),
            EiWeightInput::Raw => s,
        })
        .collect();
    let logits: Vec<f64> = features.iter().map(|v| w2 * v).collect();
    EiWeights {
        weights: softmax(&logits),
        features,
        clamped: 0,
    }
}

/// `exp(w3 · d_i / d_n)`.
#[inline]
pub fn dynamic_weight(w3: f64, dim: usize, full_dim: usize) -> f64 {
    (w3 * dim as f64 / full_dim as f64).exp()
}

/// KL divergence `KL(p ‖ q)` between temperature-softened distributions over
/// candidate scores, scaled by `T²`, with the gradient with respect to the
/// student scores.
pub fn distill_kl(teacher: &[f64], student: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let t_logits: Vec<f64> = teacher.iter().map(|s| s / temperature).collect();
    let s_logits: Vec<f64> = student.iter().map(|s| s / temperature).collect();
    let p = softmax(&t_logits);
    let q = softmax(&s_logits);
    let log_q = log_softmax(&s_logits);
    let log_p = log_softmax(&t_logits);
    let mut kl = 0.0;
    for k in 0..p.len() {
        if p[k] > 0.0 {
            kl += p[k] * (log_p[k] - log_q[k]);
        }
    }
    let t2 = temperature * temperature;
    let grad = p
        .iter()
        .zip(&q)
        .map(|(pk, qk)| t2 * (qk - pk) / temperature)
        .collect();
    (t2 * kl.max(0.0), grad)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

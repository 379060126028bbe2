//! Training objectives: values and exact gradients.
//!
//! Five variants are supported. Plain cross-entropy ignores negative samples
//! entirely. The garbage variant routes negatives into an extra class. The
//! entropic open-set loss gives negatives a uniform target over all known
//! classes, driving their softmax responses toward maximum entropy. The
//! maximal entropy loss additionally applies a soft margin to the target
//! class of known samples. The objectosphere loss adds a feature-magnitude
//! penalty on the compact feature: negatives are pushed toward zero norm,
//! knowns toward norm at least `xi`.
//!
//! All exponentials are stabilized by max-subtraction, so arbitrarily large
//! logits stay finite. Gradients are returned with respect to the logits and
//! (for objectosphere) the compact feature.

use crate::data::ClassLabel;
use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 0.40;
pub const DEFAULT_XI: f64 = 1.0;
pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    SoftMax,
    Garbage,
    Entropic,
    Objectosphere,
    MaxEntropy,
}

impl LossVariant {
    pub const ALL: [LossVariant; 5] = [
        LossVariant::SoftMax,
        LossVariant::Garbage,
        LossVariant::Entropic,
        LossVariant::Objectosphere,
        LossVariant::MaxEntropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::SoftMax => "softmax",
            LossVariant::Garbage => "garbage",
            LossVariant::Entropic => "entropic",
            LossVariant::Objectosphere => "objectosphere",
            LossVariant::MaxEntropy => "maxentropy",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "softmax" => Ok(LossVariant::SoftMax),
            "garbage" => Ok(LossVariant::Garbage),
            "entropic" => Ok(LossVariant::Entropic),
            "objectosphere" => Ok(LossVariant::Objectosphere),
            "maxentropy" => Ok(LossVariant::MaxEntropy),
            other => Err(Error::Config(format!(
                "unknown loss {other:?}; expected softmax|garbage|entropic|objectosphere|maxentropy"
            ))),
        }
    }

    /// Stable numeric tag used by the model file format.
    pub fn tag(self) -> u32 {
        match self {
            LossVariant::SoftMax => 0,
            LossVariant::Garbage => 1,
            LossVariant::Entropic => 2,
            LossVariant::Objectosphere => 3,
            LossVariant::MaxEntropy => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        LossVariant::ALL.into_iter().find(|v| v.tag() == tag)
    }

    /// Whether negative training samples participate in this objective.
    pub fn uses_negatives(self) -> bool {
        !matches!(self, LossVariant::SoftMax)
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Loss variant plus its hyperparameters: margin `m`, target magnitude `xi`,
/// penalty weight `lambda`. Defaults: `m = 0.40`, `xi = 1`, `lambda = 0.01`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub variant: LossVariant,
    pub margin: f64,
    pub xi: f64,
    pub lambda: f64,
}

impl LossSpec {
    pub fn new(variant: LossVariant) -> Self {
        LossSpec {
            variant,
            margin: DEFAULT_MARGIN,
            xi: DEFAULT_XI,
            lambda: DEFAULT_LAMBDA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::Config(format!("xi must be > 0, got {}", self.xi)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Logit-layer width for a gallery of `num_known` identities: the garbage
    /// variant appends one extra class for negatives.
    pub fn output_size(&self, num_known: usize) -> usize {
        match self.variant {
            LossVariant::Garbage => num_known + 1,
            _ => num_known,
        }
    }

    /// Value and gradients of the configured objective on one sample.
    pub fn evaluate(&self, logits: &[f64], h2: &[f64], label: ClassLabel) -> LossOutput {
        match self.variant {
            LossVariant::SoftMax => plain_ce_loss(logits, label),
            LossVariant::Garbage => garbage_loss(logits, label),
            LossVariant::Entropic => entropic_loss(logits, label),
            LossVariant::Objectosphere => {
                objectosphere_loss(logits, h2, label, self.xi, self.lambda)
            }
            LossVariant::MaxEntropy => max_entropy_loss(logits, label, self.margin),
        }
    }
}

/// A per-sample target over the logit indices: one-hot for known samples,
/// uniform over the known classes for negatives under the entropic losses.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    pub t: Vec<f64>,
}

impl TargetDistribution {
    pub fn one_hot(len: usize, index: usize) -> Self {
        assert!(index < len, "one-hot index {index} out of range {len}");
        let mut t = vec![0.0; len];
        t[index] = 1.0;
        TargetDistribution { t }
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0);
        TargetDistribution {
            t: vec![1.0 / len as f64; len],
        }
    }
}

/// Loss value plus gradients. `grad_h2` is empty for every variant except
/// objectosphere, whose magnitude penalty acts on the compact feature.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad_logits: Vec<f64>,
    pub grad_h2: Vec<f64>,
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    max + sum.ln()
}

/// Softmax activation over the logits, stabilized by max-subtraction.
/// Shift-invariant: adding a constant to every logit leaves it unchanged.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of an empty logit vector");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Soft-margin softmax probability of the target class: the margin `m` is
/// subtracted from the target logit in both the numerator and its copy in the
/// denominator, leaving the non-target exponents untouched. Equals
/// `softmax(logits)[target]` when `m = 0`.
pub fn soft_margin_prob(logits: &[f64], target: usize, margin: f64) -> f64 {
    assert!(target < logits.len(), "target index out of range");
    assert!(margin >= 0.0, "margin must be non-negative");
    let mut z = logits.to_vec();
    z[target] -= margin;
    softmax(&z)[target]
}

/// Cross-entropy of a one-hot target at `target`, with gradient
/// `softmax(logits) - one_hot(target)`.
fn one_hot_ce(logits: &[f64], target: usize) -> LossOutput {
    let lse = log_sum_exp(logits);
    let value = lse - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    LossOutput {
        value,
        grad_logits: grad,
        grad_h2: Vec::new(),
    }
}

/// Uniform-target branch shared by the entropic and maximal entropy losses:
/// value `-(1/C) * sum_g log softmax(logits)[g] = lse(logits) - mean(logits)`,
/// gradient `softmax(logits) - 1/C`.
fn uniform_ce(logits: &[f64]) -> LossOutput {
    let c = logits.len() as f64;
    let lse = log_sum_exp(logits);
    let mean = logits.iter().sum::<f64>() / c;
    let mut grad = softmax(logits);
    for g in grad.iter_mut() {
        *g -= 1.0 / c;
    }
    LossOutput {
        value: lse - mean,
        grad_logits: grad,
        grad_h2: Vec::new(),
    }
}

fn check_known_index(logits: &[f64], id: u32, num_known: usize) {
    assert!(
        (id as usize) < num_known,
        "known id {id} out of range for {num_known} known classes ({} logits)",
        logits.len()
    );
}

/// Entropic open-set loss: one-hot cross-entropy for known samples, uniform
/// targets over all known classes for negatives. Logit count equals the
/// number of known classes.
pub fn entropic_loss(logits: &[f64], label: ClassLabel) -> LossOutput {
    match label {
        ClassLabel::Known(g) => {
            check_known_index(logits, g, logits.len());
            one_hot_ce(logits, g as usize)
        }
        ClassLabel::Negative => uniform_ce(logits),
        other => panic!("entropic loss is trained on known or negative samples, got {other:?}"),
    }
}

/// Maximal entropy loss: soft-margin cross-entropy on the target class for
/// known samples, the entropic uniform branch for negatives (the margin does
/// not apply there). Reduces to the entropic loss at `m = 0`.
pub fn max_entropy_loss(logits: &[f64], label: ClassLabel, margin: f64) -> LossOutput {
    assert!(margin >= 0.0 && margin.is_finite(), "margin must be non-negative");
    match label {
        ClassLabel::Known(g) => {
            check_known_index(logits, g, logits.len());
            let mut z = logits.to_vec();
            z[g as usize] -= margin;
            one_hot_ce(&z, g as usize)
        }
        ClassLabel::Negative => uniform_ce(logits),
        other => panic!("maximal entropy loss is trained on known or negative samples, got {other:?}"),
    }
}

/// Objectosphere loss: the entropic loss plus `lambda` times a magnitude
/// penalty on the compact feature `h2`: `max(xi - ||h2||, 0)^2` for known
/// samples and `||h2||^2` for negatives.
pub fn objectosphere_loss(
    logits: &[f64],
    h2: &[f64],
    label: ClassLabel,
    xi: f64,
    lambda: f64,
) -> LossOutput {
    assert!(xi > 0.0 && lambda > 0.0, "xi and lambda must be positive");
    let mut out = entropic_loss(logits, label);
    let norm_sq: f64 = h2.iter().map(|v| v * v).sum();
    let norm = norm_sq.sqrt();
    let mut grad_h2 = vec![0.0; h2.len()];
    match label {
        ClassLabel::Known(_) => {
            if norm < xi {
                out.value += lambda * (xi - norm) * (xi - norm);
                // d/dh2 (xi - ||h2||)^2 = -2 (xi - ||h2||) h2 / ||h2||;
                // the subgradient at the origin is zero.
                if norm > 1e-12 {
                    let scale = -2.0 * lambda * (xi - norm) / norm;
                    for (g, &v) in grad_h2.iter_mut().zip(h2) {
                        *g = scale * v;
                    }
                }
            }
        }
        ClassLabel::Negative => {
            out.value += lambda * norm_sq;
            for (g, &v) in grad_h2.iter_mut().zip(h2) {
                *g = 2.0 * lambda * v;
            }
        }
        _ => unreachable!("entropic_loss rejected the label"),
    }
    out.grad_h2 = grad_h2;
    out
}

/// Garbage-class loss: plain cross-entropy over `|G| + 1` logits, with
/// negatives assigned to the extra class at index `|G|`.
pub fn garbage_loss(logits: &[f64], label: ClassLabel) -> LossOutput {
    assert!(logits.len() >= 2, "garbage loss needs at least one known class plus the extra class");
    let num_known = logits.len() - 1;
    match label {
        ClassLabel::Known(g) => {
            check_known_index(logits, g, num_known);
            one_hot_ce(logits, g as usize)
        }
        ClassLabel::Negative => one_hot_ce(logits, num_known),
        other => panic!("garbage loss is trained on known or negative samples, got {other:?}"),
    }
}

/// Plain cross-entropy, negative-free: only known samples are admitted.
pub fn plain_ce_loss(logits: &[f64], label: ClassLabel) -> LossOutput {
    match label {
        ClassLabel::Known(g) => {
            check_known_index(logits, g, logits.len());
            one_hot_ce(logits, g as usize)
        }
        other => panic!("plain cross-entropy is negative-free and known-only, got {other:?}"),
    }
}

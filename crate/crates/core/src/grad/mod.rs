//! Explicit gradient computation and gradient-based scores.
//!
//! Shallow scores differentiate `log p_k` with respect to the last linear
//! layer only, using the analytic per-class gradient matrices. Deep scores
//! backpropagate through a [`MicroMlp`] and aggregate over every parameter.
//! Both routes share one aggregation routine so that a score spec means the
//! same thing at either depth.

mod batch;
mod last_layer;
mod mlp;
mod train;

pub use batch::{batchgrad_score, AnchorGradient, AnchorSet};
pub use last_layer::{last_layer_grad_logp, last_layer_grads, shallow_grad_score, GradMatrix};
pub use mlp::{deep_grad_score, Activation, DenseLayer, MicroMlp, MlpOutput};
pub use train::{train_mlp, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::closed_form::Polarity;
use crate::error::{Error, Result};
use crate::math::{log_softmax, softmax, Logits, ProbVector, Temperature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelDist {
    Uniform,
    ModelP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    NormOfExpectation,
    ExpectationOfNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradNorm {
    L1,
    L2Squared,
}

impl GradNorm {
    pub fn apply(self, g: &[f64]) -> f64 {
        match self {
            GradNorm::L1 => g.iter().map(|v| v.abs()).sum(),
            GradNorm::L2Squared => g.iter().map(|v| v * v).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Depth {
    Shallow,
    Deep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    None,
    /// Scales each class term by `log p_k / p_k`.
    LogPOverP,
}

/// How `|| E_{Y~p}[grad log p_Y] ||` is evaluated.
///
/// The expectation is identically zero, so `Analytic` returns exactly 0.
/// `FloatResidual` sums the rounded per-class products and measures what
/// is left, which is only floating-point noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationMode {
    Analytic,
    FloatResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradScoreSpec {
    pub label_dist: LabelDist,
    pub aggregation: Aggregation,
    pub norm: GradNorm,
    pub depth: Depth,
    pub weighting: Weighting,
    pub expectation_mode: ExpectationMode,
    pub temperature: Temperature,
    pub polarity: Polarity,
}

impl GradScoreSpec {
    pub fn new(label_dist: LabelDist, aggregation: Aggregation, norm: GradNorm, depth: Depth, polarity: Polarity) -> Self {
        Self {
            label_dist,
            aggregation,
            norm,
            depth,
            weighting: Weighting::None,
            expectation_mode: ExpectationMode::Analytic,
            temperature: Temperature::ONE,
            polarity,
        }
    }

    /// `|| E_{Y~uniform}[grad log p_Y] ||_1`.
    pub fn gradnorm(depth: Depth) -> Self {
        Self::new(LabelDist::Uniform, Aggregation::NormOfExpectation, GradNorm::L1, depth, Polarity::HigherIsId)
    }

    /// `E_{Y~p}[ || grad log p_Y ||_1 ]`. Its output factor is the summed
    /// Bernoulli variance, which falls with confidence.
    pub fn exgrad(depth: Depth) -> Self {
        Self::new(LabelDist::ModelP, Aggregation::ExpectationOfNorm, GradNorm::L1, depth, Polarity::HigherIsOod)
    }

    pub fn with_temperature(mut self, t: Temperature) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_weighting(mut self, w: Weighting) -> Self {
        self.weighting = w;
        self
    }

    pub fn with_expectation_mode(mut self, mode: ExpectationMode) -> Self {
        self.expectation_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.weighting == Weighting::LogPOverP
            && !(self.label_dist == LabelDist::ModelP
                && self.aggregation == Aggregation::ExpectationOfNorm
                && self.norm == GradNorm::L2Squared)
        {
            return Err(Error::InvalidSpec(
                "log p / p weighting requires model labels, expectation of norm and squared L2".into(),
            ));
        }
        Ok(())
    }

    /// True when the score is `|| E_{Y~p}[...] ||`, which vanishes identically.
    pub fn is_analytic_zero(&self) -> bool {
        self.label_dist == LabelDist::ModelP
            && self.aggregation == Aggregation::NormOfExpectation
            && self.expectation_mode == ExpectationMode::Analytic
    }
}

/// Per-class expectation weights for a spec.
///
/// With `LogPOverP` the weight `p_k * (log p_k / p_k)` is folded to
/// `log p_k`, read straight from the log-softmax so it stays finite even
/// when `p_k` underflows.
pub(crate) fn class_weights(spec: &GradScoreSpec, p: &ProbVector, log_p: &[f64]) -> Vec<f64> {
    let c = p.class_count();
    match (spec.weighting, spec.label_dist) {
        (Weighting::LogPOverP, _) => log_p.to_vec(),
        (Weighting::None, LabelDist::Uniform) => vec![1.0 / c as f64; c],
        (Weighting::None, LabelDist::ModelP) => p.as_slice().to_vec(),
    }
}

/// `sum_k w_k g_k`, summed class by class in index order.
pub fn weighted_sum(grads: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; grads.first().map_or(0, Vec::len)];
    for (g, &w) in grads.iter().zip(weights) {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += w * v;
        }
    }
    acc
}

/// Applies a spec's expectation and norm to per-class gradients.
pub(crate) fn aggregate(spec: &GradScoreSpec, grads: &[Vec<f64>], p: &ProbVector, log_p: &[f64]) -> f64 {
    if spec.is_analytic_zero() {
        return 0.0;
    }
    let weights = class_weights(spec, p, log_p);
    match spec.aggregation {
        Aggregation::NormOfExpectation => spec.norm.apply(&weighted_sum(grads, &weights)),
        Aggregation::ExpectationOfNorm => grads
            .iter()
            .zip(&weights)
            .map(|(g, w)| w * spec.norm.apply(g))
            .sum(),
    }
}

pub(crate) fn distribution(f: &Logits, t: Temperature) -> (ProbVector, Vec<f64>) {
    (softmax(f, t), log_softmax(f, t))
}

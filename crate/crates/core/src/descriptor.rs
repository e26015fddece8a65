//! Score descriptors and the name registry.
//!
//! [`REGISTRY`] is the one place that maps a score name to its family,
//! depth and polarity. The CLI, the docs and the tests all read it.

use serde::Serialize;

use crate::closed_form::{Polarity, UTermKind, UvScoreSpec, VTermKind};
use crate::error::{Error, Result};
use crate::grad::{Aggregation, Depth, ExpectationMode, GradNorm, GradScoreSpec, LabelDist, Weighting};
use crate::math::{NormOrder, Temperature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedFormKind {
    GradNorm,
    ExGrad,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum ScoreFamily {
    /// `U(h) * V(p or f)`.
    Uv { spec: UvScoreSpec },
    /// GradNorm / ExGrad through their closed forms.
    ClosedForm { kind: ClosedFormKind, temperature: Temperature },
    /// Explicit gradients, shallow or deep.
    Gradient { spec: GradScoreSpec },
    BatchGrad { depth: Depth, temperature: Temperature },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub family: ScoreFamily,
}

impl ScoreDescriptor {
    pub fn new(name: impl Into<String>, family: ScoreFamily) -> Self {
        Self {
            name: name.into(),
            family,
        }
    }

    pub fn polarity(&self) -> Polarity {
        match &self.family {
            ScoreFamily::Uv { spec } => spec.polarity,
            ScoreFamily::Gradient { spec } => spec.polarity,
            ScoreFamily::ClosedForm { kind: ClosedFormKind::GradNorm, .. } => Polarity::HigherIsId,
            ScoreFamily::ClosedForm { kind: ClosedFormKind::ExGrad, .. } => Polarity::HigherIsOod,
            ScoreFamily::BatchGrad { .. } => Polarity::HigherIsOod,
        }
    }

    /// Deep gradients and BatchGrad anchors go through the network.
    pub fn needs_model(&self) -> bool {
        matches!(
            &self.family,
            ScoreFamily::Gradient { spec } if spec.depth == Depth::Deep
        ) || matches!(self.family, ScoreFamily::BatchGrad { .. })
    }

    /// Deep scores differentiate the whole network at the raw input.
    pub fn needs_raw_inputs(&self) -> bool {
        match &self.family {
            ScoreFamily::Gradient { spec } => spec.depth == Depth::Deep,
            ScoreFamily::BatchGrad { depth, .. } => *depth == Depth::Deep,
            _ => false,
        }
    }

    pub fn needs_anchors(&self) -> bool {
        matches!(self.family, ScoreFamily::BatchGrad { .. })
    }
}

/// Run-level settings applied when a name is resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistryOptions {
    pub temperature: Temperature,
    /// Replaces the order of the `||h||` factor in `h1-*` scores.
    pub norm_order: Option<NormOrder>,
}

impl Default for RegistryOptions {
    fn default() -> Self {
        Self {
            temperature: Temperature::ONE,
            norm_order: None,
        }
    }
}

pub struct RegistryEntry {
    pub name: &'static str,
    pub summary: &'static str,
    build: fn(&RegistryOptions) -> ScoreFamily,
}

fn v_only(o: &RegistryOptions, v: VTermKind) -> ScoreFamily {
    ScoreFamily::Uv {
        spec: UvScoreSpec::new(UTermKind::Unit, v, o.temperature),
    }
}

fn h_times(o: &RegistryOptions, v: VTermKind) -> ScoreFamily {
    let order = o.norm_order.unwrap_or(NormOrder::L1);
    ScoreFamily::Uv {
        spec: UvScoreSpec::new(UTermKind::EncodingNorm(order), v, o.temperature),
    }
}

fn closed(o: &RegistryOptions, kind: ClosedFormKind) -> ScoreFamily {
    ScoreFamily::ClosedForm {
        kind,
        temperature: o.temperature,
    }
}

fn gradient(o: &RegistryOptions, spec: GradScoreSpec) -> ScoreFamily {
    ScoreFamily::Gradient {
        spec: spec.with_temperature(o.temperature),
    }
}

fn variant(labels: LabelDist, agg: Aggregation, norm: GradNorm, depth: Depth, polarity: Polarity) -> GradScoreSpec {
    GradScoreSpec::new(labels, agg, norm, depth, polarity)
}

fn uniform_expnorm(norm: GradNorm, depth: Depth) -> GradScoreSpec {
    variant(LabelDist::Uniform, Aggregation::ExpectationOfNorm, norm, depth, Polarity::HigherIsId)
}

fn modelp_expnorm_l2sq(depth: Depth) -> GradScoreSpec {
    variant(LabelDist::ModelP, Aggregation::ExpectationOfNorm, GradNorm::L2Squared, depth, Polarity::HigherIsOod)
}

fn modelp_normexp_l2sq(depth: Depth, mode: ExpectationMode) -> GradScoreSpec {
    variant(LabelDist::ModelP, Aggregation::NormOfExpectation, GradNorm::L2Squared, depth, Polarity::HigherIsId)
        .with_expectation_mode(mode)
}

fn logw_expnorm_l2sq(depth: Depth) -> GradScoreSpec {
    modelp_expnorm_l2sq(depth).with_weighting(Weighting::LogPOverP)
}

fn batch(o: &RegistryOptions, depth: Depth) -> ScoreFamily {
    ScoreFamily::BatchGrad {
        depth,
        temperature: o.temperature,
    }
}

macro_rules! entry {
    ($name:expr, $summary:expr, $build:expr) => {
        RegistryEntry {
            name: $name,
            summary: $summary,
            build: $build,
        }
    };
}

pub static REGISTRY: &[RegistryEntry] = &[
    entry!("msp", "max_k p_k", |o| v_only(o, VTermKind::Msp)),
    entry!("energy", "T log sum_k exp(f_k / T)", |o| v_only(o, VTermKind::Energy)),
    entry!("varsum", "1 - sum_k p_k (1 - p_k)", |o| v_only(o, VTermKind::VarSum)),
    entry!("tv", "sum_k |1/C - p_k|", |o| v_only(o, VTermKind::TvSum)),
    entry!("h1-msp", "||h|| * MSP", |o| h_times(o, VTermKind::Msp)),
    entry!("h1-energy", "||h|| * Energy", |o| h_times(o, VTermKind::Energy)),
    entry!("h1-varsum", "||h|| * VarSum", |o| h_times(o, VTermKind::VarSum)),
    entry!("h1-tv", "||h|| * TV sum (GradNorm up to 1/T)", |o| h_times(o, VTermKind::TvSum)),
    entry!("gradnorm-closed", "(1/T) ||h||_1 sum_k |1/C - p_k|", |o| closed(o, ClosedFormKind::GradNorm)),
    entry!("exgrad-closed", "(2/T) ||h||_1 sum_k p_k (1 - p_k)", |o| closed(o, ClosedFormKind::ExGrad)),
    entry!("gradnorm", "||E_unif[grad_W log p_Y]||_1, last layer", |o| gradient(o, GradScoreSpec::gradnorm(Depth::Shallow))),
    entry!("gradnorm-deep", "||E_unif[grad log p_Y]||_1, all parameters", |o| gradient(o, GradScoreSpec::gradnorm(Depth::Deep))),
    entry!("exgrad", "E_p[||grad_W log p_Y||_1], last layer", |o| gradient(o, GradScoreSpec::exgrad(Depth::Shallow))),
    entry!("exgrad-deep", "E_p[||grad log p_Y||_1], all parameters", |o| gradient(o, GradScoreSpec::exgrad(Depth::Deep))),
    entry!("uniform-expnorm-l1", "E_unif[||grad_W log p_Y||_1]", |o| gradient(o, uniform_expnorm(GradNorm::L1, Depth::Shallow))),
    entry!("uniform-expnorm-l1-deep", "E_unif[||grad log p_Y||_1]", |o| gradient(o, uniform_expnorm(GradNorm::L1, Depth::Deep))),
    entry!("uniform-expnorm-l2sq", "E_unif[||grad_W log p_Y||_2^2]", |o| gradient(o, uniform_expnorm(GradNorm::L2Squared, Depth::Shallow))),
    entry!("uniform-expnorm-l2sq-deep", "E_unif[||grad log p_Y||_2^2]", |o| gradient(o, uniform_expnorm(GradNorm::L2Squared, Depth::Deep))),
    entry!("modelp-expnorm-l2sq", "E_p[||grad_W log p_Y||_2^2]", |o| gradient(o, modelp_expnorm_l2sq(Depth::Shallow))),
    entry!("modelp-expnorm-l2sq-deep", "E_p[||grad log p_Y||_2^2]", |o| gradient(o, modelp_expnorm_l2sq(Depth::Deep))),
    entry!("modelp-normexp-l2sq", "||E_p[grad_W log p_Y]||_2^2 (identically 0)", |o| {
        gradient(o, modelp_normexp_l2sq(Depth::Shallow, ExpectationMode::Analytic))
    }),
    entry!("modelp-normexp-l2sq-deep", "||E_p[grad log p_Y]||_2^2 (identically 0)", |o| {
        gradient(o, modelp_normexp_l2sq(Depth::Deep, ExpectationMode::Analytic))
    }),
    entry!("modelp-normexp-l2sq-naive", "floating-point residual of ||E_p[grad_W log p_Y]||_2^2", |o| {
        gradient(o, modelp_normexp_l2sq(Depth::Shallow, ExpectationMode::FloatResidual))
    }),
    entry!("modelp-normexp-l2sq-naive-deep", "floating-point residual of ||E_p[grad log p_Y]||_2^2", |o| {
        gradient(o, modelp_normexp_l2sq(Depth::Deep, ExpectationMode::FloatResidual))
    }),
    entry!("logw-expnorm-l2sq", "E_p[(log p_Y / p_Y) ||grad_W log p_Y||_2^2]", |o| gradient(o, logw_expnorm_l2sq(Depth::Shallow))),
    entry!("logw-expnorm-l2sq-deep", "E_p[(log p_Y / p_Y) ||grad log p_Y||_2^2]", |o| gradient(o, logw_expnorm_l2sq(Depth::Deep))),
    entry!("batchgrad", "E_p[||grad_W (log p_Y(x) + sum_i log p_i(x_i))||_1]", |o| batch(o, Depth::Shallow)),
    entry!("batchgrad-deep", "E_p[||grad (log p_Y(x) + sum_i log p_i(x_i))||_1]", |o| batch(o, Depth::Deep)),
];

pub fn lookup(name: &str, options: &RegistryOptions) -> Result<ScoreDescriptor> {
    REGISTRY
        .iter()
        .find(|e| e.name == name)
        .map(|e| ScoreDescriptor::new(e.name, (e.build)(options)))
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown score `{name}`; known scores: {}",
                REGISTRY.iter().map(|e| e.name).collect::<Vec<_>>().join(", ")
            ))
        })
}

/// Resolves a comma-separated list, keeping order and duplicates.
pub fn lookup_list(names: &str, options: &RegistryOptions) -> Result<Vec<ScoreDescriptor>> {
    names
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|n| lookup(n, options))
        .collect()
}

//! Closed-form scores: the output-distribution (V) terms, the encoding (U)
//! terms, their products, and the analytic forms of GradNorm and ExGrad.
//!
//! GradNorm factors as `(2/T) * ||h||_1 * TV(uniform, p)`. Here the V term
//! is returned as `sum_k |1/C - p_k|`, i.e. twice the total-variation
//! distance, which is the form used when scoring; a positive constant never
//! changes an AUROC.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::math::{logsumexp, softmax, vector_norm, Encoding, LastLayerShape, Logits, NormOrder, ProbVector, Temperature};

/// Direction in which a score indicates in-distribution data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    HigherIsId,
    HigherIsOod,
}

impl Polarity {
    /// Maps a raw score so that larger values mean "more in-distribution".
    pub fn orient(self, score: f64) -> f64 {
        match self {
            Polarity::HigherIsId => score,
            // +0.0 keeps -0.0 from ever appearing after negation
            Polarity::HigherIsOod => -score + 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VTermKind {
    #[serde(rename = "tv")]
    TvSum,
    #[serde(rename = "varsum")]
    VarSum,
    Msp,
    Energy,
}

impl VTermKind {
    pub const ALL: [VTermKind; 4] = [VTermKind::Energy, VTermKind::TvSum, VTermKind::Msp, VTermKind::VarSum];

    pub fn name(self) -> &'static str {
        match self {
            VTermKind::TvSum => "tv",
            VTermKind::VarSum => "varsum",
            VTermKind::Msp => "msp",
            VTermKind::Energy => "energy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    /// All four V terms grow with in-distribution confidence.
    pub fn default_polarity(self) -> Polarity {
        Polarity::HigherIsId
    }

    pub fn evaluate(self, f: &Logits, t: Temperature) -> f64 {
        match self {
            VTermKind::Energy => v_energy(f, t),
            other => {
                let p = softmax(f, t);
                match other {
                    VTermKind::TvSum => v_tv_sum(&p),
                    VTermKind::VarSum => v_varsum(&p),
                    VTermKind::Msp => v_msp(&p),
                    VTermKind::Energy => unreachable!(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "order")]
pub enum UTermKind {
    Unit,
    EncodingNorm(NormOrder),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UvScoreSpec {
    pub u: UTermKind,
    pub v: VTermKind,
    pub temperature: Temperature,
    pub polarity: Polarity,
}

impl UvScoreSpec {
    pub fn new(u: UTermKind, v: VTermKind, temperature: Temperature) -> Self {
        Self {
            u,
            v,
            temperature,
            polarity: v.default_polarity(),
        }
    }
}

/// `sum_k |1/C - p_k|`, in `[0, 2(1 - 1/C)]`.
pub fn v_tv_sum(p: &ProbVector) -> f64 {
    let u = 1.0 / p.class_count() as f64;
    p.as_slice().iter().map(|&pk| (u - pk).abs()).sum()
}

/// `sum_k p_k (1 - p_k)`: the summed Bernoulli variances. Anti-correlated
/// with confidence.
pub fn v_varsum_raw(p: &ProbVector) -> f64 {
    p.as_slice().iter().enumerate().map(|(k, &pk)| pk * p.complement(k)).sum()
}

/// `1 - sum_k p_k (1 - p_k)`, the confidence-correlated VarSum.
pub fn v_varsum(p: &ProbVector) -> f64 {
    1.0 - v_varsum_raw(p)
}

pub fn v_msp(p: &ProbVector) -> f64 {
    p.max()
}

/// Negative free energy, `T log sum_k exp(f_k / T)`. Takes logits because
/// they cannot be recovered from `p`.
pub fn v_energy(f: &Logits, t: Temperature) -> f64 {
    logsumexp(f, t)
}

pub fn u_term(h: &Encoding, u: UTermKind) -> f64 {
    match u {
        UTermKind::Unit => 1.0,
        UTermKind::EncodingNorm(order) => vector_norm(h.as_slice(), order),
    }
}

/// `U(h) * V(f)` after checking both against the expected layer shape.
pub fn uv_score(h: &Encoding, f: &Logits, spec: &UvScoreSpec, shape: &LastLayerShape) -> Result<f64> {
    shape.check(h, f)?;
    Ok(uv_score_unchecked(h, f, spec))
}

pub(crate) fn uv_score_unchecked(h: &Encoding, f: &Logits, spec: &UvScoreSpec) -> f64 {
    u_term(h, spec.u) * spec.v.evaluate(f, spec.temperature)
}

/// GradNorm in closed form: `(1/T) ||h||_1 sum_k |1/C - p_k|`.
pub fn gradnorm_closed(h: &Encoding, p: &ProbVector, t: Temperature) -> f64 {
    vector_norm(h.as_slice(), NormOrder::L1) * v_tv_sum(p) / t.get()
}

/// ExGrad in closed form: `(2/T) ||h||_1 sum_k p_k (1 - p_k)`.
pub fn exgrad_closed(h: &Encoding, p: &ProbVector, t: Temperature) -> f64 {
    2.0 * vector_norm(h.as_slice(), NormOrder::L1) * v_varsum_raw(p) / t.get()
}

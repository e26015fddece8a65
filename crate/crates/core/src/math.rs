//! Numerically stable primitives shared by every score: tempered softmax,
//! log-softmax, log-sum-exp and generalized vector norms.
//!
//! Everything here is 64-bit and stateless. Anything that needs `log p`
//! goes through [`log_softmax`]; taking the log of a softmax output is
//! avoided so that saturated distributions never produce `-inf`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw network outputs `f(x)`, one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "logits need at least 2 classes, got {}",
                values.len()
            )));
        }
        check_finite("logits", &values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// A categorical distribution over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Tolerance on `|sum - 1|` accepted by [`ProbVector::new`].
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a probability vector needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        check_finite("probabilities", &probs)?;
        if let Some(i) = probs.iter().position(|&p| p < 0.0) {
            return Err(Error::InvalidInput(format!(
                "negative probability {} at index {i}",
                probs[i]
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn uniform(class_count: usize) -> Result<Self> {
        Self::new(vec![1.0 / class_count as f64; class_count])
    }

    pub fn one_hot(class_count: usize, k: usize) -> Result<Self> {
        if k >= class_count {
            return Err(Error::ClassIndex {
                index: k,
                class_count,
            });
        }
        let mut probs = vec![0.0; class_count];
        probs[k] = 1.0;
        Self::new(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// `1 - p_k`. Above one half it is summed from the other entries, so it
    /// keeps full relative precision when `p_k` is close to 1.
    pub fn complement(&self, k: usize) -> f64 {
        if self.0[k] > 0.5 {
            self.0.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, v)| v).sum()
        } else {
            1.0 - self.0[k]
        }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = k;
            }
        }
        best
    }
}

/// Softmax temperature `T > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Self(value))
        } else {
            Err(Error::InvalidInput(format!(
                "temperature must be finite and > 0, got {value}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self::ONE
    }
}

impl<'de> Deserialize<'de> for Temperature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Temperature::new(v).map_err(serde::de::Error::custom)
    }
}

/// The encoding `h` fed to the last linear layer.
///
/// With `bias_augmented` set, the final entry is the constant 1 that folds
/// the last-layer bias into the weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    values: Vec<f64>,
    bias_augmented: bool,
}

impl Encoding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("encoding must be non-empty".into()));
        }
        check_finite("encoding", &values)?;
        Ok(Self {
            values,
            bias_augmented: false,
        })
    }

    /// Appends the constant bias coordinate.
    pub fn with_bias(mut values: Vec<f64>) -> Result<Self> {
        check_finite("encoding", &values)?;
        values.push(1.0);
        Ok(Self {
            values,
            bias_augmented: true,
        })
    }

    /// Wraps values whose last entry is already the bias coordinate.
    pub fn from_augmented(values: Vec<f64>) -> Result<Self> {
        check_finite("encoding", &values)?;
        match values.last() {
            Some(1.0) => Ok(Self {
                values,
                bias_augmented: true,
            }),
            _ => Err(Error::InvalidInput(
                "bias-augmented encoding must end with the value 1".into(),
            )),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_bias_augmented(&self) -> bool {
        self.bias_augmented
    }

    /// Returns a bias-augmented copy (identity if already augmented).
    pub fn augmented(&self) -> Encoding {
        if self.bias_augmented {
            return self.clone();
        }
        let mut values = self.values.clone();
        values.push(1.0);
        Encoding {
            values,
            bias_augmented: true,
        }
    }

    pub fn scaled(&self, c: f64) -> Result<Encoding> {
        let mut values: Vec<f64> = self.values.iter().map(|v| v * c).collect();
        if self.bias_augmented {
            *values.last_mut().expect("non-empty") = 1.0;
        }
        check_finite("encoding", &values)?;
        Ok(Encoding {
            values,
            bias_augmented: self.bias_augmented,
        })
    }
}

/// Order of the (quasi-)norm applied to an encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormOrder {
    /// Count of strictly nonzero entries.
    Zero,
    /// `(sum |v|^q)^(1/q)` for `q` in (0, 1).
    Fractional(f64),
    /// `(sum |v|^q)^(1/q)` for `q >= 1`.
    Finite(f64),
    Infinity,
}

impl NormOrder {
    pub const L1: NormOrder = NormOrder::Finite(1.0);

    pub fn from_order(q: f64) -> Result<Self> {
        if q == 0.0 {
            Ok(NormOrder::Zero)
        } else if q.is_infinite() && q > 0.0 {
            Ok(NormOrder::Infinity)
        } else if q > 0.0 && q < 1.0 {
            Ok(NormOrder::Fractional(q))
        } else if q >= 1.0 && q.is_finite() {
            Ok(NormOrder::Finite(q))
        } else {
            Err(Error::InvalidInput(format!("invalid norm order {q}")))
        }
    }

    pub fn order(self) -> f64 {
        match self {
            NormOrder::Zero => 0.0,
            NormOrder::Fractional(q) | NormOrder::Finite(q) => q,
            NormOrder::Infinity => f64::INFINITY,
        }
    }

    /// The twelve orders of the encoding-norm ablation grid.
    pub fn scan_defaults() -> Vec<NormOrder> {
        [0.0, 0.1, 0.3, 0.5, 0.8, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, f64::INFINITY]
            .into_iter()
            .map(|q| NormOrder::from_order(q).expect("valid default order"))
            .collect()
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::Infinity => f.write_str("inf"),
            other => write!(f, "{}", other.order()),
        }
    }
}

impl std::str::FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if matches!(s, "inf" | "infinity" | "Inf" | "INF") {
            return Ok(NormOrder::Infinity);
        }
        let q: f64 = s
            .parse()
            .map_err(|_| Error::InvalidInput(format!("cannot parse norm order `{s}`")))?;
        NormOrder::from_order(q)
    }
}

impl Serialize for NormOrder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Dimensions of the final linear layer, `W` in `R^{C x D}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LastLayerShape {
    pub class_count: usize,
    /// Includes the bias column when encodings are bias-augmented.
    pub encoding_dim: usize,
}

impl LastLayerShape {
    pub fn new(class_count: usize, encoding_dim: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::InvalidInput(format!(
                "class_count must be >= 2, got {class_count}"
            )));
        }
        if encoding_dim < 1 {
            return Err(Error::InvalidInput("encoding_dim must be >= 1".into()));
        }
        Ok(Self {
            class_count,
            encoding_dim,
        })
    }

    pub fn check(&self, h: &Encoding, f: &Logits) -> Result<()> {
        if f.class_count() != self.class_count {
            return Err(Error::DimensionMismatch {
                what: "logit count",
                expected: self.class_count,
                found: f.class_count(),
            });
        }
        if h.dim() != self.encoding_dim {
            return Err(Error::DimensionMismatch {
                what: "encoding dimension",
                expected: self.encoding_dim,
                found: h.dim(),
            });
        }
        Ok(())
    }
}

pub(crate) fn check_finite(context: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { context, index }),
        None => Ok(()),
    }
}

/// `(f - max f) / T`, the shared stabilized exponent.
fn shifted(f: &Logits, t: Temperature) -> (f64, Vec<f64>) {
    let m = f.max();
    let z = f.as_slice().iter().map(|&v| (v - m) / t.get()).collect();
    (m, z)
}

pub fn softmax(f: &Logits, t: Temperature) -> ProbVector {
    let (_, z) = shifted(f, t);
    let mut e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    for v in &mut e {
        *v /= s;
    }
    ProbVector(e)
}

pub fn log_softmax(f: &Logits, t: Temperature) -> Vec<f64> {
    let (_, z) = shifted(f, t);
    let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
    z.into_iter().map(|v| v - lse).collect()
}

/// `T * log sum_k exp(f_k / T)`.
pub fn logsumexp(f: &Logits, t: Temperature) -> f64 {
    let (m, z) = shifted(f, t);
    m + t.get() * z.iter().map(|v| v.exp()).sum::<f64>().ln()
}

pub fn vector_norm(v: &[f64], order: NormOrder) -> f64 {
    match order {
        NormOrder::Zero => v.iter().filter(|x| x.abs() > 0.0).count() as f64,
        NormOrder::Infinity => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        NormOrder::Finite(1.0) => v.iter().map(|x| x.abs()).sum(),
        NormOrder::Fractional(q) | NormOrder::Finite(q) => {
            // Scale by the largest magnitude so |v|^q neither overflows nor underflows.
            let scale = v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
            if scale == 0.0 {
                return 0.0;
            }
            let s: f64 = v.iter().map(|x| (x.abs() / scale).powf(q)).sum();
            scale * s.powf(1.0 / q)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(v: &[f64]) -> Logits {
        Logits::new(v.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&logits(&[0.0, 0.0, 0.0]), Temperature::ONE);
        for &v in p.as_slice() {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
        // e^k / (e + e^2 + e^3), evaluated with mpmath at 50 digits.
        let p = softmax(&logits(&[1.0, 2.0, 3.0]), Temperature::ONE);
        let want = [0.090030573170380458, 0.24472847105479765, 0.66524095577482189];
        for (a, b) in p.as_slice().iter().zip(want) {
            assert!(close(*a, b, 1e-8));
        }
    }

    #[test]
    fn log_softmax_examples() {
        let l = log_softmax(&logits(&[0.0, 0.0, 0.0]), Temperature::ONE);
        for v in l {
            assert!(close(v, -(3f64.ln()), 1e-15));
        }
        let l = log_softmax(&logits(&[1.0, 2.0, 3.0]), Temperature::ONE);
        let want = [-2.4076059644443803, -1.4076059644443803, -0.40760596444438030];
        for (a, b) in l.iter().zip(want) {
            assert!(close(*a, b, 1e-8));
        }
        // saturated: p underflows to 0 but log p stays finite
        let f = logits(&[0.0, 2000.0]);
        assert_eq!(softmax(&f, Temperature::ONE).as_slice()[0], 0.0);
        let l = log_softmax(&f, Temperature::ONE);
        assert!(l[0].is_finite());
        assert!(close(l[0], -2000.0, 1e-9));
    }

    #[test]
    fn logsumexp_examples() {
        assert!(close(logsumexp(&logits(&[0.0, 0.0]), Temperature::ONE), 2f64.ln(), 1e-15));
        assert!(close(
            logsumexp(&logits(&[1.0, 2.0, 3.0]), Temperature::ONE),
            3.4076059644443803,
            1e-8
        ));
        let v = logsumexp(&logits(&[1000.0, 1000.0]), Temperature::ONE);
        assert!(v.is_finite());
        assert!(close(v, 1000.0 + 2f64.ln(), 1e-12));
    }

    #[test]
    fn non_finite_logits_name_the_index() {
        let err = Logits::new(vec![0.0, 1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 2, .. }));
        assert!(err.to_string().contains("index 2"));
        assert!(Logits::new(vec![1.0]).is_err());
    }

    #[test]
    fn norm_examples() {
        assert_eq!(vector_norm(&[1.0, -2.0, 3.0], NormOrder::Finite(1.0)), 6.0);
        assert!(close(vector_norm(&[3.0, 4.0], NormOrder::Finite(2.0)), 5.0, 1e-15));
        assert!(close(vector_norm(&[1.0, 1.0], NormOrder::Fractional(0.5)), 4.0, 1e-15));
        assert_eq!(vector_norm(&[1.0, -2.0, 3.0], NormOrder::Infinity), 3.0);
        assert_eq!(vector_norm(&[0.0, 0.0, 5.0], NormOrder::Zero), 1.0);
        assert_eq!(vector_norm(&[0.0, -0.0], NormOrder::Finite(3.0)), 0.0);
        // a tiny but nonzero entry still counts
        assert_eq!(vector_norm(&[1e-300, 0.0], NormOrder::Zero), 1.0);
    }

    #[test]
    fn norm_order_parsing() {
        assert_eq!("0".parse::<NormOrder>().unwrap(), NormOrder::Zero);
        assert_eq!("0.3".parse::<NormOrder>().unwrap(), NormOrder::Fractional(0.3));
        assert_eq!("2".parse::<NormOrder>().unwrap(), NormOrder::Finite(2.0));
        assert_eq!("inf".parse::<NormOrder>().unwrap(), NormOrder::Infinity);
        assert!("-1".parse::<NormOrder>().is_err());
        let grid = NormOrder::scan_defaults();
        assert_eq!(grid.len(), 12);
        let labels: Vec<String> = grid.iter().map(|o| o.to_string()).collect();
        assert_eq!(
            labels,
            ["0", "0.1", "0.3", "0.5", "0.8", "1", "2", "3", "4", "5", "6", "inf"]
        );
    }

    #[test]
    fn encoding_bias_column() {
        let h = Encoding::with_bias(vec![2.0, -1.0]).unwrap();
        assert_eq!(h.as_slice(), &[2.0, -1.0, 1.0]);
        assert!(h.is_bias_augmented());
        assert!(Encoding::from_augmented(vec![2.0, 0.5]).is_err());
        assert_eq!(h.scaled(3.0).unwrap().as_slice(), &[6.0, -3.0, 1.0]);
        assert_eq!(h.augmented(), h);
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.5, -0.5]).is_err());
        assert!(ProbVector::one_hot(3, 3).is_err());
        assert_eq!(ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap().argmax(), 1);
    }
}

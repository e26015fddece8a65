//! Analytic gradients of `log p_k` with respect to the last linear layer.
//!
//! For `f = W h`, `d log p_k / d f_j = (1[j = k] - p_j) / T`, so the gradient
//! with respect to `W` is the outer product of that vector with `h`.

use crate::error::{Error, Result};
use crate::math::{Encoding, Logits, ProbVector, Temperature};

use super::{aggregate, distribution, Depth, GradScoreSpec};

/// A `C x D` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GradMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn l2_squared(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `grad_W log p_k`: row `k` is `(1 - p_k) h / T`, every other row `j` is
/// `-p_j h / T`. Its L1 norm is `(2/T)(1 - p_k) ||h||_1`.
pub fn last_layer_grad_logp(h: &Encoding, p: &ProbVector, k: usize, t: Temperature) -> Result<GradMatrix> {
    let c = p.class_count();
    if k >= c {
        return Err(Error::ClassIndex {
            index: k,
            class_count: c,
        });
    }
    let d = h.dim();
    let mut g = GradMatrix::zeros(c, d);
    for (j, &pj) in p.as_slice().iter().enumerate() {
        let coeff = (if j == k { p.complement(k) } else { -pj }) / t.get();
        for (dst, &hv) in g.data[j * d..(j + 1) * d].iter_mut().zip(h.as_slice()) {
            *dst = coeff * hv;
        }
    }
    Ok(g)
}

/// Flattened `grad_W log p_k` for every class.
pub fn last_layer_grads(h: &Encoding, p: &ProbVector, t: Temperature) -> Vec<Vec<f64>> {
    (0..p.class_count())
        .map(|k| {
            last_layer_grad_logp(h, p, k, t)
                .expect("k ranges over classes")
                .into_vec()
        })
        .collect()
}

/// Evaluates a shallow gradient score over explicit per-class matrices.
pub fn shallow_grad_score(h: &Encoding, f: &Logits, spec: &GradScoreSpec) -> Result<f64> {
    spec.validate()?;
    if spec.depth != Depth::Shallow {
        return Err(Error::InvalidSpec("shallow evaluation needs a shallow spec".into()));
    }
    let (p, log_p) = distribution(f, spec.temperature);
    let grads = last_layer_grads(h, &p, spec.temperature);
    Ok(aggregate(spec, &grads, &p, &log_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{exgrad_closed, gradnorm_closed, Polarity};
    use crate::grad::{weighted_sum, Aggregation, ExpectationMode, GradNorm, LabelDist};

    fn h3() -> Encoding {
        Encoding::new(vec![1.0, -2.0, 3.0]).unwrap()
    }

    fn p3() -> ProbVector {
        ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap()
    }

    #[test]
    fn per_class_l1_matches_formula() {
        let g = last_layer_grad_logp(&h3(), &p3(), 0, Temperature::ONE).unwrap();
        // sum of |entries|, written out: row0 0.5*6, row1 0.3*6, row2 0.2*6
        assert!((g.l1() - 6.0).abs() < 1e-14);
        assert_eq!(g.get(0, 1), -1.0);
        assert_eq!(g.get(1, 2), -0.3 * 3.0);
    }

    #[test]
    fn one_hot_gives_zero_gradient() {
        let p = ProbVector::one_hot(3, 2).unwrap();
        let g = last_layer_grad_logp(&h3(), &p, 2, Temperature::ONE).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn expectation_under_p_vanishes() {
        let grads = last_layer_grads(&h3(), &p3(), Temperature::ONE);
        let e = weighted_sum(&grads, p3().as_slice());
        assert!(e.iter().all(|v| v.abs() <= 1e-12), "{e:?}");
    }

    #[test]
    fn class_index_checked() {
        assert!(matches!(
            last_layer_grad_logp(&h3(), &p3(), 3, Temperature::ONE),
            Err(Error::ClassIndex { index: 3, class_count: 3 })
        ));
    }

    #[test]
    fn shallow_specs_match_closed_forms() {
        let f = Logits::new(vec![0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()]).unwrap();
        let t = Temperature::ONE;
        let gn = shallow_grad_score(&h3(), &f, &GradScoreSpec::gradnorm(Depth::Shallow)).unwrap();
        assert!((gn - 2.0).abs() < 1e-10 * 2.0);
        let p = crate::math::softmax(&f, t);
        assert!((gn - gradnorm_closed(&h3(), &p, t)).abs() <= 1e-10 * gn);

        let eg = shallow_grad_score(&h3(), &f, &GradScoreSpec::exgrad(Depth::Shallow)).unwrap();
        assert!((eg - 7.44).abs() < 1e-10 * 7.44);
        assert!((eg - exgrad_closed(&h3(), &p, t)).abs() <= 1e-10 * eg);
    }

    #[test]
    fn model_p_norm_of_expectation_is_zero() {
        let f = Logits::new(vec![0.3, -1.2, 2.2, 0.0]).unwrap();
        let h = Encoding::new(vec![4.0, 0.5, -3.0]).unwrap();
        let spec = GradScoreSpec::new(
            LabelDist::ModelP,
            Aggregation::NormOfExpectation,
            GradNorm::L2Squared,
            Depth::Shallow,
            Polarity::HigherIsId,
        );
        assert_eq!(shallow_grad_score(&h, &f, &spec).unwrap(), 0.0);
        let naive = spec.with_expectation_mode(ExpectationMode::FloatResidual);
        let r = shallow_grad_score(&h, &f, &naive).unwrap();
        assert!(r < 1e-20, "{r}");
    }

    #[test]
    fn rejects_deep_spec() {
        assert!(shallow_grad_score(
            &h3(),
            &Logits::new(vec![0.0, 1.0, 2.0]).unwrap(),
            &GradScoreSpec::gradnorm(Depth::Deep)
        )
        .is_err());
    }
}

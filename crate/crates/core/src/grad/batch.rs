//! BatchGrad: the expected L1 gradient norm of the test point's
//! log-likelihood plus one in-distribution anchor per class,
//! `E_{Y~p}[ || grad (log p_Y(x) + sum_i log p_i(x_i)) ||_1 ]`.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::math::{Encoding, Logits, Temperature};
use crate::rng::{stream, Purpose};

use super::{last_layer_grad_logp, last_layer_grads, Depth, MicroMlp};

/// One in-distribution input per class; `inputs[i]` carries label `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    inputs: Vec<Vec<f64>>,
}

impl AnchorSet {
    pub fn new(inputs: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "an anchor set needs one input per class (at least 2), got {}",
                inputs.len()
            )));
        }
        Ok(Self { inputs })
    }

    /// Picks one labelled sample per class, uniformly at random from a
    /// seeded stream. The anchors stay fixed for the whole run.
    pub fn select(inputs: &[Vec<f64>], labels: &[usize], class_count: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Purpose::Anchors);
        let mut chosen = Vec::with_capacity(class_count);
        for class in 0..class_count {
            let members: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &y)| y == class)
                .map(|(i, _)| i)
                .collect();
            if members.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "no labelled sample of class {class} available as an anchor"
                )));
            }
            let pick = members[rng.random_range(0..members.len())];
            chosen.push(inputs[pick].clone());
        }
        Self::new(chosen)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn class_count(&self) -> usize {
        self.inputs.len()
    }
}

/// `A = sum_i grad log p_i(x_i)` for a fixed anchor set, at one depth.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGradient {
    depth: Depth,
    temperature: Temperature,
    sum: Vec<f64>,
}

impl AnchorGradient {
    pub fn compute(m: &MicroMlp, anchors: &AnchorSet, depth: Depth, t: Temperature) -> Result<Self> {
        if anchors.class_count() != m.class_count() {
            return Err(Error::DimensionMismatch {
                what: "anchor count (one per class)",
                expected: m.class_count(),
                found: anchors.class_count(),
            });
        }
        let mut sum: Vec<f64> = Vec::new();
        for (class, x) in anchors.inputs().iter().enumerate() {
            let g = match depth {
                Depth::Deep => m.grad_logp_at(x, class, t)?,
                Depth::Shallow => {
                    let out = m.forward_at(x, t)?;
                    last_layer_grad_logp(&out.h.augmented(), &out.probs, class, t)?.into_vec()
                }
            };
            if sum.is_empty() {
                sum = g;
            } else {
                for (a, v) in sum.iter_mut().zip(&g) {
                    *a += v;
                }
            }
        }
        Ok(Self {
            depth,
            temperature: t,
            sum,
        })
    }

    /// An all-zero anchor term; BatchGrad then reduces to ExGrad.
    pub fn zero(m: &MicroMlp, depth: Depth, t: Temperature) -> Self {
        let len = match depth {
            Depth::Deep => m.parameter_count(),
            Depth::Shallow => m.parameter_count() - m.last_layer_offset(),
        };
        Self {
            depth,
            temperature: t,
            sum: vec![0.0; len],
        }
    }

    pub fn depth(&self) -> Depth {
        self.depth
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sum
    }

    /// Scores a raw input through the model.
    pub fn score(&self, m: &MicroMlp, x: &[f64]) -> Result<f64> {
        let t = self.temperature;
        let (probs, grads) = match self.depth {
            Depth::Deep => {
                let (out, grads) = m.per_class_grads(x, t)?;
                (out.probs, grads)
            }
            Depth::Shallow => {
                let out = m.forward_at(x, t)?;
                let grads = last_layer_grads(&out.h.augmented(), &out.probs, t);
                (out.probs, grads)
            }
        };
        Ok(self.combine(probs.as_slice(), &grads))
    }

    /// Shallow scoring from a stored bias-augmented encoding and logits.
    pub fn score_features(&self, h: &Encoding, f: &Logits) -> Result<f64> {
        if self.depth != Depth::Shallow {
            return Err(Error::InvalidSpec("feature-based BatchGrad is shallow only".into()));
        }
        if h.dim() != self.sum.len() / f.class_count() {
            return Err(Error::DimensionMismatch {
                what: "encoding dimension (with bias)",
                expected: self.sum.len() / f.class_count(),
                found: h.dim(),
            });
        }
        let p = crate::math::softmax(f, self.temperature);
        let grads = last_layer_grads(h, &p, self.temperature);
        Ok(self.combine(p.as_slice(), &grads))
    }

    fn combine(&self, probs: &[f64], grads: &[Vec<f64>]) -> f64 {
        probs
            .iter()
            .zip(grads)
            .map(|(pk, g)| pk * g.iter().zip(&self.sum).map(|(a, b)| (a + b).abs()).sum::<f64>())
            .sum()
    }
}

/// BatchGrad for one input. Recomputes the anchor term; use
/// [`AnchorGradient`] directly when scoring many inputs.
pub fn batchgrad_score(m: &MicroMlp, x: &[f64], anchors: &AnchorSet, depth: Depth, t: Temperature) -> Result<f64> {
    AnchorGradient::compute(m, anchors, depth, t)?.score(m, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{deep_grad_score, shallow_grad_score, Activation, GradScoreSpec};

    fn net(dims: &[usize]) -> MicroMlp {
        let mut rng = stream(11, Purpose::Init);
        MicroMlp::init(dims.to_vec(), Activation::Tanh, Temperature::ONE, &mut rng).unwrap()
    }

    fn anchors(m: &MicroMlp) -> AnchorSet {
        let xs: Vec<Vec<f64>> = (0..m.class_count())
            .map(|c| (0..m.input_dim()).map(|j| (c as f64 - 1.0) * 0.5 + 0.1 * j as f64).collect())
            .collect();
        AnchorSet::new(xs).unwrap()
    }

    #[test]
    fn zero_anchor_term_reduces_to_exgrad() {
        let m = net(&[4, 6, 5, 3]);
        let x = [0.3, -0.2, 1.0, 0.7];
        let t = Temperature::ONE;
        let deep = AnchorGradient::zero(&m, Depth::Deep, t).score(&m, &x).unwrap();
        let exg = deep_grad_score(&m, &x, &GradScoreSpec::exgrad(Depth::Deep)).unwrap();
        assert!((deep - exg).abs() <= 1e-12 * exg);

        let shallow = AnchorGradient::zero(&m, Depth::Shallow, t).score(&m, &x).unwrap();
        let out = m.forward(&x).unwrap();
        let exg = shallow_grad_score(&out.h.augmented(), &out.logits, &GradScoreSpec::exgrad(Depth::Shallow)).unwrap();
        assert!((shallow - exg).abs() <= 1e-12 * exg);
    }

    #[test]
    fn matches_brute_force_accumulation() {
        let m = net(&[3, 5, 3]);
        let a = anchors(&m);
        let x = [0.9, -0.4, 0.2];
        let t = Temperature::ONE;
        let got = batchgrad_score(&m, &x, &a, Depth::Deep, t).unwrap();

        // parameter-by-parameter, accumulating anchors in reverse order
        let p = m.forward(&x).unwrap().probs;
        let per_class: Vec<Vec<f64>> = (0..3).map(|k| m.grad_logp(&x, k).unwrap()).collect();
        let anchor_grads: Vec<Vec<f64>> = a.inputs().iter().enumerate().map(|(i, xi)| m.grad_logp(xi, i).unwrap()).collect();
        let mut want = 0.0;
        for k in 0..3 {
            let mut norm = 0.0;
            for j in 0..m.parameter_count() {
                let mut v = per_class[k][j];
                for g in anchor_grads.iter().rev() {
                    v += g[j];
                }
                norm += v.abs();
            }
            want += p.as_slice()[k] * norm;
        }
        assert!((got - want).abs() <= 1e-10 * want, "{got} vs {want}");
    }

    #[test]
    fn shallow_equals_deep_without_hidden_layers() {
        let m = net(&[4, 3]);
        let a = anchors(&m);
        let x = [0.1, 0.2, -0.3, 0.4];
        let t = Temperature::ONE;
        let s = batchgrad_score(&m, &x, &a, Depth::Shallow, t).unwrap();
        let d = batchgrad_score(&m, &x, &a, Depth::Deep, t).unwrap();
        assert!((s - d).abs() <= 1e-10 * d);
    }

    #[test]
    fn anchor_count_must_match_classes() {
        let m = net(&[4, 3]);
        let a = AnchorSet::new(vec![vec![0.0; 4]; 2]).unwrap();
        assert!(AnchorGradient::compute(&m, &a, Depth::Deep, Temperature::ONE).is_err());
    }

    #[test]
    fn select_is_seeded_and_class_ordered() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let ys: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let a = AnchorSet::select(&xs, &ys, 2, 5).unwrap();
        let b = AnchorSet::select(&xs, &ys, 2, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.inputs()[0][0] as usize % 2, 0);
        assert_eq!(a.inputs()[1][0] as usize % 2, 1);
        assert!(AnchorSet::select(&xs, &ys, 3, 5).is_err());
    }
}

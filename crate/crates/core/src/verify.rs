//! Self-checks: closed forms against explicit gradients, backprop against
//! finite differences, rank AUROC against the pairwise count.
//!
//! The oracles here avoid the code paths they check where it matters: the
//! finite-difference forward pass and the pairwise AUROC are written out
//! from scratch.

use rand::RngExt;
use rand_distr::StandardNormal;
use twofloat::TwoFloat;

use crate::closed_form::{exgrad_closed, gradnorm_closed, Polarity};
use crate::descriptor::{lookup, RegistryOptions, ScoreFamily, REGISTRY};
use crate::error::{Error, Result};
use crate::eval::auroc;
use crate::grad::{
    deep_grad_score, last_layer_grad_logp, last_layer_grads, shallow_grad_score, weighted_sum, Activation, AnchorGradient,
    AnchorSet, Depth, GradMatrix, MicroMlp,
};
use crate::math::{softmax, vector_norm, Encoding, Logits, NormOrder, Temperature};
use crate::rng::{stream, Purpose, StreamRng};

pub const GRADNORM_CLOSED: &str = "gradnorm-closed≡explicit";
pub const EXGRAD_CLOSED: &str = "exgrad-closed≡explicit";
pub const PERCLASS_NORM: &str = "perclass-norm";
pub const ZERO_EXPECTATION: &str = "zero-expectation";
pub const BACKPROP: &str = "backprop≡finite-diff";
pub const AUROC_ORACLE: &str = "auroc≡pairwise-oracle";
pub const DEPTH_DEGENERACY: &str = "depth-degeneracy";

pub const CHECKS: [&str; 7] = [
    GRADNORM_CLOSED,
    EXGRAD_CLOSED,
    PERCLASS_NORM,
    ZERO_EXPECTATION,
    BACKPROP,
    AUROC_ORACLE,
    DEPTH_DEGENERACY,
];

pub const CLOSED_FORM_TOL: f64 = 1e-10;
pub const PERCLASS_TOL: f64 = 1e-12;
pub const ZERO_EXPECTATION_TOL: f64 = 1e-10;
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const FD_MIN_GRAD: f64 = 1e-8;
pub const DEPTH_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    /// Random cases for the closed-form sweeps; the other checks scale from it.
    pub cases: usize,
    pub seed: u64,
    /// Deliberately corrupts one check, to show the harness can fail.
    pub fault: Option<String>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            cases: 1000,
            seed: 42,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Worst observed error, in the check's own units.
    pub worst: f64,
    pub tolerance: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// `|a - b| / max(|a|, |b|)`, and 0 when both are 0.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Pairwise AUROC: wins plus half the ties over all `n_id * n_ood` pairs.
pub fn pairwise_auroc(id: &[f64], ood: &[f64], polarity: Polarity) -> f64 {
    let (mut wins, mut ties) = (0u64, 0u64);
    for &a in id {
        for &b in ood {
            let (a, b) = (polarity.orient(a), polarity.orient(b));
            if a > b {
                wins += 1;
            } else if a == b {
                ties += 1;
            }
        }
    }
    (wins as f64 + 0.5 * ties as f64) / (id.len() as f64 * ood.len() as f64)
}

struct Ctx<'a> {
    fault: Option<&'a str>,
}

impl Ctx<'_> {
    fn tamper(&self, check: &str, v: f64) -> f64 {
        if self.fault == Some(check) {
            v * (1.0 + 1e-6) + 1e-6
        } else {
            v
        }
    }
}

fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

/// A random `(h, logits, T)` triple: `D <= 64`, `C <= 20`, `T` in {0.5, 1, 2}.
fn random_case(rng: &mut StreamRng) -> (Encoding, Logits, Temperature) {
    let d = rng.random_range(1..=64usize);
    let c = rng.random_range(2..=20usize);
    let scale = normal(rng).exp();
    let h = Encoding::new((0..d).map(|_| scale * normal(rng)).collect()).expect("finite");
    let spread = 3.0 * rng.random::<f64>();
    let f = Logits::new((0..c).map(|_| spread * normal(rng)).collect()).expect("finite");
    let t = [0.5, 1.0, 2.0][rng.random_range(0..3usize)];
    (h, f, Temperature::new(t).expect("positive"))
}

fn outcome(name: &'static str, cases: usize, worst: f64, tolerance: f64, note: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst <= tolerance,
        cases,
        worst,
        tolerance,
        note,
    }
}

fn check_gradnorm(ctx: &Ctx, rng: &mut StreamRng, cases: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (h, f, t) = random_case(rng);
        let p = softmax(&f, t);
        let c = p.class_count();
        let explicit = weighted_sum(&last_layer_grads(&h, &p, t), &vec![1.0 / c as f64; c]);
        let lhs = ctx.tamper(GRADNORM_CLOSED, vector_norm(&explicit, NormOrder::L1));
        worst = worst.max(relative_error(lhs, gradnorm_closed(&h, &p, t)));
    }
    outcome(GRADNORM_CLOSED, cases, worst, CLOSED_FORM_TOL, "relative error".into())
}

fn check_exgrad(ctx: &Ctx, rng: &mut StreamRng, cases: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (h, f, t) = random_case(rng);
        let p = softmax(&f, t);
        let lhs: f64 = last_layer_grads(&h, &p, t)
            .iter()
            .zip(p.as_slice())
            .map(|(g, pk)| pk * vector_norm(g, NormOrder::L1))
            .sum();
        let lhs = ctx.tamper(EXGRAD_CLOSED, lhs);
        worst = worst.max(relative_error(lhs, exgrad_closed(&h, &p, t)));
    }
    outcome(EXGRAD_CLOSED, cases, worst, CLOSED_FORM_TOL, "relative error".into())
}

fn check_perclass(ctx: &Ctx, rng: &mut StreamRng, cases: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (h, f, t) = random_case(rng);
        let p = softmax(&f, t);
        let h1 = vector_norm(h.as_slice(), NormOrder::L1);
        for k in 0..p.class_count() {
            let g: GradMatrix = last_layer_grad_logp(&h, &p, k, t).expect("valid class");
            let expected = 2.0 * p.complement(k) * h1 / t.get();
            worst = worst.max(relative_error(ctx.tamper(PERCLASS_NORM, g.l1()), expected));
        }
    }
    outcome(PERCLASS_NORM, cases, worst, PERCLASS_TOL, "relative error, every class".into())
}

/// A seeded net with nonzero biases.
fn seeded_net(dims: &[usize], act: Activation, rng: &mut StreamRng) -> MicroMlp {
    let mut m = MicroMlp::init(dims.to_vec(), act, Temperature::ONE, rng).expect("valid dims");
    let params: Vec<f64> = m.parameters().iter().map(|v| v + 0.1 * normal(rng)).collect();
    m.set_parameters(&params).expect("same length");
    m
}

fn check_zero_expectation(ctx: &Ctx, rng: &mut StreamRng, inputs: usize) -> CheckOutcome {
    let m = seeded_net(&[6, 12, 10, 4], Activation::Tanh, rng);
    let t = Temperature::ONE;
    let mut worst: f64 = 0.0;
    for _ in 0..inputs {
        let x: Vec<f64> = (0..6).map(|_| 2.0 * normal(rng)).collect();
        let (out, deep) = m.per_class_grads(&x, t).expect("valid input");
        let shallow = last_layer_grads(&out.h.augmented(), &out.probs, t);
        for grads in [&deep, &shallow] {
            let p = out.probs.as_slice();
            let residual = vector_norm(&weighted_sum(grads, p), NormOrder::L1);
            let scale: f64 = grads.iter().zip(p).map(|(g, pk)| pk * vector_norm(g, NormOrder::L1)).sum();
            if scale > 0.0 {
                worst = worst.max(ctx.tamper(ZERO_EXPECTATION, residual) / scale);
            }
        }
    }
    outcome(
        ZERO_EXPECTATION,
        inputs,
        worst,
        ZERO_EXPECTATION_TOL,
        "||sum_k p_k g_k||_1 / sum_k p_k ||g_k||_1, shallow and deep".into(),
    )
}

/// Log-probabilities and the hidden pre-activation signs, from a forward
/// pass written independently of [`MicroMlp::forward`].
fn oracle_log_probs(m: &MicroMlp, x: &[f64]) -> (Vec<TwoFloat>, Vec<bool>) {
    let mut a: Vec<TwoFloat> = x.iter().map(|&v| TwoFloat::from(v)).collect();
    let mut signs = Vec::new();
    let last = m.layers().len() - 1;
    for (l, layer) in m.layers().iter().enumerate() {
        let z: Vec<TwoFloat> = (0..layer.outputs)
            .map(|i| {
                let row = &layer.weights[i * layer.inputs..(i + 1) * layer.inputs];
                row.iter().zip(&a).fold(TwoFloat::from(layer.biases[i]), |acc, (&w, &v)| acc + v * w)
            })
            .collect();
        if l == last {
            a = z;
        } else {
            signs.extend(z.iter().map(|v| v.hi() > 0.0));
            a = match m.activation() {
                Activation::Relu => z.into_iter().map(|v| if v.hi() > 0.0 { v } else { TwoFloat::from(0.0) }).collect(),
                Activation::Tanh => z.into_iter().map(TwoFloat::tanh).collect(),
            };
        }
    }
    let t = m.temperature().get();
    let max = a.iter().map(|v| v.hi()).fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<TwoFloat> = a.iter().map(|&v| (v - max) / t).collect();
    let lse = scaled.iter().fold(TwoFloat::from(0.0), |acc, &v| acc + v.exp()).ln();
    (scaled.iter().map(|&v| v - lse).collect(), signs)
}

fn check_backprop(ctx: &Ctx, rng: &mut StreamRng, inputs: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    let mut kinks = 0usize;
    for act in [Activation::Relu, Activation::Tanh] {
        let m = seeded_net(&[8, 16, 16, 5], act, rng);
        let base = m.parameters();
        for _ in 0..inputs {
            let x: Vec<f64> = (0..8).map(|_| normal(rng)).collect();
            let grads: Vec<Vec<f64>> = (0..5).map(|k| m.grad_logp(&x, k).expect("valid input")).collect();
            let (_, signs) = oracle_log_probs(&m, &x);
            let mut probe = m.clone();
            for i in 0..base.len() {
                let mut shifted = base.clone();
                let (up, down) = (base[i] + FD_STEP, base[i] - FD_STEP);
                // the realised stencil width, exact in double-double
                let width = TwoFloat::new_add(up, -down);
                shifted[i] = up;
                probe.set_parameters(&shifted).expect("same length");
                let (plus, s_plus) = oracle_log_probs(&probe, &x);
                shifted[i] = down;
                probe.set_parameters(&shifted).expect("same length");
                let (minus, s_minus) = oracle_log_probs(&probe, &x);
                // a ReLU switching inside the stencil has no derivative to compare
                if s_plus != signs || s_minus != signs {
                    kinks += 1;
                    continue;
                }
                for k in 0..5 {
                    let g = ctx.tamper(BACKPROP, grads[k][i]);
                    if g.abs() <= FD_MIN_GRAD {
                        continue;
                    }
                    let fd = ((plus[k] - minus[k]) / width).hi();
                    worst = worst.max((g - fd).abs() / g.abs());
                    compared += 1;
                }
            }
        }
    }
    outcome(
        BACKPROP,
        2 * inputs,
        worst,
        FD_TOL,
        format!("{compared} coordinates compared, {kinks} skipped at ReLU kinks"),
    )
}

fn check_auroc(ctx: &Ctx, rng: &mut StreamRng, instances: usize) -> CheckOutcome {
    let mut mismatches = 0usize;
    let mut tied = 0usize;
    for n in 0..instances {
        let n_id = rng.random_range(1..=200usize);
        let n_ood = rng.random_range(1..=200usize);
        // every other instance draws from a handful of values to force ties
        let levels = if n % 2 == 0 { Some(rng.random_range(1..=8u32)) } else { None };
        let draw = |rng: &mut StreamRng| match levels {
            Some(l) => rng.random_range(0..l) as f64 * 0.25,
            None => normal(rng),
        };
        let id: Vec<f64> = (0..n_id).map(|_| draw(rng)).collect();
        let ood: Vec<f64> = (0..n_ood).map(|_| draw(rng)).collect();
        if levels.is_some() {
            tied += 1;
        }
        let polarity = if rng.random::<bool>() { Polarity::HigherIsId } else { Polarity::HigherIsOod };
        let fast = ctx.tamper(AUROC_ORACLE, auroc(&id, &ood, polarity).expect("valid scores").value);
        if fast != pairwise_auroc(&id, &ood, polarity) {
            mismatches += 1;
        }
    }
    outcome(
        AUROC_ORACLE,
        instances,
        mismatches as f64,
        0.0,
        format!("exact equality required; {tied} instances with forced ties"),
    )
}

fn check_depth(ctx: &Ctx, rng: &mut StreamRng, inputs: usize) -> Result<CheckOutcome> {
    let d = 7;
    let c = 4;
    let m = seeded_net(&[d, c], Activation::Relu, rng);
    let t = Temperature::new(1.5)?;
    let opts = RegistryOptions {
        temperature: t,
        norm_order: None,
    };
    let anchors = AnchorSet::new((0..c).map(|_| (0..d).map(|_| normal(rng)).collect()).collect())?;
    let xs: Vec<Vec<f64>> = (0..inputs).map(|_| (0..d).map(|_| 2.0 * normal(rng)).collect()).collect();

    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for entry in REGISTRY.iter().filter(|e| e.name.ends_with("-deep")) {
        let deep = lookup(entry.name, &opts)?;
        let shallow = lookup(entry.name.trim_end_matches("-deep"), &opts)?;
        pairs += 1;
        let batch = |depth| AnchorGradient::compute(&m, &anchors, depth, t);
        let (deep_anchor, shallow_anchor) = match deep.family {
            ScoreFamily::BatchGrad { .. } => (Some(batch(Depth::Deep)?), Some(batch(Depth::Shallow)?)),
            _ => (None, None),
        };
        for x in &xs {
            let out = m.forward_at(x, t)?;
            let h = out.h.augmented();
            let (a, b) = match (&deep.family, &shallow.family) {
                (ScoreFamily::Gradient { spec: sd }, ScoreFamily::Gradient { spec: ss }) => {
                    (deep_grad_score(&m, x, sd)?, shallow_grad_score(&h, &out.logits, ss)?)
                }
                (ScoreFamily::BatchGrad { .. }, ScoreFamily::BatchGrad { .. }) => (
                    deep_anchor.as_ref().expect("computed").score(&m, x)?,
                    shallow_anchor.as_ref().expect("computed").score_features(&h, &out.logits)?,
                ),
                _ => return Err(Error::InvalidSpec(format!("`{}` has no shallow counterpart", entry.name))),
            };
            worst = worst.max(relative_error(ctx.tamper(DEPTH_DEGENERACY, a), b));
        }
    }
    Ok(outcome(
        DEPTH_DEGENERACY,
        inputs,
        worst,
        DEPTH_TOL,
        format!("{pairs} deep/shallow pairs on a model without hidden layers"),
    ))
}

/// Runs every check. `cases` drives the closed-form sweeps; AUROC uses
/// `cases / 5` instances, zero-expectation and depth use `cases / 10`
/// inputs, backprop `max(10, cases / 100)` inputs per activation.
pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.cases == 0 {
        return Err(Error::Config("verify needs at least one case".into()));
    }
    if let Some(f) = &cfg.fault {
        if !CHECKS.contains(&f.as_str()) {
            return Err(Error::Config(format!("unknown check `{f}`; checks: {}", CHECKS.join(", "))));
        }
    }
    let ctx = Ctx {
        fault: cfg.fault.as_deref(),
    };
    let mut rng = stream(cfg.seed, Purpose::Verify);
    let n = cfg.cases;
    Ok(VerifyReport {
        checks: vec![
            check_gradnorm(&ctx, &mut rng, n),
            check_exgrad(&ctx, &mut rng, n),
            check_perclass(&ctx, &mut rng, n),
            check_zero_expectation(&ctx, &mut rng, (n / 10).max(1)),
            check_backprop(&ctx, &mut rng, (n / 100).max(10)),
            check_auroc(&ctx, &mut rng, (n / 5).max(1)),
            check_depth(&ctx, &mut rng, (n / 10).max(1))?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_passes() {
        let report = run_verify(&VerifyConfig::default()).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
        assert_eq!(report.checks.iter().map(|c| c.name).collect::<Vec<_>>(), CHECKS);
    }

    #[test]
    fn each_fault_is_caught() {
        for name in CHECKS {
            let cfg = VerifyConfig {
                cases: 50,
                fault: Some(name.to_string()),
                ..Default::default()
            };
            let report = run_verify(&cfg).unwrap();
            let failed: Vec<_> = report.failed().map(|c| c.name).collect();
            assert_eq!(failed, [name]);
        }
    }

    #[test]
    fn unknown_fault_rejected() {
        let cfg = VerifyConfig {
            fault: Some("nope".into()),
            ..Default::default()
        };
        assert!(run_verify(&cfg).is_err());
    }

    #[test]
    fn pairwise_examples() {
        assert_eq!(pairwise_auroc(&[0.9, 0.4], &[0.5, 0.3], Polarity::HigherIsId), 0.75);
        assert_eq!(pairwise_auroc(&[0.5], &[0.5], Polarity::HigherIsId), 0.5);
    }
}

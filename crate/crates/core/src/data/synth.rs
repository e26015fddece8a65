//! Seeded Gaussian-cluster benchmarks: `C` isotropic clusters for the
//! in-distribution data and a shifted or inflated copy for OOD.

use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, StreamRng};

use super::{RawDataset, RawSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum OodMode {
    /// Every cluster mean translated by `delta` along one random unit direction.
    MeanShift { delta: f64 },
    /// Every cluster's standard deviation multiplied by `gamma`.
    ScaleInflate { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub input_dim: usize,
    pub class_count: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    /// Per-coordinate standard deviation of every ID cluster.
    pub cluster_std: f64,
    /// Random means are drawn as `mean_scale * N(0, I)`.
    pub mean_scale: f64,
    /// Explicit cluster means; overrides `mean_scale` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<Vec<f64>>>,
    pub ood: OodMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            class_count: 4,
            train_per_class: 500,
            eval_per_class: 500,
            cluster_std: 1.0,
            mean_scale: 2.5,
            means: None,
            ood: OodMode::MeanShift { delta: 6.0 },
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 2 {
            return Err(Error::Config(format!("input_dim must be >= 2, got {}", self.input_dim)));
        }
        if self.class_count < 2 {
            return Err(Error::Config(format!("class_count must be >= 2, got {}", self.class_count)));
        }
        if self.train_per_class < 1 || self.eval_per_class < 1 {
            return Err(Error::Config("per-class sample counts must be >= 1".into()));
        }
        if !(self.cluster_std.is_finite() && self.cluster_std > 0.0) {
            return Err(Error::Config(format!("cluster_std must be > 0, got {}", self.cluster_std)));
        }
        if !(self.mean_scale.is_finite() && self.mean_scale >= 0.0) {
            return Err(Error::Config(format!("mean_scale must be >= 0, got {}", self.mean_scale)));
        }
        if let Some(means) = &self.means {
            if means.len() != self.class_count || means.iter().any(|m| m.len() != self.input_dim) {
                return Err(Error::Config(format!(
                    "means must be {} vectors of length {}",
                    self.class_count, self.input_dim
                )));
            }
            if means.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Config("means must be finite".into()));
            }
        }
        match self.ood {
            // delta = 0 is the degenerate control where OOD matches ID
            OodMode::MeanShift { delta } if !(delta.is_finite() && delta >= 0.0) => {
                Err(Error::Config(format!("mean-shift delta must be >= 0, got {delta}")))
            }
            OodMode::ScaleInflate { gamma } if !(gamma.is_finite() && gamma > 0.0) => {
                Err(Error::Config(format!("scale-inflate gamma must be > 0, got {gamma}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub means: Vec<Vec<f64>>,
    /// Unit direction used by `MeanShift`.
    pub shift_direction: Vec<f64>,
    pub train: RawDataset,
    pub id_eval: RawDataset,
    pub ood_eval: RawDataset,
}

fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Generates train, ID-eval and OOD-eval sets from the `Data` stream. Draw
/// order is fixed: means, shift direction, train, ID eval, OOD eval.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let d = cfg.input_dim;
    let mut rng = stream(cfg.seed, Purpose::Data);
    let means = match &cfg.means {
        Some(m) => m.clone(),
        None => (0..cfg.class_count)
            .map(|_| (0..d).map(|_| cfg.mean_scale * normal(&mut rng)).collect())
            .collect(),
    };
    let mut direction: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut direction {
        *v /= norm;
    }

    let draw = |prefix: &str, per_class: usize, offset: &[f64], std: f64, labelled: bool, rng: &mut StreamRng| {
        let mut samples = Vec::with_capacity(per_class * cfg.class_count);
        for (class, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let x = mean
                    .iter()
                    .zip(offset)
                    .map(|(m, o)| m + o + std * normal(rng))
                    .collect();
                samples.push(RawSample {
                    sample_id: format!("{prefix}-{:06}", samples.len()),
                    x,
                    label: labelled.then_some(class),
                });
            }
        }
        RawDataset { input_dim: d, samples }
    };

    let zero = vec![0.0; d];
    let train = draw("train", cfg.train_per_class, &zero, cfg.cluster_std, true, &mut rng);
    let id_eval = draw("id", cfg.eval_per_class, &zero, cfg.cluster_std, true, &mut rng);
    let (shift, std) = match cfg.ood {
        OodMode::MeanShift { delta } => (direction.iter().map(|u| delta * u).collect(), cfg.cluster_std),
        OodMode::ScaleInflate { gamma } => (zero.clone(), cfg.cluster_std * gamma),
    };
    let ood_eval = draw("ood", cfg.eval_per_class, &shift, std, false, &mut rng);

    Ok(SynthData {
        means,
        shift_direction: direction,
        train,
        id_eval,
        ood_eval,
    })
}

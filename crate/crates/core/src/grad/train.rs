//! Deterministic mini-batch gradient descent on mean cross-entropy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Temperature;
use crate::rng::{stream, Purpose};

use super::{Activation, MicroMlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// `[d, h_1, ..., C]`.
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub temperature: Temperature,
    /// L2 penalty `lambda/2 ||theta||^2` added to the loss.
    #[serde(default)]
    pub weight_decay: f64,
}

impl TrainConfig {
    pub fn new(layer_dims: Vec<usize>) -> Self {
        Self {
            layer_dims,
            activation: Activation::Tanh,
            epochs: 30,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 42,
            temperature: Temperature::ONE,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MicroMlp,
    /// Fraction of training samples whose argmax matches the label.
    pub train_accuracy: f64,
    /// Mean cross-entropy over the final epoch (`None` for zero epochs).
    pub final_loss: Option<f64>,
}

/// Trains a [`MicroMlp`]. Initialization and the per-epoch shuffle each draw
/// from their own seeded stream, so identical inputs give bit-identical
/// weights.
pub fn train_mlp(inputs: &[Vec<f64>], labels: &[usize], config: &TrainConfig) -> Result<TrainOutcome> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if inputs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "label count",
            expected: inputs.len(),
            found: labels.len(),
        });
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be finite and > 0, got {}",
            config.learning_rate
        )));
    }
    if !(config.weight_decay.is_finite() && config.weight_decay >= 0.0) {
        return Err(Error::Config(format!(
            "weight decay must be finite and >= 0, got {}",
            config.weight_decay
        )));
    }
    let mut init_rng = stream(config.seed, Purpose::Init);
    let mut model = MicroMlp::init(config.layer_dims.clone(), config.activation, config.temperature, &mut init_rng)?;
    let classes = model.class_count();
    for (i, (x, &y)) in inputs.iter().zip(labels).enumerate() {
        if x.len() != model.input_dim() {
            return Err(Error::InvalidInput(format!(
                "training sample {i} has dimension {}, the network expects {}",
                x.len(),
                model.input_dim()
            )));
        }
        if y >= classes {
            return Err(Error::ClassIndex {
                index: y,
                class_count: classes,
            });
        }
    }

    let mut shuffle_rng = stream(config.seed, Purpose::Shuffle);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut params = model.parameters();
    let mut final_loss = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; params.len()];
            for &i in batch {
                let (loss, g) = model.loss_grad(&inputs[i], labels[i]);
                epoch_loss += loss;
                for (a, v) in grad.iter_mut().zip(&g) {
                    *a += v;
                }
            }
            let step = config.learning_rate / batch.len() as f64;
            let decay = config.learning_rate * config.weight_decay;
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= step * g + decay * *p;
            }
            if !epoch_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    loss: epoch_loss,
                });
            }
            model.set_parameters(&params)?;
        }
        final_loss = Some(epoch_loss / inputs.len() as f64);
    }

    let correct = inputs
        .iter()
        .zip(labels)
        .filter(|(x, &y)| model.forward(x).map(|o| o.probs.argmax() == y).unwrap_or(false))
        .count();
    Ok(TrainOutcome {
        model,
        train_accuracy: correct as f64 / inputs.len() as f64,
        final_loss,
    })
}

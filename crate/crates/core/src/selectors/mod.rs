//! Selection functions g′: MaxProb, vector-scaling calibration, and the
//! learned multimodal selector.
//!
//! Every selection function maps a record to a confidence in `[0, 1]`;
//! thresholding that confidence yields the answer/abstain decision.

mod scaler;
mod selector;

pub use scaler::{calibrated_confidence, train_vector_scaling, VectorScaler};
pub use selector::{
    selector_confidence, train_selector, FeatureChannel, FeatureConfig, LossMode, SelectorConfig,
    SelectorModel,
};

use crate::accuracy::vqa_accuracy;
use crate::error::{Error, Result};
use crate::metrics::ScoredExample;
use crate::nn::{
    batch_loss, clip_global_norm, loss_and_grad, optimizer_step, Inputs, LossKind, Network,
    OptimizerConfig, OptimizerState,
};
use crate::records::{NoiseOverride, Record, RecordSet};

/// RNG stream ids: parameter initialization and batch shuffling draw from
/// independent streams of the same seed.
pub(crate) const INIT_STREAM: u64 = 0;
pub(crate) const SHUFFLE_STREAM: u64 = 1;

// ---------------------------------------------------------------------------
// Softmax and MaxProb
// ---------------------------------------------------------------------------

/// Numerically stable (max-shifted) softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("softmax of non-finite logits".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// MaxProb confidence: the softmax probability of the predicted class.
///
/// Uses the record's logits when present; otherwise a precomputed
/// confidence is taken verbatim.
pub fn maxprob_confidence(record: &Record) -> Result<f64> {
    if let Some(logits) = record.logits() {
        let probs = softmax(logits)?;
        return Ok(probs.into_iter().fold(f64::NEG_INFINITY, f64::max));
    }
    record.confidence.ok_or_else(|| {
        Error::Validation(format!(
            "record '{}' has neither logits nor a precomputed confidence",
            record.id
        ))
    })
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

/// Hyperparameters shared by the calibration and selector trainers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stop after this many epochs without validation improvement;
    /// 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub weight_decay: f64,
}

impl TrainConfig {
    /// Vector-scaling defaults: learning rate 0.01, weight decay 1e-4.
    pub fn calibration_default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 256,
            max_epochs: 50,
            patience: 0,
            seed: 0,
            clip_norm: None,
            weight_decay: 1e-4,
        }
    }

    /// Selector defaults: learning rate 1e-4, batch size 256, gradient
    /// clipping at L2 norm 0.25, early stopping with patience 5.
    pub fn selector_default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 256,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            clip_norm: Some(0.25),
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(clip) = self.clip_norm {
            if !(clip.is_finite() && clip > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {clip}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epochs_run: usize,
    /// Full-set training loss measured after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Validation loss of the retained model, when a validation set was given.
    pub best_val_loss: Option<f64>,
    pub optimizer: OptimizerState,
}

/// Minibatch training loop shared by both trainable selection functions.
///
/// Batches are shuffled per epoch by a seeded generator. When a validation
/// set is supplied, the parameters with the best validation loss are
/// retained and training stops early after `patience` epochs without
/// improvement.
pub(crate) fn train_network(
    net: &mut Network,
    train_set: &[(Inputs, Vec<f64>)],
    val_set: Option<&[(Inputs, Vec<f64>)]>,
    loss: LossKind,
    cfg: &TrainConfig,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Domain("training on an empty set".into()));
    }
    let mut state = OptimizerState::new(net, OptimizerConfig::new(cfg.learning_rate, cfg.weight_decay)?);
    let mut rng = crate::nn::seeded_rng(cfg.seed, SHUFFLE_STREAM);

    let val = val_set.map(|set| {
        let inputs: Vec<Inputs> = set.iter().map(|(i, _)| i.clone()).collect();
        let targets: Vec<Vec<f64>> = set.iter().map(|(_, t)| t.clone()).collect();
        (inputs, targets)
    });
    let val_loss = |net: &Network| -> Result<Option<f64>> {
        match &val {
            Some((inputs, targets)) => Ok(Some(batch_loss(net, inputs, targets, loss)?)),
            None => Ok(None),
        }
    };

    let mut best: Option<(Network, OptimizerState, f64)> =
        val_loss(net)?.map(|l| (net.clone(), state.clone(), l));
    let mut stale_epochs = 0usize;
    let mut epoch_losses = Vec::new();
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs_run = 0;

    for _ in 0..cfg.max_epochs {
        epochs_run += 1;
        shuffle(&mut indices, &mut rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let batch: Vec<Inputs> = chunk.iter().map(|&i| train_set[i].0.clone()).collect();
            let targets: Vec<Vec<f64>> = chunk.iter().map(|&i| train_set[i].1.clone()).collect();
            let (_, mut grads) = loss_and_grad(net, &batch, &targets, loss)?;
            if let Some(max_norm) = cfg.clip_norm {
                clip_global_norm(&mut grads, max_norm)?;
            }
            optimizer_step(net, &grads, &mut state)?;
        }
        let train_inputs: Vec<Inputs> = train_set.iter().map(|(i, _)| i.clone()).collect();
        let train_targets: Vec<Vec<f64>> = train_set.iter().map(|(_, t)| t.clone()).collect();
        epoch_losses.push(batch_loss(net, &train_inputs, &train_targets, loss)?);

        if let Some(current) = val_loss(net)? {
            let improved = best.as_ref().map_or(true, |(_, _, best_loss)| current < *best_loss);
            if improved {
                best = Some((net.clone(), state.clone(), current));
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if cfg.patience > 0 && stale_epochs >= cfg.patience {
                    break;
                }
            }
        }
    }

    let best_val_loss = match best {
        Some((best_net, best_state, loss)) => {
            *net = best_net;
            state = best_state;
            Some(loss)
        }
        None => None,
    };
    Ok(TrainSummary { epochs_run, epoch_losses, best_val_loss, optimizer: state })
}

fn shuffle(indices: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// Scoring records with a selection function
// ---------------------------------------------------------------------------

/// A ready-to-apply selection function.
#[derive(Debug, Clone)]
pub enum SelectionFunction {
    MaxProb,
    Calibration(VectorScaler),
    Selector(SelectorModel),
}

impl SelectionFunction {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionFunction::MaxProb => "maxprob",
            SelectionFunction::Calibration(_) => "calibration",
            SelectionFunction::Selector(_) => "selector",
        }
    }

    /// Confidence for one record, plus the new predicted vocabulary index
    /// when the function rescores the answer distribution (calibration can
    /// change the argmax).
    pub fn confidence(&self, record: &Record) -> Result<(f64, Option<usize>)> {
        match self {
            SelectionFunction::MaxProb => Ok((maxprob_confidence(record)?, None)),
            SelectionFunction::Calibration(scaler) => {
                let (confidence, index) = calibrated_confidence(scaler, record)?;
                Ok((confidence, Some(index)))
            }
            SelectionFunction::Selector(model) => Ok((selector_confidence(model, record)?, None)),
        }
    }
}

/// Score every record in a set with a selection function.
///
/// The scored accuracy is recomputed against the (possibly recalibrated)
/// predicted answer, and `correct_top1` compares that answer with the most
/// frequent reference.
pub fn score_records(set: &RecordSet, function: &SelectionFunction) -> Result<Vec<ScoredExample>> {
    let mut scored = Vec::with_capacity(set.len());
    for record in set.iter() {
        let (confidence, new_index) = function.confidence(record)?;
        let prediction = match new_index {
            Some(index) => {
                let vocab = set.vocabulary().ok_or_else(|| {
                    Error::Validation("calibration scoring requires a vocabulary".into())
                })?;
                vocab
                    .get(index)
                    .ok_or_else(|| {
                        Error::Dimension(format!("argmax index {index} outside the vocabulary"))
                    })?
                    .clone()
            }
            None => record.predicted_answer.clone(),
        };
        let accuracy = vqa_accuracy(&prediction, &record.annotations).value();
        let correct_top1 = prediction.matches(record.annotations.most_frequent());
        scored.push(ScoredExample {
            id: record.id.clone(),
            confidence,
            accuracy,
            correct_top1,
            difficulty: record.difficulty,
            unfair: record.noise_override == Some(NoiseOverride::Unfair),
        });
    }
    Ok(scored)
}

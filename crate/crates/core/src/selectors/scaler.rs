//! Vector-scaling calibration.
//!
//! A diagonal weight matrix and a bias term rescale the model logits
//! per class: `z' = diag(w) z + b`. Training minimizes element-wise binary
//! cross entropy between `sigmoid(z')` and the soft accuracy targets over
//! the vocabulary; at evaluation time the scaled logits go through a
//! softmax and the usual MaxProb rule applies. Because the scaling is
//! per-class, it can reorder confidences (unlike temperature scaling) and
//! may change the argmax answer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::accuracy::soft_targets;
use crate::error::{Error, Result};
use crate::nn::{Channel, Checkpoint, Inputs, Layer, LinearLayer, LossKind, Network};
use crate::records::{Record, RecordSet};
use crate::selectors::{train_network, TrainConfig};

/// Per-class affine rescaling of logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorScaler {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl VectorScaler {
    /// The identity scaling: unit weights, zero bias.
    pub fn identity(dim: usize) -> Self {
        Self { weights: vec![1.0; dim], bias: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Apply the scaling to a logits vector.
    pub fn scale(&self, logits: &[f64]) -> Result<Vec<f64>> {
        if logits.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "scaler has dimension {} but logits have {}",
                self.dim(),
                logits.len()
            )));
        }
        Ok(logits
            .iter()
            .zip(&self.weights)
            .zip(&self.bias)
            .map(|((&z, &w), &b)| w * z + b)
            .collect())
    }

    fn network(&self) -> Network {
        Network {
            channels: vec![Channel { name: "logits".into(), layers: Vec::new() }],
            trunk: vec![Layer::Linear(LinearLayer {
                in_dim: self.dim(),
                out_dim: self.dim(),
                diagonal: true,
                weights: self.weights.clone(),
                bias: self.bias.clone(),
            })],
        }
    }

    fn from_network(net: &Network) -> Result<Self> {
        match net.trunk.first() {
            Some(Layer::Linear(layer)) if layer.diagonal => {
                Ok(Self { weights: layer.weights.clone(), bias: layer.bias.clone() })
            }
            _ => Err(Error::Checkpoint("checkpoint does not contain a diagonal scaler".into())),
        }
    }

    /// Package the scaler as a checkpoint.
    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint::new(seed, self.network(), None).with_manifest_entry("kind", "vector_scaler")
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        if checkpoint.manifest.get("kind").map(String::as_str) != Some("vector_scaler") {
            return Err(Error::Checkpoint("checkpoint is not a vector scaler".into()));
        }
        Self::from_network(&checkpoint.network)
    }
}

/// Confidence and predicted class under the scaled logits: softmax over
/// `diag(w) z + b`, returning the maximum probability and its argmax index.
pub fn calibrated_confidence(scaler: &VectorScaler, record: &Record) -> Result<(f64, usize)> {
    let logits = record
        .logits()
        .ok_or_else(|| Error::Validation(format!("record '{}' has no logits", record.id)))?;
    let scaled = scaler.scale(logits)?;
    let probs = crate::selectors::softmax(&scaled)?;
    let (index, max) = probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    Ok((max, index))
}

/// Train a vector scaler on a dev set by element-wise BCE against the soft
/// accuracy targets. Initialization is the identity, so zero epochs return
/// the identity scaler and calibrated confidences equal MaxProb's.
pub fn train_vector_scaling(dev: &RecordSet, cfg: &TrainConfig) -> Result<VectorScaler> {
    cfg.validate()?;
    let vocab = dev
        .vocabulary()
        .ok_or_else(|| Error::Validation("vector scaling requires a vocabulary".into()))?;
    if dev.is_empty() {
        return Err(Error::Domain("vector scaling on an empty dev set".into()));
    }
    let mut examples: Vec<(Inputs, Vec<f64>)> = Vec::with_capacity(dev.len());
    for record in dev.iter() {
        let logits = record
            .logits()
            .ok_or_else(|| Error::Validation(format!("record '{}' has no logits", record.id)))?;
        let inputs = BTreeMap::from([("logits".to_string(), logits.clone())]);
        let targets = soft_targets(&record.annotations, vocab);
        examples.push((inputs, targets));
    }

    let scaler = VectorScaler::identity(vocab.len());
    let mut net = scaler.network();
    net.trunk.push(Layer::Sigmoid); // training-time head only
    train_network(&mut net, &examples, None, LossKind::Bce, cfg)?;
    net.trunk.pop();
    VectorScaler::from_network(&net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{AnnotationSet, AnswerText, FeatureBundle};
    use crate::selectors::maxprob_confidence;

    fn record(id: &str, prediction: &str, refs: &[&str], logits: Vec<f64>) -> Record {
        Record {
            id: id.to_string(),
            image_id: format!("img_{id}"),
            predicted_answer: AnswerText::new(prediction),
            confidence: None,
            features: Some(FeatureBundle { logits: Some(logits), ..Default::default() }),
            annotations: AnnotationSet::new(refs.iter().map(|s| AnswerText::new(*s)).collect()).unwrap(),
            difficulty: None,
            noise_override: None,
        }
    }

    #[test]
    fn identity_scaler_matches_maxprob_exactly() {
        let r = record("q1", "a", &vec!["a"; 10], vec![2.0, 1.0, -0.5]);
        let scaler = VectorScaler::identity(3);
        let (confidence, index) = calibrated_confidence(&scaler, &r).unwrap();
        assert_eq!(confidence, maxprob_confidence(&r).unwrap());
        assert_eq!(index, 0);
    }

    #[test]
    fn bias_can_flip_the_argmax() {
        let r = record("q1", "a", &vec!["a"; 10], vec![5.0, 0.0]);
        let scaler = VectorScaler { weights: vec![1.0, 1.0], bias: vec![0.0, 10.0] };
        let (_, index) = calibrated_confidence(&scaler, &r).unwrap();
        assert_eq!(index, 1, "0 + 10 beats 5 + 0");
    }

    #[test]
    fn uniform_upscaling_keeps_argmax_and_raises_confidence() {
        let r = record("q1", "a", &vec!["a"; 10], vec![2.0, 1.0, 0.0]);
        let identity = VectorScaler::identity(3);
        let doubled = VectorScaler { weights: vec![2.0; 3], bias: vec![0.0; 3] };
        let (base, base_idx) = calibrated_confidence(&identity, &r).unwrap();
        let (sharp, sharp_idx) = calibrated_confidence(&doubled, &r).unwrap();
        assert_eq!(base_idx, sharp_idx);
        assert!(sharp > base);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let r = record("q1", "a", &vec!["a"; 10], vec![1.0, 2.0]);
        let scaler = VectorScaler::identity(3);
        assert!(calibrated_confidence(&scaler, &r).is_err());
    }

    fn dev_set(records: Vec<Record>, vocab: &[&str]) -> RecordSet {
        let vocab = vocab.iter().map(|s| AnswerText::new(*s)).collect();
        RecordSet::new(records, Some(vocab)).unwrap()
    }

    #[test]
    fn zero_epochs_returns_the_identity() {
        let set = dev_set(vec![record("q1", "a", &vec!["a"; 10], vec![1.0, 0.0])], &["a", "b"]);
        let mut cfg = TrainConfig::calibration_default();
        cfg.max_epochs = 0;
        let scaler = train_vector_scaling(&set, &cfg).unwrap();
        assert_eq!(scaler, VectorScaler::identity(2));
    }

    #[test]
    fn training_requires_logits() {
        let mut r = record("q1", "a", &vec!["a"; 10], vec![1.0, 0.0]);
        r.features = None;
        let set = dev_set(vec![r], &["a", "b"]);
        let err = train_vector_scaling(&set, &TrainConfig::calibration_default()).unwrap_err();
        assert!(err.to_string().contains("no logits"), "{err}");
    }

    #[test]
    fn unanimous_single_class_drives_bias_positive() {
        // One-answer vocabulary with all-correct references: the BCE
        // gradient pushes sigmoid(w z + b) toward 1, so b grows positive.
        let records: Vec<Record> =
            (0..8).map(|i| record(&format!("q{i}"), "a", &vec!["a"; 10], vec![0.0])).collect();
        let set = dev_set(records, &["a"]);
        let mut cfg = TrainConfig::calibration_default();
        cfg.learning_rate = 0.05;
        cfg.max_epochs = 200;
        let scaler = train_vector_scaling(&set, &cfg).unwrap();
        assert!(scaler.bias[0] > 0.0, "bias {}", scaler.bias[0]);
        let logit = scaler.bias[0];
        assert!(1.0 / (1.0 + (-logit).exp()) > 0.9);
    }

    #[test]
    fn training_shrinks_overconfidence() {
        // Every record claims 0.9 confidence but only half are correct.
        let hot = |correct: bool, i: usize| {
            let refs = if correct { vec!["a"; 10] } else { vec!["b"; 10] };
            record(&format!("q{i}"), "a", &refs, vec![2.1972245773362196, 0.0])
        };
        let records: Vec<Record> = (0..40).map(|i| hot(i % 2 == 0, i)).collect();
        let set = dev_set(records, &["a", "b"]);

        let pre: Vec<crate::metrics::ScoredExample> =
            crate::selectors::score_records(&set, &crate::selectors::SelectionFunction::MaxProb)
                .unwrap();
        let pre_ece = crate::metrics::ece(&pre, 10).unwrap();

        let mut cfg = TrainConfig::calibration_default();
        cfg.learning_rate = 0.05;
        cfg.max_epochs = 300;
        cfg.seed = 1;
        let scaler = train_vector_scaling(&set, &cfg).unwrap();
        let post: Vec<crate::metrics::ScoredExample> = crate::selectors::score_records(
            &set,
            &crate::selectors::SelectionFunction::Calibration(scaler),
        )
        .unwrap();
        let post_ece = crate::metrics::ece(&post, 10).unwrap();
        assert!(
            post_ece < pre_ece,
            "calibration should reduce ECE: pre {pre_ece:.4} post {post_ece:.4}"
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let scaler = VectorScaler { weights: vec![0.5, 2.0], bias: vec![-0.25, 0.125] };
        let checkpoint = scaler.to_checkpoint(3);
        let restored = VectorScaler::from_checkpoint(&checkpoint).unwrap();
        assert_eq!(restored, scaler);
    }
}

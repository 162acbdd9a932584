//! The learned multimodal selector.
//!
//! Each enabled feature channel runs through its own linear+ReLU encoder,
//! the encoder outputs are concatenated and fed to a two-layer ReLU trunk,
//! and a linear head with a sigmoid emits one confidence scalar. The
//! regression objective fits that scalar to the example's multi-reference
//! accuracy; the classification variant instead targets binary
//! correctness (accuracy > 0).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::accuracy::vqa_accuracy;
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Channel, Checkpoint, Inputs, Layer, LinearLayer, LossKind, Network};
use crate::records::{Record, RecordSet};
use crate::selectors::{train_network, TrainConfig, TrainSummary, INIT_STREAM};

/// Feature channels a selector can consume, in canonical (concatenation)
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureChannel {
    Logits,
    Q,
    V,
    VTilde,
    R,
}

impl FeatureChannel {
    pub const ALL: [FeatureChannel; 5] = [
        FeatureChannel::Logits,
        FeatureChannel::Q,
        FeatureChannel::V,
        FeatureChannel::VTilde,
        FeatureChannel::R,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureChannel::Logits => "logits",
            FeatureChannel::Q => "q",
            FeatureChannel::V => "v",
            FeatureChannel::VTilde => "v_tilde",
            FeatureChannel::R => "r",
        }
    }

    fn extract<'a>(self, record: &'a Record) -> Option<&'a Vec<f64>> {
        let features = record.features.as_ref()?;
        match self {
            FeatureChannel::Logits => features.logits.as_ref(),
            FeatureChannel::Q => features.q.as_ref(),
            FeatureChannel::V => features.v.as_ref(),
            FeatureChannel::VTilde => features.v_tilde.as_ref(),
            FeatureChannel::R => features.r.as_ref(),
        }
    }
}

impl FromStr for FeatureChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureChannel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature channel `{s}`")))
    }
}

/// The enabled subset of feature channels (at least one).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig(Vec<FeatureChannel>);

impl FeatureConfig {
    pub fn new(channels: impl IntoIterator<Item = FeatureChannel>) -> Result<Self> {
        let requested: Vec<FeatureChannel> = channels.into_iter().collect();
        let enabled: Vec<FeatureChannel> =
            FeatureChannel::ALL.into_iter().filter(|c| requested.contains(c)).collect();
        if enabled.is_empty() {
            return Err(Error::Config("at least one feature channel must be enabled".into()));
        }
        Ok(Self(enabled))
    }

    /// Every channel enabled.
    pub fn all() -> Self {
        Self(FeatureChannel::ALL.to_vec())
    }

    pub fn single(channel: FeatureChannel) -> Self {
        Self(vec![channel])
    }

    /// Enabled channels in canonical order.
    pub fn channels(&self) -> &[FeatureChannel] {
        &self.0
    }

    /// Parse a comma-separated channel list, e.g. `logits,q,v,v_tilde,r`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut channels = Vec::new();
        for part in s.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            channels.push(FeatureChannel::from_str(part)?);
        }
        Self::new(channels)
    }
}

impl fmt::Display for FeatureConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|c| c.name()).collect();
        f.write_str(&names.join(","))
    }
}

/// Training objective for the selector head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Regress the sigmoid output to the multi-reference accuracy (MSE).
    Regression,
    /// Classify binary correctness, target `1[accuracy > 0]` (BCE).
    Classification,
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(LossMode::Regression),
            "classification" => Ok(LossMode::Classification),
            other => Err(Error::Config(format!("unknown loss mode `{other}`"))),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Regression => "regression",
            LossMode::Classification => "classification",
        })
    }
}

/// Full selector specification: input channels, objective, layer widths,
/// and training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorConfig {
    pub features: FeatureConfig,
    pub loss_mode: LossMode,
    /// Hidden size of each per-channel encoder.
    pub encoder_hidden: usize,
    /// Hidden size of the two trunk layers.
    pub trunk_hidden: usize,
    pub train: TrainConfig,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::all(),
            loss_mode: LossMode::Regression,
            encoder_hidden: 512,
            trunk_hidden: 1024,
            train: TrainConfig::selector_default(),
        }
    }
}

impl SelectorConfig {
    fn validate(&self) -> Result<()> {
        if self.encoder_hidden == 0 || self.trunk_hidden == 0 {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        self.train.validate()
    }
}

/// A trained (or freshly initialized) selector.
#[derive(Debug, Clone)]
pub struct SelectorModel {
    pub network: Network,
    pub features: FeatureConfig,
    pub loss_mode: LossMode,
    pub seed: u64,
}

impl SelectorModel {
    /// Initialize the architecture for the given per-channel input
    /// dimensions, without training.
    pub fn init(config: &SelectorConfig, input_dims: &[usize]) -> Result<Self> {
        config.validate()?;
        let channels = config.features.channels();
        if channels.len() != input_dims.len() {
            return Err(Error::Dimension(format!(
                "{} channels but {} input dims",
                channels.len(),
                input_dims.len()
            )));
        }
        let mut rng = seeded_rng(config.train.seed, INIT_STREAM);
        let encoder_channels: Vec<Channel> = channels
            .iter()
            .zip(input_dims)
            .map(|(channel, &dim)| Channel {
                name: channel.name().to_string(),
                layers: vec![
                    Layer::Linear(LinearLayer::init(dim, config.encoder_hidden, &mut rng)),
                    Layer::Relu,
                ],
            })
            .collect();
        let concat = config.encoder_hidden * channels.len();
        let trunk = vec![
            Layer::Linear(LinearLayer::init(concat, config.trunk_hidden, &mut rng)),
            Layer::Relu,
            Layer::Linear(LinearLayer::init(config.trunk_hidden, config.trunk_hidden, &mut rng)),
            Layer::Relu,
            Layer::Linear(LinearLayer::init(config.trunk_hidden, 1, &mut rng)),
            Layer::Sigmoid,
        ];
        Ok(Self {
            network: Network { channels: encoder_channels, trunk },
            features: config.features.clone(),
            loss_mode: config.loss_mode,
            seed: config.train.seed,
        })
    }

    /// Package the model as a checkpoint (architecture, parameters, seed,
    /// and a manifest recording the feature configuration and loss mode).
    pub fn to_checkpoint(&self, optimizer: Option<crate::nn::OptimizerState>) -> Checkpoint {
        Checkpoint::new(self.seed, self.network.clone(), optimizer)
            .with_manifest_entry("kind", "selector")
            .with_manifest_entry("features", self.features.to_string())
            .with_manifest_entry("loss_mode", self.loss_mode.to_string())
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        if checkpoint.manifest.get("kind").map(String::as_str) != Some("selector") {
            return Err(Error::Checkpoint("checkpoint is not a selector".into()));
        }
        let features = checkpoint
            .manifest
            .get("features")
            .ok_or_else(|| Error::Checkpoint("selector checkpoint lacks `features`".into()))
            .and_then(|s| FeatureConfig::parse(s))?;
        let loss_mode = checkpoint
            .manifest
            .get("loss_mode")
            .ok_or_else(|| Error::Checkpoint("selector checkpoint lacks `loss_mode`".into()))
            .and_then(|s| LossMode::from_str(s))?;
        Ok(Self { network: checkpoint.network.clone(), features, loss_mode, seed: checkpoint.seed })
    }
}

/// Assemble the named input vectors for one record; errors name the record
/// when an enabled channel is missing.
fn selector_inputs(record: &Record, features: &FeatureConfig) -> Result<Inputs> {
    let mut inputs = BTreeMap::new();
    for &channel in features.channels() {
        let vec = channel.extract(record).ok_or_else(|| {
            Error::Validation(format!(
                "record '{}': missing feature channel `{}`",
                record.id,
                channel.name()
            ))
        })?;
        inputs.insert(channel.name().to_string(), vec.clone());
    }
    Ok(inputs)
}

fn target_for(record: &Record, loss_mode: LossMode) -> f64 {
    let accuracy = vqa_accuracy(&record.predicted_answer, &record.annotations).value();
    match loss_mode {
        LossMode::Regression => accuracy,
        LossMode::Classification => {
            if accuracy > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn assemble(set: &RecordSet, config: &SelectorConfig) -> Result<Vec<(Inputs, Vec<f64>)>> {
    set.iter()
        .map(|record| {
            let inputs = selector_inputs(record, &config.features)?;
            Ok((inputs, vec![target_for(record, config.loss_mode)]))
        })
        .collect()
}

/// Train a selector on the dev split, early-stopping on validation loss;
/// the checkpoint with the best validation loss is retained.
pub fn train_selector(
    dev: &RecordSet,
    val: &RecordSet,
    config: &SelectorConfig,
) -> Result<(SelectorModel, TrainSummary)> {
    config.validate()?;
    if dev.is_empty() || val.is_empty() {
        return Err(Error::Domain("selector training needs non-empty dev and val sets".into()));
    }
    let dev_examples = assemble(dev, config)?;
    let val_examples = assemble(val, config)?;
    let input_dims: Vec<usize> = config
        .features
        .channels()
        .iter()
        .map(|channel| {
            dev_examples[0]
                .0
                .get(channel.name())
                .map(Vec::len)
                .expect("assemble populated every enabled channel")
        })
        .collect();
    let mut model = SelectorModel::init(config, &input_dims)?;
    let loss = match config.loss_mode {
        LossMode::Regression => LossKind::Mse,
        LossMode::Classification => LossKind::Bce,
    };
    let summary =
        train_network(&mut model.network, &dev_examples, Some(&val_examples), loss, &config.train)?;
    Ok((model, summary))
}

/// The selector's confidence for one record: the sigmoid head output.
pub fn selector_confidence(model: &SelectorModel, record: &Record) -> Result<f64> {
    let inputs = selector_inputs(record, &model.features)?;
    let (output, _) = model.network.forward(&inputs)?;
    Ok(output[0])
}

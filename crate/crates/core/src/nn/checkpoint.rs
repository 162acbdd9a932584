//! Versioned model checkpoint container.
//!
//! A checkpoint is a JSON document holding the layer structure with all
//! parameters, the optimizer state, the originating seed, and a free-form
//! manifest. JSON float serialization round-trips `f64` exactly, so
//! write-then-read is lossless at 64-bit precision.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::nn::optim::OptimizerState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Seed the contained parameters originated from.
    pub seed: u64,
    pub network: Network,
    pub optimizer: Option<OptimizerState>,
    /// Model-specific metadata (e.g. feature configuration, loss mode).
    pub manifest: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(seed: u64, network: Network, optimizer: Option<OptimizerState>) -> Self {
        Self { version: CHECKPOINT_VERSION, seed, network, optimizer, manifest: BTreeMap::new() }
    }

    pub fn with_manifest_entry(mut self, key: &str, value: impl Into<String>) -> Self {
        self.manifest.insert(key.to_string(), value.into());
        self
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(checkpoint)
        .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    fs::write(path.as_ref(), json)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let data = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.display())))?;
    let checkpoint: Checkpoint = serde_json::from_str(&data)
        .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            checkpoint.version
        )));
    }
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{Channel, Gradients, Layer, LinearLayer, LossKind};
    use crate::nn::optim::{optimizer_step, OptimizerConfig, OptimizerState};
    use crate::nn::seeded_rng;
    use std::collections::BTreeMap as Map;
    use tempfile::tempdir;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = seeded_rng(11, 0);
        let mut net = Network {
            channels: vec![Channel {
                name: "x".into(),
                layers: vec![Layer::Linear(LinearLayer::init(3, 2, &mut rng)), Layer::Relu],
            }],
            trunk: vec![Layer::Linear(LinearLayer::init(2, 1, &mut rng)), Layer::Sigmoid],
        };
        // Take one optimizer step so the moments are non-trivial.
        let batch = vec![Map::from([("x".to_string(), vec![0.3, -0.7, 1.1])])];
        let (_, grads) = crate::nn::loss_and_grad(&net, &batch, &[vec![1.0]], LossKind::Bce).unwrap();
        let mut state = OptimizerState::new(&net, OptimizerConfig::new(0.05, 1e-4).unwrap());
        optimizer_step(&mut net, &grads, &mut state).unwrap();
        let _ = Gradients::zeros_like(&net);

        let checkpoint = Checkpoint::new(11, net, Some(state)).with_manifest_entry("kind", "test");
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&checkpoint, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, checkpoint);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let net = Network { channels: Vec::new(), trunk: Vec::new() };
        let mut checkpoint = Checkpoint::new(0, net, None);
        checkpoint.version = 99;
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        let json = serde_json::to_string(&checkpoint).unwrap();
        std::fs::write(&path, json).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }
}

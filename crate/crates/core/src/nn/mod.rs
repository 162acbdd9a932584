//! Minimal differentiable feedforward stack.
//!
//! Just enough machinery to train the calibration and selector modules:
//! linear layers (optionally diagonal), ReLU and sigmoid activations, MSE
//! and BCE losses with exact reverse-mode gradients, an adaptive-moment
//! optimizer with decoupled weight decay, global-norm gradient clipping,
//! and a central-finite-difference harness that verifies the analytic
//! gradients. All math is in 64-bit precision and every code path is
//! deterministic given a seed.

mod checkpoint;
mod network;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use network::{
    batch_loss, finite_difference_check, loss_and_grad, max_relative_error, numerical_gradients,
    Cache, Channel, Gradients, Inputs, Layer, LinearGrad, LinearLayer, LossKind, Network,
    REL_ERROR_FLOOR,
};
pub use optim::{clip_global_norm, optimizer_step, OptimizerConfig, OptimizerState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate's deterministic generator: ChaCha8 seeded from a 64-bit seed,
/// with independent streams for independent purposes (parameter
/// initialization, batch order, per-record generation). Identical seeds
/// reproduce identical sequences on every platform.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

//! Adaptive-moment optimizer with decoupled weight decay, plus global-norm
//! gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::network::{Gradients, Network};

/// Optimizer hyperparameters. The moment constants default to
/// `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {weight_decay}")));
        }
        Ok(Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay })
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub config: OptimizerConfig,
}

impl OptimizerState {
    /// Zero-initialized moments shaped like the network's parameters.
    pub fn new(net: &Network, config: OptimizerConfig) -> Self {
        let shapes: Vec<usize> = Gradients::zeros_like(net).tensors().iter().map(|t| t.len()).collect();
        Self {
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            config,
        }
    }
}

/// Scale all gradients by `max_norm / norm` when the global L2 norm exceeds
/// `max_norm`; otherwise leave them alone. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Domain(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

/// One bias-corrected adaptive-moment update with decoupled weight decay.
///
/// ```text
/// m <- β1 m + (1-β1) g            v <- β2 v + (1-β2) g²
/// p <- p - lr · m̂ / (√v̂ + ε) - lr · λ · p
/// ```
///
/// where `m̂`, `v̂` are the bias-corrected moments and the decay term uses
/// the pre-update parameter value.
pub fn optimizer_step(net: &mut Network, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    let params = net.param_tensors_mut();
    let grad_tensors = grads.tensors();
    if params.len() != state.first_moment.len() || params.len() != grad_tensors.len() {
        return Err(Error::Dimension(format!(
            "optimizer state holds {} tensors, network has {}, gradients have {}",
            state.first_moment.len(),
            params.len(),
            grad_tensors.len()
        )));
    }
    state.step += 1;
    let cfg = state.config;
    let bias1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bias2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (((param, grad), m), v) in params
        .into_iter()
        .zip(grad_tensors)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        if param.len() != grad.len() {
            return Err(Error::Dimension("gradient tensor shape mismatch".into()));
        }
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            let decay = cfg.learning_rate * cfg.weight_decay * param[i];
            param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            param[i] -= decay;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{Channel, Layer, LinearLayer};

    fn one_param_net(weight: f64) -> Network {
        Network {
            channels: vec![Channel { name: "input".into(), layers: Vec::new() }],
            trunk: vec![Layer::Linear(LinearLayer {
                in_dim: 1,
                out_dim: 1,
                diagonal: true,
                weights: vec![weight],
                bias: vec![0.0],
            })],
        }
    }

    fn grads_of(net: &Network, weight_grad: f64, bias_grad: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(net);
        grads.tensors_mut()[0][0] = weight_grad;
        grads.tensors_mut()[1][0] = bias_grad;
        grads
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_parameters_alone() {
        let mut net = one_param_net(0.7);
        let grads = Gradients::zeros_like(&net);
        let mut state = OptimizerState::new(&net, OptimizerConfig::new(0.1, 0.0).unwrap());
        optimizer_step(&mut net, &grads, &mut state).unwrap();
        assert_eq!(net.param_tensors_mut()[0][0], 0.7);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_matches_hand_trace() {
        // With g = 0.5, lr = 0.1: m̂ = g, v̂ = g², update = -lr·g/(|g|+ε).
        let mut net = one_param_net(1.0);
        let grads = grads_of(&net, 0.5, 0.0);
        let cfg = OptimizerConfig::new(0.1, 0.0).unwrap();
        let mut state = OptimizerState::new(&net, cfg);
        optimizer_step(&mut net, &grads, &mut state).unwrap();
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + cfg.epsilon);
        assert!((net.param_tensors_mut()[0][0] - expected).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_is_multiplicative() {
        let mut net = one_param_net(2.0);
        let grads = Gradients::zeros_like(&net);
        let mut state = OptimizerState::new(&net, OptimizerConfig::new(0.1, 0.5).unwrap());
        optimizer_step(&mut net, &grads, &mut state).unwrap();
        // p <- p (1 - lr·λ) = 2.0 * 0.95
        assert!((net.param_tensors_mut()[0][0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn clip_scales_only_above_the_limit() {
        let net = one_param_net(0.0);
        let mut grads = grads_of(&net, 3.0, 4.0);
        let norm = clip_global_norm(&mut grads, 1.0).unwrap();
        assert!((norm - 5.0).abs() < 1e-15);
        assert!((grads.tensors()[0][0] - 0.6).abs() < 1e-15);
        assert!((grads.tensors()[1][0] - 0.8).abs() < 1e-15);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);

        let mut grads = grads_of(&net, 0.06, 0.08);
        clip_global_norm(&mut grads, 0.25).unwrap();
        assert_eq!(grads.tensors()[0][0], 0.06);
        assert_eq!(grads.tensors()[1][0], 0.08);

        let mut grads = grads_of(&net, 0.3, 0.4);
        clip_global_norm(&mut grads, 0.25).unwrap();
        assert!((grads.tensors()[0][0] - 0.15).abs() < 1e-15);
        assert!((grads.tensors()[1][0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn clip_preserves_direction_and_never_grows_the_norm() {
        let net = one_param_net(0.0);
        for &(a, b) in &[(1.5, -2.0), (0.01, 0.02), (-3.0, 0.0)] {
            let mut grads = grads_of(&net, a, b);
            let before = grads.global_norm();
            clip_global_norm(&mut grads, 0.9).unwrap();
            let after = grads.global_norm();
            assert!(after <= before + 1e-12);
            // direction preserved: components keep their ratio and sign
            let (ca, cb) = (grads.tensors()[0][0], grads.tensors()[1][0]);
            assert!(ca * a >= 0.0 && cb * b >= 0.0);
            if b != 0.0 {
                assert!((ca / cb - a / b).abs() < 1e-9);
            }
        }
    }
}

//! Parameter optimizers: Adam with bias correction for event-driven runs,
//! SGD with momentum and step decay for static-image runs.
//!
//! Both optimizers are deterministic functions of `(params, grads, state)`.
//! State tensors are kept in the same canonical parameter order the network
//! exposes, so checkpointing the state is a plain tensor dump.

use crate::tensor::{Result, Scalar, Tensor, TensorError};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
}

impl<S: Scalar> AdamParams<S> {
    /// Conventional defaults: `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn with_lr(lr: S) -> Self {
        AdamParams {
            lr,
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            epsilon: S::from_f64(1e-8),
        }
    }
}

/// SGD-with-momentum hyperparameters. The velocity accumulates the raw
/// gradient (`v <- momentum*v + g`) and the update scales by the learning
/// rate (`theta <- theta - lr*v`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdParams<S: Scalar> {
    pub lr: S,
    pub momentum: S,
}

/// Per-parameter-tensor optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState<S: Scalar> {
    Adam {
        /// First and second moment estimates, one pair per parameter tensor.
        m: Vec<Tensor<S>>,
        v: Vec<Tensor<S>>,
        /// Completed update count (bias correction uses `step + 1`).
        step: u64,
    },
    Sgd {
        velocity: Vec<Tensor<S>>,
        step: u64,
    },
}

impl<S: Scalar> OptimizerState<S> {
    pub fn adam(param_shapes: &[&[usize]]) -> Self {
        OptimizerState::Adam {
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }

    pub fn sgd(param_shapes: &[&[usize]]) -> Self {
        OptimizerState::Sgd {
            velocity: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            OptimizerState::Adam { step, .. } | OptimizerState::Sgd { step, .. } => *step,
        }
    }
}

fn check_lengths<S: Scalar>(
    op: &'static str,
    params: &[&mut Tensor<S>],
    grads: &[Tensor<S>],
    state_len: usize,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state_len {
        return Err(TensorError::Contract {
            op,
            detail: format!(
                "parameter/gradient/state counts disagree: {} vs {} vs {}",
                params.len(),
                grads.len(),
                state_len
            ),
        });
    }
    Ok(())
}

/// One Adam update across all parameter tensors:
/// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`,
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)` with the usual
/// bias-corrected moments.
pub fn adam_step<S: Scalar>(
    params: &mut [&mut Tensor<S>],
    grads: &[Tensor<S>],
    state: &mut OptimizerState<S>,
    hp: &AdamParams<S>,
) -> Result<()> {
    let OptimizerState::Adam { m, v, step } = state else {
        return Err(TensorError::Contract {
            op: "adam_step",
            detail: "state is not Adam state".into(),
        });
    };
    check_lengths("adam_step", params, grads, m.len())?;
    *step += 1;
    let t = *step;
    let one = S::one();
    let bias1 = one - hp.beta1.powi(t as i32);
    let bias2 = one - hp.beta2.powi(t as i32);
    for ((theta, g), (mi, vi)) in params.iter_mut().zip(grads).zip(m.iter_mut().zip(v.iter_mut()))
    {
        if theta.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                expected: theta.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
        for ((p, &gk), (mk, vk)) in theta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(mi.data_mut().iter_mut().zip(vi.data_mut().iter_mut()))
        {
            *mk = hp.beta1 * *mk + (one - hp.beta1) * gk;
            *vk = hp.beta2 * *vk + (one - hp.beta2) * gk * gk;
            let m_hat = *mk / bias1;
            let v_hat = *vk / bias2;
            *p = *p - hp.lr * m_hat / (v_hat.sqrt() + hp.epsilon);
        }
        theta.ensure_finite("adam_step")?;
    }
    Ok(())
}

/// One SGD-with-momentum update across all parameter tensors.
pub fn sgd_momentum_step<S: Scalar>(
    params: &mut [&mut Tensor<S>],
    grads: &[Tensor<S>],
    state: &mut OptimizerState<S>,
    hp: &SgdParams<S>,
) -> Result<()> {
    let OptimizerState::Sgd { velocity, step } = state else {
        return Err(TensorError::Contract {
            op: "sgd_momentum_step",
            detail: "state is not SGD state".into(),
        });
    };
    check_lengths("sgd_momentum_step", params, grads, velocity.len())?;
    *step += 1;
    for ((theta, g), vel) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if theta.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sgd_momentum_step",
                expected: theta.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
        for ((p, &gk), vk) in theta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(vel.data_mut().iter_mut())
        {
            *vk = hp.momentum * *vk + gk;
            *p = *p - hp.lr * *vk;
        }
        theta.ensure_finite("sgd_momentum_step")?;
    }
    Ok(())
}

/// Step-decay schedule: the base rate shrinks tenfold every 40 epochs,
/// `r(epoch) = r0 * 0.1^floor(epoch/40)`.
pub fn lr_schedule<S: Scalar>(base_lr: S, epoch: usize) -> S {
    base_lr * S::from_f64(0.1f64.powi((epoch / 40) as i32))
}

//! Explicitly iterative leaky integrate-and-fire dynamics.
//!
//! Each discrete step performs updating, firing, and resetting in one pass:
//! the membrane decays by `k_tau1` wherever the neuron stayed silent, is
//! cleared to zero wherever it fired, then accumulates the new input current
//! and emits a spike where the result reaches the threshold. The spike step
//! is non-differentiable, so training substitutes a rectangular pseudo
//! derivative of width `a` ([`surrogate_grad`]); [`relaxed_spike`] is the
//! matching continuous ramp used by finite-difference verification.

use crate::tensor::{Result, Scalar, Tensor, TensorError};

/// Neuron hyperparameters shared by every layer of a network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifParams<S: Scalar> {
    /// Membrane decay factor, in `[0, 1)`.
    pub k_tau1: S,
    /// Firing threshold, strictly positive.
    pub v_th: S,
    /// Width of the rectangular surrogate window, strictly positive.
    pub a: S,
}

impl<S: Scalar> LifParams<S> {
    pub fn new(k_tau1: S, v_th: S, a: S) -> Result<Self> {
        if !(k_tau1 >= S::zero() && k_tau1 < S::one()) {
            return Err(TensorError::Contract {
                op: "LifParams::new",
                detail: format!("k_tau1 must lie in [0, 1), got {k_tau1}"),
            });
        }
        if !(v_th > S::zero() && v_th.is_finite()) {
            return Err(TensorError::Contract {
                op: "LifParams::new",
                detail: format!("v_th must be positive and finite, got {v_th}"),
            });
        }
        if !(a > S::zero() && a.is_finite()) {
            return Err(TensorError::Contract {
                op: "LifParams::new",
                detail: format!("a must be positive and finite, got {a}"),
            });
        }
        Ok(LifParams { k_tau1, v_th, a })
    }

    /// Convert a validated parameter set to another precision.
    pub fn cast<T: Scalar>(&self) -> LifParams<T> {
        LifParams {
            k_tau1: T::from_f64(self.k_tau1.as_f64()),
            v_th: T::from_f64(self.v_th.as_f64()),
            a: T::from_f64(self.a.as_f64()),
        }
    }
}

/// Membrane potential and spike output of one layer at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<S: Scalar> {
    pub u: Tensor<S>,
    pub o: Tensor<S>,
}

impl<S: Scalar> LayerState<S> {
    /// Quiescent state: `u = 0`, `o = 0` (the start-of-window condition for
    /// every layer and every sample).
    pub fn zeros(shape: &[usize]) -> Self {
        LayerState {
            u: Tensor::zeros(shape),
            o: Tensor::zeros(shape),
        }
    }
}

/// One updating-firing-resetting step:
/// `u' = k_tau1 * u * (1 - o) + input`, `o' = 1` where `u' >= v_th` else `0`.
///
/// The reset target is 0 and the threshold comparison is inclusive, so a
/// membrane landing exactly on `v_th` fires.
pub fn lif_update<S: Scalar>(
    prev: &LayerState<S>,
    input_current: &Tensor<S>,
    params: &LifParams<S>,
) -> Result<LayerState<S>> {
    if !prev.o.is_binary() {
        return Err(TensorError::Contract {
            op: "lif_update",
            detail: "previous spike tensor contains values other than 0 and 1".into(),
        });
    }
    let u = lif_membrane(&prev.u, &prev.o, input_current, params)?;
    let o = spike_step(&u, params);
    Ok(LayerState { u, o })
}

/// Membrane half of [`lif_update`] without the binary-output contract:
/// `u' = k_tau1 * u * (1 - o) + input`. The relaxed training mode feeds
/// real-valued `prev_o` through the same formula.
pub fn lif_membrane<S: Scalar>(
    prev_u: &Tensor<S>,
    prev_o: &Tensor<S>,
    input_current: &Tensor<S>,
    params: &LifParams<S>,
) -> Result<Tensor<S>> {
    if prev_u.shape() != prev_o.shape() || prev_u.shape() != input_current.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "lif_membrane",
            expected: prev_u.shape().to_vec(),
            got: if prev_u.shape() != prev_o.shape() {
                prev_o.shape().to_vec()
            } else {
                input_current.shape().to_vec()
            },
        });
    }
    let k = params.k_tau1;
    let mut u = Tensor::zeros(prev_u.shape());
    for ((dst, (&pu, &po)), &i) in u
        .data_mut()
        .iter_mut()
        .zip(prev_u.data().iter().zip(prev_o.data()))
        .zip(input_current.data())
    {
        *dst = k * pu * (S::one() - po) + i;
    }
    u.ensure_finite("lif_membrane")?;
    Ok(u)
}

/// Hard threshold: 1 where `u >= v_th`, else 0.
pub fn spike_step<S: Scalar>(u: &Tensor<S>, params: &LifParams<S>) -> Tensor<S> {
    let v_th = params.v_th;
    u.map(|x| if x >= v_th { S::one() } else { S::zero() })
}

/// Rectangular pseudo derivative of the spike step:
/// `1/a` where `|u - v_th| < a/2` (strictly), else `0`.
pub fn surrogate_grad<S: Scalar>(u: &Tensor<S>, params: &LifParams<S>) -> Tensor<S> {
    let v_th = params.v_th;
    let a = params.a;
    let half = a / (S::one() + S::one());
    let inv = S::one() / a;
    u.map(|x| if (x - v_th).abs() < half { inv } else { S::zero() })
}

/// Continuous companion of [`spike_step`]: the ramp
/// `clamp((u - v_th)/a + 1/2, 0, 1)`, whose derivative equals
/// [`surrogate_grad`] everywhere except the two kink points.
pub fn relaxed_spike<S: Scalar>(u: &Tensor<S>, params: &LifParams<S>) -> Tensor<S> {
    let v_th = params.v_th;
    let a = params.a;
    let half = S::one() / (S::one() + S::one());
    u.map(|x| ((x - v_th) / a + half).max(S::zero()).min(S::one()))
}

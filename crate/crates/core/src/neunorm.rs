//! Channel-dimension normalization through auxiliary neurons.
//!
//! Each spatial location of a convolutional layer owns one auxiliary neuron
//! that tracks a decaying average of how many of the layer's channels fired
//! there. The next convolutional layer then reads `o - U * x` instead of the
//! raw spikes, where `U` is a trainable per-channel lateral map the same size
//! as the feature map. The decay and input scales are tied by
//! `k_tau2 + v*F = 1`, which bounds the statistic to `[0, 1/F]` and makes the
//! correction start neutral when `U` is zero.

use crate::tensor::{conv2d_forward, Result, Scalar, Tensor, TensorError};

/// Auxiliary-neuron constants for one layer with `channels` feature maps.
///
/// Only the decay `k_tau2` is chosen freely; the input scale is derived as
/// `v = (1 - k_tau2) / F` so that `k_tau2 + v*F = 1` holds exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuNormParams<S: Scalar> {
    pub k_tau2: S,
    pub v: S,
    pub channels: usize,
}

impl<S: Scalar> NeuNormParams<S> {
    pub fn new(k_tau2: S, channels: usize) -> Result<Self> {
        if !(k_tau2 >= S::zero() && k_tau2 < S::one()) {
            return Err(TensorError::Contract {
                op: "NeuNormParams::new",
                detail: format!("k_tau2 must lie in [0, 1), got {k_tau2}"),
            });
        }
        if channels == 0 {
            return Err(TensorError::Contract {
                op: "NeuNormParams::new",
                detail: "channel count must be positive".into(),
            });
        }
        let v = (S::one() - k_tau2) / S::from_usize(channels);
        Ok(NeuNormParams {
            k_tau2,
            v,
            channels,
        })
    }
}

/// Auxiliary-neuron values, one per spatial location of the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxState<S: Scalar> {
    pub x: Tensor<S>,
}

impl<S: Scalar> AuxState<S> {
    /// Start-of-window state: all zeros (reset per sample, like membranes).
    pub fn zeros(height: usize, width: usize) -> Self {
        AuxState {
            x: Tensor::zeros(&[height, width]),
        }
    }
}

/// One statistic update: `x' = k_tau2 * x + (v/F) * sum_f spikes_f`,
/// elementwise over spatial locations, channel sum in ascending order.
pub fn aux_update<S: Scalar>(
    x_prev: &AuxState<S>,
    spikes: &Tensor<S>,
    params: &NeuNormParams<S>,
) -> Result<AuxState<S>> {
    let [f, h, w] = *spikes.shape() else {
        return Err(TensorError::Dimension {
            op: "aux_update",
            detail: format!("spikes must be 3-D [F,H,W], got {:?}", spikes.shape()),
        });
    };
    if f != params.channels {
        return Err(TensorError::Dimension {
            op: "aux_update",
            detail: format!("spikes have {f} channels, params expect {}", params.channels),
        });
    }
    if x_prev.x.shape() != [h, w] {
        return Err(TensorError::ShapeMismatch {
            op: "aux_update",
            expected: vec![h, w],
            got: x_prev.x.shape().to_vec(),
        });
    }
    if !spikes.is_binary() {
        return Err(TensorError::Contract {
            op: "aux_update",
            detail: "spike tensor contains values other than 0 and 1".into(),
        });
    }
    let scale = params.v / S::from_usize(f);
    let mut x = Tensor::zeros(&[h, w]);
    for (idx, dst) in x.data_mut().iter_mut().enumerate() {
        let mut fired = S::zero();
        for c in 0..f {
            fired = fired + spikes.data()[c * h * w + idx];
        }
        *dst = params.k_tau2 * x_prev.x.data()[idx] + scale * fired;
    }
    Ok(AuxState { x })
}

/// The corrected signal the next layer reads: `spikes - U (*) x`, where `U`
/// is `[F,H,W]` and `x` is shared across channels.
pub fn corrected_spikes<S: Scalar>(
    spikes: &Tensor<S>,
    u_lateral: &Tensor<S>,
    x: &AuxState<S>,
) -> Result<Tensor<S>> {
    if spikes.shape() != u_lateral.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "corrected_spikes",
            expected: spikes.shape().to_vec(),
            got: u_lateral.shape().to_vec(),
        });
    }
    let [f, h, w] = *spikes.shape() else {
        return Err(TensorError::Dimension {
            op: "corrected_spikes",
            detail: format!("spikes must be 3-D [F,H,W], got {:?}", spikes.shape()),
        });
    };
    if x.x.shape() != [h, w] {
        return Err(TensorError::ShapeMismatch {
            op: "corrected_spikes",
            expected: vec![h, w],
            got: x.x.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(spikes.shape());
    let plane = h * w;
    for c in 0..f {
        for idx in 0..plane {
            let i = c * plane + idx;
            out.data_mut()[i] =
                spikes.data()[i] - u_lateral.data()[i] * x.x.data()[idx];
        }
    }
    Ok(out)
}

/// Input current of the next convolutional layer under the correction:
/// `conv2d_forward(spikes - U (*) x, weights)`.
pub fn neunorm_input<S: Scalar>(
    weights: &Tensor<S>,
    spikes: &Tensor<S>,
    u_lateral: &Tensor<S>,
    x: &AuxState<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let corrected = corrected_spikes(spikes, u_lateral, x)?;
    conv2d_forward(&corrected, weights, stride, padding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(k_tau2: f64, channels: usize) -> NeuNormParams<f64> {
        NeuNormParams::new(k_tau2, channels).unwrap()
    }

    #[test]
    fn constraint_ties_v_to_decay() {
        let params = p(0.9, 2);
        assert_eq!(params.v, (1.0 - 0.9) / 2.0);
        assert!((params.k_tau2 + params.v * 2.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quiescent_stays_zero() {
        let params = p(0.9, 2);
        let x0 = AuxState::zeros(2, 2);
        let spikes = Tensor::zeros(&[2, 2, 2]);
        let x1 = aux_update(&x0, &spikes, &params).unwrap();
        assert!(x1.x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn both_channels_firing_once() {
        // k_tau2 = 0.9, F = 2 => v = (1 - 0.9)/2; x' = (v/2) * 2.
        let params = p(0.9, 2);
        let x0 = AuxState::zeros(1, 1);
        let spikes = Tensor::from_vec(&[2, 1, 1], vec![1.0, 1.0]).unwrap();
        let x1 = aux_update(&x0, &spikes, &params).unwrap();
        let v = (1.0 - 0.9) / 2.0;
        assert!((x1.x.data()[0] - v).abs() < 1e-15);
    }

    #[test]
    fn saturated_input_converges_to_reciprocal_channel_count() {
        let params = p(0.9, 2);
        let spikes = Tensor::from_vec(&[2, 1, 1], vec![1.0, 1.0]).unwrap();
        let mut x = AuxState::zeros(1, 1);
        for _ in 0..400 {
            x = aux_update(&x, &spikes, &params).unwrap();
        }
        assert!((x.x.data()[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn non_binary_spikes_rejected() {
        let params = p(0.9, 1);
        let x0 = AuxState::zeros(1, 1);
        let spikes = Tensor::from_vec(&[1, 1, 1], vec![0.5]).unwrap();
        assert!(matches!(
            aux_update(&x0, &spikes, &params).unwrap_err(),
            TensorError::Contract { .. }
        ));
    }

    #[test]
    fn channel_count_mismatch_rejected() {
        let params = p(0.9, 3);
        let x0 = AuxState::zeros(1, 1);
        let spikes = Tensor::zeros(&[2, 1, 1]);
        assert!(matches!(
            aux_update(&x0, &spikes, &params).unwrap_err(),
            TensorError::Dimension { .. }
        ));
    }

    #[test]
    fn zero_lateral_weights_reduce_to_plain_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spikes = Tensor::from_vec(
            &[2, 4, 4],
            (0..32).map(|_| f64::from(rng.gen_bool(0.5))).collect(),
        )
        .unwrap();
        let weights = Tensor::from_vec(
            &[3, 2, 3, 3],
            (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let u_zero = Tensor::zeros(&[2, 4, 4]);
        let x = AuxState {
            x: Tensor::from_vec(&[4, 4], (0..16).map(|_| rng.gen_range(0.0..0.5)).collect())
                .unwrap(),
        };
        let with_norm = neunorm_input(&weights, &spikes, &u_zero, &x, 1, 1).unwrap();
        let plain = conv2d_forward(&spikes, &weights, 1, 1).unwrap();
        assert_eq!(with_norm.data(), plain.data());
    }

    #[test]
    fn zero_statistic_reduces_to_plain_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let spikes = Tensor::from_vec(
            &[2, 3, 3],
            (0..18).map(|_| f64::from(rng.gen_bool(0.5))).collect(),
        )
        .unwrap();
        let weights = Tensor::from_vec(
            &[1, 2, 3, 3],
            (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let u_lateral = Tensor::filled(&[2, 3, 3], 0.7);
        let x = AuxState::zeros(3, 3);
        let with_norm = neunorm_input(&weights, &spikes, &u_lateral, &x, 1, 1).unwrap();
        let plain = conv2d_forward(&spikes, &weights, 1, 1).unwrap();
        assert_eq!(with_norm.data(), plain.data());
    }

    #[test]
    fn unit_kernel_correction_value() {
        // 1x1 kernel of weight 1, one channel, spike 1, U = 1, x = 0.05.
        let weights = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let spikes = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let u_lateral = Tensor::filled(&[1, 1, 1], 1.0);
        let x = AuxState {
            x: Tensor::from_vec(&[1, 1], vec![0.05]).unwrap(),
        };
        let out = neunorm_input(&weights, &spikes, &u_lateral, &x, 1, 0).unwrap();
        assert_eq!(out.data()[0], 0.95);
    }

    #[test]
    fn statistic_bounded_under_fuzzed_spike_trains() {
        // With x0 = 0 and k_tau2 + vF = 1, every reachable x lies in [0, 1/F].
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..50 {
            let channels = rng.gen_range(1..6);
            let k_tau2 = rng.gen_range(0.0..0.999);
            let params = p(k_tau2, channels);
            let bound = 1.0 / channels as f64;
            let mut x = AuxState::zeros(2, 2);
            for _ in 0..100 {
                let spikes = Tensor::from_vec(
                    &[channels, 2, 2],
                    (0..channels * 4)
                        .map(|_| f64::from(rng.gen_bool(0.5)))
                        .collect(),
                )
                .unwrap();
                x = aux_update(&x, &spikes, &params).unwrap();
                for &v in x.x.data() {
                    assert!(
                        (0.0..=bound + 1e-12).contains(&v),
                        "trial {trial}: x = {v} escaped [0, {bound}]"
                    );
                }
            }
        }
    }
}

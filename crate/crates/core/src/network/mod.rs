//! Network assembly: structure strings compiled into a concrete layer
//! pipeline with initialized weights, normalization attachments, and the
//! voting readout.
//!
//! A compiled network is a flat list of [`Layer`]s (the trailing `Voting`
//! item becomes the [`VotingMatrix`] rather than a layer). Convolutions and
//! fully-connected layers carry leaky integrate-and-fire state during
//! rollout; pools are stateless. Channel-wise normalization attaches to a
//! convolution exactly when its output feeds another convolution (possibly
//! through pooling) and normalization is enabled; the last convolution and
//! the fully-connected stack always run uncorrected.

pub mod parse;
pub mod voting;

pub use parse::{parse_structure, print_structure, LayerSpec, ParseError};
pub use voting::{build_voting_matrix, classify, VotingMatrix};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::neunorm::NeuNormParams;
use crate::neuron::{lif_update, LayerState, LifParams};
use crate::tensor::{conv2d_forward, Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("network build error: {0}")]
    Build(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Everything needed to build a network deterministically.
#[derive(Clone, Debug)]
pub struct NetworkSpec<S: Scalar> {
    pub layers: Vec<LayerSpec>,
    pub lif: LifParams<S>,
    pub neunorm_enabled: bool,
    pub k_tau2: S,
    /// Simulation window length in time steps.
    pub t_steps: usize,
    pub num_classes: usize,
    /// Probability of dropping each fully-connected input; one mask per
    /// sample per iteration, held across all time steps. Zero disables.
    pub dropout_rate: S,
    /// Input frame shape `(C, H, W)`.
    pub input_shape: [usize; 3],
    /// Optional seed for a shuffled voting assignment; `None` uses the
    /// deterministic block rule.
    pub voting_seed: Option<u64>,
}

impl<S: Scalar> NetworkSpec<S> {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.t_steps == 0 {
            return Err(NetworkError::Build("simulation window T must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(NetworkError::Build(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(self.dropout_rate >= S::zero() && self.dropout_rate < S::one()) {
            return Err(NetworkError::Build(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.k_tau2 >= S::zero() && self.k_tau2 < S::one()) {
            return Err(NetworkError::Build(format!(
                "k_tau2 must lie in [0, 1), got {}",
                self.k_tau2
            )));
        }
        if self.input_shape.contains(&0) {
            return Err(NetworkError::Build(format!(
                "input shape {:?} has a zero dimension",
                self.input_shape
            )));
        }
        if self.layers.is_empty() {
            return Err(NetworkError::Build("layer list is empty".into()));
        }
        if !matches!(self.layers[0], LayerSpec::EncodingConv { .. }) {
            return Err(NetworkError::Build(
                "first layer must be an encoding convolution".into(),
            ));
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Voting)) {
            return Err(NetworkError::Build("last layer must be Voting".into()));
        }
        Ok(())
    }

    /// Canonical structure string of this spec.
    pub fn structure_string(&self) -> String {
        print_structure(&self.layers)
    }
}

/// Trainable channel-wise normalization attached to one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuNormLayer<S: Scalar> {
    /// Lateral weights `[F, H, W]`, zero-initialized so training starts from
    /// plain convolution behavior.
    pub u_lateral: Tensor<S>,
    pub params: NeuNormParams<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<S: Scalar> {
    /// Kernel `[F, C_in, k, k]`; no bias terms anywhere in the network.
    pub weights: Tensor<S>,
    pub stride: usize,
    pub padding: usize,
    pub in_shape: [usize; 3],
    pub out_shape: [usize; 3],
    pub encoding: bool,
    pub neunorm: Option<NeuNormLayer<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcLayer<S: Scalar> {
    /// Weights `[units, in_features]`; inputs are flattened channel-major.
    pub weights: Tensor<S>,
    pub in_features: usize,
    pub units: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<S: Scalar> {
    Conv(ConvLayer<S>),
    Pool {
        window: usize,
        in_shape: [usize; 3],
        out_shape: [usize; 3],
    },
    Fc(FcLayer<S>),
}

impl<S: Scalar> Layer<S> {
    /// Shape of this layer's membrane/spike state, if it is a LIF layer.
    pub fn state_shape(&self) -> Option<Vec<usize>> {
        match self {
            Layer::Conv(c) => Some(c.out_shape.to_vec()),
            Layer::Fc(f) => Some(vec![f.units]),
            Layer::Pool { .. } => None,
        }
    }
}

/// A compiled, initialized network.
#[derive(Clone, Debug)]
pub struct Network<S: Scalar> {
    pub spec: NetworkSpec<S>,
    pub layers: Vec<Layer<S>>,
    pub voting: VotingMatrix<S>,
}

fn preserve_padding(kernel: usize) -> usize {
    kernel / 2
}

impl<S: Scalar> Network<S> {
    /// Compile the spec, infer all shapes, and initialize weights from the
    /// seed: each weight tensor draws uniformly from
    /// `(-1/sqrt(fan_in), 1/sqrt(fan_in))` on its own generator stream, so
    /// the values for one layer do not depend on other layers' sizes.
    pub fn init(spec: NetworkSpec<S>, seed: u64) -> Result<Self, NetworkError> {
        spec.validate()?;
        let mut layers: Vec<Layer<S>> = Vec::new();
        let mut shape = spec.input_shape;
        let mut fc_units: Option<usize> = None; // Some once the FC stack begins
        let n_items = spec.layers.len();
        for (idx, item) in spec.layers.iter().enumerate() {
            match *item {
                LayerSpec::EncodingConv {
                    out_channels,
                    kernel,
                }
                | LayerSpec::Conv {
                    out_channels,
                    kernel,
                } => {
                    if fc_units.is_some() {
                        return Err(NetworkError::Build(format!(
                            "layer {}: convolution cannot follow a fully-connected layer",
                            idx + 1
                        )));
                    }
                    let padding = preserve_padding(kernel);
                    let (h, w) = (shape[1], shape[2]);
                    if h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return Err(NetworkError::Build(format!(
                            "layer {}: {kernel}x{kernel} kernel does not fit {h}x{w} input",
                            idx + 1
                        )));
                    }
                    let oh = (h + 2 * padding - kernel) + 1;
                    let ow = (w + 2 * padding - kernel) + 1;
                    let in_shape = shape;
                    let out_shape = [out_channels, oh, ow];
                    layers.push(Layer::Conv(ConvLayer {
                        weights: Tensor::zeros(&[out_channels, in_shape[0], kernel, kernel]),
                        stride: 1,
                        padding,
                        in_shape,
                        out_shape,
                        encoding: matches!(item, LayerSpec::EncodingConv { .. }),
                        neunorm: None,
                    }));
                    shape = out_shape;
                }
                LayerSpec::AvgPool { window } => {
                    if fc_units.is_some() {
                        return Err(NetworkError::Build(format!(
                            "layer {}: pooling cannot follow a fully-connected layer",
                            idx + 1
                        )));
                    }
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    if h % window != 0 || w % window != 0 {
                        return Err(NetworkError::Build(format!(
                            "layer {}: pool window {window} does not divide {h}x{w}",
                            idx + 1
                        )));
                    }
                    let out_shape = [c, h / window, w / window];
                    layers.push(Layer::Pool {
                        window,
                        in_shape: shape,
                        out_shape,
                    });
                    shape = out_shape;
                }
                LayerSpec::FullyConnected { units } => {
                    let in_features = match fc_units {
                        Some(u) => u,
                        None => shape[0] * shape[1] * shape[2],
                    };
                    layers.push(Layer::Fc(FcLayer {
                        weights: Tensor::zeros(&[units, in_features]),
                        in_features,
                        units,
                    }));
                    fc_units = Some(units);
                }
                LayerSpec::Voting => {
                    if idx + 1 != n_items {
                        return Err(NetworkError::Build(format!(
                            "layer {}: Voting must be the final layer",
                            idx + 1
                        )));
                    }
                    if !matches!(layers.last(), Some(Layer::Fc(_))) {
                        return Err(NetworkError::Build(
                            "Voting must immediately follow a fully-connected layer".into(),
                        ));
                    }
                }
            }
        }

        // Attach normalization to each convolution whose output feeds
        // another convolution (pools in between are transparent).
        if spec.neunorm_enabled {
            let feeds_conv: Vec<bool> = (0..layers.len())
                .map(|i| {
                    layers[i + 1..]
                        .iter()
                        .find(|l| !matches!(l, Layer::Pool { .. }))
                        .is_some_and(|l| matches!(l, Layer::Conv(_)))
                })
                .collect();
            for (i, layer) in layers.iter_mut().enumerate() {
                if let Layer::Conv(conv) = layer {
                    if feeds_conv[i] {
                        let [f, h, w] = conv.out_shape;
                        conv.neunorm = Some(NeuNormLayer {
                            u_lateral: Tensor::zeros(&[f, h, w]),
                            params: NeuNormParams::new(spec.k_tau2, f)?,
                        });
                    }
                }
            }
        }

        let n_last = fc_units.expect("voting adjacency guarantees an FC layer");
        let voting = build_voting_matrix(spec.num_classes, n_last, spec.voting_seed)?;

        let mut net = Network {
            spec,
            layers,
            voting,
        };
        net.randomize_weights(seed);
        Ok(net)
    }

    fn randomize_weights(&mut self, seed: u64) {
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            let (weights, fan_in) = match layer {
                Layer::Conv(c) => {
                    let fan_in = c.in_shape[0] * c.weights.shape()[2] * c.weights.shape()[3];
                    (&mut c.weights, fan_in)
                }
                Layer::Fc(f) => (&mut f.weights, f.in_features),
                Layer::Pool { .. } => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64 + 1);
            for w in weights.data_mut() {
                *w = S::from_f64(rng.gen_range(-bound..bound));
            }
        }
    }

    /// Total trainable parameter count (kernels plus lateral maps).
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => {
                    c.weights.numel()
                        + c.neunorm.as_ref().map_or(0, |n| n.u_lateral.numel())
                }
                Layer::Fc(f) => f.weights.numel(),
                Layer::Pool { .. } => 0,
            })
            .sum()
    }

    /// All trainable tensors in canonical order: layers ascending, kernel
    /// before lateral map. Gradient sets and optimizer state use the same
    /// order.
    pub fn param_tensors(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(&c.weights);
                    if let Some(n) = &c.neunorm {
                        out.push(&n.u_lateral);
                    }
                }
                Layer::Fc(f) => out.push(&f.weights),
                Layer::Pool { .. } => {}
            }
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(&mut c.weights);
                    if let Some(n) = &mut c.neunorm {
                        out.push(&mut n.u_lateral);
                    }
                }
                Layer::Fc(f) => out.push(&mut f.weights),
                Layer::Pool { .. } => {}
            }
        }
        out
    }

    /// Human-readable parameter block names aligned with [`param_tensors`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    out.push(format!("layer{i}.conv.weights"));
                    if c.neunorm.is_some() {
                        out.push(format!("layer{i}.conv.lateral"));
                    }
                }
                Layer::Fc(_) => out.push(format!("layer{i}.fc.weights")),
                Layer::Pool { .. } => {}
            }
        }
        out
    }
}

/// One time step of the encoding layer: the raw frame (real-valued for
/// static images, binary for event frames) is convolved into an input
/// current and integrated by ordinary LIF dynamics.
pub fn encode_step<S: Scalar>(
    raw_frame: &Tensor<S>,
    state: &LayerState<S>,
    weights: &Tensor<S>,
    stride: usize,
    padding: usize,
    lif: &LifParams<S>,
) -> Result<LayerState<S>, TensorError> {
    let current = conv2d_forward(raw_frame, weights, stride, padding)?;
    lif_update(state, &current, lif)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(structure: &str, neunorm: bool) -> NetworkSpec<f64> {
        NetworkSpec {
            layers: parse_structure(structure).unwrap(),
            lif: LifParams::new(0.3, 0.25, 0.25).unwrap(),
            neunorm_enabled: neunorm,
            k_tau2: 0.9,
            t_steps: 4,
            num_classes: 10,
            dropout_rate: 0.0,
            input_shape: [1, 28, 28],
            voting_seed: None,
        }
    }

    #[test]
    fn shapes_inferred_through_pipeline() {
        let net = Network::init(spec("32C3(Encoding)-AP2-32C3-AP2-256FC-Voting", false), 1).unwrap();
        assert_eq!(net.layers.len(), 5);
        let Layer::Conv(c0) = &net.layers[0] else { panic!() };
        assert_eq!(c0.out_shape, [32, 28, 28]);
        assert!(c0.encoding);
        let Layer::Pool { out_shape, .. } = &net.layers[1] else {
            panic!()
        };
        assert_eq!(*out_shape, [32, 14, 14]);
        let Layer::Conv(c2) = &net.layers[2] else { panic!() };
        assert_eq!(c2.out_shape, [32, 14, 14]);
        let Layer::Fc(fc) = &net.layers[4] else { panic!() };
        assert_eq!(fc.in_features, 32 * 7 * 7);
        assert_eq!(fc.units, 256);
        assert_eq!(net.voting.n_last(), 256);
    }

    #[test]
    fn normalization_attaches_only_where_a_conv_follows() {
        let net = Network::init(spec("32C3(Encoding)-AP2-32C3-AP2-256FC-Voting", true), 1).unwrap();
        let Layer::Conv(c0) = &net.layers[0] else { panic!() };
        let Layer::Conv(c2) = &net.layers[2] else { panic!() };
        // encoding conv feeds (through a pool) another conv: corrected
        assert!(c0.neunorm.is_some());
        assert_eq!(
            c0.neunorm.as_ref().unwrap().u_lateral.shape(),
            &[32, 28, 28]
        );
        // second conv feeds the FC stack: uncorrected
        assert!(c2.neunorm.is_none());
    }

    #[test]
    fn normalization_disabled_attaches_nothing() {
        let net = Network::init(spec("32C3(Encoding)-AP2-32C3-AP2-256FC-Voting", false), 1).unwrap();
        for layer in &net.layers {
            if let Layer::Conv(c) = layer {
                assert!(c.neunorm.is_none());
            }
        }
    }

    #[test]
    fn conv_after_fc_rejected() {
        let bad = spec("8C3(Encoding)-16FC-Voting", false);
        let mut layers = bad.layers.clone();
        layers.insert(2, LayerSpec::Conv {
            out_channels: 8,
            kernel: 3,
        });
        let bad = NetworkSpec { layers, ..bad };
        assert!(matches!(
            Network::init(bad, 1),
            Err(NetworkError::Build(_))
        ));
    }

    #[test]
    fn non_divisible_pool_rejected() {
        let mut s = spec("8C3(Encoding)-AP2-16FC-Voting", false);
        s.input_shape = [1, 7, 7];
        assert!(matches!(Network::init(s, 1), Err(NetworkError::Build(_))));
    }

    #[test]
    fn voting_requires_adjacent_fc() {
        let s = spec("32C3(Encoding)-AP2-32C3-AP2-256FC-Voting", false);
        let mut layers = s.layers.clone();
        layers.remove(4); // drop the FC, leaving pool-Voting
        let bad = NetworkSpec { layers, ..s };
        assert!(matches!(
            Network::init(bad, 1),
            Err(NetworkError::Build(_))
        ));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = Network::init(spec("8C3(Encoding)-AP2-32FC-Voting", false), 7).unwrap();
        let b = Network::init(spec("8C3(Encoding)-AP2-32FC-Voting", false), 7).unwrap();
        let c = Network::init(spec("8C3(Encoding)-AP2-32FC-Voting", false), 8).unwrap();
        for (ta, tb) in a.param_tensors().iter().zip(b.param_tensors()) {
            assert_eq!(ta.data(), tb.data());
        }
        let differs = a
            .param_tensors()
            .iter()
            .zip(c.param_tensors())
            .any(|(ta, tc)| ta.data() != tc.data());
        assert!(differs);
    }

    #[test]
    fn init_bounds_respect_fan_in() {
        let net = Network::init(spec("8C3(Encoding)-AP2-32FC-Voting", false), 3).unwrap();
        let Layer::Conv(c) = &net.layers[0] else { panic!() };
        let bound = 1.0 / (9.0f64).sqrt();
        assert!(c.weights.data().iter().all(|w| w.abs() < bound));
        assert!(c.weights.data().iter().any(|&w| w != 0.0));
    }

    #[test]
    fn param_count_matches_layout() {
        let net = Network::init(spec("8C3(Encoding)-AP2-32FC-Voting", true), 3).unwrap();
        // conv kernel 8*1*3*3 = 72, no lateral map (feeds FC), fc 32*(8*14*14)
        assert_eq!(net.num_params(), 72 + 32 * 8 * 14 * 14);
    }

    #[test]
    fn encoding_layer_respikes_every_step() {
        // A constant 0.8 drive against v_th = 0.75 fires at every step: the
        // reset clears the membrane and the drive alone re-crosses threshold.
        let lif = LifParams::new(0.25, 0.75, 1.0).unwrap();
        let frame = Tensor::from_vec(&[1, 1, 1], vec![0.8]).unwrap();
        let weights = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let mut state = LayerState::zeros(&[1, 1, 1]);
        for step in 0..5 {
            state = encode_step(&frame, &state, &weights, 1, 0, &lif).unwrap();
            assert_eq!(state.o.data()[0], 1.0, "no spike at step {step}");
            assert_eq!(state.u.data()[0], 0.8);
        }
    }

    #[test]
    fn invalid_spec_fields_rejected() {
        let mut s = spec("8C3(Encoding)-AP2-32FC-Voting", false);
        s.t_steps = 0;
        assert!(Network::init(s, 1).is_err());
        let mut s = spec("8C3(Encoding)-AP2-32FC-Voting", false);
        s.num_classes = 1;
        assert!(Network::init(s, 1).is_err());
        let mut s = spec("8C3(Encoding)-AP2-32FC-Voting", false);
        s.dropout_rate = 1.0;
        assert!(Network::init(s, 1).is_err());
    }
}

//! Training by backpropagation through both the layer stack and the
//! simulation window.
//!
//! The forward pass rolls the network over `T` steps and caches every
//! membrane, spike, input current, and normalization statistic. The loss
//! compares the time-averaged voting scores against a one-hot label. The
//! backward pass runs the double recursion over `(t, layer)`: at each slot
//! the adjoint of the spike output collects a spatial term pushed down from
//! the layer above at the same step plus a temporal term from the same layer
//! one step later, and the adjoint of the membrane combines the surrogate
//! window with the decayed not-fired carry. Gradients flow through the
//! lateral weights `U` of the normalization but not through its statistic
//! recursion `x`, which is treated as a detached running average.
//!
//! Summation-order policy (shared with the verification oracle): every
//! reduction is a sequential ascending-index fold; time accumulation in the
//! backward pass runs `t = T..1`; the spatial term is computed first and the
//! temporal term added to it; per-batch reductions fold samples in batch
//! order.

use rayon::prelude::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{classify, Layer, Network};
use crate::neunorm::{corrected_spikes, AuxState};
use crate::neuron::{lif_membrane, relaxed_spike, spike_step, surrogate_grad, LayerState};
use crate::optim::{adam_step, sgd_momentum_step, AdamParams, OptimizerState, SgdParams};
use crate::tensor::{
    avgpool2d, avgpool2d_backward, conv2d_backward, conv2d_forward, matmul, matvec_transpose,
    outer_accum, Result, Scalar, Tensor, TensorError,
};

/// How spikes are produced during rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpikeMode {
    /// Hard threshold; outputs are exactly 0/1. Normal training and
    /// evaluation mode.
    Binary,
    /// The continuous ramp stands in for the step function, making the whole
    /// rollout differentiable away from the ramp kinks. Used only to verify
    /// gradients against finite differences.
    Relaxed,
}

/// Per-step network input.
#[derive(Clone, Copy, Debug)]
pub enum Frames<'a, S: Scalar> {
    /// A static image re-presented identically at every step; the encoding
    /// layer's dynamics generate the temporal structure.
    Static(&'a Tensor<S>),
    /// One (typically binary) frame per step.
    Temporal(&'a [Tensor<S>]),
}

impl<'a, S: Scalar> Frames<'a, S> {
    fn at(&self, t: usize) -> &'a Tensor<S> {
        match self {
            Frames::Static(f) => f,
            Frames::Temporal(fs) => &fs[t],
        }
    }

    fn check(&self, t_steps: usize, input_shape: &[usize]) -> Result<()> {
        if let Frames::Temporal(fs) = self {
            if fs.len() != t_steps {
                return Err(TensorError::Contract {
                    op: "forward",
                    detail: format!("expected {t_steps} frames, got {}", fs.len()),
                });
            }
        }
        for t in 0..t_steps {
            let shape = self.at(t).shape();
            if shape != input_shape {
                return Err(TensorError::ShapeMismatch {
                    op: "forward",
                    expected: input_shape.to_vec(),
                    got: shape.to_vec(),
                });
            }
            if let Frames::Static(_) = self {
                break; // one check suffices
            }
        }
        Ok(())
    }
}

/// Owned per-sample input.
#[derive(Clone, Debug)]
pub enum SampleFrames<S: Scalar> {
    Static(Tensor<S>),
    Temporal(Vec<Tensor<S>>),
}

impl<S: Scalar> SampleFrames<S> {
    pub fn view(&self) -> Frames<'_, S> {
        match self {
            SampleFrames::Static(f) => Frames::Static(f),
            SampleFrames::Temporal(fs) => Frames::Temporal(fs),
        }
    }
}

/// One labeled training/evaluation sample.
#[derive(Clone, Debug)]
pub struct Sample<S: Scalar> {
    pub frames: SampleFrames<S>,
    pub label: usize,
}

/// Full forward trace of one layer over the simulation window.
#[derive(Clone, Debug, Default)]
pub struct LayerTrace<S: Scalar> {
    /// Signal fed to this layer's weights at each step (after any pooling,
    /// flattening, normalization correction, and dropout).
    pub inputs: Vec<Tensor<S>>,
    /// Input currents `I = W (*) input`.
    pub currents: Vec<Tensor<S>>,
    /// Membrane potentials `u`.
    pub membranes: Vec<Tensor<S>>,
    /// Spike outputs `o` (binary in [`SpikeMode::Binary`]).
    pub spikes: Vec<Tensor<S>>,
    /// Post-update normalization statistic `x`, when attached.
    pub aux: Vec<Tensor<S>>,
}

impl<S: Scalar> LayerTrace<S> {
    fn default_vec(n: usize) -> Vec<Self> {
        (0..n)
            .map(|_| LayerTrace {
                inputs: Vec::new(),
                currents: Vec::new(),
                membranes: Vec::new(),
                spikes: Vec::new(),
                aux: Vec::new(),
            })
            .collect()
    }
}

/// Everything the backward pass needs, retained for all `T` steps.
#[derive(Clone, Debug)]
pub struct StateCache<S: Scalar> {
    pub t_steps: usize,
    pub mode: SpikeMode,
    /// Aligned with `Network::layers`; pool entries stay empty.
    pub layers: Vec<LayerTrace<S>>,
    /// Dropout masks (0/1), aligned with `Network::layers`, `None` where no
    /// mask was applied.
    pub dropout_masks: Vec<Option<Tensor<S>>>,
    pub vote_average: Tensor<S>,
}

impl<S: Scalar> StateCache<S> {
    /// The normalization statistics of this rollout, in the layout
    /// [`ForwardOptions::aux_override`] expects: used to pin `x` across
    /// finite-difference perturbations.
    pub fn aux_trace(&self) -> Vec<Vec<Tensor<S>>> {
        self.layers.iter().map(|l| l.aux.clone()).collect()
    }
}

/// Rollout controls.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'a, S: Scalar> {
    pub mode: Option<SpikeMode>,
    /// Pre-drawn dropout masks aligned with `Network::layers` (0/1 entries;
    /// inverted scaling is applied internally). `None` runs without dropout,
    /// which is also the evaluation behavior.
    pub dropout_masks: Option<&'a [Option<Tensor<S>>]>,
    /// Pinned normalization statistics replacing the `x` recursion, aligned
    /// with `Network::layers`, inner vectors of length `T`. Gradients do not
    /// flow through `x`, so finite-difference probes must hold it fixed.
    pub aux_override: Option<&'a [Vec<Tensor<S>>]>,
}

impl<S: Scalar> ForwardOptions<'_, S> {
    fn mode(&self) -> SpikeMode {
        self.mode.unwrap_or(SpikeMode::Binary)
    }
}

/// Normalization statistic update without the binary-input contract, for
/// relaxed-mode rollouts where spikes are real-valued.
fn aux_next<S: Scalar>(
    x_prev: &Tensor<S>,
    spikes: &Tensor<S>,
    k_tau2: S,
    v: S,
) -> Tensor<S> {
    let [f, h, w] = *spikes.shape() else {
        unreachable!("conv outputs are 3-D");
    };
    let scale = v / S::from_usize(f);
    let mut x = Tensor::zeros(&[h, w]);
    for (idx, dst) in x.data_mut().iter_mut().enumerate() {
        let mut fired = S::zero();
        for c in 0..f {
            fired = fired + spikes.data()[c * h * w + idx];
        }
        *dst = k_tau2 * x_prev.data()[idx] + scale * fired;
    }
    x
}

/// Roll the network over the window and return the complete state cache and
/// the time-averaged voting scores.
pub fn forward<S: Scalar>(
    net: &Network<S>,
    frames: Frames<'_, S>,
    opts: &ForwardOptions<'_, S>,
) -> Result<(StateCache<S>, Tensor<S>)> {
    rollout(net, frames, opts, true)
}

/// Forward pass without state retention; returns only the voting scores.
pub fn infer<S: Scalar>(net: &Network<S>, frames: Frames<'_, S>) -> Result<Tensor<S>> {
    let (_, vote) = rollout(net, frames, &ForwardOptions::default(), false)?;
    Ok(vote)
}

fn rollout<S: Scalar>(
    net: &Network<S>,
    frames: Frames<'_, S>,
    opts: &ForwardOptions<'_, S>,
    record: bool,
) -> Result<(StateCache<S>, Tensor<S>)> {
    let t_steps = net.spec.t_steps;
    let mode = opts.mode();
    frames.check(t_steps, &net.spec.input_shape)?;
    let lif = net.spec.lif;
    let inv_keep = S::one() / (S::one() - net.spec.dropout_rate);

    let n_layers = net.layers.len();
    let mut traces = LayerTrace::default_vec(n_layers);
    let mut states: Vec<Option<LayerState<S>>> = vec![None; n_layers];
    let mut aux: Vec<Option<AuxState<S>>> = vec![None; n_layers];
    for (idx, layer) in net.layers.iter().enumerate() {
        if let Some(shape) = layer.state_shape() {
            states[idx] = Some(LayerState::zeros(&shape));
        }
        if let Layer::Conv(c) = layer {
            if c.neunorm.is_some() {
                aux[idx] = Some(AuxState::zeros(c.out_shape[1], c.out_shape[2]));
            }
        }
    }

    let mut vote_acc = Tensor::zeros(&[net.spec.num_classes]);
    for t in 0..t_steps {
        let mut signal = frames.at(t).clone();
        for (idx, layer) in net.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    if record {
                        traces[idx].inputs.push(signal.clone());
                    }
                    let current = conv2d_forward(&signal, &c.weights, c.stride, c.padding)?;
                    let prev = states[idx].as_ref().expect("conv layers carry state");
                    let u = lif_membrane(&prev.u, &prev.o, &current, &lif)?;
                    let o = match mode {
                        SpikeMode::Binary => spike_step(&u, &lif),
                        SpikeMode::Relaxed => relaxed_spike(&u, &lif),
                    };
                    if record {
                        traces[idx].currents.push(current);
                        traces[idx].membranes.push(u.clone());
                        traces[idx].spikes.push(o.clone());
                    }
                    signal = o.clone();
                    if let Some(nn) = &c.neunorm {
                        let x = match opts.aux_override {
                            Some(pinned) => pinned[idx][t].clone(),
                            None => {
                                let x_prev = &aux[idx].as_ref().expect("aux initialized").x;
                                aux_next(x_prev, &o, nn.params.k_tau2, nn.params.v)
                            }
                        };
                        signal = corrected_spikes(&o, &nn.u_lateral, &AuxState { x: x.clone() })?;
                        if record {
                            traces[idx].aux.push(x.clone());
                        }
                        aux[idx] = Some(AuxState { x });
                    }
                    states[idx] = Some(LayerState { u, o });
                }
                Layer::Pool { window, .. } => {
                    signal = avgpool2d(&signal, *window)?;
                }
                Layer::Fc(f) => {
                    if signal.ndim() > 1 {
                        signal = signal.reshaped(&[signal.numel()])?;
                    }
                    if let Some(masks) = opts.dropout_masks {
                        if let Some(mask) = &masks[idx] {
                            signal = signal.mul(mask)?.scale(inv_keep);
                        }
                    }
                    if record {
                        traces[idx].inputs.push(signal.clone());
                    }
                    let current = matmul(&f.weights, &signal)?;
                    let prev = states[idx].as_ref().expect("fc layers carry state");
                    let u = lif_membrane(&prev.u, &prev.o, &current, &lif)?;
                    let o = match mode {
                        SpikeMode::Binary => spike_step(&u, &lif),
                        SpikeMode::Relaxed => relaxed_spike(&u, &lif),
                    };
                    if record {
                        traces[idx].currents.push(current);
                        traces[idx].membranes.push(u.clone());
                        traces[idx].spikes.push(o.clone());
                    }
                    signal = o.clone();
                    states[idx] = Some(LayerState { u, o });
                }
            }
        }
        let step_scores = net.voting.apply(&signal)?;
        vote_acc.add_assign(&step_scores)?;
    }
    let vote_average = vote_acc.scale(S::one() / S::from_usize(t_steps));

    let dropout_masks = match opts.dropout_masks {
        Some(masks) if record => masks.to_vec(),
        _ => vec![None; n_layers],
    };
    let cache = StateCache {
        t_steps,
        mode,
        layers: traces,
        dropout_masks,
        vote_average: vote_average.clone(),
    };
    Ok((cache, vote_average))
}

/// One-hot label vector.
pub fn one_hot<S: Scalar>(class: usize, num_classes: usize) -> Tensor<S> {
    let mut y = Tensor::zeros(&[num_classes]);
    y.data_mut()[class] = S::one();
    y
}

/// Squared Euclidean distance between the label vector and the averaged
/// voting scores (summed over classes, no class-count normalization).
pub fn loss<S: Scalar>(vote_average: &Tensor<S>, label: &Tensor<S>) -> Result<S> {
    let diff = label.sub(vote_average)?;
    diff.dot(&diff)
}

/// Gradients for every trainable tensor, in the canonical order of
/// [`Network::param_tensors`].
#[derive(Clone, Debug)]
pub struct GradientSet<S: Scalar> {
    pub grads: Vec<Tensor<S>>,
}

impl<S: Scalar> GradientSet<S> {
    pub fn zeros_for(net: &Network<S>) -> Self {
        GradientSet {
            grads: net
                .param_tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet<S>) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(TensorError::Contract {
                op: "GradientSet::add_assign",
                detail: format!(
                    "gradient sets have {} vs {} tensors",
                    self.grads.len(),
                    other.grads.len()
                ),
            });
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: S) {
        for g in &mut self.grads {
            *g = g.scale(factor);
        }
    }

    pub fn max_abs(&self) -> S {
        self.grads.iter().fold(S::zero(), |acc, g| {
            g.data().iter().fold(acc, |m, &v| m.max(v.abs()))
        })
    }
}

/// Backward-pass controls.
#[derive(Clone, Copy, Debug)]
pub struct BackwardOptions {
    /// Include the path through the reset gate: the spike at step `t` also
    /// influences step `t+1`'s membrane by suppressing the decay carry,
    /// contributing `-k_tau1 * u^t` to the spike adjoint. On by default;
    /// disabling it ablates the temporal reset term.
    pub reset_gate_path: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions {
            reset_gate_path: true,
        }
    }
}

/// Slot indices into the canonical parameter order for each layer.
fn param_slots<S: Scalar>(net: &Network<S>) -> Vec<(Option<usize>, Option<usize>)> {
    let mut slots = Vec::with_capacity(net.layers.len());
    let mut next = 0;
    for layer in &net.layers {
        match layer {
            Layer::Conv(c) => {
                let w = next;
                next += 1;
                let u = c.neunorm.as_ref().map(|_| {
                    let s = next;
                    next += 1;
                    s
                });
                slots.push((Some(w), u));
            }
            Layer::Fc(_) => {
                slots.push((Some(next), None));
                next += 1;
            }
            Layer::Pool { .. } => slots.push((None, None)),
        }
    }
    slots
}

/// Reverse-mode sweep over the cached rollout, producing gradients for all
/// kernels and lateral maps.
pub fn backward<S: Scalar>(
    net: &Network<S>,
    cache: &StateCache<S>,
    label: &Tensor<S>,
    opts: &BackwardOptions,
) -> Result<GradientSet<S>> {
    let t_steps = cache.t_steps;
    let lif = net.spec.lif;
    let k1 = lif.k_tau1;
    let inv_keep = S::one() / (S::one() - net.spec.dropout_rate);

    // Completeness: every LIF layer must have a full trace.
    for (idx, layer) in net.layers.iter().enumerate() {
        let trace = &cache.layers[idx];
        let expected = if layer.state_shape().is_some() {
            t_steps
        } else {
            0
        };
        if trace.membranes.len() != expected
            || trace.spikes.len() != expected
            || trace.inputs.len() != expected
        {
            return Err(TensorError::Contract {
                op: "backward",
                detail: format!("layer {idx} trace is incomplete"),
            });
        }
        if let Layer::Conv(c) = layer {
            if c.neunorm.is_some() && trace.aux.len() != t_steps {
                return Err(TensorError::Contract {
                    op: "backward",
                    detail: format!("layer {idx} normalization trace is incomplete"),
                });
            }
        }
    }

    let mut grads = GradientSet::zeros_for(net);
    let slots = param_slots(net);

    // dL/d vote = 2 (vote - Y); the per-step spike adjoint of the last layer
    // is M^T (dL/d vote) / T, identical for every step.
    let dvote = cache.vote_average.sub(label)?.scale(S::one() + S::one());
    let d_last_spike = net
        .voting
        .backward(&dvote)?
        .scale(S::one() / S::from_usize(t_steps));

    // Membrane adjoints of step t+1, per layer (None encodes zero at t = T).
    let mut du_next: Vec<Option<Tensor<S>>> = vec![None; net.layers.len()];

    for t in (0..t_steps).rev() {
        // d_signal: adjoint of the signal flowing out of the layer below the
        // current position, starting at the last layer's spike output.
        let mut d_signal = d_last_spike.clone();
        for idx in (0..net.layers.len()).rev() {
            match &net.layers[idx] {
                Layer::Fc(f) => {
                    let trace = &cache.layers[idx];
                    let u = &trace.membranes[t];
                    let o = &trace.spikes[t];
                    let du = lif_adjoint(&d_signal, u, o, du_next[idx].as_ref(), k1, &lif, opts);
                    let (w_slot, _) = slots[idx];
                    outer_accum(
                        &mut grads.grads[w_slot.expect("fc has weights")],
                        &du,
                        &trace.inputs[t],
                    )?;
                    let mut d_in = matvec_transpose(&f.weights, &du)?;
                    if let Some(mask) = &cache.dropout_masks[idx] {
                        d_in = d_in.mul(mask)?.scale(inv_keep);
                    }
                    du_next[idx] = Some(du);
                    d_signal = d_in;
                }
                Layer::Pool { window, out_shape, .. } => {
                    if d_signal.ndim() == 1 {
                        d_signal = d_signal.reshaped(out_shape)?;
                    }
                    d_signal = avgpool2d_backward(&d_signal, *window)?;
                }
                Layer::Conv(c) => {
                    if d_signal.ndim() == 1 {
                        d_signal = d_signal.reshaped(&c.out_shape)?;
                    }
                    let trace = &cache.layers[idx];
                    let (w_slot, u_slot) = slots[idx];
                    // Through the correction o - U (*) x: identity to o,
                    // accumulation -x * d into the lateral map; x itself is
                    // detached.
                    if let Some(_nn) = &c.neunorm {
                        let x = &trace.aux[t];
                        let du_lateral = &mut grads.grads[u_slot.expect("lateral slot")];
                        let [_, h, w] = c.out_shape;
                        let plane = h * w;
                        for ch in 0..c.out_shape[0] {
                            for p in 0..plane {
                                let i = ch * plane + p;
                                du_lateral.data_mut()[i] = du_lateral.data_mut()[i]
                                    + d_signal.data()[i] * (-x.data()[p]);
                            }
                        }
                    }
                    let u = &trace.membranes[t];
                    let o = &trace.spikes[t];
                    let du = lif_adjoint(&d_signal, u, o, du_next[idx].as_ref(), k1, &lif, opts);
                    let (d_in, d_kernel) =
                        conv2d_backward(&du, &trace.inputs[t], &c.weights, c.stride, c.padding)?;
                    grads.grads[w_slot.expect("conv has weights")].add_assign(&d_kernel)?;
                    du_next[idx] = Some(du);
                    d_signal = d_in;
                }
            }
        }
    }
    for g in &grads.grads {
        g.ensure_finite("backward")?;
    }
    Ok(grads)
}

/// Membrane adjoint of one `(t, layer)` slot:
/// `Do = spatial + Du_next * (-(k1 * u))` (reset-gate path),
/// `Du = Do * h(u) + Du_next * (k1 * (1 - o))`.
fn lif_adjoint<S: Scalar>(
    d_spike_spatial: &Tensor<S>,
    u: &Tensor<S>,
    o: &Tensor<S>,
    du_next: Option<&Tensor<S>>,
    k1: S,
    lif: &crate::neuron::LifParams<S>,
    opts: &BackwardOptions,
) -> Tensor<S> {
    let h = surrogate_grad(u, lif);
    let d_spike = match du_next {
        Some(dn) if opts.reset_gate_path => {
            let mut term = Tensor::zeros(u.shape());
            for ((dst, &dnv), &uv) in term
                .data_mut()
                .iter_mut()
                .zip(dn.data())
                .zip(u.data())
            {
                *dst = dnv * (-(k1 * uv));
            }
            d_spike_spatial.add(&term).expect("shapes match")
        }
        _ => d_spike_spatial.clone(),
    };
    let mut du = d_spike.mul(&h).expect("shapes match");
    if let Some(dn) = du_next {
        for ((dst, &dnv), &ov) in du.data_mut().iter_mut().zip(dn.data()).zip(o.data()) {
            *dst = *dst + dnv * (k1 * (S::one() - ov));
        }
    }
    du
}

/// Optimizer selection plus hyperparameters for [`train_step`].
#[derive(Clone, Copy, Debug)]
pub enum OptimizerConfig<S: Scalar> {
    Adam(AdamParams<S>),
    Sgd(SgdParams<S>),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    pub backward: BackwardOptions,
    /// Seed material for this iteration's dropout masks; each sample draws
    /// its mask from stream `sample index`, independent of worker count.
    pub dropout_seed: u64,
}

/// Aggregate results of one training iteration.
#[derive(Clone, Copy, Debug)]
pub struct StepStats<S: Scalar> {
    /// Batch-mean loss.
    pub loss: S,
    /// Correctly classified samples in the batch.
    pub correct: usize,
}

/// Draw this sample's dropout masks (one 0/1 mask per fully-connected layer,
/// held across all time steps of the iteration).
pub fn draw_dropout_masks<S: Scalar>(
    net: &Network<S>,
    dropout_seed: u64,
    sample_index: usize,
) -> Option<Vec<Option<Tensor<S>>>> {
    let rate = net.spec.dropout_rate.as_f64();
    if rate == 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    rng.set_stream(sample_index as u64);
    let mut masks = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        masks.push(match layer {
            Layer::Fc(f) => {
                let mut mask = Tensor::zeros(&[f.in_features]);
                for m in mask.data_mut() {
                    *m = if rng.gen::<f64>() < rate {
                        S::zero()
                    } else {
                        S::one()
                    };
                }
                Some(mask)
            }
            _ => None,
        });
    }
    Some(masks)
}

/// One training iteration: per-sample forward/backward in parallel, a
/// deterministic in-order gradient reduction, batch-mean scaling, and one
/// optimizer update.
pub fn train_step<S: Scalar>(
    net: &mut Network<S>,
    batch: &[Sample<S>],
    opt_state: &mut OptimizerState<S>,
    opt: &OptimizerConfig<S>,
    opts: &TrainOptions,
) -> Result<StepStats<S>> {
    if batch.is_empty() {
        return Err(TensorError::Contract {
            op: "train_step",
            detail: "batch is empty".into(),
        });
    }
    let net_ref = &*net;
    let per_sample: Vec<Result<(GradientSet<S>, S, bool)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let masks = draw_dropout_masks(net_ref, opts.dropout_seed, i);
            let fwd = ForwardOptions {
                mode: Some(SpikeMode::Binary),
                dropout_masks: masks.as_deref(),
                aux_override: None,
            };
            let (cache, vote) = forward(net_ref, sample.frames.view(), &fwd)?;
            let label = one_hot(sample.label, net_ref.spec.num_classes);
            let l = loss(&vote, &label)?;
            let grads = backward(net_ref, &cache, &label, &opts.backward)?;
            let correct = classify(&vote) == sample.label;
            Ok((grads, l, correct))
        })
        .collect();

    let mut total = GradientSet::zeros_for(net_ref);
    let mut loss_sum = S::zero();
    let mut correct = 0usize;
    for r in per_sample {
        let (g, l, c) = r?;
        total.add_assign(&g)?;
        loss_sum = loss_sum + l;
        correct += usize::from(c);
    }
    let inv_b = S::one() / S::from_usize(batch.len());
    total.scale(inv_b);
    let mean_loss = loss_sum * inv_b;

    let mut params = net.param_tensors_mut();
    match opt {
        OptimizerConfig::Adam(hp) => adam_step(&mut params, &total.grads, opt_state, hp)?,
        OptimizerConfig::Sgd(hp) => sgd_momentum_step(&mut params, &total.grads, opt_state, hp)?,
    }
    Ok(StepStats {
        loss: mean_loss,
        correct,
    })
}

/// Classification accuracy of the network over a sample set (no dropout).
pub fn evaluate_accuracy<S: Scalar>(net: &Network<S>, samples: &[Sample<S>]) -> Result<f64> {
    let correct: usize = samples
        .par_iter()
        .map(|s| {
            let vote = infer(net, s.frames.view())?;
            Ok(usize::from(classify(&vote) == s.label))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / samples.len() as f64)
}

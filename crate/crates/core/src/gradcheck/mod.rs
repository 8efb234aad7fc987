//! Gradient verification harnesses.
//!
//! Two independent checks guard the backward pass:
//!
//! 1. **Oracle equivalence** — the engine's gradients are compared bit for
//!    bit against [`unrolled`], a scalar reference implementation with no
//!    shared code, over seeded random nets in 64-bit binary mode.
//! 2. **Finite differences** — in relaxed (continuous-ramp) mode the rollout
//!    is differentiable away from the ramp kinks, so analytic gradients must
//!    match central differences; nets whose membranes land near a kink are
//!    resampled, and the normalization statistic is pinned across probes
//!    because gradients deliberately do not flow through it.

pub mod unrolled;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{parse_structure, Layer, Network, NetworkSpec};
use crate::neuron::LifParams;
use crate::stbp::{
    backward, forward, loss, one_hot, BackwardOptions, ForwardOptions, Sample, SampleFrames,
    SpikeMode, StateCache,
};
use crate::tensor::{Result, Tensor, TensorError};
use unrolled::{ScalarConv, ScalarFc, ScalarLayer, ScalarNet};

/// Outcome of the bit-for-bit oracle comparison.
#[derive(Clone, Debug)]
pub struct OracleReport {
    pub cases: usize,
    pub elements_compared: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// Outcome of the relaxed-mode finite-difference probe.
#[derive(Clone, Debug)]
pub struct FdReport {
    pub networks: usize,
    pub parameters: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub resamples: usize,
    /// Per-network maximum relative error, for the diagnostic listing.
    pub per_network: Vec<f64>,
    /// Worst relative error per named parameter block, aggregated across
    /// all probed networks and sorted by block name.
    pub per_block: Vec<(String, f64)>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Small seeded random network plus one labeled sample, within the oracle
/// limits (at most three weighted layers, T <= 4, <= 100 parameters).
pub fn random_case(seed: u64) -> Result<(Network<f64>, Sample<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = rng.gen_range(0..4u32);
    let (structure, input_shape): (String, [usize; 3]) = match template {
        0 => {
            let c = rng.gen_range(2..=4usize);
            let f = rng.gen_range(2..=5usize);
            let units = rng.gen_range(3..=8usize);
            (format!("{f}C1(Encoding)-{units}FC-Voting"), [c, 1, 1])
        }
        1 => {
            let c = rng.gen_range(2..=3usize);
            let f1 = rng.gen_range(2..=4usize);
            let f2 = rng.gen_range(2..=4usize);
            let units = rng.gen_range(3..=6usize);
            (
                format!("{f1}C1(Encoding)-{f2}C1-{units}FC-Voting"),
                [c, 1, 1],
            )
        }
        2 => {
            let f1 = rng.gen_range(1..=2usize);
            let units = rng.gen_range(3..=5usize);
            (format!("{f1}C3(Encoding)-AP2-{units}FC-Voting"), [1, 4, 4])
        }
        _ => ("2C3(Encoding)-2C1-3FC-Voting".to_string(), [1, 3, 3]),
    };
    let neunorm = matches!(template, 1 | 3) && rng.gen_bool(0.7);
    let t_steps = rng.gen_range(1..=4usize);
    let num_classes = rng.gen_range(2..=3usize);
    let spec = NetworkSpec {
        layers: parse_structure(&structure).map_err(|e| TensorError::Contract {
            op: "random_case",
            detail: e.to_string(),
        })?,
        lif: LifParams::new(
            rng.gen_range(0.2..0.5),
            rng.gen_range(0.2..0.6),
            rng.gen_range(0.5..1.5),
        )?,
        neunorm_enabled: neunorm,
        k_tau2: 0.9,
        t_steps,
        num_classes,
        dropout_rate: 0.0,
        input_shape,
        voting_seed: None,
    };
    let mut net =
        Network::init(spec, seed.wrapping_mul(0x9E37_79B9)).map_err(|e| TensorError::Contract {
            op: "random_case",
            detail: e.to_string(),
        })?;
    debug_assert!(net.num_params() <= 100, "oracle nets stay tiny");

    // Fan-in-scaled weights rarely cross threshold on their own; boost them
    // and give the zero-initialized lateral maps random values so every
    // gradient path carries signal.
    let boost = rng.gen_range(1.5..3.0);
    for p in net.param_tensors_mut() {
        for v in p.data_mut() {
            *v *= boost;
        }
    }
    for layer in &mut net.layers {
        if let Layer::Conv(c) = layer {
            if let Some(nn) = &mut c.neunorm {
                for v in nn.u_lateral.data_mut() {
                    *v = rng.gen_range(-0.3..0.3);
                }
            }
        }
    }

    let numel = input_shape[0] * input_shape[1] * input_shape[2];
    let shape = [input_shape[0], input_shape[1], input_shape[2]];
    let frames = if rng.gen_bool(0.5) {
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(0.0..1.0)).collect();
        SampleFrames::Static(Tensor::from_vec(&shape, data)?)
    } else {
        let fs = (0..t_steps)
            .map(|_| {
                let data: Vec<f64> = (0..numel)
                    .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                    .collect();
                Tensor::from_vec(&shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        SampleFrames::Temporal(fs)
    };
    let label = rng.gen_range(0..num_classes);
    Ok((net, Sample { frames, label }))
}

/// Translate a built network into the oracle's flat description.
fn export_net(net: &Network<f64>, relaxed: bool, reset_gate_path: bool) -> ScalarNet {
    let layers = net
        .layers
        .iter()
        .map(|layer| match layer {
            Layer::Conv(c) => ScalarLayer::Conv(ScalarConv {
                out_channels: c.out_shape[0],
                in_channels: c.in_shape[0],
                kernel: c.weights.shape()[2],
                stride: c.stride,
                padding: c.padding,
                in_h: c.in_shape[1],
                in_w: c.in_shape[2],
                out_h: c.out_shape[1],
                out_w: c.out_shape[2],
                weights: c.weights.data().to_vec(),
                lateral: c.neunorm.as_ref().map(|nn| nn.u_lateral.data().to_vec()),
            }),
            Layer::Pool {
                window, in_shape, ..
            } => ScalarLayer::Pool {
                window: *window,
                channels: in_shape[0],
                in_h: in_shape[1],
                in_w: in_shape[2],
            },
            Layer::Fc(f) => ScalarLayer::Fc(ScalarFc {
                units: f.units,
                in_features: f.in_features,
                weights: f.weights.data().to_vec(),
            }),
        })
        .collect();
    ScalarNet {
        layers,
        voting: net.voting.matrix().data().to_vec(),
        num_classes: net.voting.num_classes(),
        n_last: net.voting.n_last(),
        t_steps: net.spec.t_steps,
        k_tau1: net.spec.lif.k_tau1,
        v_th: net.spec.lif.v_th,
        a: net.spec.lif.a,
        k_tau2: net.spec.k_tau2,
        relaxed,
        reset_gate_path,
    }
}

fn expand_frames(sample: &Sample<f64>, t_steps: usize) -> Vec<Vec<f64>> {
    match &sample.frames {
        SampleFrames::Static(f) => vec![f.data().to_vec(); t_steps],
        SampleFrames::Temporal(fs) => fs.iter().map(|f| f.data().to_vec()).collect(),
    }
}

/// Compare the engine against the scalar oracle over `cases` seeded nets;
/// every vote element, the loss, and every gradient element must agree bit
/// for bit. Alternating cases ablate the reset-gate path so both adjoint
/// variants are covered.
pub fn oracle_check(cases: usize, base_seed: u64) -> Result<OracleReport> {
    let mut report = OracleReport {
        cases,
        elements_compared: 0,
        mismatches: 0,
        first_mismatch: None,
    };
    for case in 0..cases {
        let seed = base_seed.wrapping_add(case as u64);
        let (net, sample) = random_case(seed)?;
        let reset_gate_path = case % 2 == 0;

        let (cache, vote) = forward(&net, sample.frames.view(), &ForwardOptions::default())?;
        let label = one_hot(sample.label, net.spec.num_classes);
        let engine_loss = loss(&vote, &label)?;
        let engine_grads = backward(&net, &cache, &label, &BackwardOptions { reset_gate_path })?;

        let scalar_net = export_net(&net, false, reset_gate_path);
        let frames = expand_frames(&sample, net.spec.t_steps);
        let oracle = unrolled::run(&scalar_net, &frames, sample.label);

        let record = |ok: bool, what: String, report: &mut OracleReport| {
            report.elements_compared += 1;
            if !ok {
                report.mismatches += 1;
                if report.first_mismatch.is_none() {
                    report.first_mismatch = Some(what);
                }
            }
        };
        record(
            engine_loss.to_bits() == oracle.loss.to_bits(),
            format!(
                "case {case}: loss {engine_loss:e} vs oracle {:e}",
                oracle.loss
            ),
            &mut report,
        );
        for (i, (&e, &o)) in vote.data().iter().zip(&oracle.vote).enumerate() {
            record(
                e.to_bits() == o.to_bits(),
                format!("case {case}: vote[{i}] {e:e} vs oracle {o:e}"),
                &mut report,
            );
        }
        if engine_grads.grads.len() != oracle.grads.len() {
            return Err(TensorError::Contract {
                op: "oracle_check",
                detail: format!(
                    "case {case}: engine has {} gradient tensors, oracle {}",
                    engine_grads.grads.len(),
                    oracle.grads.len()
                ),
            });
        }
        for (g_idx, (eg, og)) in engine_grads.grads.iter().zip(&oracle.grads).enumerate() {
            for (i, (&e, &o)) in eg.data().iter().zip(og).enumerate() {
                record(
                    e.to_bits() == o.to_bits(),
                    format!("case {case}: grad[{g_idx}][{i}] {e:e} vs oracle {o:e}"),
                    &mut report,
                );
            }
        }
    }
    Ok(report)
}

/// Margin test: reject rollouts whose membranes sit close to a ramp kink,
/// where neither the analytic gradient nor central differences are reliable.
fn kink_safe(cache: &StateCache<f64>, lif: &LifParams<f64>, margin: f64) -> bool {
    let half = lif.a / 2.0;
    cache.layers.iter().all(|trace| {
        trace.membranes.iter().all(|u| {
            u.data()
                .iter()
                .all(|&v| ((v - lif.v_th).abs() - half).abs() > margin)
        })
    })
}

/// Relative-error denominator floor: below this magnitude a pair of
/// gradients is compared against the floor itself, so values dominated by
/// central-difference roundoff (~1e-11 at unit loss scale) cannot fail the
/// check spuriously while genuine sign or scale bugs still would.
const FD_DENOM_FLOOR: f64 = 1e-6;

/// Probe every parameter of `networks` seeded nets with central differences
/// in relaxed mode and report the worst relative error observed.
pub fn finite_difference_check(networks: usize, base_seed: u64) -> Result<FdReport> {
    let h = 1e-5;
    let tolerance = 1e-4;
    let margin = 1e-3;
    let mut report = FdReport {
        networks,
        parameters: 0,
        max_rel_err: 0.0,
        tolerance,
        resamples: 0,
        per_network: Vec::with_capacity(networks),
        per_block: Vec::new(),
    };
    let mut block_max: std::collections::BTreeMap<String, f64> = std::collections::BTreeMap::new();
    for net_i in 0..networks {
        // Resample until the trace keeps clear of the kinks and carries
        // gradient signal.
        let mut attempt = 0u64;
        let (mut net, sample, cache) = loop {
            let seed = base_seed
                .wrapping_add(net_i as u64)
                .wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let (net, sample) = random_case(seed)?;
            let opts = ForwardOptions {
                mode: Some(SpikeMode::Relaxed),
                ..ForwardOptions::default()
            };
            let (cache, _) = forward(&net, sample.frames.view(), &opts)?;
            let label = one_hot(sample.label, net.spec.num_classes);
            let grads = backward(&net, &cache, &label, &BackwardOptions::default())?;
            if kink_safe(&cache, &net.spec.lif, margin) && grads.max_abs() > 1e-8 {
                break (net, sample, cache);
            }
            report.resamples += 1;
            attempt += 1;
            if attempt > 200 {
                return Err(TensorError::Contract {
                    op: "finite_difference_check",
                    detail: format!("network {net_i}: no kink-free sample after 200 attempts"),
                });
            }
        };
        let label = one_hot(sample.label, net.spec.num_classes);
        let analytic = backward(&net, &cache, &label, &BackwardOptions::default())?;
        let pinned = cache.aux_trace();

        let mut net_max = 0.0f64;
        let names = net.param_names();
        let n_tensors = analytic.grads.len();
        // Parameters are probed in place through `param_tensors_mut`, so
        // the index is the honest handle here.
        #[allow(clippy::needless_range_loop)]
        for p_idx in 0..n_tensors {
            let mut tensor_max = 0.0f64;
            let n_elems = analytic.grads[p_idx].numel();
            for e_idx in 0..n_elems {
                let orig = net.param_tensors()[p_idx].data()[e_idx];
                let probe = |net: &mut Network<f64>, value: f64| -> Result<f64> {
                    net.param_tensors_mut()[p_idx].data_mut()[e_idx] = value;
                    let opts = ForwardOptions {
                        mode: Some(SpikeMode::Relaxed),
                        dropout_masks: None,
                        aux_override: Some(&pinned),
                    };
                    let (_, vote) = forward(net, sample.frames.view(), &opts)?;
                    loss(&vote, &label)
                };
                let loss_p = probe(&mut net, orig + h)?;
                let loss_m = probe(&mut net, orig - h)?;
                net.param_tensors_mut()[p_idx].data_mut()[e_idx] = orig;
                let g_fd = (loss_p - loss_m) / (2.0 * h);
                let g_an = analytic.grads[p_idx].data()[e_idx];
                let denom = g_an.abs().max(g_fd.abs()).max(FD_DENOM_FLOOR);
                let rel = (g_an - g_fd).abs() / denom;
                net_max = net_max.max(rel);
                tensor_max = tensor_max.max(rel);
                report.parameters += 1;
            }
            let slot = block_max.entry(names[p_idx].clone()).or_insert(0.0);
            *slot = slot.max(tensor_max);
        }
        report.max_rel_err = report.max_rel_err.max(net_max);
        report.per_network.push(net_max);
    }
    report.per_block = block_max.into_iter().collect();
    Ok(report)
}

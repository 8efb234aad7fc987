//! Self-contained scalar reference implementation used to cross-check the
//! training engine.
//!
//! Everything here runs on flat `Vec<f64>` buffers with explicit loops and
//! shares no code with the tensor kernels. It follows the same
//! summation-order policy as the engine — sequential ascending-index folds,
//! descending time in the backward sweep, the spatial adjoint term computed
//! before the temporal terms are added — so on identical inputs the two
//! implementations must agree bit for bit; any divergence in either one
//! surfaces as a hard mismatch rather than a tolerance question.

// Index-form loops are deliberate throughout this file: the accumulation
// order is part of the contract being checked, and bare indices keep it
// visibly pinned down.
#![allow(clippy::needless_range_loop)]

/// Convolutional layer description (stride/padding explicit, kernel square).
pub struct ScalarConv {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    /// Row-major `[F, C, k, k]`.
    pub weights: Vec<f64>,
    /// Row-major `[F, out_h, out_w]` lateral map when normalization is
    /// attached to this layer's output.
    pub lateral: Option<Vec<f64>>,
}

pub struct ScalarFc {
    pub units: usize,
    pub in_features: usize,
    /// Row-major `[units, in_features]`.
    pub weights: Vec<f64>,
}

pub enum ScalarLayer {
    Conv(ScalarConv),
    Pool {
        window: usize,
        channels: usize,
        in_h: usize,
        in_w: usize,
    },
    Fc(ScalarFc),
}

pub struct ScalarNet {
    pub layers: Vec<ScalarLayer>,
    /// Row-major `[num_classes, n_last]`.
    pub voting: Vec<f64>,
    pub num_classes: usize,
    pub n_last: usize,
    pub t_steps: usize,
    pub k_tau1: f64,
    pub v_th: f64,
    pub a: f64,
    pub k_tau2: f64,
    /// Continuous-ramp outputs instead of the hard threshold.
    pub relaxed: bool,
    /// Include the reset-gate term in the spike adjoint.
    pub reset_gate_path: bool,
}

pub struct ScalarResult {
    pub loss: f64,
    pub vote: Vec<f64>,
    /// Canonical order: layers ascending, kernel gradient first, then the
    /// lateral-map gradient where present.
    pub grads: Vec<Vec<f64>>,
}

#[derive(Default)]
struct Trace {
    inputs: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    o: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
}

fn spike(u: f64, net: &ScalarNet) -> f64 {
    if net.relaxed {
        ((u - net.v_th) / net.a + 0.5).clamp(0.0, 1.0)
    } else if u >= net.v_th {
        1.0
    } else {
        0.0
    }
}

/// Forward rollout plus full reverse sweep over `(t, layer)`.
pub fn run(net: &ScalarNet, frames: &[Vec<f64>], label: usize) -> ScalarResult {
    assert_eq!(frames.len(), net.t_steps, "one frame per step");
    let t_steps = net.t_steps;
    let n_layers = net.layers.len();
    let mut traces: Vec<Trace> = (0..n_layers).map(|_| Trace::default()).collect();
    let mut vote_acc = vec![0.0; net.num_classes];

    for step in 0..t_steps {
        let mut signal = frames[step].clone();
        for (li, layer) in net.layers.iter().enumerate() {
            match layer {
                ScalarLayer::Conv(c) => {
                    traces[li].inputs.push(signal.clone());
                    let sp = c.out_h * c.out_w;
                    let mut current = vec![0.0; c.out_channels * sp];
                    for f in 0..c.out_channels {
                        for oy in 0..c.out_h {
                            for ox in 0..c.out_w {
                                let mut acc = 0.0;
                                for ci in 0..c.in_channels {
                                    for kh in 0..c.kernel {
                                        for kw in 0..c.kernel {
                                            let iy = (oy * c.stride + kh) as isize
                                                - c.padding as isize;
                                            let ix = (ox * c.stride + kw) as isize
                                                - c.padding as isize;
                                            let xval = if iy >= 0
                                                && iy < c.in_h as isize
                                                && ix >= 0
                                                && ix < c.in_w as isize
                                            {
                                                signal[(ci * c.in_h + iy as usize) * c.in_w
                                                    + ix as usize]
                                            } else {
                                                0.0
                                            };
                                            let wval = c.weights[((f * c.in_channels + ci)
                                                * c.kernel
                                                + kh)
                                                * c.kernel
                                                + kw];
                                            acc += wval * xval;
                                        }
                                    }
                                }
                                current[(f * c.out_h + oy) * c.out_w + ox] = acc;
                            }
                        }
                    }
                    let n = current.len();
                    let mut u = vec![0.0; n];
                    let mut o = vec![0.0; n];
                    for i in 0..n {
                        let (pu, po) = if step == 0 {
                            (0.0, 0.0)
                        } else {
                            (traces[li].u[step - 1][i], traces[li].o[step - 1][i])
                        };
                        u[i] = net.k_tau1 * pu * (1.0 - po) + current[i];
                        o[i] = spike(u[i], net);
                    }
                    traces[li].u.push(u);
                    traces[li].o.push(o.clone());
                    signal = o.clone();
                    if let Some(lat) = &c.lateral {
                        let plane = sp;
                        let f_count = c.out_channels as f64;
                        let v = (1.0 - net.k_tau2) / f_count;
                        let scale = v / f_count;
                        let mut x = vec![0.0; plane];
                        for p in 0..plane {
                            let xp = if step == 0 {
                                0.0
                            } else {
                                traces[li].x[step - 1][p]
                            };
                            let mut fired = 0.0;
                            for ci in 0..c.out_channels {
                                fired += o[ci * plane + p];
                            }
                            x[p] = net.k_tau2 * xp + scale * fired;
                        }
                        for ci in 0..c.out_channels {
                            for p in 0..plane {
                                let i = ci * plane + p;
                                signal[i] = o[i] - lat[i] * x[p];
                            }
                        }
                        traces[li].x.push(x);
                    }
                }
                ScalarLayer::Pool {
                    window,
                    channels,
                    in_h,
                    in_w,
                } => {
                    let (oh, ow) = (in_h / window, in_w / window);
                    let inv = 1.0 / ((window * window) as f64);
                    let mut out = vec![0.0; channels * oh * ow];
                    for c in 0..*channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = 0.0;
                                for ky in 0..*window {
                                    for kx in 0..*window {
                                        acc += signal[(c * in_h + oy * window + ky) * in_w
                                                + ox * window
                                                + kx];
                                    }
                                }
                                out[(c * oh + oy) * ow + ox] = acc * inv;
                            }
                        }
                    }
                    signal = out;
                }
                ScalarLayer::Fc(f) => {
                    traces[li].inputs.push(signal.clone());
                    let mut current = vec![0.0; f.units];
                    for (i, cur) in current.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for j in 0..f.in_features {
                            acc += f.weights[i * f.in_features + j] * signal[j];
                        }
                        *cur = acc;
                    }
                    let n = f.units;
                    let mut u = vec![0.0; n];
                    let mut o = vec![0.0; n];
                    for i in 0..n {
                        let (pu, po) = if step == 0 {
                            (0.0, 0.0)
                        } else {
                            (traces[li].u[step - 1][i], traces[li].o[step - 1][i])
                        };
                        u[i] = net.k_tau1 * pu * (1.0 - po) + current[i];
                        o[i] = spike(u[i], net);
                    }
                    traces[li].u.push(u);
                    traces[li].o.push(o.clone());
                    signal = o;
                }
            }
        }
        for c in 0..net.num_classes {
            let mut acc = 0.0;
            for i in 0..net.n_last {
                acc += net.voting[c * net.n_last + i] * signal[i];
            }
            vote_acc[c] += acc;
        }
    }
    let inv_t = 1.0 / (t_steps as f64);
    let vote: Vec<f64> = vote_acc.iter().map(|&v| v * inv_t).collect();

    let mut y = vec![0.0; net.num_classes];
    y[label] = 1.0;
    let mut loss = 0.0;
    for c in 0..net.num_classes {
        let d = y[c] - vote[c];
        loss += d * d;
    }

    // ---- reverse sweep ----
    let mut grads: Vec<Vec<f64>> = Vec::new();
    let mut slots: Vec<(Option<usize>, Option<usize>)> = Vec::new();
    for layer in &net.layers {
        match layer {
            ScalarLayer::Conv(c) => {
                let w = grads.len();
                grads.push(vec![0.0; c.weights.len()]);
                let u = c.lateral.as_ref().map(|l| {
                    grads.push(vec![0.0; l.len()]);
                    grads.len() - 1
                });
                slots.push((Some(w), u));
            }
            ScalarLayer::Fc(f) => {
                slots.push((Some(grads.len()), None));
                grads.push(vec![0.0; f.weights.len()]);
            }
            ScalarLayer::Pool { .. } => slots.push((None, None)),
        }
    }

    let mut dvote = vec![0.0; net.num_classes];
    for c in 0..net.num_classes {
        dvote[c] = (vote[c] - y[c]) * 2.0;
    }
    let mut d_last = vec![0.0; net.n_last];
    for (i, d) in d_last.iter_mut().enumerate() {
        let mut acc = 0.0;
        for c in 0..net.num_classes {
            acc += net.voting[c * net.n_last + i] * dvote[c];
        }
        *d = acc * inv_t;
    }

    let mut du_next: Vec<Option<Vec<f64>>> = vec![None; n_layers];
    for step in (0..t_steps).rev() {
        let mut d_signal = d_last.clone();
        for li in (0..n_layers).rev() {
            match &net.layers[li] {
                ScalarLayer::Fc(f) => {
                    let du = lif_adjoint(
                        &d_signal,
                        &traces[li].u[step],
                        &traces[li].o[step],
                        du_next[li].as_deref(),
                        net,
                    );
                    let dw = &mut grads[slots[li].0.expect("fc slot")];
                    let input = &traces[li].inputs[step];
                    for i in 0..f.units {
                        for j in 0..f.in_features {
                            dw[i * f.in_features + j] += du[i] * input[j];
                        }
                    }
                    let mut d_in = vec![0.0; f.in_features];
                    for (j, d) in d_in.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for i in 0..f.units {
                            acc += f.weights[i * f.in_features + j] * du[i];
                        }
                        *d = acc;
                    }
                    du_next[li] = Some(du);
                    d_signal = d_in;
                }
                ScalarLayer::Pool {
                    window,
                    channels,
                    in_h,
                    in_w,
                } => {
                    let (oh, ow) = (in_h / window, in_w / window);
                    let inv = 1.0 / ((window * window) as f64);
                    let mut d_in = vec![0.0; channels * in_h * in_w];
                    for c in 0..*channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = d_signal[(c * oh + oy) * ow + ox] * inv;
                                for ky in 0..*window {
                                    for kx in 0..*window {
                                        d_in[(c * in_h + oy * window + ky) * in_w
                                            + ox * window
                                            + kx] = g;
                                    }
                                }
                            }
                        }
                    }
                    d_signal = d_in;
                }
                ScalarLayer::Conv(c) => {
                    let plane = c.out_h * c.out_w;
                    if let Some(_lat) = &c.lateral {
                        let x = &traces[li].x[step];
                        let dl = &mut grads[slots[li].1.expect("lateral slot")];
                        for ci in 0..c.out_channels {
                            for p in 0..plane {
                                let i = ci * plane + p;
                                dl[i] += d_signal[i] * (-x[p]);
                            }
                        }
                    }
                    let du = lif_adjoint(
                        &d_signal,
                        &traces[li].u[step],
                        &traces[li].o[step],
                        du_next[li].as_deref(),
                        net,
                    );
                    let input = &traces[li].inputs[step];
                    let dw = &mut grads[slots[li].0.expect("conv slot")];
                    for f in 0..c.out_channels {
                        for ci in 0..c.in_channels {
                            for kh in 0..c.kernel {
                                for kw in 0..c.kernel {
                                    let mut acc = 0.0;
                                    for oy in 0..c.out_h {
                                        for ox in 0..c.out_w {
                                            let iy = (oy * c.stride + kh) as isize
                                                - c.padding as isize;
                                            let ix = (ox * c.stride + kw) as isize
                                                - c.padding as isize;
                                            let xval = if iy >= 0
                                                && iy < c.in_h as isize
                                                && ix >= 0
                                                && ix < c.in_w as isize
                                            {
                                                input[(ci * c.in_h + iy as usize) * c.in_w
                                                    + ix as usize]
                                            } else {
                                                0.0
                                            };
                                            acc += du[(f * c.out_h + oy) * c.out_w + ox]
                                                * xval;
                                        }
                                    }
                                    let idx =
                                        ((f * c.in_channels + ci) * c.kernel + kh) * c.kernel + kw;
                                    dw[idx] += acc;
                                }
                            }
                        }
                    }
                    let mut d_in = vec![0.0; c.in_channels * c.in_h * c.in_w];
                    for ci in 0..c.in_channels {
                        for kh in 0..c.kernel {
                            for kw in 0..c.kernel {
                                for oy in 0..c.out_h {
                                    let iy =
                                        (oy * c.stride + kh) as isize - c.padding as isize;
                                    if iy < 0 || iy >= c.in_h as isize {
                                        continue;
                                    }
                                    for ox in 0..c.out_w {
                                        let ix =
                                            (ox * c.stride + kw) as isize - c.padding as isize;
                                        if ix < 0 || ix >= c.in_w as isize {
                                            continue;
                                        }
                                        let mut acc = 0.0;
                                        for f in 0..c.out_channels {
                                            acc += c.weights[((f * c.in_channels + ci) * c.kernel
                                                    + kh)
                                                    * c.kernel
                                                    + kw]
                                                    * du[(f * c.out_h + oy) * c.out_w + ox];
                                        }
                                        let idx =
                                            (ci * c.in_h + iy as usize) * c.in_w + ix as usize;
                                        d_in[idx] += acc;
                                    }
                                }
                            }
                        }
                    }
                    du_next[li] = Some(du);
                    d_signal = d_in;
                }
            }
        }
    }

    ScalarResult { loss, vote, grads }
}

/// `Do = spatial + Du_next * (-(k1 * u))`, then
/// `Du = Do * h(u) + Du_next * (k1 * (1 - o))`.
fn lif_adjoint(
    d_spatial: &[f64],
    u: &[f64],
    o: &[f64],
    du_next: Option<&[f64]>,
    net: &ScalarNet,
) -> Vec<f64> {
    let n = u.len();
    let half = net.a / 2.0;
    let inv = 1.0 / net.a;
    let mut d_spike = vec![0.0; n];
    match du_next {
        Some(dn) if net.reset_gate_path => {
            for i in 0..n {
                d_spike[i] = d_spatial[i] + dn[i] * (-(net.k_tau1 * u[i]));
            }
        }
        _ => d_spike.copy_from_slice(d_spatial),
    }
    let mut du = vec![0.0; n];
    for i in 0..n {
        let h = if (u[i] - net.v_th).abs() < half {
            inv
        } else {
            0.0
        };
        du[i] = d_spike[i] * h;
    }
    if let Some(dn) = du_next {
        for i in 0..n {
            du[i] += dn[i] * (net.k_tau1 * (1.0 - o[i]));
        }
    }
    du
}

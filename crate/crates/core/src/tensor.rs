//! Dense row-major tensors and the convolution/pooling/matmul kernels the
//! rest of the engine is built on, in both forward and adjoint form.
//!
//! Layout is channels-first `(C, H, W)` with an optional leading batch axis.
//! Every reduction in this module is a sequential left fold in ascending
//! index order; parallel callers must keep that order if they want results
//! bit-identical to the single-threaded path.

use std::fmt::{Debug, Display};

use num_traits::Float;
use thiserror::Error;

/// Element type of the engine: `f32` for training, `f64` for gradient checks
/// and the strict determinism contract.
pub trait Scalar: Float + Debug + Display + Default + Send + Sync + 'static {
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn from_usize(v: usize) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn from_usize(v: usize) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_usize(v: usize) -> Self {
        v as f64
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: dimension error: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("{op}: data length {got} does not match shape product {expected}")]
    DataLength {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{op}: contract violation: {detail}")]
    Contract { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::DataLength {
                op: "from_vec",
                expected: n,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::DataLength {
                op: "reshaped",
                expected: n,
                got: self.data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "mul")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, factor: S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| a * factor).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Sequential ascending-index sum of all elements.
    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &v| acc + v)
    }

    /// Dot product; shapes must match exactly.
    pub fn dot(&self, other: &Self) -> Result<S> {
        self.check_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |acc, (&a, &b)| acc + a * b))
    }

    /// True if every element is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == S::zero() || v == S::one())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(TensorError::NonFinite { op, index: i });
            }
        }
        Ok(())
    }

    /// Cast element type; `f64 -> f32` rounds to nearest.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Splits a conv/pool operand into `(batch, C, H, W)`, treating a 3-D tensor
/// as a single sample.
fn chw_dims(t: &Tensor<impl Scalar>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((1, c, h, w)),
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(TensorError::Dimension {
            op,
            detail: format!("expected 3-D or 4-D input, got shape {:?}", t.shape()),
        }),
    }
}

fn conv_out_size(extent: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    if k == 0 || stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// 2-D convolution (cross-correlation) of a `[C,H,W]` or `[B,C,H,W]` input
/// with a `[F,C,k,k]` kernel, zero padding outside bounds.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let (batch, c_in, h, w) = chw_dims(input, "conv2d_forward")?;
    let [f_out, kc, kh, kw] = *kernel.shape() else {
        return Err(TensorError::Dimension {
            op: "conv2d_forward",
            detail: format!("kernel must be 4-D [F,C,k,k], got {:?}", kernel.shape()),
        });
    };
    if kc != c_in {
        return Err(TensorError::Dimension {
            op: "conv2d_forward",
            detail: format!("input has {c_in} channels but kernel expects {kc}"),
        });
    }
    if kh != kw {
        return Err(TensorError::Dimension {
            op: "conv2d_forward",
            detail: format!("kernel must be square, got {kh}x{kw}"),
        });
    }
    let (Some(oh), Some(ow)) = (
        conv_out_size(h, kh, stride, padding),
        conv_out_size(w, kw, stride, padding),
    ) else {
        return Err(TensorError::Dimension {
            op: "conv2d_forward",
            detail: format!(
                "kernel {kh}x{kw} stride {stride} padding {padding} does not fit {h}x{w} input"
            ),
        });
    };

    let out_shape = if input.ndim() == 4 {
        vec![batch, f_out, oh, ow]
    } else {
        vec![f_out, oh, ow]
    };
    let mut out = vec![S::zero(); batch * f_out * oh * ow];
    let ckk = c_in * kh * kw;
    let mut cols = vec![S::zero(); ckk * oh * ow];
    for b in 0..batch {
        let sample = &input.data()[b * c_in * h * w..(b + 1) * c_in * h * w];
        im2col(sample, c_in, h, w, kh, stride, padding, oh, ow, &mut cols);
        let out_sample = &mut out[b * f_out * oh * ow..(b + 1) * f_out * oh * ow];
        matmul_into(kernel.data(), &cols, f_out, ckk, oh * ow, out_sample);
    }
    let result = Tensor {
        shape: out_shape,
        data: out,
    };
    result.ensure_finite("conv2d_forward")?;
    Ok(result)
}

/// Adjoint of [`conv2d_forward`] as a linear map: gradients w.r.t. the input
/// and the kernel.
pub fn conv2d_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (batch, c_in, h, w) = chw_dims(input, "conv2d_backward")?;
    let [f_out, _, kh, _] = *kernel.shape() else {
        return Err(TensorError::Dimension {
            op: "conv2d_backward",
            detail: format!("kernel must be 4-D [F,C,k,k], got {:?}", kernel.shape()),
        });
    };
    let expected = conv2d_output_shape(input.shape(), kernel.shape(), stride, padding)?;
    if grad_out.shape() != expected.as_slice() {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            expected,
            got: grad_out.shape().to_vec(),
        });
    }
    let (oh, ow) = {
        let s = grad_out.shape();
        (s[s.len() - 2], s[s.len() - 1])
    };

    let ckk = c_in * kh * kh;
    let mut grad_input = vec![S::zero(); input.numel()];
    let mut grad_kernel = vec![S::zero(); kernel.numel()];
    let mut cols = vec![S::zero(); ckk * oh * ow];
    let mut dcols = vec![S::zero(); ckk * oh * ow];
    for b in 0..batch {
        let sample = &input.data()[b * c_in * h * w..(b + 1) * c_in * h * w];
        let gout = &grad_out.data()[b * f_out * oh * ow..(b + 1) * f_out * oh * ow];
        // dK += gout x cols^T, accumulated batch-ascending.
        im2col(sample, c_in, h, w, kh, stride, padding, oh, ow, &mut cols);
        matmul_bt_accum(gout, &cols, f_out, oh * ow, ckk, &mut grad_kernel);
        // dcols = K^T x gout, then scattered back to the input layout.
        matmul_ta_into(kernel.data(), gout, f_out, ckk, oh * ow, &mut dcols);
        let gin = &mut grad_input[b * c_in * h * w..(b + 1) * c_in * h * w];
        col2im(&dcols, c_in, h, w, kh, stride, padding, oh, ow, gin);
    }
    let grad_input = Tensor {
        shape: input.shape().to_vec(),
        data: grad_input,
    };
    let grad_kernel = Tensor {
        shape: kernel.shape().to_vec(),
        data: grad_kernel,
    };
    grad_input.ensure_finite("conv2d_backward")?;
    grad_kernel.ensure_finite("conv2d_backward")?;
    Ok((grad_input, grad_kernel))
}

/// Output shape of [`conv2d_forward`] without running it.
pub fn conv2d_output_shape(
    input_shape: &[usize],
    kernel_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Vec<usize>> {
    let (batched, c_in, h, w) = match *input_shape {
        [c, h, w] => (false, c, h, w),
        [_, c, h, w] => (true, c, h, w),
        _ => {
            return Err(TensorError::Dimension {
                op: "conv2d_output_shape",
                detail: format!("expected 3-D or 4-D input, got shape {input_shape:?}"),
            })
        }
    };
    let [f_out, kc, kh, kw] = *kernel_shape else {
        return Err(TensorError::Dimension {
            op: "conv2d_output_shape",
            detail: format!("kernel must be 4-D [F,C,k,k], got {kernel_shape:?}"),
        });
    };
    if kc != c_in || kh != kw {
        return Err(TensorError::Dimension {
            op: "conv2d_output_shape",
            detail: format!("kernel {kernel_shape:?} incompatible with input {input_shape:?}"),
        });
    }
    let (Some(oh), Some(ow)) = (
        conv_out_size(h, kh, stride, padding),
        conv_out_size(w, kw, stride, padding),
    ) else {
        return Err(TensorError::Dimension {
            op: "conv2d_output_shape",
            detail: format!(
                "kernel {kh}x{kw} stride {stride} padding {padding} does not fit {h}x{w} input"
            ),
        });
    };
    Ok(if batched {
        vec![input_shape[0], f_out, oh, ow]
    } else {
        vec![f_out, oh, ow]
    })
}

#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    sample: &[S],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    cols: &mut [S],
) {
    let spatial = oh * ow;
    for c in 0..c_in {
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..oh {
                    let iy = (oy * stride + kh) as isize - padding as isize;
                    for ox in 0..ow {
                        let ix = (ox * stride + kw) as isize - padding as isize;
                        dst[oy * ow + ox] = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize
                        {
                            sample[(c * h + iy as usize) * w + ix as usize]
                        } else {
                            S::zero()
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(
    dcols: &[S],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    grad_in: &mut [S],
) {
    let spatial = oh * ow;
    for c in 0..c_in {
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let src = &dcols[row * spatial..(row + 1) * spatial];
                for oy in 0..oh {
                    let iy = (oy * stride + kh) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kw) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = (c * h + iy as usize) * w + ix as usize;
                        grad_in[idx] = grad_in[idx] + src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// `out = a x b` for row-major `a [m,n]`, `b [n,p]`; `out` is zeroed first.
fn matmul_into<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, p: usize, out: &mut [S]) {
    for v in out.iter_mut() {
        *v = S::zero();
    }
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for kk in 0..n {
            let aik = a[i * n + kk];
            let brow = &b[kk * p..(kk + 1) * p];
            for j in 0..p {
                orow[j] = orow[j] + aik * brow[j];
            }
        }
    }
}

/// `out += a x b^T` for `a [m,j]`, `b [n,j]`, `out [m,n]`.
fn matmul_bt_accum<S: Scalar>(a: &[S], b: &[S], m: usize, j_len: usize, n: usize, out: &mut [S]) {
    for i in 0..m {
        let arow = &a[i * j_len..(i + 1) * j_len];
        for nn in 0..n {
            let brow = &b[nn * j_len..(nn + 1) * j_len];
            let mut acc = S::zero();
            for j in 0..j_len {
                acc = acc + arow[j] * brow[j];
            }
            out[i * n + nn] = out[i * n + nn] + acc;
        }
    }
}

/// `out = a^T x b` for `a [f,n]`, `b [f,j]`, `out [n,j]`; `out` is zeroed first.
fn matmul_ta_into<S: Scalar>(a: &[S], b: &[S], f: usize, n: usize, j_len: usize, out: &mut [S]) {
    for v in out.iter_mut() {
        *v = S::zero();
    }
    for ff in 0..f {
        let brow = &b[ff * j_len..(ff + 1) * j_len];
        for nn in 0..n {
            let aval = a[ff * n + nn];
            let orow = &mut out[nn * j_len..(nn + 1) * j_len];
            for j in 0..j_len {
                orow[j] = orow[j] + aval * brow[j];
            }
        }
    }
}

/// Matrix product `a [m,n] x b [n,p] -> [m,p]`; a 1-D `b` of length `n` is
/// treated as a column vector and yields a 1-D result of length `m`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let [m, n] = *a.shape() else {
        return Err(TensorError::Dimension {
            op: "matmul",
            detail: format!("left operand must be 2-D, got {:?}", a.shape()),
        });
    };
    let (bn, p, vector) = match *b.shape() {
        [bn] => (bn, 1, true),
        [bn, p] => (bn, p, false),
        _ => {
            return Err(TensorError::Dimension {
                op: "matmul",
                detail: format!("right operand must be 1-D or 2-D, got {:?}", b.shape()),
            })
        }
    };
    if bn != n {
        return Err(TensorError::Dimension {
            op: "matmul",
            detail: format!("inner dimensions disagree: {n} vs {bn}"),
        });
    }
    let mut out = vec![S::zero(); m * p];
    matmul_into(a.data(), b.data(), m, n, p, &mut out);
    let result = Tensor {
        shape: if vector { vec![m] } else { vec![m, p] },
        data: out,
    };
    result.ensure_finite("matmul")?;
    Ok(result)
}

/// `a^T x v` for `a [m,n]` and a 1-D `v` of length `m`: the adjoint of the
/// fully-connected forward map.
pub fn matvec_transpose<S: Scalar>(a: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
    let [m, n] = *a.shape() else {
        return Err(TensorError::Dimension {
            op: "matvec_transpose",
            detail: format!("left operand must be 2-D, got {:?}", a.shape()),
        });
    };
    if v.shape() != [m] {
        return Err(TensorError::ShapeMismatch {
            op: "matvec_transpose",
            expected: vec![m],
            got: v.shape().to_vec(),
        });
    }
    // Gather form: out[j] accumulates over rows i ascending.
    let mut out = vec![S::zero(); n];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = S::zero();
        for i in 0..m {
            acc = acc + a.data()[i * n + j] * v.data()[i];
        }
        *o = acc;
    }
    let result = Tensor {
        shape: vec![n],
        data: out,
    };
    result.ensure_finite("matvec_transpose")?;
    Ok(result)
}

/// Rank-1 accumulation `out += v (outer) u` for `out [m,n]`, `v [m]`, `u [n]`.
pub fn outer_accum<S: Scalar>(out: &mut Tensor<S>, v: &Tensor<S>, u: &Tensor<S>) -> Result<()> {
    let [m, n] = *out.shape() else {
        return Err(TensorError::Dimension {
            op: "outer_accum",
            detail: format!("accumulator must be 2-D, got {:?}", out.shape()),
        });
    };
    if v.shape() != [m] || u.shape() != [n] {
        return Err(TensorError::Dimension {
            op: "outer_accum",
            detail: format!(
                "operands {:?} and {:?} do not match accumulator [{m}, {n}]",
                v.shape(),
                u.shape()
            ),
        });
    }
    for i in 0..m {
        let vi = v.data()[i];
        let row = &mut out.data_mut()[i * n..(i + 1) * n];
        for (j, r) in row.iter_mut().enumerate() {
            *r = *r + vi * u.data()[j];
        }
    }
    Ok(())
}

/// Average pooling over non-overlapping `window x window` blocks; spatial
/// dims must divide evenly.
pub fn avgpool2d<S: Scalar>(input: &Tensor<S>, window: usize) -> Result<Tensor<S>> {
    let (batch, c, h, w) = chw_dims(input, "avgpool2d")?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(TensorError::Dimension {
            op: "avgpool2d",
            detail: format!("spatial size {h}x{w} not divisible by window {window}"),
        });
    }
    let (oh, ow) = (h / window, w / window);
    let inv = S::one() / S::from_usize(window * window);
    let mut out = vec![S::zero(); batch * c * oh * ow];
    for b in 0..batch {
        for ch in 0..c {
            let plane = &input.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            let oplane = &mut out[(b * c + ch) * oh * ow..(b * c + ch + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = S::zero();
                    for ky in 0..window {
                        for kx in 0..window {
                            acc = acc + plane[(oy * window + ky) * w + ox * window + kx];
                        }
                    }
                    oplane[oy * ow + ox] = acc * inv;
                }
            }
        }
    }
    let shape = if input.ndim() == 4 {
        vec![batch, c, oh, ow]
    } else {
        vec![c, oh, ow]
    };
    let result = Tensor { shape, data: out };
    result.ensure_finite("avgpool2d")?;
    Ok(result)
}

/// Adjoint of [`avgpool2d`]: distributes each output gradient uniformly,
/// scaled by `1/window^2`.
pub fn avgpool2d_backward<S: Scalar>(grad_out: &Tensor<S>, window: usize) -> Result<Tensor<S>> {
    let (batch, c, oh, ow) = chw_dims(grad_out, "avgpool2d_backward")?;
    if window == 0 {
        return Err(TensorError::Dimension {
            op: "avgpool2d_backward",
            detail: "window must be positive".into(),
        });
    }
    let (h, w) = (oh * window, ow * window);
    let inv = S::one() / S::from_usize(window * window);
    let mut out = vec![S::zero(); batch * c * h * w];
    for b in 0..batch {
        for ch in 0..c {
            let gplane = &grad_out.data()[(b * c + ch) * oh * ow..(b * c + ch + 1) * oh * ow];
            let oplane = &mut out[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gplane[oy * ow + ox] * inv;
                    for ky in 0..window {
                        for kx in 0..window {
                            oplane[(oy * window + ky) * w + ox * window + kx] = g;
                        }
                    }
                }
            }
        }
    }
    let shape = if grad_out.ndim() == 4 {
        vec![batch, c, h, w]
    } else {
        vec![c, h, w]
    };
    let result = Tensor { shape, data: out };
    result.ensure_finite("avgpool2d_backward")?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t3(c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(&[c, h, w], data).unwrap()
    }

    /// Naive 6-loop convolution used as an independent oracle for the
    /// im2col path; accumulates over (c, kh, kw) ascending like the kernel.
    fn naive_conv(
        input: &Tensor<f64>,
        kernel: &Tensor<f64>,
        stride: usize,
        padding: usize,
    ) -> Tensor<f64> {
        let [c_in, h, w] = *input.shape() else { panic!() };
        let [f_out, _, k, _] = *kernel.shape() else {
            panic!()
        };
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        let mut out = Tensor::zeros(&[f_out, oh, ow]);
        for f in 0..f_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += input.data()[(c * h + iy as usize) * w + ix as usize]
                                        * kernel.data()[((f * c_in + c) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[(f * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_identity_shape_scaling() {
        let input = t3(1, 3, 3, vec![1.0; 9]);
        let kernel = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let out = conv2d_forward(&input, &kernel, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_direct_dot_product() {
        let input = t3(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let kernel = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = conv2d_forward(&input, &kernel, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data()[0], 5.0);
    }

    #[test]
    fn conv_128_to_42_downsampling_shape() {
        let shape = conv2d_output_shape(&[2, 128, 128], &[2, 2, 3, 3], 3, 0).unwrap();
        assert_eq!(shape, vec![2, 42, 42]);
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let input = t3(2, 3, 3, vec![0.0; 18]);
        let kernel = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d_forward(&input, &kernel, 1, 0),
            Err(TensorError::Dimension { .. })
        ));
    }

    #[test]
    fn conv_matches_naive_oracle_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(c, h, f, k, s, p) in &[
            (1, 5, 2, 3, 1, 1),
            (3, 6, 4, 3, 1, 0),
            (2, 8, 3, 3, 3, 0),
            (2, 5, 2, 1, 1, 0),
            (1, 7, 1, 5, 2, 2),
        ] {
            let input = random_tensor(&mut rng, &[c, h, h]);
            let kernel = random_tensor(&mut rng, &[f, c, k, k]);
            let fast = conv2d_forward(&input, &kernel, s, p).unwrap();
            let slow = naive_conv(&input, &kernel, s, p);
            assert_eq!(fast.shape(), slow.shape());
            assert_eq!(fast.data(), slow.data(), "c={c} h={h} f={f} k={k} s={s} p={p}");
        }
    }

    #[test]
    fn conv_batch_axis_matches_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batched = random_tensor(&mut rng, &[2, 3, 5, 5]);
        let kernel = random_tensor(&mut rng, &[2, 3, 3, 3]);
        let out = conv2d_forward(&batched, &kernel, 1, 1).unwrap();
        assert_eq!(out.shape(), &[2, 2, 5, 5]);
        for b in 0..2 {
            let sample = Tensor::from_vec(
                &[3, 5, 5],
                batched.data()[b * 75..(b + 1) * 75].to_vec(),
            )
            .unwrap();
            let single = conv2d_forward(&sample, &kernel, 1, 1).unwrap();
            assert_eq!(&out.data()[b * 50..(b + 1) * 50], single.data());
        }
    }

    #[test]
    fn conv_backward_zero_grad_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random_tensor(&mut rng, &[2, 4, 4]);
        let kernel = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let gout = Tensor::zeros(&[3, 4, 4]);
        let (gi, gk) = conv2d_backward(&gout, &input, &kernel, 1, 1).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gk.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_backward_1x1_kernel_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random_tensor(&mut rng, &[1, 3, 3]);
        let kernel = random_tensor(&mut rng, &[1, 1, 1, 1]);
        let gout = random_tensor(&mut rng, &[1, 3, 3]);
        let (_, gk) = conv2d_backward(&gout, &input, &kernel, 1, 0).unwrap();
        let expected: f64 = gout
            .data()
            .iter()
            .zip(input.data())
            .map(|(&g, &x)| g * x)
            .sum();
        assert!((gk.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn conv_backward_kernel_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let input = random_tensor(&mut rng, &[2, 4, 4]);
        let mut kernel = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let gout = random_tensor(&mut rng, &[2, 4, 4]);
        let (_, gk) = conv2d_backward(&gout, &input, &kernel, 1, 1).unwrap();
        let h = 1e-5;
        for idx in 0..kernel.numel() {
            let orig = kernel.data()[idx];
            kernel.data_mut()[idx] = orig + h;
            let up = conv2d_forward(&input, &kernel, 1, 1).unwrap().dot(&gout).unwrap();
            kernel.data_mut()[idx] = orig - h;
            let dn = conv2d_forward(&input, &kernel, 1, 1).unwrap().dot(&gout).unwrap();
            kernel.data_mut()[idx] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = gk.data()[idx];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((fd - an) / denom).abs() < 1e-4,
                "kernel grad mismatch at {idx}: fd={fd} analytic={an}"
            );
        }
    }

    #[test]
    fn conv_adjoint_identity() {
        // <conv(x), y> == <x, conv_backward_input(y)> at 1e-6 relative error.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(c, h, f, k, s, p) in &[(1, 4, 2, 3, 1, 1), (2, 6, 3, 3, 2, 0), (3, 5, 1, 1, 1, 0)] {
            let x = random_tensor(&mut rng, &[c, h, h]);
            let kernel = random_tensor(&mut rng, &[f, c, k, k]);
            let ax = conv2d_forward(&x, &kernel, s, p).unwrap();
            let y = random_tensor(&mut rng, ax.shape());
            let (aty, _) = conv2d_backward(&y, &x, &kernel, s, p).unwrap();
            let lhs = ax.dot(&y).unwrap();
            let rhs = x.dot(&aty).unwrap();
            let denom = lhs.abs().max(rhs.abs()).max(1e-12);
            assert!(
                ((lhs - rhs) / denom).abs() < 1e-6,
                "adjoint identity violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn avgpool_constant_block() {
        let input = t3(1, 2, 2, vec![1.0; 4]);
        let out = avgpool2d(&input, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data()[0], 1.0);
    }

    #[test]
    fn avgpool_mean_value() {
        let input = t3(1, 2, 2, vec![0.0, 1.0, 2.0, 5.0]);
        let out = avgpool2d(&input, 2).unwrap();
        assert_eq!(out.data()[0], 2.0);
    }

    #[test]
    fn avgpool_backward_uniform_redistribution() {
        let gout = t3(1, 1, 1, vec![4.0]);
        let gin = avgpool2d_backward(&gout, 2).unwrap();
        assert_eq!(gin.shape(), &[1, 2, 2]);
        assert!(gin.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn avgpool_non_divisible_is_error() {
        let input = t3(1, 3, 3, vec![0.0; 9]);
        assert!(matches!(
            avgpool2d(&input, 2),
            Err(TensorError::Dimension { .. })
        ));
    }

    #[test]
    fn avgpool_roundtrip_projects_constant() {
        let input = t3(2, 4, 4, vec![0.75; 32]);
        let pooled = avgpool2d(&input, 2).unwrap();
        let scaled = avgpool2d_backward(&pooled, 2).unwrap();
        // backward distributes grad/window^2; scale back up to recover x.
        let recovered = scaled.scale(4.0);
        assert_eq!(recovered.data(), input.data());
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = Tensor::from_vec(&[2], vec![3.0, -4.0]).unwrap();
        let out = matmul(&eye, &v).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn matmul_row_sums() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        let out = matmul(&a, &v).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_zero_matrix() {
        let a = Tensor::<f64>::zeros(&[3, 2]);
        let v = Tensor::from_vec(&[2], vec![5.0, -1.0]).unwrap();
        let out = matmul(&a, &v).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(
            matmul(&a, &b),
            Err(TensorError::Dimension { .. })
        ));
    }

    #[test]
    fn matvec_transpose_matches_explicit_sum() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = Tensor::from_vec(&[2], vec![10.0, 100.0]).unwrap();
        let out = matvec_transpose(&a, &v).unwrap();
        assert_eq!(out.data(), &[410.0, 520.0, 630.0]);
    }

    #[test]
    fn from_vec_length_mismatch() {
        assert!(matches!(
            Tensor::<f64>::from_vec(&[2, 2], vec![1.0]),
            Err(TensorError::DataLength { .. })
        ));
    }

    #[test]
    fn non_finite_detected() {
        let input = t3(1, 1, 1, vec![1.0]);
        let kernel = Tensor::from_vec(&[1, 1, 1, 1], vec![f64::INFINITY]).unwrap();
        assert!(matches!(
            conv2d_forward(&input, &kernel, 1, 0),
            Err(TensorError::NonFinite { .. })
        ));
    }

    proptest! {
        #[test]
        fn conv_output_shape_formula(h in 1usize..12, k in 1usize..6, s in 1usize..4, p in 0usize..3) {
            prop_assume!(h + 2 * p >= k);
            let input = Tensor::<f64>::zeros(&[1, h, h]);
            let kernel = Tensor::<f64>::zeros(&[1, 1, k, k]);
            let out = conv2d_forward(&input, &kernel, s, p).unwrap();
            let expect = (h + 2 * p - k) / s + 1;
            prop_assert_eq!(out.shape(), &[1, expect, expect]);
        }

        #[test]
        fn elementwise_add_commutes(ref a in proptest::collection::vec(-1e3f64..1e3, 12)) {
            let t1 = Tensor::from_vec(&[3, 4], a.clone()).unwrap();
            let t2 = t1.scale(2.0);
            let lhs = t1.add(&t2).unwrap();
            let rhs = t2.add(&t1).unwrap();
            prop_assert_eq!(lhs.data(), rhs.data());
        }
    }
}

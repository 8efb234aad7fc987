//! Binary model checkpoints.
//!
//! A checkpoint stores the canonical structure string, every
//! hyperparameter needed to recompile the network, all weight and lateral
//! tensors with shape headers, and optionally the optimizer state for
//! resuming. Tensors are little-endian IEEE floats tagged with their
//! element width; reloading at the same precision reproduces forward
//! outputs bit-for-bit, and loading across precisions converts values.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::network::{parse_structure, Network, NetworkError, NetworkSpec};
use crate::neuron::LifParams;
use crate::optim::OptimizerState;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"SNNC";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 4;
const DTYPE_F64: u8 = 8;

const OPT_NONE: u8 = 0;
const OPT_ADAM: u8 = 1;
const OPT_SGD: u8 = 2;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path} at byte {offset}: {detail}")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },
    #[error("checkpoint contract violation: {detail}")]
    Contract { detail: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_tensor<S: Scalar>(out: &mut Vec<u8>, tensor: &Tensor<S>) {
    push_u32(out, tensor.shape().len() as u32);
    for &d in tensor.shape() {
        push_u32(out, d as u32);
    }
    match S::NAME {
        "f32" => {
            for &v in tensor.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        _ => {
            for &v in tensor.data() {
                push_f64(out, v.as_f64());
            }
        }
    }
}

/// Peek at the element width (4 or 8) a checkpoint was saved with, without
/// deserializing it. Returns `None` when the bytes are not a checkpoint.
pub fn stored_precision(bytes: &[u8]) -> Option<u8> {
    if bytes.len() < 8 || bytes[..4] != MAGIC {
        return None;
    }
    let struct_len =
        u32::from_le_bytes(bytes.get(8..12)?.try_into().ok()?) as usize;
    // Fixed fields after the structure string: input shape (12), classes
    // (4), T (4), neunorm flag (1), voting tag (1, +8 when present), five
    // f64 hyperparameters (40).
    let mut pos = 12 + struct_len + 12 + 4 + 4 + 1;
    let voting_tag = *bytes.get(pos)?;
    pos += 1 + if voting_tag == 1 { 8 } else { 0 };
    pos += 40;
    match bytes.get(pos) {
        Some(&w @ (DTYPE_F32 | DTYPE_F64)) => Some(w),
        _ => None,
    }
}

/// Serialize a network and, optionally, its optimizer state.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    net: &Network<S>,
    opt_state: Option<&OptimizerState<S>>,
) -> Result<(), CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    push_u32(&mut out, VERSION);

    let structure = net.spec.structure_string();
    push_u32(&mut out, structure.len() as u32);
    out.extend_from_slice(structure.as_bytes());
    for d in net.spec.input_shape {
        push_u32(&mut out, d as u32);
    }
    push_u32(&mut out, net.spec.num_classes as u32);
    push_u32(&mut out, net.spec.t_steps as u32);
    out.push(u8::from(net.spec.neunorm_enabled));
    match net.spec.voting_seed {
        Some(seed) => {
            out.push(1);
            push_u64(&mut out, seed);
        }
        None => out.push(0),
    }
    push_f64(&mut out, net.spec.dropout_rate.as_f64());
    push_f64(&mut out, net.spec.lif.k_tau1.as_f64());
    push_f64(&mut out, net.spec.lif.v_th.as_f64());
    push_f64(&mut out, net.spec.lif.a.as_f64());
    push_f64(&mut out, net.spec.k_tau2.as_f64());

    out.push(if S::NAME == "f32" { DTYPE_F32 } else { DTYPE_F64 });
    let params = net.param_tensors();
    push_u32(&mut out, params.len() as u32);
    for tensor in &params {
        push_tensor(&mut out, tensor);
    }

    match opt_state {
        None => out.push(OPT_NONE),
        Some(OptimizerState::Adam { m, v, step }) => {
            out.push(OPT_ADAM);
            push_u64(&mut out, *step);
            for tensor in m.iter().chain(v) {
                push_tensor(&mut out, tensor);
            }
        }
        Some(OptimizerState::Sgd { velocity, step }) => {
            out.push(OPT_SGD);
            push_u64(&mut out, *step);
            for tensor in velocity {
                push_tensor(&mut out, tensor);
            }
        }
    }

    fs::write(path, out).map_err(|e| CheckpointError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, detail: impl Into<String>) -> Result<T, CheckpointError> {
        Err(CheckpointError::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            detail: detail.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < self.pos + n {
            self.pos = self.bytes.len();
            return self.fail(format!("file truncated while reading {what}"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("length checked")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, CheckpointError> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("length checked")))
    }

    fn tensor<S: Scalar>(&mut self, dtype: u8, what: &str) -> Result<Tensor<S>, CheckpointError> {
        let rank = self.u32(what)? as usize;
        if rank > 8 {
            return self.fail(format!("implausible tensor rank {rank} in {what}"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(what)? as usize);
        }
        let len: usize = shape.iter().product();
        let width = dtype as usize;
        let raw = self.take(len * width, what)?;
        let data: Vec<S> = match dtype {
            DTYPE_F32 => raw
                .chunks_exact(4)
                .map(|c| {
                    S::from_f64(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                })
                .collect(),
            _ => raw
                .chunks_exact(8)
                .map(|c| S::from_f64(f64::from_le_bytes(c.try_into().expect("width 8"))))
                .collect(),
        };
        Tensor::from_vec(&shape, data).map_err(|e| CheckpointError::Contract {
            detail: format!("{what}: {e}"),
        })
    }
}

/// Deserialize a checkpoint, recompiling the network and overwriting its
/// freshly initialized parameters with the stored tensors. Loading at the
/// precision the file was written in restores every bit; loading at the
/// other precision converts values.
pub fn load_checkpoint<S: Scalar>(
    path: &Path,
) -> Result<(Network<S>, Option<OptimizerState<S>>), CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };

    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return r.fail("bad magic, expected SNNC");
    }
    let version = r.u32("version")?;
    if version != VERSION {
        r.pos -= 4;
        return r.fail(format!("unsupported version {version}"));
    }

    let structure_len = r.u32("structure length")? as usize;
    let structure_bytes = r.take(structure_len, "structure string")?;
    let structure = std::str::from_utf8(structure_bytes)
        .map_err(|e| CheckpointError::Contract {
            detail: format!("structure string is not UTF-8: {e}"),
        })?
        .to_string();
    let input_shape = [
        r.u32("input channels")? as usize,
        r.u32("input height")? as usize,
        r.u32("input width")? as usize,
    ];
    let num_classes = r.u32("class count")? as usize;
    let t_steps = r.u32("step count")? as usize;
    let neunorm_enabled = r.u8("neunorm flag")? != 0;
    let voting_seed = match r.u8("voting seed flag")? {
        0 => None,
        _ => Some(r.u64("voting seed")?),
    };
    let dropout_rate = S::from_f64(r.f64("dropout rate")?);
    let k_tau1 = r.f64("k_tau1")?;
    let v_th = r.f64("v_th")?;
    let a = r.f64("a")?;
    let k_tau2 = S::from_f64(r.f64("k_tau2")?);

    let layers = parse_structure(&structure).map_err(NetworkError::from)?;
    let lif = LifParams::new(S::from_f64(k_tau1), S::from_f64(v_th), S::from_f64(a)).map_err(
        |e| CheckpointError::Contract {
            detail: format!("stored neuron parameters rejected: {e}"),
        },
    )?;
    let spec = NetworkSpec {
        layers,
        lif,
        neunorm_enabled,
        k_tau2,
        t_steps,
        num_classes,
        dropout_rate,
        input_shape,
        voting_seed,
    };
    // Seed is irrelevant: every parameter is overwritten below.
    let mut net = Network::init(spec, 0)?;

    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F32 && dtype != DTYPE_F64 {
        r.pos -= 1;
        return r.fail(format!("unknown dtype tag {dtype}"));
    }
    let stored = r.u32("parameter count")? as usize;
    {
        let mut params = net.param_tensors_mut();
        if stored != params.len() {
            return Err(CheckpointError::Contract {
                detail: format!(
                    "structure {structure} has {} parameter tensors, file stores {stored}",
                    params.len()
                ),
            });
        }
        for (i, slot) in params.iter_mut().enumerate() {
            let tensor: Tensor<S> = r.tensor(dtype, &format!("parameter tensor {i}"))?;
            if tensor.shape() != slot.shape() {
                return Err(CheckpointError::Contract {
                    detail: format!(
                        "parameter tensor {i} has shape {:?}, structure implies {:?}",
                        tensor.shape(),
                        slot.shape()
                    ),
                });
            }
            **slot = tensor;
        }
    }

    let opt_state = match r.u8("optimizer tag")? {
        OPT_NONE => None,
        OPT_ADAM => {
            let step = r.u64("optimizer step")?;
            let m = (0..stored)
                .map(|i| r.tensor(dtype, &format!("first moment {i}")))
                .collect::<Result<Vec<_>, _>>()?;
            let v = (0..stored)
                .map(|i| r.tensor(dtype, &format!("second moment {i}")))
                .collect::<Result<Vec<_>, _>>()?;
            Some(OptimizerState::Adam { m, v, step })
        }
        OPT_SGD => {
            let step = r.u64("optimizer step")?;
            let velocity = (0..stored)
                .map(|i| r.tensor(dtype, &format!("velocity {i}")))
                .collect::<Result<Vec<_>, _>>()?;
            Some(OptimizerState::Sgd { velocity, step })
        }
        other => {
            r.pos -= 1;
            return r.fail(format!("unknown optimizer tag {other}"));
        }
    };

    if r.pos != bytes.len() {
        return r.fail(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos));
    }
    Ok((net, opt_state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_structure;
    use crate::stbp::{infer, Frames};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn build_net<S: Scalar>(structure: &str, neunorm: bool, seed: u64) -> Network<S> {
        let spec = NetworkSpec {
            layers: parse_structure(structure).unwrap(),
            lif: LifParams::new(
                S::from_f64(0.3),
                S::from_f64(0.25),
                S::from_f64(0.25),
            )
            .unwrap(),
            neunorm_enabled: neunorm,
            k_tau2: S::from_f64(0.9),
            t_steps: 3,
            num_classes: 4,
            dropout_rate: S::from_f64(0.0),
            input_shape: [2, 6, 6],
            voting_seed: None,
        };
        Network::init(spec, seed).unwrap()
    }

    fn random_input<S: Scalar>(seed: u64) -> Tensor<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<S> = (0..2 * 6 * 6)
            .map(|_| S::from_f64(rng.gen_range(0.0..1.0)))
            .collect();
        Tensor::from_vec(&[2, 6, 6], data).unwrap()
    }

    #[test]
    fn f32_round_trip_reproduces_forward_bits() {
        let dir = tempdir().unwrap();
        let ckpt = dir.path().join("model.snnc");
        let net = build_net::<f32>("4C3(Encoding)-AP2-4C3-8FC-Voting", false, 21);
        let input = random_input::<f32>(3);
        let before = infer(&net, Frames::Static(&input)).unwrap();
        save_checkpoint(&ckpt, &net, None).unwrap();
        let (loaded, opt) = load_checkpoint::<f32>(&ckpt).unwrap();
        assert!(opt.is_none());
        let after = infer(&loaded, Frames::Static(&input)).unwrap();
        let before_bits: Vec<u32> = before.data().iter().map(|v| v.to_bits()).collect();
        let after_bits: Vec<u32> = after.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before_bits, after_bits);
        assert_eq!(
            loaded.spec.structure_string(),
            net.spec.structure_string()
        );
    }

    #[test]
    fn f64_round_trip_with_neunorm_and_optimizer_state_is_exact() {
        let dir = tempdir().unwrap();
        let ckpt = dir.path().join("model.snnc");
        let mut net = build_net::<f64>("4C3(Encoding)-4C3-8FC-Voting", true, 9);
        // Laterals start at zero; give them arbitrary values so the
        // round-trip exercises them.
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for p in net.param_tensors_mut() {
            for v in p.data_mut() {
                *v += rng.gen_range(-0.2..0.2);
            }
        }
        let shapes: Vec<&[usize]> = net.param_tensors().iter().map(|t| t.shape()).collect();
        let mut state = OptimizerState::adam(&shapes);
        let OptimizerState::Adam { m, v, step } = &mut state else {
            panic!()
        };
        *step = 41;
        for t in m.iter_mut().chain(v.iter_mut()) {
            for x in t.data_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
        }

        save_checkpoint(&ckpt, &net, Some(&state)).unwrap();
        let (loaded, opt) = load_checkpoint::<f64>(&ckpt).unwrap();
        let input = random_input::<f64>(4);
        let before = infer(&net, Frames::Static(&input)).unwrap();
        let after = infer(&loaded, Frames::Static(&input)).unwrap();
        let before_bits: Vec<u64> = before.data().iter().map(|v| v.to_bits()).collect();
        let after_bits: Vec<u64> = after.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before_bits, after_bits);
        assert_eq!(opt, Some(state));
        for (a, b) in net.param_tensors().iter().zip(loaded.param_tensors()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn cross_precision_load_converts_values() {
        let dir = tempdir().unwrap();
        let ckpt = dir.path().join("model.snnc");
        let net = build_net::<f64>("2C1(Encoding)-4FC-Voting", false, 7);
        save_checkpoint(&ckpt, &net, None).unwrap();
        let (loaded, _) = load_checkpoint::<f32>(&ckpt).unwrap();
        for (a, b) in net.param_tensors().iter().zip(loaded.param_tensors()) {
            assert_eq!(a.shape(), b.shape());
            for (&x, &y) in a.data().iter().zip(b.data()) {
                assert_eq!(y, x as f32);
            }
        }
    }

    #[test]
    fn bad_magic_rejected_at_offset_zero() {
        let dir = tempdir().unwrap();
        let ckpt = dir.path().join("model.snnc");
        std::fs::write(&ckpt, b"NOPE....").unwrap();
        match load_checkpoint::<f32>(&ckpt).unwrap_err() {
            CheckpointError::Format { offset, .. } => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn truncated_checkpoint_reports_offset() {
        let dir = tempdir().unwrap();
        let ckpt = dir.path().join("model.snnc");
        let net = build_net::<f32>("2C1(Encoding)-4FC-Voting", false, 7);
        save_checkpoint(&ckpt, &net, None).unwrap();
        let full = std::fs::read(&ckpt).unwrap();
        std::fs::write(&ckpt, &full[..full.len() / 2]).unwrap();
        let err = load_checkpoint::<f32>(&ckpt).unwrap_err();
        assert!(matches!(err, CheckpointError::Format { .. }), "got {err}");
    }

    #[test]
    fn trailing_garbage_rejected() {
        let dir = tempdir().unwrap();
        let ckpt = dir.path().join("model.snnc");
        let net = build_net::<f32>("2C1(Encoding)-4FC-Voting", false, 7);
        save_checkpoint(&ckpt, &net, None).unwrap();
        let mut bytes = std::fs::read(&ckpt).unwrap();
        bytes.push(0xFF);
        std::fs::write(&ckpt, &bytes).unwrap();
        let err = load_checkpoint::<f32>(&ckpt).unwrap_err();
        assert!(matches!(err, CheckpointError::Format { .. }), "got {err}");
    }
}

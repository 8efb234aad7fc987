//! Portable container for preprocessed spike datasets, so expensive event
//! binning runs once and training re-reads a compact cache.
//!
//! Layout (all integers little-endian 32-bit):
//! magic `SPKT`, version, sample count, T, channels, height, width, class
//! count; then per sample a label word followed by the T frames bit-packed
//! LSB-first in `(t, c, y, x)` order.

use std::fs;
use std::path::Path;

use crate::stbp::{Sample, SampleFrames};
use crate::tensor::{Scalar, Tensor};

use super::DataError;

pub const MAGIC: [u8; 4] = *b"SPKT";
pub const VERSION: u32 = 1;

/// Shape metadata recovered from a container header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContainerMeta {
    pub samples: usize,
    pub t_steps: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
}

fn read_u32_le(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32, DataError> {
    if bytes.len() < offset + 4 {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            detail: format!("file truncated while reading {what}"),
        });
    }
    Ok(u32::from_le_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Serialize binary spike samples. All samples must share the frame shape
/// and step count and carry strictly binary frames.
pub fn save_spike_dataset<S: Scalar>(
    path: &Path,
    samples: &[Sample<S>],
    num_classes: usize,
) -> Result<(), DataError> {
    let first = samples.first().ok_or_else(|| DataError::Contract {
        detail: "cannot serialize an empty dataset".into(),
    })?;
    let SampleFrames::Temporal(frames0) = &first.frames else {
        return Err(DataError::Contract {
            detail: "containers hold per-step spike frames, not static images".into(),
        });
    };
    let t_steps = frames0.len();
    let shape = frames0[0].shape().to_vec();
    let [c, h, w] = shape[..] else {
        return Err(DataError::Contract {
            detail: format!("frames must be 3-D [C,H,W], got {shape:?}"),
        });
    };

    let frame_bits = t_steps * c * h * w;
    let frame_bytes = frame_bits.div_ceil(8);
    let mut out = Vec::with_capacity(32 + samples.len() * (4 + frame_bytes));
    out.extend_from_slice(&MAGIC);
    for v in [
        VERSION,
        samples.len() as u32,
        t_steps as u32,
        c as u32,
        h as u32,
        w as u32,
        num_classes as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, sample) in samples.iter().enumerate() {
        let SampleFrames::Temporal(frames) = &sample.frames else {
            return Err(DataError::Contract {
                detail: format!("sample {i} is not a spike sample"),
            });
        };
        if frames.len() != t_steps {
            return Err(DataError::Contract {
                detail: format!(
                    "sample {i} has {} frames, dataset uses {t_steps}",
                    frames.len()
                ),
            });
        }
        if sample.label >= num_classes {
            return Err(DataError::Contract {
                detail: format!("sample {i} label {} >= {num_classes}", sample.label),
            });
        }
        out.extend_from_slice(&(sample.label as u32).to_le_bytes());
        let mut packed = vec![0u8; frame_bytes];
        let mut bit = 0usize;
        for frame in frames {
            if frame.shape() != shape.as_slice() {
                return Err(DataError::Contract {
                    detail: format!(
                        "sample {i} frame shape {:?} differs from {shape:?}",
                        frame.shape()
                    ),
                });
            }
            if !frame.is_binary() {
                return Err(DataError::Contract {
                    detail: format!("sample {i} carries non-binary frame values"),
                });
            }
            for &v in frame.data() {
                if v == S::one() {
                    packed[bit / 8] |= 1 << (bit % 8);
                }
                bit += 1;
            }
        }
        out.extend_from_slice(&packed);
    }
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}

/// Deserialize a container written by [`save_spike_dataset`].
pub fn load_spike_dataset<S: Scalar>(
    path: &Path,
) -> Result<(Vec<Sample<S>>, ContainerMeta), DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: "bad magic, expected SPKT".into(),
        });
    }
    let version = read_u32_le(&bytes, 4, path, "version")?;
    if version != VERSION {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let samples = read_u32_le(&bytes, 8, path, "sample count")? as usize;
    let t_steps = read_u32_le(&bytes, 12, path, "step count")? as usize;
    let c = read_u32_le(&bytes, 16, path, "channels")? as usize;
    let h = read_u32_le(&bytes, 20, path, "height")? as usize;
    let w = read_u32_le(&bytes, 24, path, "width")? as usize;
    let num_classes = read_u32_le(&bytes, 28, path, "class count")? as usize;
    let meta = ContainerMeta {
        samples,
        t_steps,
        channels: c,
        height: h,
        width: w,
        num_classes,
    };
    if t_steps == 0 || c == 0 || h == 0 || w == 0 || num_classes == 0 {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: 8,
            detail: format!("degenerate dimensions in header: {meta:?}"),
        });
    }

    let frame_bits = t_steps * c * h * w;
    let frame_bytes = frame_bits.div_ceil(8);
    let expected = 32 + samples * (4 + frame_bytes);
    if bytes.len() != expected {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected) as u64,
            detail: format!("file holds {} bytes, header promises {expected}", bytes.len()),
        });
    }

    let mut result = Vec::with_capacity(samples);
    let mut pos = 32usize;
    for i in 0..samples {
        let label = read_u32_le(&bytes, pos, path, "label")? as usize;
        if label >= num_classes {
            return Err(DataError::Format {
                path: path.to_path_buf(),
                offset: pos as u64,
                detail: format!("sample {i} label {label} >= {num_classes}"),
            });
        }
        pos += 4;
        let packed = &bytes[pos..pos + frame_bytes];
        pos += frame_bytes;
        let mut frames = Vec::with_capacity(t_steps);
        let mut bit = 0usize;
        for _ in 0..t_steps {
            let mut frame = Tensor::zeros(&[c, h, w]);
            for v in frame.data_mut() {
                if packed[bit / 8] & (1 << (bit % 8)) != 0 {
                    *v = S::one();
                }
                bit += 1;
            }
            frames.push(frame);
        }
        result.push(Sample {
            frames: SampleFrames::Temporal(frames),
            label,
        });
    }
    Ok((result, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn random_samples(n: usize, t: usize, shape: [usize; 3], seed: u64) -> Vec<Sample<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let frames = (0..t)
                    .map(|_| {
                        let data: Vec<f32> = (0..shape.iter().product::<usize>())
                            .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
                            .collect();
                        Tensor::from_vec(&shape, data).unwrap()
                    })
                    .collect();
                Sample {
                    frames: SampleFrames::Temporal(frames),
                    label: rng.gen_range(0..4),
                }
            })
            .collect()
    }

    #[test]
    fn round_trip_preserves_every_spike_and_label() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cache.spkt");
        let samples = random_samples(7, 3, [2, 5, 4], 99);
        save_spike_dataset(&path, &samples, 4).unwrap();
        let (loaded, meta) = load_spike_dataset::<f32>(&path).unwrap();
        assert_eq!(
            meta,
            ContainerMeta {
                samples: 7,
                t_steps: 3,
                channels: 2,
                height: 5,
                width: 4,
                num_classes: 4
            }
        );
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.label, b.label);
            let (SampleFrames::Temporal(fa), SampleFrames::Temporal(fb)) =
                (&a.frames, &b.frames)
            else {
                panic!()
            };
            for (x, y) in fa.iter().zip(fb) {
                assert_eq!(x.data(), y.data());
            }
        }
    }

    #[test]
    fn non_binary_frames_rejected_on_save() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cache.spkt");
        let frames = vec![Tensor::from_vec(&[1, 1, 1], vec![0.5f32]).unwrap()];
        let samples = vec![Sample {
            frames: SampleFrames::Temporal(frames),
            label: 0,
        }];
        let err = save_spike_dataset(&path, &samples, 2).unwrap_err();
        assert!(matches!(err, DataError::Contract { .. }));
    }

    #[test]
    fn truncated_container_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cache.spkt");
        let samples = random_samples(3, 2, [1, 3, 3], 5);
        save_spike_dataset(&path, &samples, 4).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 1]).unwrap();
        let err = load_spike_dataset::<f32>(&path).unwrap_err();
        assert!(matches!(err, DataError::Format { .. }));
    }

    #[test]
    fn label_out_of_range_rejected_on_load() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cache.spkt");
        let samples = random_samples(1, 1, [1, 2, 2], 8);
        save_spike_dataset(&path, &samples, 4).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[32] = 200; // first label word
        std::fs::write(&path, &bytes).unwrap();
        let err = load_spike_dataset::<f32>(&path).unwrap_err();
        match err {
            DataError::Format { offset, .. } => assert_eq!(offset, 32),
            other => panic!("expected format error, got {other}"),
        }
    }
}

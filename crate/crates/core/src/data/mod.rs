//! Dataset ingestion and preprocessing.
//!
//! The pipeline stages are deliberately small and composable: raw files
//! decode into images or event streams, events bin into per-step binary
//! frames, frames optionally downsample, and static images either feed the
//! network directly (the first layer encodes them) or pass through the
//! Bernoulli rate encoder. Every event-derived frame stays strictly binary
//! at every stage.

pub mod aer;
pub mod container;
pub mod idx;
pub mod synth;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::stbp::{Sample, SampleFrames};
use crate::tensor::{Scalar, Tensor};

pub use aer::{decode_aer, load_aer, Event, EventStream, Polarity, SENSOR_SIZE};
pub use container::{load_spike_dataset, save_spike_dataset, ContainerMeta};
pub use idx::{read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use synth::{synth_dataset, synth_digits, synth_digits_u8};

/// Errors raised by loaders and preprocessing stages.
#[derive(Debug, Error)]
pub enum DataError {
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
    #[error("dimension error: {detail}")]
    Dimension { detail: String },
    #[error("contract violation: {detail}")]
    Contract { detail: String },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Event accumulation window: one network step per 5 ms of sensor time.
pub const DEFAULT_BIN_WIDTH_US: u32 = 5_000;

/// A labelled corpus plus the per-sample input geometry `[C, H, W]`.
#[derive(Clone, Debug)]
pub struct Dataset<S: Scalar> {
    pub samples: Vec<Sample<S>>,
    pub num_classes: usize,
    pub input_shape: [usize; 3],
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Accumulate an event stream into `t_steps` binary frames of shape
/// `[2, H, W]`. Channel 0 holds On events, channel 1 Off events. A frame
/// pixel is 1 if at least one matching event fell in its window; repeats
/// saturate. Events past the last window are dropped.
pub fn bin_events<S: Scalar>(
    stream: &EventStream,
    bin_width_us: u32,
    t_steps: usize,
) -> Result<Vec<Tensor<S>>, DataError> {
    if bin_width_us == 0 {
        return Err(DataError::Contract {
            detail: "bin width must be positive".into(),
        });
    }
    if t_steps == 0 {
        return Err(DataError::Contract {
            detail: "need at least one time step".into(),
        });
    }
    let (h, w) = (stream.height, stream.width);
    let mut frames = vec![Tensor::zeros(&[2, h, w]); t_steps];
    for event in &stream.events {
        let bin = (event.timestamp_us / bin_width_us) as usize;
        if bin >= t_steps {
            continue;
        }
        let channel = match event.polarity {
            Polarity::On => 0,
            Polarity::Off => 1,
        };
        let idx = (channel * h + event.y as usize) * w + event.x as usize;
        frames[bin].data_mut()[idx] = S::one();
    }
    Ok(frames)
}

/// Reduce `[C, 128, 128]` frames to `[C, 42, 42]` with 3x3 stride-3
/// windows. An output pixel is 1 if any input pixel in its window is 1,
/// which keeps frames binary (averaging would not).
pub fn downsample_events<S: Scalar>(frames: &[Tensor<S>]) -> Result<Vec<Tensor<S>>, DataError> {
    const IN: usize = 128;
    const WINDOW: usize = 3;
    const OUT: usize = (IN - WINDOW) / WINDOW + 1; // 42

    frames
        .iter()
        .map(|frame| {
            let [c, h, w] = frame.shape() else {
                return Err(DataError::Dimension {
                    detail: format!("expected 3-D frames, got {:?}", frame.shape()),
                });
            };
            let (c, h, w) = (*c, *h, *w);
            if h != IN || w != IN {
                return Err(DataError::Dimension {
                    detail: format!("expected {IN}x{IN} frames, got {h}x{w}"),
                });
            }
            let mut out = Tensor::zeros(&[c, OUT, OUT]);
            let src = frame.data();
            let dst = out.data_mut();
            for ch in 0..c {
                for oy in 0..OUT {
                    for ox in 0..OUT {
                        let mut hit = false;
                        'window: for ky in 0..WINDOW {
                            for kx in 0..WINDOW {
                                let iy = oy * WINDOW + ky;
                                let ix = ox * WINDOW + kx;
                                if src[(ch * h + iy) * w + ix] != S::zero() {
                                    hit = true;
                                    break 'window;
                                }
                            }
                        }
                        if hit {
                            dst[(ch * OUT + oy) * OUT + ox] = S::one();
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// Sample `t_steps` binary frames from a `[0, 1]` intensity image, each
/// pixel spiking independently per step with probability equal to its
/// intensity. Seeded for reproducibility.
pub fn bernoulli_encode<S: Scalar>(
    image: &Tensor<S>,
    t_steps: usize,
    seed: u64,
) -> Result<Vec<Tensor<S>>, DataError> {
    for &v in image.data() {
        let v = v.as_f64();
        if !(0.0..=1.0).contains(&v) {
            return Err(DataError::Contract {
                detail: format!("pixel intensity {v} outside [0, 1]"),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..t_steps)
        .map(|_| {
            let data: Vec<S> = image
                .data()
                .iter()
                .map(|&p| {
                    if rng.gen::<f64>() < p.as_f64() {
                        S::one()
                    } else {
                        S::zero()
                    }
                })
                .collect();
            Tensor::from_vec(image.shape(), data).expect("same shape as source image")
        })
        .collect();
    Ok(frames)
}

/// Per-channel mean and population standard deviation of a set of
/// `[C, H, W]` images, accumulated in double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Compute [`ChannelStats`] over a training split. A constant channel has
/// no scale to divide by, so zero deviation is a loud error instead of a
/// silent divide.
pub fn channel_stats<S: Scalar>(images: &[Tensor<S>]) -> Result<ChannelStats, DataError> {
    let first = images.first().ok_or_else(|| DataError::Contract {
        detail: "cannot compute statistics of an empty split".into(),
    })?;
    let [c, h, w] = first.shape() else {
        return Err(DataError::Dimension {
            detail: format!("expected 3-D images, got {:?}", first.shape()),
        });
    };
    let (c, h, w) = (*c, *h, *w);
    let plane = h * w;
    let mut sum = vec![0.0f64; c];
    let mut sum_sq = vec![0.0f64; c];
    for image in images {
        if image.shape() != [c, h, w] {
            return Err(DataError::Dimension {
                detail: format!(
                    "image shape {:?} differs from first image {:?}",
                    image.shape(),
                    [c, h, w]
                ),
            });
        }
        for ch in 0..c {
            for &v in &image.data()[ch * plane..(ch + 1) * plane] {
                let v = v.as_f64();
                sum[ch] += v;
                sum_sq[ch] += v * v;
            }
        }
    }
    let count = (images.len() * plane) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| (sq / count - m * m).max(0.0).sqrt())
        .collect();
    if let Some(ch) = std.iter().position(|&s| s == 0.0) {
        return Err(DataError::Contract {
            detail: format!("channel {ch} has zero standard deviation"),
        });
    }
    Ok(ChannelStats { mean, std })
}

/// Shift and scale every channel to zero mean and unit variance using
/// statistics computed once on the training split.
pub fn normalize_images<S: Scalar>(
    images: &mut [Tensor<S>],
    stats: &ChannelStats,
) -> Result<(), DataError> {
    for image in images.iter_mut() {
        let [c, h, w] = image.shape() else {
            return Err(DataError::Dimension {
                detail: format!("expected 3-D images, got {:?}", image.shape()),
            });
        };
        let (c, plane) = (*c, h * w);
        if c != stats.mean.len() {
            return Err(DataError::Dimension {
                detail: format!(
                    "image has {c} channels, statistics cover {}",
                    stats.mean.len()
                ),
            });
        }
        for ch in 0..c {
            let m = S::from_f64(stats.mean[ch]);
            let inv = S::from_f64(1.0 / stats.std[ch]);
            for v in &mut image.data_mut()[ch * plane..(ch + 1) * plane] {
                *v = (*v - m) * inv;
            }
        }
    }
    Ok(())
}

/// Mirror a `[C, H, W]` image left-to-right.
pub fn hflip<S: Scalar>(image: &Tensor<S>) -> Tensor<S> {
    let shape = image.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut out = Tensor::zeros(shape);
    let src = image.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for x in 0..w {
                dst[row + x] = src[row + (w - 1 - x)];
            }
        }
    }
    out
}

/// Standard training-time augmentation: zero-pad by 4 pixels, take a
/// random same-sized crop, and mirror horizontally with probability 0.5.
/// Draw order is fixed (row offset, column offset, flip) so a seeded
/// generator reproduces the same augmentation stream.
pub fn random_crop_flip<S: Scalar, R: Rng>(image: &Tensor<S>, rng: &mut R) -> Tensor<S> {
    const PAD: usize = 4;
    let shape = image.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let dy = rng.gen_range(0..=2 * PAD);
    let dx = rng.gen_range(0..=2 * PAD);
    let flip = rng.gen_bool(0.5);

    let mut out = Tensor::zeros(shape);
    let src = image.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            // Source row in the padded canvas is y + dy; it maps back to
            // row y + dy - PAD of the original, when in bounds.
            let sy = (y + dy).wrapping_sub(PAD);
            if sy >= h {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx).wrapping_sub(PAD);
                if sx >= w {
                    continue;
                }
                dst[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    if flip {
        hflip(&out)
    } else {
        out
    }
}

fn idx_split_to_dataset<S: Scalar>(
    images_path: &Path,
    labels_path: &Path,
) -> Result<Dataset<S>, DataError> {
    let images = read_idx_images::<S>(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    let [n, h, w] = images.shape() else {
        return Err(DataError::Dimension {
            detail: format!("expected [N, H, W] images, got {:?}", images.shape()),
        });
    };
    let (n, h, w) = (*n, *h, *w);
    if labels.len() != n {
        return Err(DataError::Contract {
            detail: format!("{n} images but {} labels", labels.len()),
        });
    }
    let plane = h * w;
    let samples = images
        .data()
        .chunks_exact(plane)
        .zip(&labels)
        .map(|(chunk, &label)| {
            let image = Tensor::from_vec(&[1, h, w], chunk.to_vec())
                .expect("chunk length equals the declared plane size");
            Sample {
                frames: SampleFrames::Static(image),
                label: label as usize,
            }
        })
        .collect();
    Ok(Dataset {
        samples,
        num_classes: 10,
        input_shape: [1, h, w],
    })
}

/// Load the four conventionally named digit-image files from a directory:
/// `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
/// `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`. Returns
/// (train, test) datasets of static images.
pub fn load_mnist_dir<S: Scalar>(dir: &Path) -> Result<(Dataset<S>, Dataset<S>), DataError> {
    let train = idx_split_to_dataset(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = idx_split_to_dataset(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

fn nmnist_split<S: Scalar>(split_dir: &Path, t_steps: usize) -> Result<Dataset<S>, DataError> {
    let mut files: Vec<(PathBuf, usize)> = Vec::new();
    for digit in 0..10usize {
        let digit_dir = split_dir.join(digit.to_string());
        let entries = std::fs::read_dir(&digit_dir).map_err(|e| DataError::io(&digit_dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "bin"))
            .collect();
        paths.sort();
        files.extend(paths.into_iter().map(|p| (p, digit)));
    }
    let samples: Vec<Sample<S>> = files
        .par_iter()
        .map(|(path, label)| {
            let stream = load_aer(path)?;
            let frames = bin_events::<S>(&stream, DEFAULT_BIN_WIDTH_US, t_steps)?;
            Ok(Sample {
                frames: SampleFrames::Temporal(frames),
                label: *label,
            })
        })
        .collect::<Result<_, DataError>>()?;
    Ok(Dataset {
        samples,
        num_classes: 10,
        input_shape: [2, SENSOR_SIZE, SENSOR_SIZE],
    })
}

/// Load an event-camera digit corpus laid out as `Train/<digit>/*.bin` and
/// `Test/<digit>/*.bin`, decoding and binning each file into `t_steps`
/// frames. Files are visited in sorted order per digit so sample order is
/// stable; decoding is parallel per file.
pub fn load_nmnist_dir<S: Scalar>(
    dir: &Path,
    t_steps: usize,
) -> Result<(Dataset<S>, Dataset<S>), DataError> {
    let train = nmnist_split(&dir.join("Train"), t_steps)?;
    let test = nmnist_split(&dir.join("Test"), t_steps)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn stream(events: Vec<Event>) -> EventStream {
        EventStream {
            events,
            height: SENSOR_SIZE,
            width: SENSOR_SIZE,
        }
    }

    fn event(x: u8, y: u8, polarity: Polarity, timestamp_us: u32) -> Event {
        Event {
            x,
            y,
            polarity,
            timestamp_us,
        }
    }

    #[test]
    fn events_at_3ms_and_7ms_land_in_consecutive_bins() {
        let s = stream(vec![
            event(5, 6, Polarity::On, 3_000),
            event(5, 6, Polarity::On, 7_000),
        ]);
        let frames = bin_events::<f64>(&s, DEFAULT_BIN_WIDTH_US, 4).unwrap();
        let idx = 6 * SENSOR_SIZE + 5; // channel 0
        assert_eq!(frames[0].data()[idx], 1.0);
        assert_eq!(frames[1].data()[idx], 1.0);
        assert!(frames[2].data().iter().all(|&v| v == 0.0));
        assert!(frames[3].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_events_saturate_to_a_single_spike() {
        let s = stream(vec![
            event(1, 1, Polarity::Off, 100),
            event(1, 1, Polarity::Off, 200),
            event(1, 1, Polarity::Off, 4_999),
        ]);
        let frames = bin_events::<f64>(&s, DEFAULT_BIN_WIDTH_US, 1).unwrap();
        let idx = SENSOR_SIZE * SENSOR_SIZE + SENSOR_SIZE + 1; // channel 1
        assert_eq!(frames[0].data()[idx], 1.0);
        assert_eq!(frames[0].data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn events_beyond_the_window_are_dropped() {
        let s = stream(vec![event(0, 0, Polarity::On, 25_000)]);
        let frames = bin_events::<f64>(&s, DEFAULT_BIN_WIDTH_US, 2).unwrap();
        assert!(frames.iter().all(|f| f.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn empty_stream_gives_all_zero_frames() {
        let frames = bin_events::<f32>(&stream(vec![]), DEFAULT_BIN_WIDTH_US, 3).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0].shape(), &[2, SENSOR_SIZE, SENSOR_SIZE]);
        assert!(frames.iter().all(|f| f.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn downsample_maps_pixel_4_4_to_output_1_1() {
        let mut frame = Tensor::<f64>::zeros(&[2, 128, 128]);
        frame.data_mut()[4 * 128 + 4] = 1.0;
        let out = downsample_events(&[frame]).unwrap();
        assert_eq!(out[0].shape(), &[2, 42, 42]);
        let hits: Vec<usize> = out[0]
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(hits, vec![42 + 1]); // channel 0, row 1, column 1
    }

    #[test]
    fn downsample_keeps_zero_frames_zero_and_output_binary() {
        let zero = Tensor::<f32>::zeros(&[2, 128, 128]);
        let mut busy = Tensor::<f32>::zeros(&[2, 128, 128]);
        for v in busy.data_mut().iter_mut().step_by(7) {
            *v = 1.0;
        }
        let out = downsample_events(&[zero, busy]).unwrap();
        assert!(out[0].data().iter().all(|&v| v == 0.0));
        assert!(out[1].is_binary());
    }

    #[test]
    fn downsample_rejects_other_resolutions() {
        let frame = Tensor::<f64>::zeros(&[2, 64, 64]);
        let err = downsample_events(&[frame]).unwrap_err();
        assert!(matches!(err, DataError::Dimension { .. }));
    }

    #[test]
    fn bernoulli_endpoints_are_exact() {
        let image = Tensor::from_vec(&[1, 1, 2], vec![0.0f64, 1.0]).unwrap();
        let frames = bernoulli_encode(&image, 50, 9).unwrap();
        for frame in &frames {
            assert_eq!(frame.data()[0], 0.0);
            assert_eq!(frame.data()[1], 1.0);
        }
    }

    #[test]
    fn bernoulli_rate_concentrates_at_intensity() {
        let image = Tensor::from_vec(&[1, 1, 1], vec![0.5f64]).unwrap();
        let frames = bernoulli_encode(&image, 10_000, 1234).unwrap();
        let rate = frames.iter().map(|f| f.data()[0]).sum::<f64>() / 10_000.0;
        // 3 sigma of a fair Bernoulli mean over 10k draws is 0.015.
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn bernoulli_is_seed_deterministic() {
        let image = Tensor::from_vec(&[1, 2, 2], vec![0.3f64, 0.6, 0.9, 0.1]).unwrap();
        let a = bernoulli_encode(&image, 8, 7).unwrap();
        let b = bernoulli_encode(&image, 8, 7).unwrap();
        let c = bernoulli_encode(&image, 8, 8).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.data() == y.data()));
        assert!(a.iter().zip(&c).any(|(x, y)| x.data() != y.data()));
    }

    #[test]
    fn bernoulli_rejects_out_of_range_pixels() {
        let image = Tensor::from_vec(&[1, 1, 1], vec![1.5f64]).unwrap();
        let err = bernoulli_encode(&image, 2, 0).unwrap_err();
        assert!(matches!(err, DataError::Contract { .. }));
    }

    #[test]
    fn normalization_centers_every_channel() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut images: Vec<Tensor<f64>> = (0..12)
            .map(|_| {
                let data: Vec<f64> = (0..3 * 4 * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
                Tensor::from_vec(&[3, 4, 4], data).unwrap()
            })
            .collect();
        let stats = channel_stats(&images).unwrap();
        normalize_images(&mut images, &stats).unwrap();
        let after = channel_stats(&images).unwrap();
        for ch in 0..3 {
            assert!(after.mean[ch].abs() < 1e-5, "mean {}", after.mean[ch]);
            assert!((after.std[ch] - 1.0).abs() < 1e-5, "std {}", after.std[ch]);
        }
    }

    #[test]
    fn constant_channel_fails_loudly() {
        let images = vec![Tensor::<f64>::zeros(&[2, 3, 3]); 4];
        let err = channel_stats(&images).unwrap_err();
        match err {
            DataError::Contract { detail } => assert!(detail.contains("channel 0")),
            other => panic!("expected contract error, got {other}"),
        }
    }

    #[test]
    fn horizontal_flip_is_an_involution() {
        let data: Vec<f64> = (0..2 * 3 * 5).map(|i| i as f64).collect();
        let image = Tensor::from_vec(&[2, 3, 5], data).unwrap();
        let twice = hflip(&hflip(&image));
        assert_eq!(twice.data(), image.data());
        assert_ne!(hflip(&image).data(), image.data());
    }

    #[test]
    fn crop_shifts_content_within_the_padded_canvas() {
        let data: Vec<f64> = (1..=(8 * 8)).map(|i| i as f64).collect();
        let image = Tensor::from_vec(&[1, 8, 8], data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut distinct = std::collections::HashSet::new();
        for _ in 0..20 {
            let out = random_crop_flip(&image, &mut rng);
            assert_eq!(out.shape(), image.shape());
            // Every nonzero output value must come from the source image.
            for &v in out.data() {
                assert!(v == 0.0 || (1.0..=64.0).contains(&v));
            }
            distinct.insert(
                out.data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<u64>>(),
            );
        }
        assert!(distinct.len() > 1, "augmentation never varied");
    }

    #[test]
    fn mnist_directory_round_trips_through_idx_files() {
        let dir = tempdir().unwrap();
        let (train_px, train_lb) = synth_digits_u8(20, 1);
        let (test_px, test_lb) = synth_digits_u8(10, 2);
        write_idx_images(&dir.path().join("train-images-idx3-ubyte"), 20, 28, 28, &train_px)
            .unwrap();
        write_idx_labels(&dir.path().join("train-labels-idx1-ubyte"), &train_lb).unwrap();
        write_idx_images(&dir.path().join("t10k-images-idx3-ubyte"), 10, 28, 28, &test_px)
            .unwrap();
        write_idx_labels(&dir.path().join("t10k-labels-idx1-ubyte"), &test_lb).unwrap();

        let (train, test) = load_mnist_dir::<f32>(dir.path()).unwrap();
        assert_eq!(train.len(), 20);
        assert_eq!(test.len(), 10);
        assert_eq!(train.input_shape, [1, 28, 28]);
        assert_eq!(train.samples[3].label, 3);
        let SampleFrames::Static(image) = &train.samples[0].frames else {
            panic!("expected static samples");
        };
        assert_eq!(image.shape(), &[1, 28, 28]);
        let max = image.data().iter().cloned().fold(0.0f32, f32::max);
        assert!(max <= 1.0 && max > 0.5);
    }

    #[test]
    fn event_directory_loads_sorted_and_binned() {
        let dir = tempdir().unwrap();
        for split in ["Train", "Test"] {
            for digit in 0..10 {
                std::fs::create_dir_all(dir.path().join(split).join(digit.to_string())).unwrap();
            }
        }
        // One event at 3 ms and one at 7 ms, matching the binning example.
        let bytes = [0x05, 0x06, 0x80, 0x0B, 0xB8, 0x05, 0x06, 0x80, 0x1B, 0x58];
        std::fs::write(dir.path().join("Train/4/a.bin"), bytes).unwrap();
        std::fs::write(dir.path().join("Train/4/b.bin"), &bytes[..5]).unwrap();
        std::fs::write(dir.path().join("Test/9/z.bin"), &bytes[..5]).unwrap();

        let (train, test) = load_nmnist_dir::<f64>(dir.path(), 3).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(test.len(), 1);
        assert_eq!(train.input_shape, [2, SENSOR_SIZE, SENSOR_SIZE]);
        assert!(train.samples.iter().all(|s| s.label == 4));
        assert_eq!(test.samples[0].label, 9);
        let SampleFrames::Temporal(frames) = &train.samples[0].frames else {
            panic!("expected temporal samples");
        };
        assert_eq!(frames.len(), 3);
        let idx = 6 * SENSOR_SIZE + 5;
        assert_eq!(frames[0].data()[idx], 1.0);
        assert_eq!(frames[1].data()[idx], 1.0);
    }
}

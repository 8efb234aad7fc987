//! Deterministic synthetic digit images for smoke tests and offline runs.
//!
//! Each image is a 5x7 glyph scaled to 15x21, placed into a 28x28 canvas
//! with seeded jitter, brightness variation and sparse background speckle.
//! The generator is pure: the same seed always yields the same bytes, so
//! training runs on this corpus are reproducible end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::stbp::{Sample, SampleFrames};
use crate::tensor::{Scalar, Tensor};

use super::Dataset;

pub const IMAGE_SIDE: usize = 28;
const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const SCALE: usize = 3;

/// Row bitmasks for digits 0-9, most significant of the low five bits on
/// the left.
const GLYPHS: [[u8; GLYPH_H]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00110, 0b01000, 0b10000, 0b11111], // 2
    [0b01110, 0b10001, 0b00001, 0b00110, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

/// Render `n` digit images as raw grayscale bytes plus labels, cycling
/// through the ten classes. The byte form feeds the on-disk image writer.
pub fn synth_digits_u8(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = vec![0u8; n * IMAGE_SIDE * IMAGE_SIDE];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = (i % 10) as u8;
        labels.push(digit);
        let image = &mut pixels[i * IMAGE_SIDE * IMAGE_SIDE..(i + 1) * IMAGE_SIDE * IMAGE_SIDE];
        let dx = 6 + rng.gen_range(-3i32..=3);
        let dy = 3 + rng.gen_range(-2i32..=3);
        let intensity = rng.gen_range(0.75f64..1.0);
        let glyph = &GLYPHS[digit as usize];
        for (gy, row) in glyph.iter().enumerate() {
            for gx in 0..GLYPH_W {
                if row & (1 << (GLYPH_W - 1 - gx)) == 0 {
                    continue;
                }
                for sy in 0..SCALE {
                    for sx in 0..SCALE {
                        let y = dy + (gy * SCALE + sy) as i32;
                        let x = dx + (gx * SCALE + sx) as i32;
                        if (0..IMAGE_SIDE as i32).contains(&y)
                            && (0..IMAGE_SIDE as i32).contains(&x)
                        {
                            let shade = intensity * rng.gen_range(0.85f64..1.0);
                            image[y as usize * IMAGE_SIDE + x as usize] =
                                (shade * 255.0).round() as u8;
                        }
                    }
                }
            }
        }
        for p in image.iter_mut() {
            if *p == 0 && rng.gen_bool(0.02) {
                *p = rng.gen_range(10u8..60);
            }
        }
    }
    (pixels, labels)
}

/// Render `n` digit images as `[1, 28, 28]` tensors scaled into `[0, 1]`.
pub fn synth_digits<S: Scalar>(n: usize, seed: u64) -> (Vec<Tensor<S>>, Vec<u8>) {
    let (pixels, labels) = synth_digits_u8(n, seed);
    let inv = S::one() / S::from_f64(255.0);
    let images = pixels
        .chunks_exact(IMAGE_SIDE * IMAGE_SIDE)
        .map(|chunk| {
            let data: Vec<S> = chunk.iter().map(|&b| S::from_f64(f64::from(b)) * inv).collect();
            Tensor::from_vec(&[1, IMAGE_SIDE, IMAGE_SIDE], data)
                .expect("glyph canvas dimensions are fixed")
        })
        .collect();
    (images, labels)
}

/// Package synthetic digits as a ready-to-train dataset of static samples.
pub fn synth_dataset<S: Scalar>(n: usize, seed: u64) -> Dataset<S> {
    let (images, labels) = synth_digits(n, seed);
    let samples = images
        .into_iter()
        .zip(labels)
        .map(|(image, label)| Sample {
            frames: SampleFrames::Static(image),
            label: label as usize,
        })
        .collect();
    Dataset {
        samples,
        num_classes: 10,
        input_shape: [1, IMAGE_SIDE, IMAGE_SIDE],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let (a_px, a_lb) = synth_digits_u8(30, 77);
        let (b_px, b_lb) = synth_digits_u8(30, 77);
        assert_eq!(a_px, b_px);
        assert_eq!(a_lb, b_lb);
        let (c_px, _) = synth_digits_u8(30, 78);
        assert_ne!(a_px, c_px);
    }

    #[test]
    fn labels_cycle_through_all_classes() {
        let (_, labels) = synth_digits_u8(25, 1);
        assert_eq!(&labels[..12], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1]);
    }

    #[test]
    fn tensors_land_in_unit_range_with_visible_strokes() {
        let (images, _) = synth_digits::<f64>(10, 5);
        for image in &images {
            assert_eq!(image.shape(), &[1, IMAGE_SIDE, IMAGE_SIDE]);
            let mut bright = 0usize;
            for &v in image.data() {
                assert!((0.0..=1.0).contains(&v));
                if v > 0.5 {
                    bright += 1;
                }
            }
            // A scaled glyph stroke covers dozens of pixels.
            assert!(bright > 40, "only {bright} bright pixels");
        }
    }

    #[test]
    fn dataset_exposes_shape_and_classes() {
        let ds = synth_dataset::<f32>(20, 3);
        assert_eq!(ds.samples.len(), 20);
        assert_eq!(ds.num_classes, 10);
        assert_eq!(ds.input_shape, [1, 28, 28]);
    }
}

//! PNG export for masks, label maps and feature previews.

use std::io::Cursor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridTensor};
use crate::mask::Mask;
use crate::superpixel::Segmentation;

/// Seed of the label palette; fixed so label PNGs are reproducible.
pub const PALETTE_SEED: u64 = 0x5EED_1AB5;

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::format("PNG", e.to_string())
}

fn encode(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

/// 1-bit grayscale PNG; white pixels are inside the mask.
pub fn encode_mask_png(mask: &Mask) -> Vec<u8> {
    let (h, w) = (mask.height(), mask.width());
    let stride = w.div_ceil(8);
    let mut packed = vec![0u8; stride * h];
    for y in 0..h {
        for x in 0..w {
            if mask.bits()[y * w + x] {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    encode(w, h, png::ColorType::Grayscale, png::BitDepth::One, &packed)
}

/// Reads a mask PNG of any bit depth or color type; nonzero first channel is inside.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG", "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let samples = info.color_type.samples();
    let bits = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            buf[y * info.line_size + x * samples] != 0
        })
        .collect();
    Mask::from_bits(h, w, bits)
}

/// `n` RGB colors drawn from a fixed-seed generator.
pub fn label_palette(n: usize) -> Vec<[u8; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(PALETTE_SEED);
    (0..n)
        .map(|_| [rng.random(), rng.random(), rng.random()])
        .collect()
}

/// RGB visualization of a label map.
pub fn encode_labels_png(seg: &Segmentation) -> Vec<u8> {
    let palette = label_palette(seg.n_patches());
    let rgb: Vec<u8> = seg
        .labels()
        .iter()
        .flat_map(|&l| palette[l as usize])
        .collect();
    encode_rgb_png(seg.height(), seg.width(), &rgb)
}

pub fn encode_rgb_png(height: usize, width: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), height * width * 3, "RGB buffer size");
    encode(width, height, png::ColorType::Rgb, png::BitDepth::Eight, rgb)
}

/// Labels as a one-channel grid (labels stored as reals).
pub fn labels_to_grid(seg: &Segmentation) -> GridTensor {
    Grid::new(
        seg.height(),
        seg.width(),
        1,
        seg.labels().iter().map(|&l| l as f32).collect(),
    )
    .expect("label grid has matching size")
}

/// Projection of a grid onto its first three principal components, each
/// min-max scaled to `0..=255`. Grids with at most three channels are scaled
/// channel by channel; missing channels repeat the last one.
pub fn feature_preview_rgb(grid: &GridTensor) -> Vec<u8> {
    let (h, w, c) = grid.shape();
    let n = h * w;
    let components: Vec<Vec<f64>> = if c <= 3 {
        (0..3)
            .map(|k| {
                let ch = k.min(c - 1);
                (0..n).map(|i| grid.data()[i * c + ch] as f64).collect()
            })
            .collect()
    } else {
        principal_projections(grid, 3)
    };
    let scaled: Vec<Vec<u8>> = components
        .iter()
        .map(|v| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            v.iter()
                .map(|&x| {
                    if span > 0.0 {
                        ((x - lo) / span * 255.0).round() as u8
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let mut rgb = Vec::with_capacity(n * 3);
    for i in 0..n {
        for s in &scaled {
            rgb.push(s[i]);
        }
    }
    rgb
}

pub fn encode_preview_png(grid: &GridTensor) -> Vec<u8> {
    encode_rgb_png(grid.height(), grid.width(), &feature_preview_rgb(grid))
}

/// Per-pixel scores on the top `k` principal axes (power iteration with deflation).
fn principal_projections(grid: &GridTensor, k: usize) -> Vec<Vec<f64>> {
    let (h, w, c) = grid.shape();
    let n = h * w;
    let mut mean = vec![0.0; c];
    for px in grid.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; c * c];
    for px in grid.data().chunks_exact(c) {
        let centered: Vec<f64> = px.iter().zip(&mean).map(|(&v, m)| v as f64 - m).collect();
        for a in 0..c {
            for b in 0..c {
                cov[a * c + b] += centered[a] * centered[b];
            }
        }
    }
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for j in 0..k {
        let mut v: Vec<f64> = (0..c).map(|i| if i == j % c { 1.0 } else { 0.5 }).collect();
        for _ in 0..100 {
            let mut next: Vec<f64> = (0..c)
                .map(|a| (0..c).map(|b| cov[a * c + b] * v[b]).sum())
                .collect();
            for axis in &axes {
                let d: f64 = next.iter().zip(axis).map(|(x, y)| x * y).sum();
                next.iter_mut().zip(axis).for_each(|(x, y)| *x -= d * y);
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                break;
            }
            v = next.into_iter().map(|x| x / norm).collect();
        }
        axes.push(v);
    }
    axes.iter()
        .map(|axis| {
            grid.data()
                .chunks_exact(c)
                .map(|px| {
                    px.iter()
                        .zip(&mean)
                        .zip(axis)
                        .map(|((&v, m), a)| (v as f64 - m) * a)
                        .sum()
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trips_through_one_bit_png() {
        let bits: Vec<bool> = (0..13 * 11).map(|i| (i * 7) % 5 < 2).collect();
        let mask = Mask::from_bits(11, 13, bits.clone()).unwrap();
        let bytes = encode_mask_png(&mask);
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
        // IHDR bit depth byte
        assert_eq!(bytes[24], 1);
        let back = decode_mask_png(&bytes).unwrap();
        assert_eq!(back.bits(), mask.bits());
    }

    #[test]
    fn rgb_png_is_read_as_mask() {
        let rgb = [0, 0, 0, 255, 10, 10];
        let back = decode_mask_png(&encode_rgb_png(1, 2, &rgb)).unwrap();
        assert_eq!(back.bits(), &[false, true]);
        assert!(decode_mask_png(b"not a png").is_err());
    }

    #[test]
    fn palette_is_fixed() {
        assert_eq!(label_palette(4), label_palette(4));
        assert_eq!(label_palette(2)[..], label_palette(5)[..2]);
    }

    #[test]
    fn preview_of_rank_one_features_is_a_ramp() {
        let g = GridTensor::from_fn(1, 5, 6, |_, x, c| (x as f32) * (c as f32 + 1.0));
        let rgb = feature_preview_rgb(&g);
        let first: Vec<u8> = rgb.chunks(3).map(|p| p[0]).collect();
        let increasing = first.windows(2).all(|w| w[0] < w[1]);
        let decreasing = first.windows(2).all(|w| w[0] > w[1]);
        assert!(increasing || decreasing, "{first:?}");
    }
}

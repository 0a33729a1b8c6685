//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use dragforge_core::grid::{Grid, GridTensor, Pixel, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid64(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> Grid<f64> {
    Grid::from_fn(h, w, c, |_, _, _| rng.random_range(lo..hi))
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> GridTensor {
    Grid::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Central finite-difference gradient of `f` at `z`, one coordinate at a time.
pub fn fd_gradient(z: &Grid<f64>, step: f64, f: impl Fn(&Grid<f64>) -> f64) -> Vec<f64> {
    let mut probe = z.clone();
    (0..z.data().len())
        .map(|i| {
            let v = z.data()[i];
            probe.data_mut()[i] = v + step;
            let up = f(&probe);
            probe.data_mut()[i] = v - step;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn inner(a: &Grid<f64>, b: &Grid<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Four-neighbor weighted sum written out by hand.
pub fn bilinear_oracle(g: &GridTensor, x: f64, y: f64) -> Vec<f64> {
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(g.width() - 1), (y0 + 1).min(g.height() - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    (0..g.channels())
        .map(|c| {
            let v = |yy: usize, xx: usize| g.at(yy, xx, c) as f64;
            v(y0, x0) * (1.0 - fx) * (1.0 - fy)
                + v(y0, x1) * fx * (1.0 - fy)
                + v(y1, x0) * (1.0 - fx) * fy
                + v(y1, x1) * fx * fy
        })
        .collect()
}

/// Scans every region pixel; keeps the smallest distance, breaking ties by
/// the smallest `(y, x)`.
pub fn brute_force_track(features: &GridTensor, reference: &[f32], region: &[Pixel]) -> Pixel {
    let mut best: Option<(f64, Pixel)> = None;
    for &q in region {
        let mut d = 0.0;
        for c in 0..features.channels() {
            d += (features.at(q.y, q.x, c) as f64 - reference[c] as f64).abs();
        }
        best = match best {
            None => Some((d, q)),
            Some((bd, bq)) => {
                if d < bd || (d == bd && (q.y, q.x) < (bq.y, bq.x)) {
                    Some((d, q))
                } else {
                    Some((bd, bq))
                }
            }
        };
    }
    best.unwrap().1
}

/// Plain SLIC: every pixel compares every center inside its `2S x 2S` window
/// (plus its current center) and takes the nearest, lower index on ties.
/// Runs until no label changes.
pub fn reference_slic(features: &GridTensor, n_p: usize, m: f64, max_iters: usize) -> Vec<u32> {
    let (h, w, c) = features.shape();
    let s = ((h * w) as f64 / n_p as f64).sqrt();
    let cols = ((n_p as f64 * w as f64 / h as f64).sqrt().round() as usize).clamp(1, w);
    let rows = ((n_p as f64 / cols as f64).round() as usize).clamp(1, h);
    let (cw, ch) = (w as f64 / cols as f64, h as f64 / rows as f64);
    let mut centers: Vec<(f64, f64, Vec<f64>)> = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let (x, y) = ((j as f64 + 0.5) * cw - 0.5, (i as f64 + 0.5) * ch - 0.5);
            let f = bilinear_oracle(features, x, y);
            centers.push((x, y, f));
        }
    }
    let mut labels: Vec<u32> = (0..h * w)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let jj = ((x as f64 / cw) as usize).min(cols - 1);
            let ii = ((y as f64 / ch) as usize).min(rows - 1);
            (ii * cols + jj) as u32
        })
        .collect();
    let d2 = |centers: &[(f64, f64, Vec<f64>)], k: usize, x: usize, y: usize| {
        let (cx, cy, cf) = &centers[k];
        let df: f64 = (0..c)
            .map(|ch| (features.at(y, x, ch) as f64 - cf[ch]).powi(2))
            .sum();
        df + (m / s).powi(2) * ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2))
    };
    for _ in 0..max_iters {
        let mut next = labels.clone();
        for y in 0..h {
            for x in 0..w {
                let cur = labels[y * w + x] as usize;
                let mut best = (d2(&centers, cur, x, y), cur);
                for k in 0..centers.len() {
                    let (cx, cy, _) = &centers[k];
                    if (x as f64 - cx).abs() > s || (y as f64 - cy).abs() > s {
                        continue;
                    }
                    let d = d2(&centers, k, x, y);
                    if d < best.0 || (d == best.0 && k < best.1) {
                        best = (d, k);
                    }
                }
                next[y * w + x] = best.1 as u32;
            }
        }
        let changed = next != labels;
        labels = next;
        for (k, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..h * w).filter(|&i| labels[i] as usize == k).collect();
            if members.is_empty() {
                continue;
            }
            let n = members.len() as f64;
            center.0 = members.iter().map(|&i| (i % w) as f64).sum::<f64>() / n;
            center.1 = members.iter().map(|&i| (i / w) as f64).sum::<f64>() / n;
            center.2 = (0..c)
                .map(|ch| {
                    members
                        .iter()
                        .map(|&i| features.at(i / w, i % w, ch) as f64)
                        .sum::<f64>()
                        / n
                })
                .collect();
        }
        if !changed {
            break;
        }
    }
    labels
}

/// Flood fill from one pixel of each label; a label is connected iff the
/// fill reaches all of its pixels.
pub fn flood_fill_connected(h: usize, w: usize, labels: &[u32]) -> bool {
    let mut seen = vec![false; h * w];
    let mut visited_labels = BTreeSet::new();
    for start in 0..h * w {
        if seen[start] {
            continue;
        }
        let l = labels[start];
        if !visited_labels.insert(l) {
            return false;
        }
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut push = |j: usize| {
                if !seen[j] && labels[j] == l {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
        }
    }
    true
}

/// Whether the segment `a..b` meets the closed box, by parametric clipping.
pub fn segment_meets_box(a: Point, b: Point, x0: f64, x1: f64, y0: f64, y1: f64) -> bool {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, d, lo, hi) in [(a.x, b.x - a.x, x0, x1), (a.y, b.y - a.y, y0, y1)] {
        if d == 0.0 {
            if p < lo || p > hi {
                return false;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo - p) / d, (hi - p) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    t0 <= t1
}

/// Labels of the 16x16-cell grid segmentation whose cells the segment meets.
/// Cell `(i, j)` covers the continuous box `[16j - 0.5, 16j + 15.5] x [16i - 0.5, 16i + 15.5]`.
pub fn grid16_cells_on_segment(a: Point, b: Point) -> BTreeSet<u32> {
    let mut out = BTreeSet::new();
    for i in 0..4 {
        for j in 0..4 {
            let (x0, y0) = (16.0 * j as f64 - 0.5, 16.0 * i as f64 - 0.5);
            if segment_meets_box(a, b, x0, x0 + 16.0, y0, y0 + 16.0) {
                out.insert((i * 4 + j) as u32);
            }
        }
    }
    out
}

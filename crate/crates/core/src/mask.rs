//! Editing masks grown from superpixels.
//!
//! The mask for a drag is the union of whole superpixels: the patch under each
//! handle plus every patch the straight handle→target segment passes through.
//! Segments are traversed exactly (every pixel whose cell the segment touches),
//! so a patch is never skipped however thinly the segment clips it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridTensor, Pixel, Point};
use crate::superpixel::Segmentation;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DragPair {
    pub handle: Point,
    pub target: Point,
}

impl DragPair {
    pub fn new(handle: Point, target: Point) -> Self {
        Self { handle, target }
    }

    pub fn is_degenerate(&self) -> bool {
        self.handle == self.target
    }

    pub fn length(&self) -> f64 {
        self.handle.distance(self.target)
    }
}

/// Handle/target pairs plus the optimization budget of a drag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DragInstruction {
    pub pairs: Vec<DragPair>,
    /// User step count `n`; the ideal per-step distance is `length / n_steps`.
    pub n_steps: usize,
    /// Cap on latent updates.
    pub n_max: usize,
    pub learning_rate: f64,
    /// A handle within this many pixels of its target counts as arrived.
    pub stop_radius: f64,
}

impl Default for DragInstruction {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            n_steps: 40,
            n_max: 300,
            learning_rate: 0.01,
            stop_radius: 1.0,
        }
    }
}

impl DragInstruction {
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::param("a drag needs at least one handle/target pair"));
        }
        if self.n_steps == 0 {
            return Err(Error::param("n_steps must be at least 1"));
        }
        if self.n_max < self.n_steps {
            return Err(Error::param(format!(
                "n_max ({}) must be at least n_steps ({})",
                self.n_max, self.n_steps
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate must be positive"));
        }
        if !(self.stop_radius >= 0.0 && self.stop_radius.is_finite()) {
            return Err(Error::param("stop_radius must be non-negative"));
        }
        let finite = |p: Point| p.x.is_finite() && p.y.is_finite();
        if !self.pairs.iter().all(|p| finite(p.handle) && finite(p.target)) {
            return Err(Error::param("drag points must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    source_labels: BTreeSet<u32>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
            source_labels: BTreeSet::new(),
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            bits: vec![true; height * width],
            ..Self::empty(height, width)
        }
    }

    /// A mask not tied to any segmentation (e.g. drawn by hand).
    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "{height}x{width} mask needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
            source_labels: BTreeSet::new(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn source_labels(&self) -> &BTreeSet<u32> {
        &self.source_labels
    }

    pub fn contains(&self, p: Pixel) -> bool {
        self.bits[p.y * self.width + p.x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn pixels(&self) -> Vec<Pixel> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| Pixel::new(i % self.width, i / self.width))
            .collect()
    }

    /// Grows the mask by a Euclidean disc of `radius` pixels.
    pub fn dilate(&self, radius: f64) -> Mask {
        if radius <= 0.0 {
            return self.clone();
        }
        let r = radius.floor() as isize;
        let (h, w) = (self.height as isize, self.width as isize);
        let mut bits = self.bits.clone();
        for y in 0..h {
            for x in 0..w {
                if !self.bits[(y * w + x) as usize] {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny >= 0
                            && nx >= 0
                            && ny < h
                            && nx < w
                            && ((dx * dx + dy * dy) as f64) <= radius * radius
                        {
                            bits[(ny * w + nx) as usize] = true;
                        }
                    }
                }
            }
        }
        Mask {
            bits,
            ..self.clone()
        }
    }
}

/// Union of the superpixels under each handle and along each drag segment.
pub fn generate_mask(seg: &Segmentation, pairs: &[DragPair]) -> Result<Mask> {
    let mut labels = BTreeSet::new();
    for pair in pairs {
        seg.check_point(pair.handle)?;
        seg.check_point(pair.target)?;
        for px in segment_pixels(pair.handle, pair.target) {
            labels.insert(seg.label_at(px));
        }
    }
    let (h, w) = (seg.height(), seg.width());
    let mut bits = vec![false; h * w];
    for &l in &labels {
        for p in seg.members(l) {
            bits[p.y * w + p.x] = true;
        }
    }
    Ok(Mask {
        height: h,
        width: w,
        bits,
        source_labels: labels,
    })
}

/// `1` outside the mask and `0` inside, as an `H x W x 1` grid.
pub fn mask_complement_weighting(mask: &Mask) -> GridTensor {
    let data = mask
        .bits
        .iter()
        .map(|&b| if b { 0.0 } else { 1.0 })
        .collect();
    GridTensor::new(mask.height, mask.width, 1, data).expect("mask dims are positive")
}

/// Every pixel whose cell `[x - 0.5, x + 0.5) x [y - 0.5, y + 0.5)` contains a
/// point of the closed segment `a..b`, in traversal order without repeats.
///
/// The segment is split at each crossing of a cell boundary; the pixel of each
/// open piece is read at its midpoint and the pixel of each crossing point at
/// the crossing itself.
pub fn segment_pixels(a: Point, b: Point) -> Vec<Pixel> {
    let d = b - a;
    let mut ts = vec![0.0, 1.0];
    for (start, delta) in [(a.x, d.x), (a.y, d.y)] {
        if delta == 0.0 {
            continue;
        }
        let end = start + delta;
        let (lo, hi) = if start < end { (start, end) } else { (end, start) };
        // boundaries sit at k + 0.5
        let mut k = (lo - 0.5).ceil();
        while k + 0.5 <= hi {
            let t = (k + 0.5 - start) / delta;
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
            k += 1.0;
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let at = |t: f64| Point::new(a.x + t * d.x, a.y + t * d.y).to_pixel();
    let mut out: Vec<Pixel> = Vec::with_capacity(ts.len() * 2);
    let mut push = |p: Pixel| {
        if out.last() != Some(&p) && !out.contains(&p) {
            out.push(p);
        }
    };
    push(at(0.0));
    for pair in ts.windows(2) {
        push(at(0.5 * (pair[0] + pair[1])));
        push(at(pair[1]));
    }
    out
}

//! SLIC superpixels over an arbitrary feature space.
//!
//! Clustering runs on the feature map itself (not on colors), combining the
//! feature distance with a spatial term scaled by `compactness / S`, where
//! `S = sqrt(H * W / n_p)` is the nominal patch spacing:
//!
//! ```text
//! D^2 = |f_p - f_c|^2 + (compactness / S)^2 * |xy_p - xy_c|^2
//! ```
//!
//! Each center only claims pixels inside its `2S x 2S` window. Assignment is a
//! pure per-pixel argmin, so it parallelizes without affecting the result.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridTensor, Pixel, Point};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlicParams {
    pub n_patches: usize,
    pub compactness: f64,
    pub max_iters: usize,
    pub enforce_connectivity: bool,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            n_patches: 256,
            compactness: 10.0,
            max_iters: 10,
            enforce_connectivity: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Center {
    pub x: f64,
    pub y: f64,
    pub feature: Vec<f64>,
    pub size: usize,
}

/// A per-pixel label map with one [`Center`] per label.
#[derive(Clone, Debug)]
pub struct Segmentation {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    centers: Vec<Center>,
    members: Vec<Vec<Pixel>>,
    compactness: f64,
    requested_patches: usize,
}

impl PartialEq for Segmentation {
    fn eq(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.labels == other.labels
    }
}

impl Segmentation {
    /// Builds a segmentation from a raw label map. Labels must be dense in
    /// `0..n` for some `n`; unused ids are allowed but count as patches.
    pub fn from_labels(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::shape(format!(
                "label map for {height}x{width} needs {} entries, got {}",
                height * width,
                labels.len()
            )));
        }
        let n = labels.iter().copied().max().unwrap_or(0) as usize + 1;
        let centers = spatial_centers(width, &labels, n);
        Ok(Self::assemble(height, width, labels, centers, 0.0, n))
    }

    fn assemble(
        height: usize,
        width: usize,
        labels: Vec<u32>,
        centers: Vec<Center>,
        compactness: f64,
        requested_patches: usize,
    ) -> Self {
        let mut members = vec![Vec::new(); centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            members[l as usize].push(Pixel::new(i % width, i / width));
        }
        Self {
            height,
            width,
            labels,
            centers,
            members,
            compactness,
            requested_patches,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_patches(&self) -> usize {
        self.centers.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn centers(&self) -> &[Center] {
        &self.centers
    }

    pub fn compactness(&self) -> f64 {
        self.compactness
    }

    /// The `n_p` the segmentation was asked for (not necessarily the count produced).
    pub fn requested_patches(&self) -> usize {
        self.requested_patches
    }

    pub fn label_at(&self, p: Pixel) -> u32 {
        self.labels[p.y * self.width + p.x]
    }

    /// Pixels of one label in raster order.
    pub fn members(&self, label: u32) -> &[Pixel] {
        &self.members[label as usize]
    }

    pub fn check_point(&self, p: Point) -> Result<()> {
        let inside = p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64;
        if inside {
            Ok(())
        } else {
            Err(Error::Bounds {
                x: p.x,
                y: p.y,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Label of the pixel nearest to `p`.
    pub fn label_of(&self, p: Point) -> Result<u32> {
        self.check_point(p)?;
        Ok(self.label_at(p.to_pixel()))
    }

    /// Every pixel sharing the label of the pixel nearest to `p`, in raster order.
    pub fn region_of(&self, p: Point) -> Result<&[Pixel]> {
        Ok(self.members(self.label_of(p)?))
    }
}

fn spatial_centers(width: usize, labels: &[u32], n: usize) -> Vec<Center> {
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); n];
    for (i, &l) in labels.iter().enumerate() {
        let s = &mut sums[l as usize];
        s.0 += (i % width) as f64;
        s.1 += (i / width) as f64;
        s.2 += 1;
    }
    sums.into_iter()
        .map(|(sx, sy, size)| {
            let k = size.max(1) as f64;
            Center {
                x: sx / k,
                y: sy / k,
                feature: Vec::new(),
                size,
            }
        })
        .collect()
}

/// Per-iteration record of a SLIC run.
#[derive(Clone, Debug, Default)]
pub struct SlicTrace {
    /// Total `D^2` right after each assignment pass.
    pub assignment_energy: Vec<f64>,
    /// Total `D^2` right after each center update.
    pub update_energy: Vec<f64>,
    /// Pixels whose label changed in each assignment pass.
    pub changed: Vec<usize>,
}

pub fn slic_segment(features: &GridTensor, params: &SlicParams) -> Result<Segmentation> {
    slic_segment_traced(features, params).map(|(s, _)| s)
}

pub fn slic_segment_traced(
    features: &GridTensor,
    params: &SlicParams,
) -> Result<(Segmentation, SlicTrace)> {
    let (h, w, _) = features.shape();
    if params.n_patches == 0 || params.n_patches > h * w {
        return Err(Error::param(format!(
            "n_p must be in 1..={} for a {h}x{w} grid, got {}",
            h * w,
            params.n_patches
        )));
    }
    if !(params.compactness > 0.0 && params.compactness.is_finite()) {
        return Err(Error::param(format!(
            "compactness must be positive, got {}",
            params.compactness
        )));
    }
    if params.max_iters == 0 {
        return Err(Error::param("max_iters must be at least 1"));
    }
    if let Err(Error::Numeric { location }) = features.ensure_finite("features") {
        return Err(Error::Data(format!("non-finite feature at {location}")));
    }

    let mut state = SlicState::init(features, params);
    let mut trace = SlicTrace::default();
    for _ in 0..params.max_iters {
        let (labels, energy) = state.assign(features);
        let changed = labels
            .iter()
            .zip(&state.labels)
            .filter(|(a, b)| a != b)
            .count();
        state.labels = labels;
        trace.assignment_energy.push(energy);
        trace.changed.push(changed);
        state.update_centers(features);
        trace.update_energy.push(state.energy(features));
        if changed == 0 {
            break;
        }
    }

    let centers = state.centers_out();
    let mut seg = Segmentation::assemble(
        h,
        w,
        state.labels,
        centers,
        params.compactness,
        params.n_patches,
    );
    if params.enforce_connectivity {
        seg = enforce_connectivity(&seg);
        seg.centers = feature_centers(features, &seg.labels, seg.centers.len());
    }
    Ok((seg, trace))
}

struct SlicState {
    height: usize,
    width: usize,
    spacing: f64,
    spatial_weight: f64,
    cx: Vec<f64>,
    cy: Vec<f64>,
    cf: Vec<f64>,
    sizes: Vec<usize>,
    channels: usize,
    labels: Vec<u32>,
}

impl SlicState {
    fn init(features: &GridTensor, params: &SlicParams) -> Self {
        let (h, w, c) = features.shape();
        let spacing = ((h * w) as f64 / params.n_patches as f64).sqrt();
        let cols = ((params.n_patches as f64 * w as f64 / h as f64).sqrt().round() as usize)
            .clamp(1, w);
        let rows = ((params.n_patches as f64 / cols as f64).round() as usize).clamp(1, h);
        let (cell_w, cell_h) = (w as f64 / cols as f64, h as f64 / rows as f64);
        let mut cx = Vec::with_capacity(rows * cols);
        let mut cy = Vec::with_capacity(rows * cols);
        let mut cf = Vec::with_capacity(rows * cols * c);
        for i in 0..rows {
            for j in 0..cols {
                let p = Point::new((j as f64 + 0.5) * cell_w - 0.5, (i as f64 + 0.5) * cell_h - 0.5);
                cx.push(p.x);
                cy.push(p.y);
                let f = crate::grid::bilinear_sample(features, p).expect("grid centers are in bounds");
                cf.extend(f.iter().map(|&v| v as f64));
            }
        }
        let labels = (0..h * w)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let j = ((x as f64 / cell_w) as usize).min(cols - 1);
                let r = ((y as f64 / cell_h) as usize).min(rows - 1);
                (r * cols + j) as u32
            })
            .collect();
        Self {
            height: h,
            width: w,
            spacing,
            spatial_weight: params.compactness / spacing,
            sizes: vec![0; rows * cols],
            cx,
            cy,
            cf,
            channels: c,
            labels,
        }
    }

    fn n_centers(&self) -> usize {
        self.cx.len()
    }

    #[inline]
    fn dist2(&self, features: &GridTensor, x: usize, y: usize, k: usize) -> f64 {
        let f = features.pixel(y, x);
        let cf = &self.cf[k * self.channels..(k + 1) * self.channels];
        let df: f64 = f
            .iter()
            .zip(cf)
            .map(|(&a, &b)| {
                let d = a as f64 - b;
                d * d
            })
            .sum();
        let dx = x as f64 - self.cx[k];
        let dy = y as f64 - self.cy[k];
        df + self.spatial_weight * self.spatial_weight * (dx * dx + dy * dy)
    }

    /// Bucket centers on an `S`-spaced grid so each pixel only scans the
    /// 3x3 bucket neighborhood that can hold a center within its window.
    fn buckets(&self) -> (usize, usize, Vec<Vec<usize>>) {
        let bw = ((self.width as f64 / self.spacing).ceil() as usize).max(1);
        let bh = ((self.height as f64 / self.spacing).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); bw * bh];
        for k in 0..self.n_centers() {
            let bx = self.bucket_coord(self.cx[k], bw);
            let by = self.bucket_coord(self.cy[k], bh);
            buckets[by * bw + bx].push(k);
        }
        (bw, bh, buckets)
    }

    fn bucket_coord(&self, v: f64, n: usize) -> usize {
        ((v.max(0.0) / self.spacing) as usize).min(n - 1)
    }

    fn assign(&self, features: &GridTensor) -> (Vec<u32>, f64) {
        let (bw, bh, buckets) = self.buckets();
        let w = self.width;
        let s = self.spacing;
        let rows: Vec<(Vec<u32>, f64)> = par::map_range(self.height, |y| {
            let mut out = Vec::with_capacity(w);
            let mut energy = 0.0;
            let by = self.bucket_coord(y as f64, bh);
            let mut candidates = Vec::new();
            for x in 0..w {
                let current = self.labels[y * w + x] as usize;
                let bx = self.bucket_coord(x as f64, bw);
                candidates.clear();
                for ny in by.saturating_sub(1)..=(by + 1).min(bh - 1) {
                    for nx in bx.saturating_sub(1)..=(bx + 1).min(bw - 1) {
                        for &k in &buckets[ny * bw + nx] {
                            if (x as f64 - self.cx[k]).abs() <= s
                                && (y as f64 - self.cy[k]).abs() <= s
                            {
                                candidates.push(k);
                            }
                        }
                    }
                }
                // keeping the current center available makes the pass non-increasing
                candidates.push(current);
                candidates.sort_unstable();
                candidates.dedup();
                let mut best = (f64::INFINITY, current);
                for &k in &candidates {
                    let d = self.dist2(features, x, y, k);
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                energy += best.0;
                out.push(best.1 as u32);
            }
            (out, energy)
        });
        let mut labels = Vec::with_capacity(self.height * w);
        let mut energy = 0.0;
        for (row, e) in rows {
            labels.extend(row);
            energy += e;
        }
        (labels, energy)
    }

    fn update_centers(&mut self, features: &GridTensor) {
        let k = self.n_centers();
        let c = self.channels;
        let mut sx = vec![0.0; k];
        let mut sy = vec![0.0; k];
        let mut sf = vec![0.0; k * c];
        let mut n = vec![0usize; k];
        for (i, &l) in self.labels.iter().enumerate() {
            let l = l as usize;
            let (x, y) = (i % self.width, i / self.width);
            sx[l] += x as f64;
            sy[l] += y as f64;
            n[l] += 1;
            for (acc, &v) in sf[l * c..(l + 1) * c].iter_mut().zip(features.pixel(y, x)) {
                *acc += v as f64;
            }
        }
        for j in 0..k {
            if n[j] == 0 {
                continue;
            }
            let inv = 1.0 / n[j] as f64;
            self.cx[j] = sx[j] * inv;
            self.cy[j] = sy[j] * inv;
            for ch in 0..c {
                self.cf[j * c + ch] = sf[j * c + ch] * inv;
            }
        }
        self.sizes = n;
    }

    fn energy(&self, features: &GridTensor) -> f64 {
        let w = self.width;
        par::map_range(self.height, |y| {
            (0..w)
                .map(|x| self.dist2(features, x, y, self.labels[y * w + x] as usize))
                .sum::<f64>()
        })
        .into_iter()
        .sum()
    }

    fn centers_out(&self) -> Vec<Center> {
        (0..self.n_centers())
            .map(|k| Center {
                x: self.cx[k],
                y: self.cy[k],
                feature: self.cf[k * self.channels..(k + 1) * self.channels].to_vec(),
                size: self.sizes[k],
            })
            .collect()
    }
}

/// Total SLIC energy `sum D^2` of a labelling against explicit centers.
pub fn slic_energy(
    features: &GridTensor,
    labels: &[u32],
    centers: &[Center],
    n_patches: usize,
    compactness: f64,
) -> f64 {
    let (h, w, _) = features.shape();
    let spacing = ((h * w) as f64 / n_patches as f64).sqrt();
    let m = compactness / spacing;
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let c = &centers[l as usize];
            let (x, y) = (i % w, i / w);
            let df: f64 = features
                .pixel(y, x)
                .iter()
                .zip(&c.feature)
                .map(|(&a, &b)| (a as f64 - b).powi(2))
                .sum();
            df + m * m * ((x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2))
        })
        .sum()
}

fn feature_centers(features: &GridTensor, labels: &[u32], n: usize) -> Vec<Center> {
    let (_, w, c) = features.shape();
    let mut centers: Vec<Center> = (0..n)
        .map(|_| Center {
            x: 0.0,
            y: 0.0,
            feature: vec![0.0; c],
            size: 0,
        })
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        let ctr = &mut centers[l as usize];
        let (x, y) = (i % w, i / w);
        ctr.x += x as f64;
        ctr.y += y as f64;
        ctr.size += 1;
        for (acc, &v) in ctr.feature.iter_mut().zip(features.pixel(y, x)) {
            *acc += v as f64;
        }
    }
    for ctr in &mut centers {
        let k = ctr.size.max(1) as f64;
        ctr.x /= k;
        ctr.y /= k;
        ctr.feature.iter_mut().for_each(|v| *v /= k);
    }
    centers
}

/// Makes every label 4-connected.
///
/// Each label keeps its largest component under its original id; further
/// components become labels of their own. Components smaller than
/// `(H * W / n_p) / 4` are absorbed into the largest 4-adjacent component.
/// Ids are finally compacted preserving their relative order, so an input
/// that is already connected (with no undersized regions) comes back as is.
pub fn enforce_connectivity(seg: &Segmentation) -> Segmentation {
    let (h, w) = (seg.height, seg.width);
    let (comp, comp_label, mut comp_size) = components(h, w, &seg.labels);
    let n_comp = comp_label.len();
    let min_size = ((h * w) as f64 / seg.requested_patches.max(1) as f64 / 4.0) as usize;

    let mut parent: Vec<usize> = (0..n_comp).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    // Repeated passes: after merges, adjacency between roots changes.
    loop {
        let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n_comp];
        for y in 0..h {
            for x in 0..w {
                let a = root(&mut parent, comp[y * w + x]);
                for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                    if nx < w && ny < h {
                        let b = root(&mut parent, comp[ny * w + nx]);
                        if a != b {
                            neighbours[a].push(b);
                            neighbours[b].push(a);
                        }
                    }
                }
            }
        }
        let mut merged = false;
        // a root that absorbed something this pass has a stale neighbour list
        let mut dirty = vec![false; n_comp];
        for c in 0..n_comp {
            if root(&mut parent, c) != c || comp_size[c] >= min_size || dirty[c] {
                continue;
            }
            let target = neighbours[c]
                .iter()
                .map(|&b| root(&mut parent, b))
                .filter(|&b| b != c)
                .max_by(|&a, &b| comp_size[a].cmp(&comp_size[b]).then(b.cmp(&a)));
            if let Some(t) = target {
                parent[c] = t;
                comp_size[t] += comp_size[c];
                dirty[t] = true;
                merged = true;
            }
        }
        if !merged {
            break;
        }
    }

    // Largest surviving component per original label keeps the label.
    let n_labels = seg.centers.len();
    let mut primary: Vec<Option<usize>> = vec![None; n_labels];
    for c in 0..n_comp {
        if root(&mut parent, c) != c {
            continue;
        }
        let l = comp_label[c] as usize;
        match primary[l] {
            Some(p) if comp_size[p] >= comp_size[c] => {}
            _ => primary[l] = Some(c),
        }
    }
    let mut next_id = n_labels as u64;
    let mut comp_id = vec![u64::MAX; n_comp];
    for c in 0..n_comp {
        if root(&mut parent, c) != c {
            continue;
        }
        let l = comp_label[c] as usize;
        comp_id[c] = if primary[l] == Some(c) {
            l as u64
        } else {
            next_id += 1;
            next_id - 1
        };
    }
    let raw: Vec<u64> = comp
        .iter()
        .map(|&c| comp_id[root(&mut parent, c)])
        .collect();
    let mut used: Vec<u64> = raw.clone();
    used.sort_unstable();
    used.dedup();
    let labels: Vec<u32> = raw
        .iter()
        .map(|v| used.binary_search(v).expect("id present") as u32)
        .collect();

    // Centers: exact spatial centroids; features inherited from source labels.
    let n = used.len();
    let mut centers = spatial_centers(w, &labels, n);
    let mut feature_sum: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (i, &l) in labels.iter().enumerate() {
        let src = &seg.centers[seg.labels[i] as usize].feature;
        let acc = &mut feature_sum[l as usize];
        if acc.is_empty() {
            acc.resize(src.len(), 0.0);
        }
        for (a, &v) in acc.iter_mut().zip(src) {
            *a += v;
        }
    }
    for (ctr, sum) in centers.iter_mut().zip(feature_sum) {
        let k = ctr.size.max(1) as f64;
        ctr.feature = sum.into_iter().map(|v| v / k).collect();
    }
    Segmentation::assemble(h, w, labels, centers, seg.compactness, seg.requested_patches)
}

/// 4-connected components: per-pixel component index, label, and size.
fn components(h: usize, w: usize, labels: &[u32]) -> (Vec<usize>, Vec<u32>, Vec<usize>) {
    let mut comp = vec![usize::MAX; h * w];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        let l = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == l {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        comp_label.push(l);
        comp_size.push(size);
    }
    (comp, comp_label, comp_size)
}

/// True when every label's pixel set is a single 4-connected component.
pub fn is_connected(seg: &Segmentation) -> bool {
    let (_, comp_label, _) = components(seg.height, seg.width, &seg.labels);
    let mut seen = vec![false; seg.n_patches()];
    for l in comp_label {
        if std::mem::replace(&mut seen[l as usize], true) {
            return false;
        }
    }
    true
}

//! Correspondence loss: symmetric cross entropy over cosine similarities.
//!
//! For a pair of patches with rows `a_i` (handle) and `b_j` (target), let
//! `S_ij = cos(a_i, b_j) / tau`. The pair loss is the mean of the row-wise and
//! column-wise cross entropies of `S` against the identity assignment. The
//! total is the sum over pairs. Gradients are taken with respect to the target
//! rows only.

use crate::error::{Error, Result};
use crate::grid::{Grid, Pixel, Scalar};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// `rows x dim` row-major block of per-pixel feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    /// Source pixel of each row, used in error messages.
    pub pixels: Vec<Pixel>,
}

impl Patch {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 || data.len() != rows * dim {
            return Err(Error::shape(format!(
                "patch {rows}x{dim} needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        Ok(Self {
            rows,
            dim,
            data,
            pixels: Vec::new(),
        })
    }

    /// Square patch of the given radius centered at `center`, rows in raster order.
    pub fn extract<T: Scalar>(grid: &Grid<T>, center: Pixel, radius: usize) -> Result<Self> {
        let (h, w, c) = grid.shape();
        if center.x < radius || center.y < radius || center.x + radius >= w || center.y + radius >= h
        {
            return Err(Error::Bounds {
                x: center.x as f64,
                y: center.y as f64,
                width: w,
                height: h,
            });
        }
        let mut data = Vec::with_capacity((2 * radius + 1).pow(2) * c);
        let mut pixels = Vec::new();
        for y in center.y - radius..=center.y + radius {
            for x in center.x - radius..=center.x + radius {
                data.extend(grid.pixel(y, x).iter().map(|v| Scalar::to_f64(*v)));
                pixels.push(Pixel::new(x, y));
            }
        }
        Ok(Self {
            rows: pixels.len(),
            dim: c,
            data,
            pixels,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn normalized(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut unit = Vec::with_capacity(self.data.len());
        let mut norms = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0 && n.is_finite()) {
                let location = match self.pixels.get(i) {
                    Some(p) => format!("patch pixel (x={}, y={}) with zero-norm feature", p.x, p.y),
                    None => format!("patch row {i} with zero-norm feature"),
                };
                return Err(Error::Numeric { location });
            }
            unit.extend(row.iter().map(|v| v / n));
            norms.push(n);
        }
        Ok((unit, norms))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub handle: Patch,
    pub target: Patch,
}

#[derive(Clone, Debug)]
pub struct ClossOutput {
    pub loss: f64,
    /// Gradient with respect to each pair's target patch, same layout as its data.
    pub target_gradients: Vec<Vec<f64>>,
}

pub fn closs(pairs: &[PatchPair], temperature: f64) -> Result<ClossOutput> {
    if pairs.is_empty() {
        return Err(Error::param("correspondence loss needs at least one pair"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::param(format!("temperature must be positive, got {temperature}")));
    }
    let mut loss = 0.0;
    let mut target_gradients = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let (l, g) = pair_loss(pair, temperature)?;
        loss += l;
        target_gradients.push(g);
    }
    Ok(ClossOutput {
        loss,
        target_gradients,
    })
}

fn pair_loss(pair: &PatchPair, tau: f64) -> Result<(f64, Vec<f64>)> {
    let (a, b) = (&pair.handle, &pair.target);
    if a.rows != b.rows || a.dim != b.dim {
        return Err(Error::shape(format!(
            "handle patch is {}x{}, target patch is {}x{}",
            a.rows, a.dim, b.rows, b.dim
        )));
    }
    let (n, dim) = (a.rows, a.dim);
    let (a_hat, _) = a.normalized()?;
    let (b_hat, b_norm) = b.normalized()?;
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = a_hat[i * dim..(i + 1) * dim]
                .iter()
                .zip(&b_hat[j * dim..(j + 1) * dim])
                .map(|(x, y)| x * y)
                .sum();
            s[i * n + j] = dot / tau;
        }
    }

    // row softmax P and column softmax Q
    let mut p = vec![0.0; n * n];
    let mut q = vec![0.0; n * n];
    let mut row_ce = 0.0;
    for i in 0..n {
        let row = &s[i * n..(i + 1) * n];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        row_ce += m + z.ln() - row[i];
        for j in 0..n {
            p[i * n + j] = (row[j] - m).exp() / z;
        }
    }
    let mut col_ce = 0.0;
    for j in 0..n {
        let m = (0..n).map(|i| s[i * n + j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).map(|i| (s[i * n + j] - m).exp()).sum();
        col_ce += m + z.ln() - s[j * n + j];
        for i in 0..n {
            q[i * n + j] = (s[i * n + j] - m).exp() / z;
        }
    }
    let nf = n as f64;
    let loss = 0.5 * (row_ce + col_ce) / nf;

    // dL/dS, then through the cosine into the target rows
    let mut grad = vec![0.0; n * dim];
    for j in 0..n {
        let mut g_hat = vec![0.0; dim];
        for i in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            let ds = 0.5 / nf * (p[i * n + j] - delta + q[i * n + j] - delta) / tau;
            for (g, &av) in g_hat.iter_mut().zip(&a_hat[i * dim..(i + 1) * dim]) {
                *g += ds * av;
            }
        }
        let bj = &b_hat[j * dim..(j + 1) * dim];
        let along: f64 = g_hat.iter().zip(bj).map(|(g, b)| g * b).sum();
        for k in 0..dim {
            grad[j * dim + k] = (g_hat[k] - along * bj[k]) / b_norm[j];
        }
    }
    Ok((loss, grad))
}

/// Cosine similarity of two flattened patches.
pub fn patch_cosine(a: &Patch, b: &Patch) -> f64 {
    let dot: f64 = a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
    let na = a.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot / (na * nb)
}

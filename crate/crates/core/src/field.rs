//! Differentiable feature fields: maps from a latent grid to a feature grid of
//! the same spatial size, each with a hand-written adjoint.
//!
//! Four kinds are provided:
//!
//! * [`FeatureField::Identity`]: the latent is its own feature map.
//! * [`FeatureField::LinearConv`]: a fixed `k x k` cross-correlation with zero
//!   padding ("same" output size).
//! * [`FeatureField::AnalyticBump`]: a Gaussian bump whose position is read from
//!   a per-pixel displacement stored in latent channels 0 and 1. See
//!   [`BumpParams`] for the closed form.
//! * [`FeatureField::Tabulated`]: a stored feature image sampled (bilinearly,
//!   zero outside) at the same latent-displaced coordinates.
//!
//! For the two warp kinds, a pixel `p = (x, y)` with latent displacement
//! `u = (z[p, 0], z[p, 1])` reads its features at `p + gain * u`. Dragging
//! content therefore means learning a displacement field, and the Jacobian is
//! block-diagonal per pixel.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridTensor, Scalar};
use crate::par;

#[derive(Clone, Debug)]
pub enum FeatureField {
    Identity,
    LinearConv(ConvKernel),
    AnalyticBump(BumpParams),
    Tabulated(TabulatedField),
}

/// Cross-correlation weights laid out `[ky][kx][in][out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    size: usize,
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f32>,
}

impl ConvKernel {
    pub fn new(
        size: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f32>,
    ) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::param(format!("kernel size must be odd, got {size}")));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::param("kernel channel counts must be positive"));
        }
        let expected = size * size * in_channels * out_channels;
        if weights.len() != expected {
            return Err(Error::shape(format!(
                "{size}x{size}x{in_channels}x{out_channels} kernel needs {expected} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Data("kernel weights must be finite".into()));
        }
        Ok(Self {
            size,
            in_channels,
            out_channels,
            weights,
        })
    }

    pub fn ones(size: usize, channels: usize) -> Self {
        Self::new(
            size,
            channels,
            channels,
            vec![1.0; size * size * channels * channels],
        )
        .expect("valid ones kernel")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    #[inline]
    fn weight(&self, ky: usize, kx: usize, i: usize, o: usize) -> f32 {
        self.weights[((ky * self.size + kx) * self.in_channels + i) * self.out_channels + o]
    }
}

/// Gaussian bump read through a latent displacement field.
///
/// With `w = p + gain * u(p) - center` and `g = amplitude * exp(-|w|^2 / (2 sigma^2))`
/// the three output channels at pixel `p` are `[g, g * w.x / sigma, g * w.y / sigma]`.
/// The two signed channels make every location inside the bump's support
/// distinguishable, so point tracking has a unique optimum.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BumpParams {
    pub amplitude: f64,
    pub sigma: f64,
    pub center: [f64; 2],
    pub gain: f64,
}

impl BumpParams {
    fn validate(&self) -> Result<()> {
        let finite = [self.amplitude, self.sigma, self.center[0], self.center[1], self.gain]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.sigma <= 0.0 {
            return Err(Error::param(format!(
                "bump needs finite parameters and sigma > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A stored feature image sampled at latent-displaced coordinates.
#[derive(Clone, Debug)]
pub struct TabulatedField {
    table: GridTensor,
    gain: f64,
}

impl TabulatedField {
    pub fn new(table: GridTensor, gain: f64) -> Result<Self> {
        table.ensure_finite("table")?;
        if !gain.is_finite() {
            return Err(Error::param("tabulated gain must be finite"));
        }
        Ok(Self { table, gain })
    }

    pub fn table(&self) -> &GridTensor {
        &self.table
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }
}

impl FeatureField {
    pub fn analytic_bump(params: BumpParams) -> Result<Self> {
        params.validate()?;
        Ok(FeatureField::AnalyticBump(params))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            FeatureField::Identity => "identity",
            FeatureField::LinearConv(_) => "linear-conv",
            FeatureField::AnalyticBump(_) => "analytic-bump",
            FeatureField::Tabulated(_) => "tabulated",
        }
    }

    /// Feature channel count produced for a latent with `latent_channels`.
    pub fn output_channels(&self, latent_channels: usize) -> usize {
        match self {
            FeatureField::Identity => latent_channels,
            FeatureField::LinearConv(k) => k.out_channels,
            FeatureField::AnalyticBump(_) => 3,
            FeatureField::Tabulated(t) => t.table.channels(),
        }
    }

    pub fn check_latent<T: Scalar>(&self, z: &Grid<T>) -> Result<()> {
        match self {
            FeatureField::Identity => Ok(()),
            FeatureField::LinearConv(k) if z.channels() != k.in_channels => Err(Error::shape(
                format!(
                    "conv kernel expects {} latent channels, got {}",
                    k.in_channels,
                    z.channels()
                ),
            )),
            FeatureField::LinearConv(_) => Ok(()),
            FeatureField::AnalyticBump(_) | FeatureField::Tabulated(_) if z.channels() < 2 => {
                Err(Error::shape(format!(
                    "{} field reads a displacement from latent channels 0 and 1, got {} channel(s)",
                    self.kind_name(),
                    z.channels()
                )))
            }
            FeatureField::Tabulated(t) => t.table.ensure_spatial(z, "tabulated field latent"),
            FeatureField::AnalyticBump(_) => Ok(()),
        }
    }

    pub fn forward<T: Scalar>(&self, z: &Grid<T>) -> Result<Grid<T>> {
        self.check_latent(z)?;
        let (h, w, _) = z.shape();
        let out_c = self.output_channels(z.channels());
        let out = match self {
            FeatureField::Identity => z.clone(),
            FeatureField::LinearConv(k) => {
                let mut out = Grid::zeros(h, w, out_c);
                par::fill_chunks(out.data_mut(), w * out_c, |y, row| conv_row(k, z, y, row));
                out
            }
            FeatureField::AnalyticBump(b) => {
                let mut out = Grid::zeros(h, w, out_c);
                par::fill_chunks(out.data_mut(), w * out_c, |y, row| {
                    for x in 0..w {
                        let u = z.pixel(y, x);
                        let v = bump_eval(b, x, y, u[0], u[1]);
                        row[x * 3..x * 3 + 3].copy_from_slice(&v.value);
                    }
                });
                out
            }
            FeatureField::Tabulated(t) => {
                let mut out = Grid::zeros(h, w, out_c);
                let table: Grid<T> = t.table.cast();
                let gain = T::of(t.gain);
                par::fill_chunks(out.data_mut(), w * out_c, |y, row| {
                    for x in 0..w {
                        let u = z.pixel(y, x);
                        let px = T::of(x as f64) + gain * u[0];
                        let py = T::of(y as f64) + gain * u[1];
                        let s = zero_padded_sample(&table, px, py);
                        for c in 0..out_c {
                            row[x * out_c + c] = s.value(c);
                        }
                    }
                });
                out
            }
        };
        Ok(out)
    }

    /// Vector-Jacobian product: the gradient of `<forward(z), cotangent>`
    /// with respect to `z`.
    pub fn adjoint<T: Scalar>(&self, z: &Grid<T>, cotangent: &Grid<T>) -> Result<Grid<T>> {
        self.check_latent(z)?;
        let (h, w, c_in) = z.shape();
        let out_c = self.output_channels(c_in);
        if cotangent.shape() != (h, w, out_c) {
            return Err(Error::shape(format!(
                "cotangent must be {h}x{w}x{out_c}, got {:?}",
                cotangent.shape()
            )));
        }
        let grad = match self {
            FeatureField::Identity => cotangent.clone(),
            FeatureField::LinearConv(k) => {
                let mut grad = Grid::zeros(h, w, c_in);
                par::fill_chunks(grad.data_mut(), w * c_in, |y, row| {
                    conv_transpose_row(k, cotangent, y, row)
                });
                grad
            }
            FeatureField::AnalyticBump(b) => {
                let mut grad = Grid::zeros(h, w, c_in);
                par::fill_chunks(grad.data_mut(), w * c_in, |y, row| {
                    for x in 0..w {
                        let u = z.pixel(y, x);
                        let v = bump_eval(b, x, y, u[0], u[1]);
                        let ct = cotangent.pixel(y, x);
                        let gain = T::of(b.gain);
                        let mut gx = T::zero();
                        let mut gy = T::zero();
                        for c in 0..3 {
                            gx = gx + ct[c] * v.d_wx[c];
                            gy = gy + ct[c] * v.d_wy[c];
                        }
                        row[x * c_in] = gain * gx;
                        row[x * c_in + 1] = gain * gy;
                    }
                });
                grad
            }
            FeatureField::Tabulated(t) => {
                let mut grad = Grid::zeros(h, w, c_in);
                let table: Grid<T> = t.table.cast();
                let gain = T::of(t.gain);
                par::fill_chunks(grad.data_mut(), w * c_in, |y, row| {
                    for x in 0..w {
                        let u = z.pixel(y, x);
                        let px = T::of(x as f64) + gain * u[0];
                        let py = T::of(y as f64) + gain * u[1];
                        let s = zero_padded_sample(&table, px, py);
                        let ct = cotangent.pixel(y, x);
                        let mut gx = T::zero();
                        let mut gy = T::zero();
                        for (c, &ctc) in ct.iter().enumerate() {
                            let (dx, dy) = s.gradient(c);
                            gx = gx + ctc * dx;
                            gy = gy + ctc * dy;
                        }
                        row[x * c_in] = gain * gx;
                        row[x * c_in + 1] = gain * gy;
                    }
                });
                grad
            }
        };
        Ok(grad)
    }
}

fn conv_row<T: Scalar>(k: &ConvKernel, z: &Grid<T>, y: usize, row: &mut [T]) {
    let (h, w, c_in) = z.shape();
    let r = (k.size / 2) as isize;
    let c_out = k.out_channels;
    for x in 0..w {
        let out = &mut row[x * c_out..(x + 1) * c_out];
        for ky in 0..k.size {
            let sy = y as isize + ky as isize - r;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for kx in 0..k.size {
                let sx = x as isize + kx as isize - r;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let src = z.pixel(sy as usize, sx as usize);
                for (i, &zi) in src.iter().enumerate().take(c_in) {
                    for (o, acc) in out.iter_mut().enumerate() {
                        *acc = *acc + T::of(k.weight(ky, kx, i, o) as f64) * zi;
                    }
                }
            }
        }
    }
}

fn conv_transpose_row<T: Scalar>(k: &ConvKernel, ct: &Grid<T>, y: usize, row: &mut [T]) {
    let (h, w, c_out) = ct.shape();
    let r = (k.size / 2) as isize;
    let c_in = k.in_channels;
    for x in 0..w {
        let out = &mut row[x * c_in..(x + 1) * c_in];
        // latent (y, x) feeds output (y - ky + r, x - kx + r) through weight (ky, kx)
        for ky in 0..k.size {
            let oy = y as isize - ky as isize + r;
            if oy < 0 || oy >= h as isize {
                continue;
            }
            for kx in 0..k.size {
                let ox = x as isize - kx as isize + r;
                if ox < 0 || ox >= w as isize {
                    continue;
                }
                let g = ct.pixel(oy as usize, ox as usize);
                for (i, acc) in out.iter_mut().enumerate() {
                    for (o, &go) in g.iter().enumerate().take(c_out) {
                        *acc = *acc + T::of(k.weight(ky, kx, i, o) as f64) * go;
                    }
                }
            }
        }
    }
}

struct BumpEval<T> {
    value: [T; 3],
    d_wx: [T; 3],
    d_wy: [T; 3],
}

fn bump_eval<T: Scalar>(b: &BumpParams, x: usize, y: usize, ux: T, uy: T) -> BumpEval<T> {
    let gain = T::of(b.gain);
    let sigma = T::of(b.sigma);
    let amp = T::of(b.amplitude);
    let wx = T::of(x as f64) + gain * ux - T::of(b.center[0]);
    let wy = T::of(y as f64) + gain * uy - T::of(b.center[1]);
    let s2 = sigma * sigma;
    let g = amp * (-(wx * wx + wy * wy) / (T::of(2.0) * s2)).exp();
    let nx = wx / sigma;
    let ny = wy / sigma;
    // dg/dw = -g w / sigma^2
    let gx = -g * wx / s2;
    let gy = -g * wy / s2;
    BumpEval {
        value: [g, g * nx, g * ny],
        d_wx: [gx, gx * nx + g / sigma, gx * ny],
        d_wy: [gy, gy * nx, gy * ny + g / sigma],
    }
}

/// Bilinear sample of `table` treating everything outside as zero.
struct PaddedSample<'a, T> {
    corners: [Option<&'a [T]>; 4],
    fx: T,
    fy: T,
}

fn zero_padded_sample<T: Scalar>(table: &Grid<T>, px: T, py: T) -> PaddedSample<'_, T> {
    let x0f = px.floor();
    let y0f = py.floor();
    let fx = px - x0f;
    let fy = py - y0f;
    let x0 = x0f.to_f64() as i64;
    let y0 = y0f.to_f64() as i64;
    let fetch = |xi: i64, yi: i64| {
        if xi >= 0 && yi >= 0 && (xi as usize) < table.width() && (yi as usize) < table.height() {
            Some(table.pixel(yi as usize, xi as usize))
        } else {
            None
        }
    };
    PaddedSample {
        corners: [
            fetch(x0, y0),
            fetch(x0 + 1, y0),
            fetch(x0, y0 + 1),
            fetch(x0 + 1, y0 + 1),
        ],
        fx,
        fy,
    }
}

impl<T: Scalar> PaddedSample<'_, T> {
    fn corner(&self, i: usize, c: usize) -> T {
        self.corners[i].map_or(T::zero(), |p| p[c])
    }

    fn value(&self, c: usize) -> T {
        let one = T::one();
        let (fx, fy) = (self.fx, self.fy);
        self.corner(0, c) * (one - fx) * (one - fy)
            + self.corner(1, c) * fx * (one - fy)
            + self.corner(2, c) * (one - fx) * fy
            + self.corner(3, c) * fx * fy
    }

    /// Partial derivatives in x and y; one-sided (toward +x/+y) on cell edges.
    fn gradient(&self, c: usize) -> (T, T) {
        let one = T::one();
        let (v00, v10, v01, v11) = (
            self.corner(0, c),
            self.corner(1, c),
            self.corner(2, c),
            self.corner(3, c),
        );
        let dx = (one - self.fy) * (v10 - v00) + self.fy * (v11 - v01);
        let dy = (one - self.fx) * (v01 - v00) + self.fx * (v11 - v10);
        (dx, dy)
    }
}

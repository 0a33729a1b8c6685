//! Dense `height x width x channels` grids and sub-pixel sampling.
//!
//! A [`Grid`] stores values row-major in `(y, x, c)` order. The element type is
//! generic so the same numerics can run in `f32` (the working precision) and in
//! `f64` (used by finite-difference checks).

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Send + Sync + Sum + 'static
{
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 converts to every Scalar")
    }

    fn to_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("every Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Clone, PartialEq)]
pub struct Grid<T = f32> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

/// The working tensor type for latents, feature maps and masks.
pub type GridTensor = Grid<f32>;

impl<T: Scalar> Debug for Grid<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Grid<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::shape("grid dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} grid needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty grid");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty grid");
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: T) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [T] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn same_shape<U: Scalar>(&self, other: &Grid<U>) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape<U: Scalar>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: expected {:?}, got {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn ensure_spatial<U: Scalar>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if (self.height, self.width) == (other.height, other.width) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: expected {}x{} spatial size, got {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// Fails with the `(y, x, c)` location of the first NaN or infinity.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => {
                let c = i % self.channels;
                let p = i / self.channels;
                Err(Error::Numeric {
                    location: format!("{what}[y={}, x={}, c={c}]", p / self.width, p % self.width),
                })
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| U::of(v.to_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Grid {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    pub fn check_point(&self, p: Point) -> Result<()> {
        if self.contains(p) {
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

    /// Sum of absolute values, accumulated in `f64`.
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs().to_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().to_f64())
            .fold(0.0, f64::max)
    }
}

/// A continuous pixel coordinate; integer values sit on pixel centers.
///
/// Serializes as `[x, y]`; also accepts `{"x": .., "y": ..}`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "PointRepr", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PointRepr {
    Pair([f64; 2]),
    Named { x: f64, y: f64 },
}

impl From<PointRepr> for Point {
    fn from(r: PointRepr) -> Self {
        match r {
            PointRepr::Pair([x, y]) | PointRepr::Named { x, y } => Point::new(x, y),
        }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Nearest pixel, ties rounding half away from zero.
    ///
    /// Callers must have bounds-checked the point first.
    pub fn to_pixel(self) -> Pixel {
        Pixel {
            y: self.y.round() as usize,
            x: self.x.round() as usize,
        }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl From<Pixel> for Point {
    fn from(p: Pixel) -> Self {
        Point::new(p.x as f64, p.y as f64)
    }
}

/// An integer pixel location. Orders by `(y, x)`, which is the raster order
/// used for every deterministic tie-break in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pixel {
    pub y: usize,
    pub x: usize,
}

impl Pixel {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { y, x }
    }
}

/// The four corners and weights of a bilinear lookup.
#[derive(Clone, Copy, Debug)]
pub struct BilinearStencil {
    pub corners: [Pixel; 4],
    pub weights: [f64; 4],
}

impl BilinearStencil {
    /// Stencil for an in-bounds point. At the last row/column the lower
    /// corner is pulled back one cell so the weight lands on the far corner.
    pub fn new(height: usize, width: usize, q: Point) -> Self {
        let (x0, fx) = split_coord(q.x, width);
        let (y0, fy) = split_coord(q.y, height);
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        Self {
            corners: [
                Pixel::new(x0, y0),
                Pixel::new(x1, y0),
                Pixel::new(x0, y1),
                Pixel::new(x1, y1),
            ],
            weights: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
        }
    }
}

fn split_coord(v: f64, extent: usize) -> (usize, f64) {
    if extent == 1 {
        return (0, 0.0);
    }
    let base = (v.floor() as usize).min(extent - 2);
    (base, v - base as f64)
}

/// Bilinear interpolation of all channels at `q`.
pub fn bilinear_sample<T: Scalar>(grid: &Grid<T>, q: Point) -> Result<Vec<T>> {
    grid.check_point(q)?;
    let mut out = vec![T::zero(); grid.channels()];
    bilinear_accumulate(grid, q, &mut out);
    Ok(out)
}

/// Adds the bilinear sample at an in-bounds `q` into `out`.
pub(crate) fn bilinear_accumulate<T: Scalar>(grid: &Grid<T>, q: Point, out: &mut [T]) {
    let stencil = BilinearStencil::new(grid.height(), grid.width(), q);
    for (corner, &w) in stencil.corners.iter().zip(&stencil.weights) {
        if w == 0.0 {
            continue;
        }
        let w = T::of(w);
        for (o, &v) in out.iter_mut().zip(grid.pixel(corner.y, corner.x)) {
            *o = *o + w * v;
        }
    }
}

//! Deterministic DDIM sampling and inversion over pluggable noise predictors,
//! the DDPM noise-prediction loss, and correspondence-loss guidance.
//!
//! Step coefficients are computed in `f64`; latents stay `f32` and each
//! element is updated in `f64` before rounding once.

use serde::{Deserialize, Serialize};

use crate::closs::{closs, Patch, PatchPair, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridTensor};
use crate::mask::DragPair;
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    #[serde(rename = "T")]
    pub steps: usize,
    /// `alpha[0] = 1 >= alpha[1] >= ... >= alpha[T] > 0`.
    pub alpha: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        let s = Self {
            steps: alpha.len().saturating_sub(1),
            alpha,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.alpha.len() != self.steps + 1 {
            return Err(Error::param(format!(
                "schedule with T = {} needs T + 1 alphas, got {}",
                self.steps,
                self.alpha.len()
            )));
        }
        if self.alpha[0] != 1.0 {
            return Err(Error::param(format!("alpha_0 must be 1, got {}", self.alpha[0])));
        }
        for t in 1..=self.steps {
            let (prev, cur) = (self.alpha[t - 1], self.alpha[t]);
            if !(cur > 0.0 && cur <= prev) {
                return Err(Error::param(format!(
                    "alpha must be positive and non-increasing: alpha_{} = {prev}, alpha_{t} = {cur}",
                    t - 1
                )));
            }
        }
        Ok(())
    }

    /// Stable-diffusion style schedule: betas on a squared linspace from
    /// 0.00085 to 0.012 over 1000 training steps, strided to `steps`.
    pub fn scaled_linear(steps: usize) -> Result<Self> {
        const TRAIN: usize = 1000;
        if steps == 0 || steps > TRAIN {
            return Err(Error::param(format!("steps must be in 1..={TRAIN}, got {steps}")));
        }
        let (lo, hi) = (0.00085f64.sqrt(), 0.012f64.sqrt());
        let mut cumprod = Vec::with_capacity(TRAIN);
        let mut acc = 1.0;
        for i in 0..TRAIN {
            let b = lo + (hi - lo) * i as f64 / (TRAIN - 1) as f64;
            acc *= 1.0 - b * b;
            cumprod.push(acc);
        }
        let stride = TRAIN / steps;
        let mut alpha = vec![1.0];
        alpha.extend((1..=steps).map(|j| cumprod[(j - 1) * stride + 1]));
        Self::new(alpha)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)
            .map_err(|e| Error::format("schedule JSON", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    fn check_step(&self, t: usize, lo: usize, hi: usize) -> Result<()> {
        if t < lo || t > hi {
            return Err(Error::param(format!("step {t} outside {lo}..={hi}")));
        }
        Ok(())
    }
}

/// Per-timestep affine predictor `scale[t] * z + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedPredictor {
    /// Indexed by step, length `T + 1`.
    pub scale: Vec<f64>,
    #[serde(skip)]
    pub bias: Option<GridTensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoisePredictor {
    Zero,
    Constant { value: f64 },
    Linear { a: f64, b: f64 },
    Tabulated(TabulatedPredictor),
}

impl NoisePredictor {
    pub fn predict(&self, z: &GridTensor, t: usize) -> Result<GridTensor> {
        let (h, w, c) = z.shape();
        Ok(match self {
            NoisePredictor::Zero => GridTensor::zeros(h, w, c),
            NoisePredictor::Constant { value } => GridTensor::filled(h, w, c, *value as f32),
            NoisePredictor::Linear { a, b } => z.map(|v| (a * v as f64 + b) as f32),
            NoisePredictor::Tabulated(tab) => {
                let s = *tab.scale.get(t).ok_or_else(|| {
                    Error::param(format!(
                        "tabulated predictor has {} scales, step {t} requested",
                        tab.scale.len()
                    ))
                })?;
                match &tab.bias {
                    None => z.map(|v| (s * v as f64) as f32),
                    Some(bias) => {
                        z.ensure_same_shape(bias, "predictor bias")?;
                        let data = z
                            .data()
                            .iter()
                            .zip(bias.data())
                            .map(|(&v, &b)| (s * v as f64 + b as f64) as f32)
                            .collect();
                        Grid::new(h, w, c, data)?
                    }
                }
            }
        })
    }

    /// `d pred / d z` as a scalar multiple of the identity.
    pub fn input_jacobian(&self, t: usize) -> f64 {
        match self {
            NoisePredictor::Zero | NoisePredictor::Constant { .. } => 0.0,
            NoisePredictor::Linear { a, .. } => *a,
            NoisePredictor::Tabulated(tab) => tab.scale.get(t).copied().unwrap_or(0.0),
        }
    }
}

/// Noise-prediction loss `|eps - pred(sqrt(a) z0 + sqrt(1 - a) eps, t)|^2`.
/// The conditioning token is accepted and ignored.
pub fn ddpm_loss(
    pred: &NoisePredictor,
    z0: &GridTensor,
    eps: &GridTensor,
    t: usize,
    sched: &NoiseSchedule,
    _cond: &str,
) -> Result<f64> {
    sched.check_step(t, 1, sched.steps)?;
    z0.ensure_same_shape(eps, "noise")?;
    let a = sched.alpha[t];
    let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
    let zt = combine(z0, eps, sa, sb);
    let p = pred.predict(&zt, t)?;
    Ok(eps
        .data()
        .iter()
        .zip(p.data())
        .map(|(&e, &q)| ((e - q) as f64).powi(2))
        .sum())
}

/// `ca * x + cb * y` elementwise in `f64`.
fn combine(x: &GridTensor, y: &GridTensor, ca: f64, cb: f64) -> GridTensor {
    let mut out = GridTensor::zeros(x.height(), x.width(), x.channels());
    const CHUNK: usize = 4096;
    par::fill_chunks(out.data_mut(), CHUNK, |n, chunk| {
        for (k, o) in chunk.iter_mut().enumerate() {
            let i = n * CHUNK + k;
            *o = (ca * x.data()[i] as f64 + cb * y.data()[i] as f64) as f32;
        }
    });
    out
}

/// Coefficients `(ratio, noise)` of the move from step `from` to step `to`.
fn transfer(sched: &NoiseSchedule, from: usize, to: usize) -> (f64, f64) {
    let (af, at) = (sched.alpha[from], sched.alpha[to]);
    let ratio = (at / af).sqrt();
    let noise = at.sqrt() * ((1.0 / at - 1.0).sqrt() - (1.0 / af - 1.0).sqrt());
    (ratio, noise)
}

/// One DDIM denoising step `z_t -> z_{t-1}`.
pub fn ddim_step(
    z: &GridTensor,
    t: usize,
    pred: &NoisePredictor,
    sched: &NoiseSchedule,
) -> Result<GridTensor> {
    sched.check_step(t, 1, sched.steps)?;
    let eps = pred.predict(z, t)?;
    let (ratio, noise) = transfer(sched, t, t - 1);
    Ok(combine(z, &eps, ratio, noise))
}

/// One DDIM inversion step `z_t -> z_{t+1}`.
pub fn ddim_invert_step(
    z: &GridTensor,
    t: usize,
    pred: &NoisePredictor,
    sched: &NoiseSchedule,
) -> Result<GridTensor> {
    sched.check_step(t, 0, sched.steps - 1)?;
    let eps = pred.predict(z, t)?;
    let (ratio, noise) = transfer(sched, t, t + 1);
    Ok(combine(z, &eps, ratio, noise))
}

/// Inverts a clean latent up to step `to`.
pub fn invert(
    z0: &GridTensor,
    to: usize,
    pred: &NoisePredictor,
    sched: &NoiseSchedule,
) -> Result<GridTensor> {
    sched.check_step(to, 0, sched.steps)?;
    let mut z = z0.clone();
    for t in 0..to {
        z = ddim_invert_step(&z, t, pred, sched)?;
    }
    Ok(z)
}

/// Denoises from step `from` down to 0.
pub fn sample(
    z: &GridTensor,
    from: usize,
    pred: &NoisePredictor,
    sched: &NoiseSchedule,
) -> Result<GridTensor> {
    sched.check_step(from, 0, sched.steps)?;
    let mut z = z.clone();
    for t in (1..=from).rev() {
        z = ddim_step(&z, t, pred, sched)?;
    }
    Ok(z)
}

/// Clean-latent estimate `(z - sqrt(1 - a) eps) / sqrt(a)`.
pub fn predict_x0(z: &GridTensor, eps: &GridTensor, t: usize, sched: &NoiseSchedule) -> Result<GridTensor> {
    sched.check_step(t, 0, sched.steps)?;
    z.ensure_same_shape(eps, "predicted noise")?;
    let a = sched.alpha[t];
    Ok(combine(z, eps, 1.0 / a.sqrt(), -(1.0 - a).sqrt() / a.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceParams {
    pub scale: f64,
    pub radius: usize,
    pub temperature: f64,
    /// Inclusive step range `[lo, hi]` where guidance is applied.
    pub window: [usize; 2],
}

impl Default for GuidanceParams {
    fn default() -> Self {
        Self {
            scale: 0.0,
            radius: 3,
            temperature: DEFAULT_TEMPERATURE,
            window: [1, 35],
        }
    }
}

#[derive(Clone, Debug)]
pub struct GuidedOutcome {
    pub latent: GridTensor,
    /// `(t, closs)` for every guided step.
    pub losses: Vec<(usize, f64)>,
}

/// DDIM sampling from step `from` with correspondence-loss guidance.
///
/// Inside the window the loss between handle patches of `z0_ref` and target
/// patches of the current clean-latent estimate is differentiated through the
/// estimate and subtracted, scaled, from `z_t` before the step.
pub fn guided_sample(
    z_start: &GridTensor,
    from: usize,
    sched: &NoiseSchedule,
    pred: &NoisePredictor,
    z0_ref: &GridTensor,
    pairs: &[DragPair],
    params: &GuidanceParams,
) -> Result<GuidedOutcome> {
    sched.check_step(from, 0, sched.steps)?;
    z_start.ensure_same_shape(z0_ref, "reference latent")?;
    if !(params.temperature > 0.0) {
        return Err(Error::param("temperature must be positive"));
    }
    let active: Vec<&DragPair> = pairs.iter().filter(|p| !p.is_degenerate()).collect();
    let guided = params.scale != 0.0 && !active.is_empty();
    let mut handle_patches = Vec::new();
    if guided {
        for p in &active {
            handle_patches.push(Patch::extract(z0_ref, p.handle.to_pixel(), params.radius)?);
            // target patch bounds, checked once up front
            Patch::extract(z0_ref, p.target.to_pixel(), params.radius)?;
        }
    }

    let mut z = z_start.clone();
    let mut losses = Vec::new();
    for t in (1..=from).rev() {
        if guided && t >= params.window[0] && t <= params.window[1] {
            let eps = pred.predict(&z, t)?;
            let x0 = predict_x0(&z, &eps, t, sched)?;
            let patch_pairs = active
                .iter()
                .zip(&handle_patches)
                .map(|(p, hp)| {
                    Ok(PatchPair {
                        handle: hp.clone(),
                        target: Patch::extract(&x0, p.target.to_pixel(), params.radius)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let out = closs(&patch_pairs, params.temperature)?;
            losses.push((t, out.loss));

            let a = sched.alpha[t];
            let chain = (1.0 - (1.0 - a).sqrt() * pred.input_jacobian(t)) / a.sqrt();
            let step = params.scale * chain;
            let c = z.channels();
            for (pp, grad) in patch_pairs.iter().zip(&out.target_gradients) {
                for (row, px) in pp.target.pixels.iter().enumerate() {
                    let cell = z.pixel_mut(px.y, px.x);
                    for k in 0..c {
                        cell[k] = (cell[k] as f64 - step * grad[row * c + k]) as f32;
                    }
                }
            }
            z.ensure_finite("guided latent")?;
        }
        z = ddim_step(&z, t, pred, sched)?;
    }
    Ok(GuidedOutcome { latent: z, losses })
}

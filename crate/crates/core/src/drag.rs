//! Semantic-region latent optimization with position-supervised backtracking.
//!
//! One session iteration:
//!
//! 1. **Motion supervision.** For every unfinished pair, features at
//!    `q + d` (with `d` the unit vector from the current point toward its
//!    target) are pulled toward the frozen features at `q`, for all `q` in the
//!    pair's region. Outside the editing mask the latent is held to its starting
//!    value by a weighted L1 penalty. One gradient step is taken on the latent.
//! 2. **Point tracking.** Each point moves to the pixel of its region whose
//!    features best match (L1) the original handle's features.
//! 3. **Backtracking.** A tracked move is kept only if it points toward the
//!    target (positive cosine with the handle→target axis) and advances at
//!    least the ideal distance `length / n_steps` along it. Otherwise the point
//!    stays where it was and optimization continues from the updated latent.
//!
//! Regions are either the superpixel containing the current point
//! ([`RegionMode::Semantic`]) or a clipped square around it
//! ([`RegionMode::FixedSquare`]).

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FeatureField;
use crate::grid::{BilinearStencil, Grid, GridTensor, Pixel, Point, Scalar};
use crate::mask::{mask_complement_weighting, DragInstruction, DragPair, Mask};
use crate::par;
use crate::superpixel::Segmentation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum RegionMode {
    Semantic,
    FixedSquare { radius: usize },
}

impl Default for RegionMode {
    fn default() -> Self {
        RegionMode::Semantic
    }
}

impl RegionMode {
    pub const DEFAULT_SQUARE_RADIUS: usize = 3;

    pub fn validate(&self) -> Result<()> {
        match self {
            RegionMode::FixedSquare { radius: 0 } => {
                Err(Error::param("fixed-square radius must be at least 1"))
            }
            _ => Ok(()),
        }
    }
}

/// What a rejected step undoes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rollback {
    /// Keep the latent update, leave the point where it was.
    #[default]
    Point,
    /// Also discard the latent update when any pair rejects. Plain gradient
    /// descent then repeats the same update, so the first rejection ends all
    /// progress.
    Latent,
}

/// Form of the outside-mask penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPenalty {
    /// `lambda * |(z - z_ref) * (1 - M)|_1` against the starting latent.
    #[default]
    Reference,
    /// `lambda * |(z - sg(z)) * (1 - M)|_1`, identically zero.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DragOptions {
    pub lambda: f64,
    pub region_mode: RegionMode,
    pub rollback: Rollback,
    pub mask_penalty: MaskPenalty,
}

impl Default for DragOptions {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            region_mode: RegionMode::Semantic,
            rollback: Rollback::Point,
            mask_penalty: MaskPenalty::Reference,
        }
    }
}

/// One pair's contribution to the motion-supervision loss.
#[derive(Clone, Debug)]
pub struct MotionTerm<'a> {
    pub current: Point,
    pub target: Point,
    pub region: &'a [Pixel],
}

#[derive(Clone, Debug)]
pub struct MotionLoss<T: Scalar> {
    pub value: f64,
    pub gradient: Grid<T>,
    /// Region samples whose shifted point left the grid and were dropped.
    pub skipped: usize,
}

/// Motion-supervision loss and its gradient with respect to `z`.
///
/// `weights` is the `H x W x 1` outside-mask weighting (see
/// [`mask_complement_weighting`]).
pub fn motion_supervision_loss<T: Scalar>(
    field: &FeatureField,
    z: &Grid<T>,
    z_ref: &Grid<T>,
    terms: &[MotionTerm<'_>],
    weights: &GridTensor,
    lambda: f64,
    penalty: MaskPenalty,
) -> Result<MotionLoss<T>> {
    let anchor = field.forward(z)?;
    motion_supervision_loss_anchored(field, z, &anchor, z_ref, terms, weights, lambda, penalty)
}

/// As [`motion_supervision_loss`] with the stop-gradient features supplied.
///
/// `anchor` plays the role of `sg(F(z))`: it is read but never differentiated.
#[allow(clippy::too_many_arguments)]
pub fn motion_supervision_loss_anchored<T: Scalar>(
    field: &FeatureField,
    z: &Grid<T>,
    anchor: &Grid<T>,
    z_ref: &Grid<T>,
    terms: &[MotionTerm<'_>],
    weights: &GridTensor,
    lambda: f64,
    penalty: MaskPenalty,
) -> Result<MotionLoss<T>> {
    z.ensure_same_shape(z_ref, "reference latent")?;
    if (weights.height(), weights.width(), weights.channels()) != (z.height(), z.width(), 1) {
        return Err(Error::shape(format!(
            "mask weighting must be {}x{}x1, got {:?}",
            z.height(),
            z.width(),
            weights.shape()
        )));
    }
    let features = field.forward(z)?;
    features.ensure_same_shape(anchor, "stop-gradient features")?;
    let (h, w, c) = features.shape();

    let mut cotangent = Grid::<T>::zeros(h, w, c);
    let mut value = 0.0;
    let mut skipped = 0;
    for term in terms {
        let offset = term.target - term.current;
        let len = offset.norm();
        if len == 0.0 {
            continue;
        }
        if term.region.is_empty() {
            return Err(Error::param("motion supervision region is empty"));
        }
        let d = offset.scale(1.0 / len);
        // per-sample |diff| sums and sign vectors, reduced below in region order
        let samples = par::map_slice(term.region, |q| {
            let p = Point::from(*q) + d;
            if !features.contains(p) {
                return None;
            }
            let stencil = BilinearStencil::new(h, w, p);
            let mut shifted = vec![T::zero(); c];
            for (corner, &wt) in stencil.corners.iter().zip(&stencil.weights) {
                let wt = T::of(wt);
                for (s, &v) in shifted.iter_mut().zip(features.pixel(corner.y, corner.x)) {
                    *s = *s + wt * v;
                }
            }
            let mut sum = 0.0;
            let signs: Vec<T> = shifted
                .iter()
                .zip(anchor.pixel(q.y, q.x))
                .map(|(&s, &a)| {
                    let diff = s - a;
                    sum += diff.abs().to_f64();
                    sign(diff)
                })
                .collect();
            Some((sum, signs, stencil))
        });
        for sample in samples {
            let Some((sum, signs, stencil)) = sample else {
                skipped += 1;
                continue;
            };
            value += sum;
            for (corner, &wt) in stencil.corners.iter().zip(&stencil.weights) {
                if wt == 0.0 {
                    continue;
                }
                let wt = T::of(wt);
                for (g, &s) in cotangent.pixel_mut(corner.y, corner.x).iter_mut().zip(&signs) {
                    *g = *g + wt * s;
                }
            }
        }
    }

    let mut gradient = field.adjoint(z, &cotangent)?;
    if penalty == MaskPenalty::Reference && lambda != 0.0 {
        let lam = T::of(lambda);
        let zc = z.channels();
        let mut penalty_sum = 0.0;
        for (i, ((g, &zv), &rv)) in gradient
            .data_mut()
            .iter_mut()
            .zip(z.data())
            .zip(z_ref.data())
            .enumerate()
        {
            let wt = T::of(weights.data()[i / zc] as f64);
            if wt == T::zero() {
                continue;
            }
            let diff = zv - rv;
            penalty_sum += (wt * diff.abs()).to_f64();
            *g = *g + lam * wt * sign(diff);
        }
        value += lambda * penalty_sum;
    }
    Ok(MotionLoss {
        value,
        gradient,
        skipped,
    })
}

#[inline]
fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Plain gradient descent: `z - lr * gradient`.
pub fn latent_step<T: Scalar>(z: &Grid<T>, gradient: &Grid<T>, lr: f64) -> Result<Grid<T>> {
    z.ensure_same_shape(gradient, "gradient")?;
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::param(format!("learning rate must be positive, got {lr}")));
    }
    gradient.ensure_finite("gradient")?;
    let lr = T::of(lr);
    let data = z
        .data()
        .iter()
        .zip(gradient.data())
        .map(|(&v, &g)| v - lr * g)
        .collect();
    Grid::new(z.height(), z.width(), z.channels(), data)
}

/// Region pixel whose features are nearest (L1) to `reference`.
///
/// Ties go to the smallest `(y, x)`.
pub fn track_in_features<T: Scalar>(
    features: &Grid<T>,
    reference: &[T],
    region: &[Pixel],
) -> Result<Pixel> {
    if region.is_empty() {
        return Err(Error::param("point tracking region is empty"));
    }
    if reference.len() != features.channels() {
        return Err(Error::shape(format!(
            "reference feature has {} channels, feature map has {}",
            reference.len(),
            features.channels()
        )));
    }
    let distances = par::map_slice(region, |q| {
        features
            .pixel(q.y, q.x)
            .iter()
            .zip(reference)
            .map(|(&a, &b)| (a - b).abs().to_f64())
            .sum::<f64>()
    });
    let best = region
        .iter()
        .zip(distances)
        .min_by(|(pa, da), (pb, db)| da.total_cmp(db).then(pa.cmp(pb)))
        .map(|(p, _)| *p)
        .expect("region is non-empty");
    Ok(best)
}

/// Relocates the original handle feature `F_{p0}(z_orig)` inside `region` of
/// the updated latent's feature map.
pub fn point_track(
    field: &FeatureField,
    z_new: &GridTensor,
    z_orig: &GridTensor,
    p0: Point,
    region: &[Pixel],
) -> Result<Pixel> {
    if region.is_empty() {
        return Err(Error::param("point tracking region is empty"));
    }
    let reference = crate::grid::bilinear_sample(&field.forward(z_orig)?, p0)?;
    track_in_features(&field.forward(z_new)?, &reference, region)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepDecision {
    Accept,
    RejectDirection,
    RejectDistance,
}

/// Backtracking rule for one tracked move `h_prev -> h_new` of a pair whose
/// handle started at `p0` and aims at `target`.
pub fn accept_step(
    h_prev: Point,
    h_new: Point,
    p0: Point,
    target: Point,
    ideal_d: f64,
) -> StepDecision {
    let step = h_new - h_prev;
    let axis = target - p0;
    let len = step.norm();
    let axis_len = axis.norm();
    if len == 0.0 || axis_len == 0.0 {
        return StepDecision::RejectDirection;
    }
    let projected = step.dot(axis) / axis_len;
    if projected <= 0.0 {
        return StepDecision::RejectDirection;
    }
    // tolerate rounding in the projection when the step is exactly ideal
    if projected < ideal_d * (1.0 - 1e-12) {
        return StepDecision::RejectDistance;
    }
    StepDecision::Accept
}

/// Clipped `(2r + 1)^2` square around the pixel nearest to `center`, raster order.
pub fn square_region(height: usize, width: usize, center: Point, radius: usize) -> Vec<Pixel> {
    let c = center.to_pixel();
    let y0 = c.y.saturating_sub(radius);
    let x0 = c.x.saturating_sub(radius);
    let y1 = (c.y + radius).min(height - 1);
    let x1 = (c.x + radius).min(width - 1);
    let mut out = Vec::with_capacity((y1 - y0 + 1) * (x1 - x0 + 1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            out.push(Pixel::new(x, y));
        }
    }
    out
}

fn region_for<'s>(
    seg: &'s Segmentation,
    mode: RegionMode,
    point: Point,
) -> Result<Cow<'s, [Pixel]>> {
    Ok(match mode {
        RegionMode::Semantic => Cow::Borrowed(seg.region_of(point)?),
        RegionMode::FixedSquare { radius } => {
            seg.check_point(point)?;
            Cow::Owned(square_region(seg.height(), seg.width(), point, radius))
        }
    })
}

/// One JSON-lines diagnostics record: a pair's outcome at one update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DragEvent {
    pub k: usize,
    pub point: usize,
    pub decision: StepDecision,
    pub loss: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DragState {
    pub k: usize,
    pub points: Vec<Point>,
    pub accepted: Vec<usize>,
    pub total_updates: usize,
    /// Accepted positions per pair, starting with the handle.
    pub trajectory: Vec<Vec<Point>>,
    pub converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub events: Vec<DragEvent>,
    /// Loss per latent update.
    pub losses: Vec<f64>,
    pub skipped_terms: usize,
    pub final_distances: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DragOutcome {
    pub latent: GridTensor,
    pub state: DragState,
    pub diagnostics: Diagnostics,
}

impl DragOutcome {
    pub fn incomplete(&self) -> bool {
        !self.state.converged
    }
}

/// Runs a full drag session. `observer` sees every event as it is produced.
#[allow(clippy::too_many_arguments)]
pub fn drag_session_run(
    field: &FeatureField,
    z_init: &GridTensor,
    seg: &Segmentation,
    instr: &DragInstruction,
    options: &DragOptions,
    mask: &Mask,
    mut observer: impl FnMut(&DragEvent),
) -> Result<DragOutcome> {
    instr.validate()?;
    options.region_mode.validate()?;
    let (h, w) = (z_init.height(), z_init.width());
    if (seg.height(), seg.width()) != (h, w) || (mask.height(), mask.width()) != (h, w) {
        return Err(Error::shape(format!(
            "latent is {h}x{w} but segmentation is {}x{} and mask is {}x{}",
            seg.height(),
            seg.width(),
            mask.height(),
            mask.width()
        )));
    }
    for pair in &instr.pairs {
        z_init.check_point(pair.handle)?;
        z_init.check_point(pair.target)?;
    }
    z_init.ensure_finite("initial latent")?;

    let weights = mask_complement_weighting(mask);
    let initial_features = field.forward(z_init)?;
    let references: Vec<Vec<f32>> = instr
        .pairs
        .iter()
        .map(|p| crate::grid::bilinear_sample(&initial_features, p.handle))
        .collect::<Result<_>>()?;
    let ideal: Vec<f64> = instr
        .pairs
        .iter()
        .map(|p| p.length() / instr.n_steps as f64)
        .collect();

    let mut state = DragState {
        k: 0,
        points: instr.pairs.iter().map(|p| p.handle).collect(),
        accepted: vec![0; instr.pairs.len()],
        total_updates: 0,
        trajectory: instr.pairs.iter().map(|p| vec![p.handle]).collect(),
        converged: false,
    };
    let mut diagnostics = Diagnostics::default();
    let arrived = |state: &DragState, i: usize, pair: &DragPair| {
        pair.is_degenerate() || state.points[i].distance(pair.target) <= instr.stop_radius
    };

    let mut z = z_init.clone();
    loop {
        let active: Vec<usize> = (0..instr.pairs.len())
            .filter(|&i| !arrived(&state, i, &instr.pairs[i]))
            .collect();
        if active.is_empty() {
            state.converged = true;
            break;
        }
        if state.total_updates >= instr.n_max {
            break;
        }

        let regions: Vec<Cow<'_, [Pixel]>> = active
            .iter()
            .map(|&i| region_for(seg, options.region_mode, state.points[i]))
            .collect::<Result<_>>()?;
        let terms: Vec<MotionTerm<'_>> = active
            .iter()
            .zip(&regions)
            .map(|(&i, region)| MotionTerm {
                current: state.points[i],
                target: instr.pairs[i].target,
                region,
            })
            .collect();
        let loss = motion_supervision_loss(
            field,
            &z,
            z_init,
            &terms,
            &weights,
            options.lambda,
            options.mask_penalty,
        )?;
        let z_next = latent_step(&z, &loss.gradient, instr.learning_rate)?;
        state.total_updates += 1;
        diagnostics.losses.push(loss.value);
        diagnostics.skipped_terms += loss.skipped;

        let features = field.forward(&z_next)?;
        let mut any_rejected = false;
        for (&i, region) in active.iter().zip(&regions) {
            let pair = &instr.pairs[i];
            let tracked: Point = track_in_features(&features, &references[i], region)?.into();
            let h_prev = state.points[i];
            let mut decision = accept_step(h_prev, tracked, pair.handle, pair.target, ideal[i]);
            // the last approach may be shorter than the ideal step
            if decision == StepDecision::RejectDistance
                && tracked.distance(pair.target) <= instr.stop_radius
            {
                decision = StepDecision::Accept;
            }
            if decision == StepDecision::Accept {
                state.points[i] = tracked;
                state.accepted[i] += 1;
                state.trajectory[i].push(tracked);
            } else {
                any_rejected = true;
            }
            let event = DragEvent {
                k: state.k,
                point: i,
                decision,
                loss: loss.value,
                distance: state.points[i].distance(pair.target),
            };
            observer(&event);
            diagnostics.events.push(event);
        }
        if !(options.rollback == Rollback::Latent && any_rejected) {
            z = z_next;
        }
        state.k += 1;
    }

    diagnostics.final_distances = instr
        .pairs
        .iter()
        .zip(&state.points)
        .map(|(p, h)| h.distance(p.target))
        .collect();
    Ok(DragOutcome {
        latent: z,
        state,
        diagnostics,
    })
}

/// Serializes events as JSON lines.
pub fn events_to_jsonl(events: &[DragEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_pixels(h: usize, w: usize) -> Vec<Pixel> {
        (0..h)
            .flat_map(|y| (0..w).map(move |x| Pixel::new(x, y)))
            .collect()
    }

    #[test]
    fn degenerate_pair_with_unchanged_latent_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = GridTensor::from_fn(6, 6, 2, |_, _, _| rng.random_range(-1.0..1.0));
        let region = all_pixels(6, 6);
        let p = Point::new(2.0, 3.0);
        let terms = [MotionTerm {
            current: p,
            target: p,
            region: &region,
        }];
        let weights = mask_complement_weighting(&Mask::empty(6, 6));
        let loss = motion_supervision_loss(
            &FeatureField::Identity,
            &z,
            &z,
            &terms,
            &weights,
            0.1,
            MaskPenalty::Reference,
        )
        .unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(loss.gradient.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn constant_features_give_zero_motion_term() {
        let z = GridTensor::filled(8, 8, 3, 0.7);
        let region = all_pixels(8, 8);
        let weights = mask_complement_weighting(&Mask::full(8, 8));
        for target in [Point::new(7.0, 2.0), Point::new(0.0, 0.0), Point::new(5.5, 7.0)] {
            let terms = [MotionTerm {
                current: Point::new(3.0, 4.0),
                target,
                region: &region,
            }];
            let loss = motion_supervision_loss(
                &FeatureField::Identity,
                &z,
                &z,
                &terms,
                &weights,
                0.1,
                MaskPenalty::Reference,
            )
            .unwrap();
            assert!(loss.value.abs() < 1e-4, "{}", loss.value);
            assert!(loss.skipped > 0, "edge samples should leave the grid");
        }
    }

    #[test]
    fn literal_penalty_is_identically_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = GridTensor::from_fn(5, 5, 1, |_, _, _| rng.random_range(-1.0..1.0));
        let z_ref = GridTensor::zeros(5, 5, 1);
        let weights = mask_complement_weighting(&Mask::empty(5, 5));
        let literal = motion_supervision_loss(
            &FeatureField::Identity,
            &z,
            &z_ref,
            &[],
            &weights,
            1.0,
            MaskPenalty::Literal,
        )
        .unwrap();
        assert_eq!(literal.value, 0.0);
        let reference = motion_supervision_loss(
            &FeatureField::Identity,
            &z,
            &z_ref,
            &[],
            &weights,
            1.0,
            MaskPenalty::Reference,
        )
        .unwrap();
        assert!((reference.value - z.l1_norm()).abs() < 1e-5);
    }

    #[test]
    fn latent_step_cases() {
        let z = GridTensor::filled(2, 2, 1, 1.0);
        let zero = GridTensor::zeros(2, 2, 1);
        assert_eq!(latent_step(&z, &zero, 0.01).unwrap(), z);
        let mut unit = zero.clone();
        unit.set(1, 0, 0, 1.0);
        let stepped = latent_step(&z, &unit, 0.01).unwrap();
        assert_eq!(stepped.at(1, 0, 0), 1.0 - 0.01);
        assert_eq!(stepped.at(0, 0, 0), 1.0);
        let mut bad = zero.clone();
        bad.set(0, 1, 0, f32::NAN);
        let err = latent_step(&z, &bad, 0.01).unwrap_err();
        assert!(err.to_string().contains("y=0, x=1"), "{err}");
        assert!(latent_step(&z, &zero, 0.0).is_err());
    }

    #[test]
    fn gradient_descent_on_a_quadratic_decreases_it() {
        // f(z) = 0.5 |z - c|^2 with gradient z - c
        let c = GridTensor::from_fn(3, 3, 1, |y, x, _| (y * 3 + x) as f32);
        let f = |z: &GridTensor| -> f64 {
            z.data()
                .iter()
                .zip(c.data())
                .map(|(a, b)| 0.5 * ((a - b) as f64).powi(2))
                .sum()
        };
        let grad = |z: &GridTensor| {
            Grid::new(3, 3, 1, z.data().iter().zip(c.data()).map(|(a, b)| a - b).collect())
                .unwrap()
        };
        let z0 = GridTensor::zeros(3, 3, 1);
        let z1 = latent_step(&z0, &grad(&z0), 0.3).unwrap();
        let z2 = latent_step(&z1, &grad(&z1), 0.3).unwrap();
        assert!(f(&z1) < f(&z0) && f(&z2) < f(&z1));
        // closed form: f(z_k) = (1 - lr)^(2k) f(z_0)
        assert!((f(&z2) - 0.7f64.powi(4) * f(&z0)).abs() < 1e-3);
    }

    #[test]
    fn tracking_unchanged_latent_returns_handle() {
        let z = GridTensor::from_fn(6, 6, 1, |y, x, _| (y * 6 + x) as f32);
        let region = all_pixels(6, 6);
        let p = point_track(&FeatureField::Identity, &z, &z, Point::new(4.0, 2.0), &region).unwrap();
        assert_eq!(p, Pixel::new(4, 2));
    }

    #[test]
    fn tracking_follows_a_translation() {
        let orig = GridTensor::from_fn(8, 8, 1, |y, x, _| (y * 8 + x) as f32);
        // content moved two pixels to the right
        let moved = GridTensor::from_fn(8, 8, 1, |y, x, _| {
            if x >= 2 {
                (y * 8 + x - 2) as f32
            } else {
                -100.0
            }
        });
        let region = all_pixels(8, 8);
        let p = point_track(&FeatureField::Identity, &moved, &orig, Point::new(3.0, 5.0), &region)
            .unwrap();
        assert_eq!(p, Pixel::new(5, 5));
    }

    #[test]
    fn tracking_constant_features_picks_first_raster_pixel() {
        let z = GridTensor::filled(5, 5, 2, 1.0);
        let region = vec![Pixel::new(3, 2), Pixel::new(1, 4), Pixel::new(4, 1)];
        let p = point_track(&FeatureField::Identity, &z, &z, Point::new(2.0, 2.0), &region).unwrap();
        assert_eq!(p, Pixel::new(4, 1));
        assert!(point_track(&FeatureField::Identity, &z, &z, Point::new(2.0, 2.0), &[]).is_err());
    }

    #[test]
    fn accept_step_rules() {
        let p0 = Point::new(0.0, 0.0);
        let t = Point::new(8.0, 0.0);
        let d = 0.5;
        let h = Point::new(2.0, 1.0);
        assert_eq!(
            accept_step(h, Point::new(2.5, 1.0), p0, t, d),
            StepDecision::Accept
        );
        assert_eq!(
            accept_step(h, Point::new(1.0, 1.0), p0, t, d),
            StepDecision::RejectDirection
        );
        assert_eq!(
            accept_step(h, Point::new(2.25, 1.0), p0, t, d),
            StepDecision::RejectDistance
        );
        assert_eq!(accept_step(h, h, p0, t, d), StepDecision::RejectDirection);
        // perpendicular moves have zero cosine
        assert_eq!(
            accept_step(h, Point::new(2.0, 3.0), p0, t, d),
            StepDecision::RejectDirection
        );
    }

    #[test]
    fn square_region_is_clipped_and_ordered() {
        let r = square_region(5, 5, Point::new(0.2, 4.0), 1);
        assert_eq!(
            r,
            vec![
                Pixel::new(0, 3),
                Pixel::new(1, 3),
                Pixel::new(0, 4),
                Pixel::new(1, 4)
            ]
        );
    }

    #[test]
    fn all_degenerate_pairs_need_no_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = GridTensor::from_fn(8, 8, 2, |_, _, _| rng.random_range(-1.0..1.0));
        let seg = Segmentation::from_labels(8, 8, vec![0; 64]).unwrap();
        let p = Point::new(3.0, 3.0);
        let instr = DragInstruction {
            pairs: vec![DragPair::new(p, p)],
            ..Default::default()
        };
        let out = drag_session_run(
            &FeatureField::Identity,
            &z,
            &seg,
            &instr,
            &DragOptions::default(),
            &Mask::full(8, 8),
            |_| {},
        )
        .unwrap();
        assert_eq!(out.latent, z);
        assert_eq!(out.state.total_updates, 0);
        assert!(out.state.converged);
        assert!(out.diagnostics.events.is_empty());
    }

    #[test]
    fn session_rejects_mismatched_inputs() {
        let z = GridTensor::zeros(8, 8, 2);
        let seg = Segmentation::from_labels(4, 4, vec![0; 16]).unwrap();
        let instr = DragInstruction {
            pairs: vec![DragPair::new(Point::new(1.0, 1.0), Point::new(2.0, 2.0))],
            ..Default::default()
        };
        let res = drag_session_run(
            &FeatureField::Identity,
            &z,
            &seg,
            &instr,
            &DragOptions::default(),
            &Mask::full(8, 8),
            |_| {},
        );
        assert!(matches!(res, Err(Error::Shape(_))));
    }

    #[test]
    fn event_json_shape() {
        let e = DragEvent {
            k: 3,
            point: 0,
            decision: StepDecision::RejectDistance,
            loss: 1.5,
            distance: 2.0,
        };
        assert_eq!(
            events_to_jsonl(&[e]),
            "{\"k\":3,\"point\":0,\"decision\":\"reject-distance\",\"loss\":1.5,\"distance\":2.0}\n"
        );
    }
}

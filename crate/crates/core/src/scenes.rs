//! Deterministic synthetic scenes used by the acceptance suite, the benches
//! and the shipped scenario files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::drag::{drag_session_run, DragOptions, DragOutcome, RegionMode};
use crate::error::Result;
use crate::field::{BumpParams, FeatureField, TabulatedField};
use crate::grid::{GridTensor, Point};
use crate::mask::{generate_mask, DragInstruction, DragPair, Mask};
use crate::metrics::{evaluate_session, EvalReport};
use crate::sampler::{NoisePredictor, TabulatedPredictor};
use crate::superpixel::{slic_segment, Segmentation, SlicParams};

/// Everything a drag run needs, before segmentation.
#[derive(Clone, Debug)]
pub struct DragScene {
    pub field: FeatureField,
    pub latent: GridTensor,
    /// Feature map SLIC runs on.
    pub segmentation_features: GridTensor,
    pub slic: SlicParams,
    pub instruction: DragInstruction,
    pub options: DragOptions,
}

/// Products of [`DragScene::run`].
#[derive(Clone, Debug)]
pub struct SceneRun {
    pub segmentation: Segmentation,
    pub mask: Mask,
    pub outcome: DragOutcome,
    pub report: EvalReport,
}

impl DragScene {
    /// Segment, mask, drag and evaluate.
    pub fn run(&self) -> Result<SceneRun> {
        let segmentation = slic_segment(&self.segmentation_features, &self.slic)?;
        let mask = generate_mask(&segmentation, &self.instruction.pairs)?;
        let outcome = drag_session_run(
            &self.field,
            &self.latent,
            &segmentation,
            &self.instruction,
            &self.options,
            &mask,
            |_| {},
        )?;
        let report = evaluate_session(
            &outcome.state,
            &self.instruction,
            &self.field,
            &outcome.latent,
            &self.latent,
            Some(&mask),
        )?;
        Ok(SceneRun {
            segmentation,
            mask,
            outcome,
            report,
        })
    }
}

pub const SCENE_SIZE: usize = 64;

/// Bump parameters of the desk-scale drag scenario.
pub fn bump_params() -> BumpParams {
    BumpParams {
        amplitude: 10.0,
        sigma: 4.0,
        center: [24.0, 32.0],
        gain: 4.0,
    }
}

/// Material map: an object band around the drag path on a plain background.
/// One channel, scaled so feature contrast dominates the spatial term.
pub fn object_band_features() -> GridTensor {
    GridTensor::from_fn(SCENE_SIZE, SCENE_SIZE, 1, |y, x, _| {
        if (20..52).contains(&y) && (8..56).contains(&x) {
            100.0
        } else {
            0.0
        }
    })
}

/// 64x64 analytic-bump drag: the bump at (24, 32) is dragged 8 px right.
pub fn bump_scene() -> Result<DragScene> {
    let b = bump_params();
    Ok(DragScene {
        field: FeatureField::analytic_bump(b)?,
        latent: GridTensor::zeros(SCENE_SIZE, SCENE_SIZE, 2),
        segmentation_features: object_band_features(),
        slic: SlicParams {
            n_patches: 2,
            ..Default::default()
        },
        instruction: DragInstruction {
            pairs: vec![DragPair::new(
                Point::new(b.center[0], b.center[1]),
                Point::new(b.center[0] + 8.0, b.center[1]),
            )],
            n_steps: 16,
            n_max: 300,
            ..Default::default()
        },
        options: DragOptions::default(),
    })
}

/// Randomized variant of the bump drag: center, direction and length vary.
pub fn random_bump_scene(seed: u64) -> Result<DragScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cx = rng.random_range(20.0..44.0f64).round();
    let cy = rng.random_range(20.0..44.0f64).round();
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let len = rng.random_range(4.0..10.0);
    let target = Point::new(
        (cx + len * angle.cos()).round(),
        (cy + len * angle.sin()).round(),
    );
    let b = BumpParams {
        center: [cx, cy],
        ..bump_params()
    };
    Ok(DragScene {
        field: FeatureField::analytic_bump(b)?,
        latent: GridTensor::zeros(SCENE_SIZE, SCENE_SIZE, 2),
        segmentation_features: GridTensor::zeros(SCENE_SIZE, SCENE_SIZE, 1),
        slic: SlicParams {
            n_patches: 1,
            ..Default::default()
        },
        instruction: DragInstruction {
            pairs: vec![DragPair::new(Point::new(cx, cy), target)],
            n_steps: 16,
            n_max: 300,
            ..Default::default()
        },
        options: DragOptions::default(),
    })
}

/// First row of the texture band in the two-material scene.
pub const TEXTURE_TOP: usize = 34;

/// Bump next to a high-frequency texture, read through a tabulated field.
/// The texture differs per seed; the bump and drag do not.
pub fn two_material_scene(seed: u64, mode: RegionMode) -> Result<DragScene> {
    let b = bump_params();
    let (cx, cy) = (20.0, 31.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (b.amplitude / 3.0) as f32;
    let mut table = GridTensor::zeros(SCENE_SIZE, SCENE_SIZE, 3);
    for y in 0..SCENE_SIZE {
        for x in 0..SCENE_SIZE {
            let cell = table.pixel_mut(y, x);
            if y >= TEXTURE_TOP {
                // channel 0 stays non-positive so no texture pixel imitates the bump peak
                cell[0] = rng.random_range(-a..0.0);
                cell[1] = rng.random_range(-a..a);
                cell[2] = rng.random_range(-a..a);
            } else {
                let (wx, wy) = (x as f64 - cx, y as f64 - cy);
                let g = b.amplitude * (-(wx * wx + wy * wy) / (2.0 * b.sigma * b.sigma)).exp();
                cell[0] = g as f32;
                cell[1] = (g * wx / b.sigma) as f32;
                cell[2] = (g * wy / b.sigma) as f32;
            }
        }
    }
    let segmentation_features = GridTensor::from_fn(SCENE_SIZE, SCENE_SIZE, 1, |y, _, _| {
        if y >= TEXTURE_TOP {
            100.0
        } else {
            0.0
        }
    });
    Ok(DragScene {
        field: FeatureField::Tabulated(TabulatedField::new(table, b.gain)?),
        latent: GridTensor::zeros(SCENE_SIZE, SCENE_SIZE, 2),
        segmentation_features,
        slic: SlicParams {
            n_patches: 2,
            ..Default::default()
        },
        instruction: DragInstruction {
            pairs: vec![DragPair::new(Point::new(cx, cy), Point::new(cx + 8.0, cy))],
            n_steps: 16,
            n_max: 300,
            ..Default::default()
        },
        options: DragOptions {
            region_mode: mode,
            ..Default::default()
        },
    })
}

/// 64x64 segmentation into a 4x4 grid of 16x16 cells, labels in raster order.
pub fn grid16_segmentation() -> Segmentation {
    let labels = (0..SCENE_SIZE * SCENE_SIZE)
        .map(|i| {
            let (y, x) = (i / SCENE_SIZE, i % SCENE_SIZE);
            ((y / 16) * 4 + x / 16) as u32
        })
        .collect();
    Segmentation::from_labels(SCENE_SIZE, SCENE_SIZE, labels).expect("valid grid labels")
}

/// Correspondence-guidance toy: an 8x8x4 reference latent, one pair and an
/// identity-like per-step predictor.
#[derive(Clone, Debug)]
pub struct ClossToy {
    pub z0_ref: GridTensor,
    pub pair: DragPair,
    pub predictor: NoisePredictor,
    pub radius: usize,
}

pub fn closs_toy(seed: u64, steps: usize) -> ClossToy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0_ref = GridTensor::from_fn(8, 8, 4, |_, _, _| rng.random_range(-1.0..1.0));
    ClossToy {
        z0_ref,
        pair: DragPair::new(Point::new(2.0, 2.0), Point::new(5.0, 5.0)),
        predictor: NoisePredictor::Tabulated(TabulatedPredictor {
            scale: (0..=steps).map(|t| 0.5 * t as f64 / steps as f64).collect(),
            bias: None,
        }),
        radius: 1,
    }
}

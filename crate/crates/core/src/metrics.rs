//! Mean distance and session reports.

use serde::{Deserialize, Serialize};

use crate::drag::{track_in_features, DragState};
use crate::error::{Error, Result};
use crate::field::FeatureField;
use crate::grid::{bilinear_sample, GridTensor, Pixel, Point};
use crate::mask::{DragInstruction, Mask};

/// Mean Euclidean distance between matched points.
pub fn mean_distance(final_points: &[Point], targets: &[Point]) -> Result<f64> {
    if final_points.len() != targets.len() {
        return Err(Error::param(format!(
            "{} final points for {} targets",
            final_points.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::param("mean distance of an empty point list"));
    }
    let total: f64 = final_points
        .iter()
        .zip(targets)
        .map(|(a, b)| a.distance(*b))
        .sum();
    Ok(total / targets.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Handle features re-localized on the final latent.
    pub final_points: Vec<Point>,
    pub distances: Vec<f64>,
    pub md: f64,
    pub converged: bool,
    pub updates: usize,
    /// L1 change of the latent outside the mask. A preservation proxy, not a
    /// perceptual similarity score.
    pub outside_mask_l1: Option<f64>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "md,converged,updates,outside_mask_l1,distances";

    pub fn csv_row(&self) -> String {
        let distances: Vec<String> = self.distances.iter().map(|d| d.to_string()).collect();
        format!(
            "{},{},{},{},{}",
            self.md,
            self.converged,
            self.updates,
            self.outside_mask_l1.map(|v| v.to_string()).unwrap_or_default(),
            distances.join(";")
        )
    }
}

/// L1 distance between two latents over pixels outside `mask`.
pub fn outside_mask_l1(z_orig: &GridTensor, z_final: &GridTensor, mask: &Mask) -> Result<f64> {
    z_orig.ensure_same_shape(z_final, "final latent")?;
    if (mask.height(), mask.width()) != (z_orig.height(), z_orig.width()) {
        return Err(Error::shape("mask does not match the latent"));
    }
    let c = z_orig.channels();
    Ok(z_orig
        .data()
        .chunks_exact(c)
        .zip(z_final.data().chunks_exact(c))
        .zip(mask.bits())
        .filter(|(_, &inside)| !inside)
        .map(|((a, b), _)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs() as f64)
                .sum::<f64>()
        })
        .sum())
}

/// Re-localizes every handle feature over the whole final latent and scores
/// the result against the targets.
pub fn evaluate_session(
    state: &DragState,
    instr: &DragInstruction,
    field: &FeatureField,
    z_final: &GridTensor,
    z_orig: &GridTensor,
    mask: Option<&Mask>,
) -> Result<EvalReport> {
    let orig_features = field.forward(z_orig)?;
    let final_features = field.forward(z_final)?;
    let (h, w) = (z_final.height(), z_final.width());
    let everywhere: Vec<Pixel> = (0..h)
        .flat_map(|y| (0..w).map(move |x| Pixel::new(x, y)))
        .collect();
    let mut final_points = Vec::with_capacity(instr.pairs.len());
    for pair in &instr.pairs {
        let reference = bilinear_sample(&orig_features, pair.handle)?;
        final_points.push(Point::from(track_in_features(
            &final_features,
            &reference,
            &everywhere,
        )?));
    }
    let targets: Vec<Point> = instr.pairs.iter().map(|p| p.target).collect();
    let distances: Vec<f64> = final_points
        .iter()
        .zip(&targets)
        .map(|(a, b)| a.distance(*b))
        .collect();
    let md = mean_distance(&final_points, &targets)?;
    let outside_mask_l1 = mask
        .map(|m| outside_mask_l1(z_orig, z_final, m))
        .transpose()?;
    Ok(EvalReport {
        final_points,
        distances,
        md,
        converged: state.converged,
        updates: state.total_updates,
        outside_mask_l1,
    })
}

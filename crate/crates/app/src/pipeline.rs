//! Stage functions shared by the CLI and the HTTP service, plus the artifact
//! encoders. Both front ends call exactly these, so their outputs agree byte
//! for byte.

use std::collections::BTreeMap;
use std::path::Path;

use dragforge_core::closs::Patch;
use dragforge_core::drag::{drag_session_run, events_to_jsonl, DragEvent, DragOutcome};
use dragforge_core::formats::{decode_grid, encode_dft};
use dragforge_core::mask::{generate_mask, Mask};
use dragforge_core::metrics::{evaluate_session, EvalReport};
use dragforge_core::png_io::{encode_labels_png, encode_mask_png, encode_preview_png};
use dragforge_core::sampler::{guided_sample, invert};
use dragforge_core::superpixel::{slic_segment, Segmentation, SlicParams};
use dragforge_core::{FeatureField, GridTensor};
use serde::{Deserialize, Serialize};

use crate::config::{Config, InputName};
use crate::AppError;

fn runtime(stage: &str) -> impl Fn(dragforge_core::Error) -> AppError + '_ {
    move |e| AppError::Runtime(format!("{stage}: {e}"))
}

/// Decoded inputs of one run.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub latent: GridTensor,
    pub features: GridTensor,
    pub field: FeatureField,
}

impl Inputs {
    /// Decodes the named input bytes and checks them against the config.
    pub fn decode(config: &Config, files: &BTreeMap<InputName, Vec<u8>>) -> Result<Self, AppError> {
        let grid = |name: InputName| -> Result<Option<GridTensor>, AppError> {
            files
                .get(&name)
                .map(|b| decode_grid(b).map_err(|e| AppError::Invalid(format!("{} input: {e}", name.as_str()))))
                .transpose()
        };
        let missing = |name: InputName| AppError::Invalid(format!("missing {} input", name.as_str()));
        let latent = grid(InputName::Latent)?.ok_or_else(|| missing(InputName::Latent))?;
        let features = grid(InputName::Features)?.ok_or_else(|| missing(InputName::Features))?;
        let field = config.build_field(grid(InputName::Table)?)?;
        let inputs = Self {
            latent,
            features,
            field,
        };
        inputs.check(config)?;
        Ok(inputs)
    }

    fn check(&self, config: &Config) -> Result<(), AppError> {
        let invalid = |e: dragforge_core::Error| AppError::Invalid(e.to_string());
        let (h, w) = (self.latent.height(), self.latent.width());
        if (self.features.height(), self.features.width()) != (h, w) {
            return Err(AppError::Invalid(format!(
                "features are {}x{} but the latent is {h}x{w}",
                self.features.height(),
                self.features.width()
            )));
        }
        self.latent.ensure_finite("latent").map_err(invalid)?;
        self.features.ensure_finite("features").map_err(invalid)?;
        self.field.check_latent(&self.latent).map_err(invalid)?;
        if config.slic.n_patches > h * w {
            return Err(AppError::Invalid(format!(
                "slic.n_patches ({}) exceeds the {} pixels",
                config.slic.n_patches,
                h * w
            )));
        }
        for pair in &config.instruction.pairs {
            self.latent.check_point(pair.handle).map_err(invalid)?;
            self.latent.check_point(pair.target).map_err(invalid)?;
        }
        if let Some(s) = &config.sampler {
            if s.guidance.scale != 0.0 {
                for pair in config.instruction.pairs.iter().filter(|p| !p.is_degenerate()) {
                    for p in [pair.handle, pair.target] {
                        Patch::extract(&self.latent, p.to_pixel(), s.guidance.radius).map_err(|e| {
                            AppError::Invalid(format!("guidance patch around ({}, {}): {e}", p.x, p.y))
                        })?;
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn segment(inputs: &Inputs, slic: &SlicParams) -> Result<Segmentation, AppError> {
    slic_segment(&inputs.features, slic).map_err(runtime("segment"))
}

pub fn build_mask(seg: &Segmentation, config: &Config) -> Result<Mask, AppError> {
    generate_mask(seg, &config.instruction.pairs).map_err(runtime("mask"))
}

/// Latent the drag starts from and what the drag produced.
#[derive(Clone, Debug)]
pub struct DragProducts {
    pub start: GridTensor,
    pub outcome: DragOutcome,
}

pub fn run_drag(
    config: &Config,
    inputs: &Inputs,
    seg: &Segmentation,
    mask: &Mask,
    observer: impl FnMut(&DragEvent),
) -> Result<DragProducts, AppError> {
    let start = match &config.sampler {
        Some(s) => {
            let sched = s.schedule.build().map_err(runtime("schedule"))?;
            invert(&inputs.latent, s.invert_to, &s.predictor, &sched).map_err(runtime("invert"))?
        }
        None => inputs.latent.clone(),
    };
    let outcome = drag_session_run(
        &inputs.field,
        &start,
        seg,
        &config.instruction,
        &config.drag,
        mask,
        observer,
    )
    .map_err(runtime("drag"))?;
    Ok(DragProducts { start, outcome })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    #[serde(flatten)]
    pub eval: EvalReport,
    pub skipped_terms: usize,
    /// `(t, loss)` for every guided sampling step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub guidance_losses: Vec<(usize, f64)>,
}

/// Every artifact a completed run writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Artifact {
    Labels,
    Mask,
    Trajectory,
    Final,
    Report,
    ReportCsv,
    Events,
    Preview,
}

impl Artifact {
    pub const ALL: [Artifact; 8] = [
        Artifact::Labels,
        Artifact::Mask,
        Artifact::Trajectory,
        Artifact::Final,
        Artifact::Report,
        Artifact::ReportCsv,
        Artifact::Events,
        Artifact::Preview,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// URL segment.
    pub fn name(self) -> &'static str {
        match self {
            Artifact::Labels => "labels",
            Artifact::Mask => "mask",
            Artifact::Trajectory => "trajectory",
            Artifact::Final => "final",
            Artifact::Report => "report",
            Artifact::ReportCsv => "report-csv",
            Artifact::Events => "events",
            Artifact::Preview => "preview",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::Labels => "labels.png",
            Artifact::Mask => "mask.png",
            Artifact::Trajectory => "trajectory.json",
            Artifact::Final => "final.dft",
            Artifact::Report => "report.json",
            Artifact::ReportCsv => "report.csv",
            Artifact::Events => "events.jsonl",
            Artifact::Preview => "preview.png",
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            Artifact::Labels | Artifact::Mask | Artifact::Preview => "image/png",
            Artifact::Trajectory | Artifact::Report => "application/json",
            Artifact::Final => "application/octet-stream",
            Artifact::ReportCsv => "text/csv",
            Artifact::Events => "application/x-ndjson",
        }
    }
}

fn pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("artifacts serialize");
    out.push(b'\n');
    out
}

pub fn labels_artifact(seg: &Segmentation) -> Vec<u8> {
    encode_labels_png(seg)
}

pub fn mask_artifact(mask: &Mask) -> Vec<u8> {
    encode_mask_png(mask)
}

/// Samples (when configured), evaluates and encodes the drag-stage artifacts.
pub fn finish(
    config: &Config,
    inputs: &Inputs,
    mask: &Mask,
    products: &DragProducts,
) -> Result<(RunReport, BTreeMap<Artifact, Vec<u8>>), AppError> {
    let outcome = &products.outcome;
    let (final_latent, guidance_losses) = match &config.sampler {
        Some(s) => {
            let sched = s.schedule.build().map_err(runtime("schedule"))?;
            let g = guided_sample(
                &outcome.latent,
                s.invert_to,
                &sched,
                &s.predictor,
                &inputs.latent,
                &config.instruction.pairs,
                &s.guidance,
            )
            .map_err(runtime("sample"))?;
            (g.latent, g.losses)
        }
        None => (outcome.latent.clone(), Vec::new()),
    };
    let eval = evaluate_session(
        &outcome.state,
        &config.instruction,
        &inputs.field,
        &outcome.latent,
        &products.start,
        Some(mask),
    )
    .map_err(runtime("evaluate"))?;
    let report = RunReport {
        seed: config.seed,
        eval,
        skipped_terms: outcome.diagnostics.skipped_terms,
        guidance_losses,
    };
    let preview = encode_preview_png(&inputs.field.forward(&outcome.latent).map_err(runtime("preview"))?);

    let mut out = BTreeMap::new();
    out.insert(Artifact::Trajectory, pretty_json(&outcome.state));
    out.insert(Artifact::Final, encode_dft(&final_latent));
    out.insert(Artifact::Report, pretty_json(&report));
    out.insert(
        Artifact::ReportCsv,
        format!("{}\n{}\n", EvalReport::CSV_HEADER, report.eval.csv_row()).into_bytes(),
    );
    out.insert(Artifact::Events, events_to_jsonl(&outcome.diagnostics.events).into_bytes());
    out.insert(Artifact::Preview, preview);
    Ok((report, out))
}

pub fn write_artifact(dir: &Path, artifact: Artifact, bytes: &[u8]) -> Result<(), AppError> {
    let path = dir.join(artifact.file_name());
    std::fs::write(&path, bytes).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))
}

/// The whole CLI pipeline: read, validate, run every stage, write artifacts.
pub fn run_to_dir(
    config: &Config,
    base: &Path,
    out_dir: &Path,
    mut observer: impl FnMut(&DragEvent),
) -> Result<RunReport, AppError> {
    config.validate()?;
    let inputs = Inputs::decode(config, &config.read_inputs(base)?)?;
    std::fs::create_dir_all(out_dir).map_err(|e| AppError::Runtime(format!("{}: {e}", out_dir.display())))?;

    let seg = segment(&inputs, &config.slic)?;
    log::info!("segmented into {} patches", seg.n_patches());
    write_artifact(out_dir, Artifact::Labels, &labels_artifact(&seg))?;
    let mask = build_mask(&seg, config)?;
    log::info!("mask covers {} pixels", mask.count());
    write_artifact(out_dir, Artifact::Mask, &mask_artifact(&mask))?;
    let products = run_drag(config, &inputs, &seg, &mask, &mut observer)?;
    let (report, artifacts) = finish(config, &inputs, &mask, &products)?;
    for (artifact, bytes) in &artifacts {
        write_artifact(out_dir, *artifact, bytes)?;
    }
    Ok(report)
}

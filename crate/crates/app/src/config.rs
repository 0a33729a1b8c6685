//! Run configuration: one JSON document naming the input files and every
//! hyperparameter. Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dragforge_core::drag::DragOptions;
use dragforge_core::field::{BumpParams, ConvKernel, FeatureField, TabulatedField};
use dragforge_core::grid::GridTensor;
use dragforge_core::mask::DragInstruction;
use dragforge_core::sampler::{GuidanceParams, NoisePredictor, NoiseSchedule};
use dragforge_core::superpixel::SlicParams;
use serde::{Deserialize, Serialize};

use crate::AppError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Latent grid, DFT1 or NPY.
    pub latent: PathBuf,
    /// Feature map SLIC segments, DFT1 or NPY.
    pub features: PathBuf,
    pub field: FieldSpec,
    #[serde(default)]
    pub slic: SlicParams,
    pub instruction: DragInstruction,
    #[serde(default)]
    pub drag: DragOptions,
    /// Inversion before the drag and guided sampling after it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSpec>,
    /// Recorded in the report. The pipeline itself is deterministic.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    Identity,
    LinearConv {
        size: usize,
        in_channels: usize,
        out_channels: usize,
        /// `[ky][kx][in][out]`.
        weights: Vec<f32>,
    },
    AnalyticBump {
        amplitude: f64,
        sigma: f64,
        center: [f64; 2],
        gain: f64,
    },
    Tabulated {
        table: PathBuf,
        gain: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleSpec {
    ScaledLinear { steps: usize },
    Explicit { alpha: Vec<f64> },
}

impl ScheduleSpec {
    pub fn build(&self) -> dragforge_core::Result<NoiseSchedule> {
        match self {
            ScheduleSpec::ScaledLinear { steps } => NoiseSchedule::scaled_linear(*steps),
            ScheduleSpec::Explicit { alpha } => NoiseSchedule::new(alpha.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleSpec,
    pub predictor: NoisePredictor,
    /// Step the input latent is inverted to; the drag runs there.
    #[serde(default = "default_invert_to")]
    pub invert_to: usize,
    #[serde(default)]
    pub guidance: GuidanceParams,
}

fn default_schedule() -> ScheduleSpec {
    ScheduleSpec::ScaledLinear { steps: 50 }
}

fn default_invert_to() -> usize {
    35
}

/// Named binary inputs a config needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputName {
    Latent,
    Features,
    Table,
}

impl InputName {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "latent" => Some(Self::Latent),
            "features" => Some(Self::Features),
            "table" => Some(Self::Table),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Latent => "latent",
            Self::Features => "features",
            Self::Table => "table",
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, AppError> {
        serde_json::from_str(text).map_err(|e| AppError::Invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Inputs and the path each is read from, as written in the config.
    pub fn inputs(&self) -> Vec<(InputName, &Path)> {
        let mut out = vec![
            (InputName::Latent, self.latent.as_path()),
            (InputName::Features, self.features.as_path()),
        ];
        if let FieldSpec::Tabulated { table, .. } = &self.field {
            out.push((InputName::Table, table.as_path()));
        }
        out
    }

    /// Reads every input file, resolving relative paths against `base`.
    pub fn read_inputs(&self, base: &Path) -> Result<BTreeMap<InputName, Vec<u8>>, AppError> {
        let mut files = BTreeMap::new();
        for (name, rel) in self.inputs() {
            let path = base.join(rel);
            let bytes = std::fs::read(&path)
                .map_err(|e| AppError::Invalid(format!("{} input {}: {e}", name.as_str(), path.display())))?;
            files.insert(name, bytes);
        }
        Ok(files)
    }

    /// Parameter checks that need no input data.
    pub fn validate(&self) -> Result<(), AppError> {
        let invalid = |e: dragforge_core::Error| AppError::Invalid(e.to_string());
        self.instruction.validate().map_err(invalid)?;
        self.drag.region_mode.validate().map_err(invalid)?;
        if !(self.drag.lambda >= 0.0 && self.drag.lambda.is_finite()) {
            return Err(AppError::Invalid("drag.lambda must be non-negative".into()));
        }
        if self.slic.n_patches == 0 {
            return Err(AppError::Invalid("slic.n_patches must be at least 1".into()));
        }
        if !(self.slic.compactness > 0.0 && self.slic.compactness.is_finite()) {
            return Err(AppError::Invalid("slic.compactness must be positive".into()));
        }
        if let Some(s) = &self.sampler {
            let sched = s.schedule.build().map_err(invalid)?;
            if s.invert_to > sched.steps {
                return Err(AppError::Invalid(format!(
                    "sampler.invert_to ({}) exceeds the schedule's {} steps",
                    s.invert_to, sched.steps
                )));
            }
            if let NoisePredictor::Tabulated(t) = &s.predictor {
                if t.scale.len() != sched.steps + 1 {
                    return Err(AppError::Invalid(format!(
                        "tabulated predictor needs {} scales, got {}",
                        sched.steps + 1,
                        t.scale.len()
                    )));
                }
            }
            let g = &s.guidance;
            if !(g.temperature > 0.0 && g.scale.is_finite()) || g.window[0] > g.window[1] {
                return Err(AppError::Invalid(
                    "guidance needs a positive temperature, a finite scale and window[0] <= window[1]".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn build_field(&self, table: Option<GridTensor>) -> Result<FeatureField, AppError> {
        let invalid = |e: dragforge_core::Error| AppError::Invalid(format!("field: {e}"));
        Ok(match &self.field {
            FieldSpec::Identity => FeatureField::Identity,
            FieldSpec::LinearConv {
                size,
                in_channels,
                out_channels,
                weights,
            } => FeatureField::LinearConv(
                ConvKernel::new(*size, *in_channels, *out_channels, weights.clone()).map_err(invalid)?,
            ),
            FieldSpec::AnalyticBump {
                amplitude,
                sigma,
                center,
                gain,
            } => FeatureField::analytic_bump(BumpParams {
                amplitude: *amplitude,
                sigma: *sigma,
                center: *center,
                gain: *gain,
            })
            .map_err(invalid)?,
            FieldSpec::Tabulated { gain, .. } => {
                let table = table.ok_or_else(|| AppError::Invalid("tabulated field needs a table input".into()))?;
                FeatureField::Tabulated(TabulatedField::new(table, *gain).map_err(invalid)?)
            }
        })
    }
}

//! Writes synthetic scenes as a config plus input files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dragforge_core::drag::RegionMode;
use dragforge_core::formats::{encode_dft, encode_npy};
use dragforge_core::scenes::{bump_scene, random_bump_scene, two_material_scene, DragScene};
use dragforge_core::FeatureField;

use crate::config::{Config, FieldSpec};
use crate::AppError;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SceneKind {
    /// 64x64 bump dragged 8 px right.
    Bump,
    /// Bump at a seeded position, dragged in a seeded direction.
    RandomBump,
    /// Bump next to a seeded texture band.
    TwoMaterial,
}

pub fn build_scene(kind: SceneKind, seed: u64, mode: RegionMode) -> Result<DragScene, AppError> {
    let scene = match kind {
        SceneKind::Bump => bump_scene(),
        SceneKind::RandomBump => random_bump_scene(seed),
        SceneKind::TwoMaterial => two_material_scene(seed, mode),
    }
    .map_err(|e| AppError::Runtime(e.to_string()))?;
    Ok(DragScene {
        options: dragforge_core::drag::DragOptions {
            region_mode: mode,
            ..scene.options
        },
        ..scene
    })
}

/// Config and file contents (by file name) for a scene.
pub fn scenario_files(scene: &DragScene, seed: u64) -> (Config, BTreeMap<String, Vec<u8>>) {
    let mut files = BTreeMap::new();
    let field = match &scene.field {
        FeatureField::Identity => FieldSpec::Identity,
        FeatureField::LinearConv(k) => FieldSpec::LinearConv {
            size: k.size(),
            in_channels: k.in_channels(),
            out_channels: k.out_channels(),
            weights: k.weights().to_vec(),
        },
        FeatureField::AnalyticBump(b) => FieldSpec::AnalyticBump {
            amplitude: b.amplitude,
            sigma: b.sigma,
            center: b.center,
            gain: b.gain,
        },
        FeatureField::Tabulated(t) => {
            files.insert("table.dft".to_string(), encode_dft(t.table()));
            FieldSpec::Tabulated {
                table: PathBuf::from("table.dft"),
                gain: t.gain(),
            }
        }
    };
    files.insert("latent.dft".to_string(), encode_dft(&scene.latent));
    files.insert("features.npy".to_string(), encode_npy(&scene.segmentation_features));
    let config = Config {
        latent: PathBuf::from("latent.dft"),
        features: PathBuf::from("features.npy"),
        field,
        slic: scene.slic,
        instruction: scene.instruction.clone(),
        drag: scene.options,
        sampler: None,
        seed,
    };
    let mut text = serde_json::to_vec_pretty(&config).expect("config serializes");
    text.push(b'\n');
    files.insert(CONFIG_FILE.to_string(), text);
    (config, files)
}

pub fn write_scenario(scene: &DragScene, seed: u64, dir: &Path) -> Result<PathBuf, AppError> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::Runtime(format!("{}: {e}", dir.display())))?;
    let (_, files) = scenario_files(scene, seed);
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(dir.join(CONFIG_FILE))
}

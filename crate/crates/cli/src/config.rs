//! Run configuration: one JSON document covering every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxcorr::dvc::DvcConfig;
use voxcorr::preprocess::{CleanSpec, MANIFEST_FILE};
use voxcorr::regnet::{ModelConfig, TrainConfig};
use voxcorr::tpms::{DeformSpec, DegradeSpec, PhantomSpec, TpmsSpec, DEFAULT_C_SWEEP};
use voxcorr::Dims;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Root for every artifact the pipeline writes.
    pub workspace: PathBuf,
    /// Dataset manifest; `<workspace>/dataset/manifest.json` when unset.
    pub manifest: Option<PathBuf>,
    /// Model checkpoint; `<workspace>/model/model.vmck` when unset.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("voxcorr_work"),
            manifest: None,
            checkpoint: None,
        }
    }
}

/// Grid and part geometry shared by every generated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomLayout {
    /// Cubic grid edge in voxels.
    pub grid: usize,
    pub voxel_size_um: f64,
    pub plate_voxels: usize,
    pub cell_size_mm: f64,
    pub wall_thickness_mm: f64,
    pub part_extent_mm: f64,
    /// Re-fit the band half-width per C so walls keep the nominal thickness.
    pub calibrate_band: bool,
    /// Band half-width used when calibration is off.
    pub band_halfwidth: f64,
}

impl Default for PhantomLayout {
    fn default() -> Self {
        let desk = PhantomSpec::desk(0.0);
        Self {
            grid: desk.dims.nx,
            voxel_size_um: desk.tpms.voxel_size_um,
            plate_voxels: desk.plate_voxels,
            cell_size_mm: desk.tpms.cell_size_mm,
            wall_thickness_mm: desk.tpms.wall_thickness_mm,
            part_extent_mm: desk.tpms.part_extent_mm,
            calibrate_band: true,
            band_halfwidth: desk.tpms.band_halfwidth,
        }
    }
}

impl PhantomLayout {
    pub fn spec(&self, c_param: f64) -> voxcorr::Result<PhantomSpec> {
        let spec = PhantomSpec {
            dims: Dims::cube(self.grid),
            tpms: TpmsSpec {
                c_param,
                cell_size_mm: self.cell_size_mm,
                wall_thickness_mm: self.wall_thickness_mm,
                part_extent_mm: self.part_extent_mm,
                voxel_size_um: self.voxel_size_um,
                band_halfwidth: self.band_halfwidth,
            },
            plate_voxels: self.plate_voxels,
            markers: Vec::new(),
        };
        spec.tpms.validate()?;
        if self.calibrate_band {
            spec.with_calibrated_band()
        } else {
            Ok(spec)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    /// Patch edge; the model's training patch when unset.
    pub patch_size: Option<usize>,
    pub stride: usize,
    /// Blending window sigma in voxels.
    pub sigma: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            patch_size: None,
            stride: 16,
            sigma: 8.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    /// Level-set values swept by `generate`.
    pub c_values: Vec<f64>,
    pub phantom: PhantomLayout,
    pub deform: DeformSpec,
    pub degrade: DegradeSpec,
    pub clean: CleanSpec,
    /// Common grid of the dataset; the raw grid when unset.
    pub target_dims: Option<Dims>,
    #[serde(deserialize_with = "over_desk_model")]
    pub model: ModelConfig,
    #[serde(deserialize_with = "over_desk_train")]
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub dvc: DvcConfig,
    /// When set, replaces the deformation, degradation and training seeds.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            c_values: DEFAULT_C_SWEEP.to_vec(),
            phantom: PhantomLayout::default(),
            deform: DeformSpec::default(),
            degrade: DegradeSpec::default(),
            clean: CleanSpec::default(),
            target_dims: None,
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
            infer: InferConfig::default(),
            dvc: DvcConfig::default(),
            seed: None,
        }
    }
}

/// Deserializes a partial object on top of `base`, so unset keys keep the
/// base value rather than the type's own default.
fn overlay<'de, D, T>(d: D, base: T) -> Result<T, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Serialize + serde::de::DeserializeOwned,
{
    use serde::de::Error;
    let patch = serde_json::Value::deserialize(d)?;
    let mut merged = serde_json::to_value(base).map_err(D::Error::custom)?;
    match (merged.as_object_mut(), patch) {
        (Some(m), serde_json::Value::Object(p)) => m.extend(p),
        (_, other) => merged = other,
    }
    serde_json::from_value(merged).map_err(D::Error::custom)
}

fn over_desk_model<'de, D: serde::Deserializer<'de>>(d: D) -> Result<ModelConfig, D::Error> {
    overlay(d, ModelConfig::desk())
}

fn over_desk_train<'de, D: serde::Deserializer<'de>>(d: D) -> Result<TrainConfig, D::Error> {
    overlay(d, TrainConfig::desk())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(c) = self.c_values.iter().find(|c| !(-1.0..=1.0).contains(*c)) {
            return Err(CliError::Validation(format!("C value {c} outside [-1, 1]")));
        }
        let mut ids: Vec<String> = self.c_values.iter().map(|&c| sample_id(c)).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.c_values.len() {
            return Err(CliError::Validation("duplicate C values".into()));
        }
        self.deform.validate()?;
        self.degrade.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.dvc.validate()?;
        Ok(())
    }

    /// Push the master seed, if any, into the component seeds.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.deform.seed = s;
            self.degrade.seed = s.wrapping_add(0x5eed);
            self.train.seed = s;
        }
    }

    pub fn raw_dir(&self) -> PathBuf {
        self.paths.workspace.join("raw")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths
            .manifest
            .clone()
            .unwrap_or_else(|| self.paths.workspace.join("dataset").join(MANIFEST_FILE))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.workspace.join("model").join("model.vmck"))
    }

    pub fn registered_dir(&self) -> PathBuf {
        self.paths.workspace.join("registered")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.paths.workspace.join("reports")
    }
}

/// Stable sample id for a level-set value, e.g. `gyroid_c-0.60`.
pub fn sample_id(c: f64) -> String {
    // avoid "-0.00"
    let c = if c == 0.0 { 0.0 } else { c };
    format!("gyroid_c{c:.2}")
}

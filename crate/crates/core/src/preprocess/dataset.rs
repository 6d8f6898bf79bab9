use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clean::{clean_xct, coarse_align, CleanSpec};
use crate::volume::resample::crop_or_pad_field;
use crate::volume::{crop_or_pad, minmax_normalize, vvol};
use crate::{Dims, DisplacementField, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Split used for the seven-sample C sweep: four train, two val, one test.
pub fn sweep_split(c_param: f64) -> Option<Split> {
    let is = |v: f64| (c_param - v).abs() < 1e-6;
    if [0.0, -0.2, -0.3, -0.5].into_iter().any(is) {
        Some(Split::Train)
    } else if [-0.1, -0.4].into_iter().any(is) {
        Some(Split::Val)
    } else if is(-0.6) {
        Some(Split::Test)
    } else {
        None
    }
}

/// Known C values keep their fixed split; the rest go round-robin 3:1:1 in id order.
pub fn default_split_assignment(samples: &[RawSample]) -> BTreeMap<String, Split> {
    let mut out = BTreeMap::new();
    let mut rest: Vec<&RawSample> = Vec::new();
    for s in samples {
        match sweep_split(s.c_param) {
            Some(sp) => {
                out.insert(s.id.clone(), sp);
            }
            None => rest.push(s),
        }
    }
    rest.sort_by(|a, b| a.id.cmp(&b.id));
    for (i, s) in rest.into_iter().enumerate() {
        let sp = match i % 5 {
            0..=2 => Split::Train,
            3 => Split::Val,
            _ => Split::Test,
        };
        out.insert(s.id.clone(), sp);
    }
    out
}

/// One unprocessed CAD/XCT pair on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub id: String,
    pub c_param: f64,
    pub cad_path: PathBuf,
    pub xct_path: PathBuf,
    /// Ground-truth XCT→CAD field on the raw grid, synthetic data only.
    pub gt_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub c_param: f64,
    pub cad_path: PathBuf,
    pub xct_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_disp_path: Option<PathBuf>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<ManifestSample>,
    pub target_dims: Dims,
    pub created_at: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Paths are stored relative to the manifest's directory.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::at_path(path, e))
    }

    /// Reads a manifest and resolves its relative paths against the manifest's directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for s in &mut m.samples {
            s.cad_path = base.join(&s.cad_path);
            s.xct_path = base.join(&s.xct_path);
            if let Some(g) = &mut s.gt_disp_path {
                *g = base.join(&*g);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample id {}", s.id)));
            }
        }
        self.target_dims.ensure_positive()
    }

    /// Training needs all three splits populated.
    pub fn ensure_trainable(&self) -> Result<()> {
        for sp in [Split::Train, Split::Val, Split::Test] {
            if self.count(sp) == 0 {
                return Err(Error::InvalidArgument(format!("{sp} split is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    id: &'a str,
    c_param: f64,
    clean: &'a CleanSpec,
    otsu_threshold: f32,
    coarse_shift: [i64; 3],
    target_dims: Dims,
    source: &'a RawSample,
}

struct Prepared {
    sample: ManifestSample,
}

fn prepare_one(raw: &RawSample, split: Split, target: Dims, clean: &CleanSpec, out_dir: &Path) -> Result<Prepared> {
    let cad = vvol::read_scalar(&raw.cad_path)?;
    let xct = vvol::read_scalar(&raw.xct_path)?;
    xct.dims().ensure_same(&cad.dims(), "XCT grid vs CAD grid")?;

    let cleaned = clean_xct(&xct, clean)?;
    let (aligned, shift) = coarse_align(&cleaned.gray, &cad)?;
    let (xlo, _) = aligned.min_max();
    let (clo, _) = cad.min_max();
    let xct_out = minmax_normalize(&crop_or_pad(&aligned, target, xlo)?)?;
    let cad_out = minmax_normalize(&crop_or_pad(&cad, target, clo)?)?;

    let cad_name = format!("{}_cad.vvol", raw.id);
    let xct_name = format!("{}_xct.vvol", raw.id);
    let meta = format!("{{\"id\":\"{}\"}}", raw.id);
    vvol::write_scalar(out_dir.join(&cad_name), &cad_out, &meta)?;
    vvol::write_scalar(out_dir.join(&xct_name), &xct_out, &meta)?;

    let gt_name = match &raw.gt_path {
        Some(p) => {
            let gt = vvol::read_field(p)?;
            gt.dims().ensure_same(&cad.dims(), "ground-truth grid vs CAD grid")?;
            // translating the moving image by s adds s to every displacement
            let mut data = gt.data().to_vec();
            let n = gt.dims().len();
            for (c, s) in shift.iter().enumerate() {
                for v in &mut data[c * n..(c + 1) * n] {
                    *v += *s as f32;
                }
            }
            let shifted = DisplacementField::new(gt.dims(), gt.voxel_size(), data)?;
            let name = format!("{}_gt.vvol", raw.id);
            vvol::write_field(out_dir.join(&name), &crop_or_pad_field(&shifted, target), &meta)?;
            Some(PathBuf::from(name))
        }
        None => None,
    };

    let sidecar = Sidecar {
        id: &raw.id,
        c_param: raw.c_param,
        clean,
        otsu_threshold: cleaned.threshold,
        coarse_shift: shift,
        target_dims: target,
        source: raw,
    };
    let side_path = out_dir.join(format!("{}.json", raw.id));
    fs::write(&side_path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::at_path(&side_path, e))?;

    Ok(Prepared {
        sample: ManifestSample {
            id: raw.id.clone(),
            c_param: raw.c_param,
            cad_path: PathBuf::from(cad_name),
            xct_path: PathBuf::from(xct_name),
            gt_disp_path: gt_name,
            split,
        },
    })
}

/// Clean, align, crop/pad and normalize every pair, then write `manifest.json`.
///
/// Samples are processed in parallel; the manifest lists them in id order.
pub fn build_dataset(
    samples: &[RawSample],
    target_dims: Dims,
    split_assignment: &BTreeMap<String, Split>,
    out_dir: impl AsRef<Path>,
    clean: &CleanSpec,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to build a dataset from".into()));
    }
    target_dims.ensure_positive()?;
    let mut ids = BTreeSet::new();
    for s in samples {
        if !ids.insert(s.id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate sample id {}", s.id)));
        }
        if !split_assignment.contains_key(&s.id) {
            return Err(Error::InvalidArgument(format!("sample {} has no split", s.id)));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::at_path(out_dir, e))?;

    let mut ordered: Vec<&RawSample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let prepared: Vec<Result<Prepared>> = ordered
        .par_iter()
        .map(|raw| {
            prepare_one(raw, split_assignment[&raw.id], target_dims, clean, out_dir).map_err(|e| e.in_sample(&raw.id))
        })
        .collect();
    let mut entries = Vec::with_capacity(prepared.len());
    for p in prepared {
        entries.push(p?.sample);
    }

    let created_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_default();
    let manifest = DatasetManifest {
        samples: entries,
        target_dims,
        created_at,
    };
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_sweep_split_is_four_two_one() {
        let c = crate::tpms::DEFAULT_C_SWEEP;
        let splits: Vec<Split> = c.iter().map(|&v| sweep_split(v).unwrap()).collect();
        let n = |s| splits.iter().filter(|&&x| x == s).count();
        assert_eq!((n(Split::Train), n(Split::Val), n(Split::Test)), (4, 2, 1));
        assert_eq!(sweep_split(0.3), None);
    }

    #[test]
    fn fallback_split_round_robin() {
        let raws: Vec<RawSample> = (0..10)
            .map(|i| RawSample {
                id: format!("s{i:02}"),
                c_param: 0.05 + i as f64,
                cad_path: "a".into(),
                xct_path: "b".into(),
                gt_path: None,
            })
            .collect();
        let a = default_split_assignment(&raws);
        let n = |s| a.values().filter(|&&x| x == s).count();
        assert_eq!((n(Split::Train), n(Split::Val), n(Split::Test)), (6, 2, 2));
    }

    #[test]
    fn empty_sample_list_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = build_dataset(&[], Dims::cube(8), &BTreeMap::new(), dir.path(), &CleanSpec::default());
        assert!(r.is_err());
    }
}

//! Overlap metrics, endpoint error, evaluation reports and slice exports.

mod image;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::preprocess::binarize;
use crate::{BinaryVolume, Dims, DisplacementField, Error, Result, ScalarVolume};

pub use image::{
    bdm_slice_images, export_bdm_slices, export_displacement_magnitude, export_overlay_slices, magnitude_slice_images,
    overlay_slice_images, Image, SlicePlane,
};

/// Value of the difference map outside the union of both foregrounds.
pub const BDM_OUTSIDE: i8 = i8::MIN;

/// Dice overlap in percent. Two empty masks agree perfectly (100).
pub fn dice(a: &BinaryVolume, b: &BinaryVolume) -> Result<f64> {
    a.dims().ensure_same(&b.dims(), "dice")?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.mask().iter().zip(b.mask()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * inter as f64 / (na + nb) as f64)
}

/// Percentages of the foreground union falling in each difference class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdmSummary {
    /// Material in CAD but missing from XCT.
    pub minus1: f64,
    pub zero: f64,
    /// Excess material present only in XCT.
    pub plus1: f64,
}

/// Voxel-wise `xct - cad` over the foreground union.
#[derive(Clone, Debug, PartialEq)]
pub struct BdmResult {
    pub dims: Dims,
    /// `-1`, `0` or `+1` on the union, [`BDM_OUTSIDE`] elsewhere.
    pub map: Vec<i8>,
    pub summary: BdmSummary,
}

pub fn bdm(xct_bin: &BinaryVolume, cad_bin: &BinaryVolume) -> Result<BdmResult> {
    let dims = xct_bin.dims();
    dims.ensure_same(&cad_bin.dims(), "bdm")?;
    let mut counts = [0usize; 3];
    let map: Vec<i8> = xct_bin
        .mask()
        .iter()
        .zip(cad_bin.mask())
        .map(|(&x, &c)| {
            if !x && !c {
                return BDM_OUTSIDE;
            }
            let v = x as i8 - c as i8;
            counts[(v + 1) as usize] += 1;
            v
        })
        .collect();
    let union: usize = counts.iter().sum();
    if union == 0 {
        return Err(Error::EmptyMask("bdm: foreground union is empty".into()));
    }
    let pct = |n: usize| 100.0 * n as f64 / union as f64;
    Ok(BdmResult {
        dims,
        map,
        summary: BdmSummary {
            minus1: pct(counts[0]),
            zero: pct(counts[1]),
            plus1: pct(counts[2]),
        },
    })
}

/// Mean and max Euclidean distance between two fields over a mask.
pub fn endpoint_error(pred: &DisplacementField, gt: &DisplacementField, mask: &BinaryVolume) -> Result<(f64, f64)> {
    pred.dims().ensure_same(&gt.dims(), "endpoint_error")?;
    pred.dims().ensure_same(&mask.dims(), "endpoint_error mask")?;
    let (mut sum, mut max, mut n) = (0.0f64, 0.0f64, 0usize);
    for (i, &m) in mask.mask().iter().enumerate() {
        if !m {
            continue;
        }
        let (p, g) = (pred.vector(i), gt.vector(i));
        let e = (0..3)
            .map(|c| (f64::from(p[c]) - f64::from(g[c])).powi(2))
            .sum::<f64>()
            .sqrt();
        sum += e;
        max = max.max(e);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask("endpoint_error: mask is empty".into()));
    }
    Ok((sum / n as f64, max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Learned,
    Baseline,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Learned => "learned",
            Method::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_id: String,
    pub method: Method,
    #[serde(rename = "dice_before_pct")]
    pub dice_before: f64,
    #[serde(rename = "dice_after_pct")]
    pub dice_after: f64,
    pub bdm_before: BdmSummary,
    pub bdm_after: BdmSummary,
    #[serde(rename = "mean_epe_vox")]
    pub mean_epe: Option<f64>,
    #[serde(rename = "max_epe_vox")]
    pub max_epe: Option<f64>,
    pub runtime_sec: f64,
}

impl EvalReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::at_path(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Identity of the run being evaluated.
#[derive(Clone, Debug)]
pub struct RunInfo {
    pub sample_id: String,
    pub method: Method,
    /// Wall time of the registration call itself.
    pub runtime_sec: f64,
}

/// Before/after overlap of a registration result.
///
/// Every volume is binarised with its own global Otsu threshold. The
/// endpoint error, when ground truth is given, is taken over the CAD
/// foreground, where the field is defined.
pub fn evaluate_pair(
    cad: &ScalarVolume,
    xct: &ScalarVolume,
    moved: &ScalarVolume,
    disp: &DisplacementField,
    gt: Option<&DisplacementField>,
    run: RunInfo,
) -> Result<EvalReport> {
    let dims = cad.dims();
    dims.ensure_same(&xct.dims(), "evaluate_pair xct")?;
    dims.ensure_same(&moved.dims(), "evaluate_pair moved")?;
    dims.ensure_same(&disp.dims(), "evaluate_pair displacement")?;
    let cad_bin = binarize(cad);
    let xct_bin = binarize(xct);
    let moved_bin = binarize(moved);
    let (mean_epe, max_epe) = match gt {
        Some(gt) => {
            let (m, x) = endpoint_error(disp, gt, &cad_bin)?;
            (Some(m), Some(x))
        }
        None => (None, None),
    };
    Ok(EvalReport {
        sample_id: run.sample_id,
        method: run.method,
        dice_before: dice(&xct_bin, &cad_bin)?,
        dice_after: dice(&moved_bin, &cad_bin)?,
        bdm_before: bdm(&xct_bin, &cad_bin)?.summary,
        bdm_after: bdm(&moved_bin, &cad_bin)?.summary,
        mean_epe,
        max_epe,
        runtime_sec: run.runtime_sec,
    })
}

/// Plain-text table with one before row per sample and one row per method.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<10} {:>8} {:>8} {:>8} {:>8} {:>9} {:>8}",
        "sample", "stage", "dice%", "bdm-1%", "bdm0%", "bdm+1%", "epe", "time_s"
    );
    let mut last_before: Option<&str> = None;
    for r in reports {
        if last_before != Some(r.sample_id.as_str()) {
            let b = &r.bdm_before;
            let _ = writeln!(
                out,
                "{:<12} {:<10} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>9} {:>8}",
                r.sample_id, "before", r.dice_before, b.minus1, b.zero, b.plus1, "-", "-"
            );
            last_before = Some(&r.sample_id);
        }
        let a = &r.bdm_after;
        let epe = r.mean_epe.map_or_else(|| "-".to_string(), |e| format!("{e:.3}"));
        let _ = writeln!(
            out,
            "{:<12} {:<10} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>9} {:>8.2}",
            r.sample_id,
            r.method.to_string(),
            r.dice_after,
            a.minus1,
            a.zero,
            a.plus1,
            epe,
            r.runtime_sec
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::VoxelSize;

    fn mask(n: usize, on: &[usize]) -> BinaryVolume {
        let mut m = BinaryVolume::empty(Dims::new(n, 1, 1), VoxelSize::iso(1.0));
        for &i in on {
            m.mask_mut()[i] = true;
        }
        m
    }

    #[test]
    fn dice_hand_cases() {
        let a = mask(16, &[0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(dice(&a, &a).unwrap(), 100.0);
        let b = mask(16, &[8, 9, 10, 11, 12, 13, 14, 15]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = mask(16, &[4, 5, 6, 7, 8, 9, 10, 11]);
        assert_eq!(dice(&a, &c).unwrap(), 50.0);
        let e = mask(16, &[]);
        assert_eq!(dice(&e, &e).unwrap(), 100.0);
    }

    #[test]
    fn dice_rejects_mismatched_dims() {
        let a = mask(4, &[0]);
        let b = mask(5, &[0]);
        assert!(matches!(dice(&a, &b), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn bdm_hand_cases() {
        let cad = mask(16, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let same = bdm(&cad, &cad).unwrap().summary;
        assert_eq!((same.minus1, same.zero, same.plus1), (0.0, 100.0, 0.0));
        let xct = mask(16, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let r = bdm(&xct, &cad).unwrap();
        assert_eq!((r.summary.minus1, r.summary.zero, r.summary.plus1), (0.0, 80.0, 20.0));
        assert_eq!(r.map[8], 1);
        assert_eq!(r.map[12], BDM_OUTSIDE);
        let e = mask(16, &[]);
        assert!(matches!(bdm(&e, &e), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn epe_cases() {
        let d = Dims::cube(4);
        let v = VoxelSize::iso(1.0);
        let gt = DisplacementField::from_fn(d, v, |x, y, z| [x as f32 * 0.1, y as f32, -(z as f32)]);
        let full = BinaryVolume::full(d, v);
        assert_eq!(endpoint_error(&gt, &gt, &full).unwrap(), (0.0, 0.0));
        let mut shifted = gt.clone();
        for u in shifted.channel_mut(0) {
            *u += 1.0;
        }
        let (mean, max) = endpoint_error(&shifted, &gt, &full).unwrap();
        assert!((mean - 1.0).abs() < 1e-6 && (max - 1.0).abs() < 1e-6);
        assert!(endpoint_error(&gt, &gt, &BinaryVolume::empty(d, v)).is_err());
    }

    fn pair_volumes() -> (ScalarVolume, ScalarVolume) {
        let d = Dims::cube(12);
        let v = VoxelSize::iso(1.0);
        let cad = ScalarVolume::from_fn(d, v, |x, y, z| {
            if (3..9).contains(&x) && (3..9).contains(&y) && z > 2 {
                1.0
            } else {
                0.0
            }
        });
        let xct = ScalarVolume::from_fn(d, v, |x, y, z| {
            if (4..10).contains(&x) && (3..9).contains(&y) && z > 2 {
                0.8
            } else {
                0.1
            }
        });
        (cad, xct)
    }

    #[test]
    fn perfect_and_noop_registration() {
        let (cad, xct) = pair_volumes();
        let zero = DisplacementField::zeros(cad.dims(), cad.voxel_size());
        let run = |m| RunInfo {
            sample_id: "s".into(),
            method: m,
            runtime_sec: 0.0,
        };
        let perfect = evaluate_pair(&cad, &xct, &cad, &zero, None, run(Method::Learned)).unwrap();
        assert_eq!(perfect.dice_after, 100.0);
        assert_eq!(perfect.bdm_after.zero, 100.0);
        assert!(perfect.dice_before < 100.0);
        let noop = evaluate_pair(&cad, &xct, &xct, &zero, Some(&zero), run(Method::Baseline)).unwrap();
        assert_eq!(noop.dice_after, noop.dice_before);
        assert_eq!(noop.bdm_after, noop.bdm_before);
        assert_eq!(noop.mean_epe, Some(0.0));
    }

    #[test]
    fn report_json_schema_keys() {
        let r = EvalReport {
            sample_id: "c-0.6".into(),
            method: Method::Learned,
            dice_before: 82.0,
            dice_after: 94.7,
            bdm_before: BdmSummary {
                minus1: 20.5,
                zero: 68.27,
                plus1: 11.23,
            },
            bdm_after: BdmSummary {
                minus1: 2.57,
                zero: 89.93,
                plus1: 7.5,
            },
            mean_epe: None,
            max_epe: None,
            runtime_sec: 1.5,
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in [
            "sample_id",
            "method",
            "dice_before_pct",
            "dice_after_pct",
            "bdm_before",
            "bdm_after",
            "mean_epe_vox",
            "max_epe_vox",
            "runtime_sec",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["method"], "learned");
        assert!(v["mean_epe_vox"].is_null());
        assert_eq!(v["bdm_after"]["zero"], 89.93);
        let back: EvalReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn table_renders_fixture_rows() {
        let r = EvalReport {
            sample_id: "c-0.6".into(),
            method: Method::Learned,
            dice_before: 82.0,
            dice_after: 94.7,
            bdm_before: BdmSummary {
                minus1: 20.5,
                zero: 68.27,
                plus1: 11.23,
            },
            bdm_after: BdmSummary {
                minus1: 2.57,
                zero: 89.93,
                plus1: 7.5,
            },
            mean_epe: None,
            max_epe: None,
            runtime_sec: 1.5,
        };
        let t = render_table(&[r]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        let before: Vec<&str> = lines[1].split_whitespace().collect();
        assert_eq!(before[2..6], ["82.00", "20.50", "68.27", "11.23"]);
        let after: Vec<&str> = lines[2].split_whitespace().collect();
        assert_eq!(after[1..6], ["learned", "94.70", "2.57", "89.93", "7.50"]);
    }
}

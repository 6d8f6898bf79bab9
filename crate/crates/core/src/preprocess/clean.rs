use serde::{Deserialize, Serialize};

use super::components::largest_component;
use super::fill::fill_enclosed_voids;
use super::morph::{morph_op, Connectivity, MorphOp};
use super::otsu::{otsu_threshold, DEFAULT_BINS};
use crate::volume::translate;
use crate::{BinaryVolume, Error, Result, ScalarVolume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanSpec {
    pub erosion_radius: usize,
    pub opening_radius: usize,
    pub connectivity: Connectivity,
}

impl Default for CleanSpec {
    fn default() -> Self {
        Self {
            erosion_radius: 1,
            opening_radius: 1,
            connectivity: Connectivity::TwentySix,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CleanedXct {
    pub gray: ScalarVolume,
    pub bin: BinaryVolume,
    pub threshold: f32,
}

/// Otsu → erode → largest component → dilate → open → fill enclosed voids.
///
/// The grayscale output keeps the original intensities inside the cleaned
/// mask and sets everything else to the volume minimum.
pub fn clean_xct(vol: &ScalarVolume, spec: &CleanSpec) -> Result<CleanedXct> {
    let (threshold, otsu) = otsu_threshold(vol, DEFAULT_BINS)?;
    let conn = spec.connectivity;
    let eroded = morph_op(&otsu, MorphOp::Erode, spec.erosion_radius, conn);
    let part = largest_component(&eroded, conn)?;
    let restored = morph_op(&part, MorphOp::Dilate, spec.erosion_radius, conn);
    // dilation can spill past the Otsu mask; clip it back
    let restored = BinaryVolume::new(
        restored.dims(),
        restored.voxel_size(),
        restored.mask().iter().zip(otsu.mask()).map(|(&a, &b)| a && b).collect(),
    )?;
    let opened = morph_op(&restored, MorphOp::Open, spec.opening_radius, conn);
    if opened.count() == 0 {
        return Err(Error::EmptyMask("cleaned foreground vanished after opening".into()));
    }
    let bin = fill_enclosed_voids(&opened);
    let (lo, _) = vol.min_max();
    let gray = vol.masked(&bin, lo)?;
    Ok(CleanedXct { gray, bin, threshold })
}

/// Mean voxel coordinate `[x, y, z]` of the foreground.
pub fn foreground_centroid(bin: &BinaryVolume) -> Option<[f64; 3]> {
    let d = bin.dims();
    let mut acc = [0f64; 3];
    let mut n = 0usize;
    for (i, &m) in bin.mask().iter().enumerate() {
        if m {
            let (x, y, z) = d.coords(i);
            acc[0] += x as f64;
            acc[1] += y as f64;
            acc[2] += z as f64;
            n += 1;
        }
    }
    (n > 0).then(|| acc.map(|a| a / n as f64))
}

/// Integer translation of `moving` that matches its Otsu-foreground centroid to `fixed`'s.
pub fn coarse_align(moving: &ScalarVolume, fixed: &ScalarVolume) -> Result<(ScalarVolume, [i64; 3])> {
    let (_, mb) = otsu_threshold(moving, DEFAULT_BINS)?;
    let (_, fb) = otsu_threshold(fixed, DEFAULT_BINS)?;
    let cm = foreground_centroid(&mb).ok_or_else(|| Error::EmptyMask("moving foreground".into()))?;
    let cf = foreground_centroid(&fb).ok_or_else(|| Error::EmptyMask("fixed foreground".into()))?;
    let shift = [0, 1, 2].map(|a| (cf[a] - cm[a]).round() as i64);
    let (lo, _) = moving.min_max();
    Ok((translate(moving, shift, lo), shift))
}

use serde::{Deserialize, Serialize};

use crate::{BinaryVolume, Dims, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours; radius-r structuring element is the L1 ball.
    #[serde(rename = "6")]
    Six,
    /// Face, edge and corner neighbours; radius-r element is the L∞ ball (cube).
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::InvalidArgument(format!(
                "connectivity must be 6 or 26, got {other}"
            ))),
        }
    }

    pub(crate) fn offsets(self) -> Vec<[isize; 3]> {
        let mut v = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let l1 = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => l1 == 1,
                        Connectivity::TwentySix => l1 > 0,
                    };
                    if keep {
                        v.push([dx, dy, dz]);
                    }
                }
            }
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    Erode,
    Dilate,
    /// Erode then dilate.
    Open,
    /// Dilate then erode.
    Close,
}

/// Binary morphology restricted to the grid: voxels outside the volume are
/// ignored by both erosion and dilation, which keeps opening anti-extensive
/// and closing extensive right up to the border.
pub fn morph_op(bin: &BinaryVolume, op: MorphOp, radius: usize, conn: Connectivity) -> BinaryVolume {
    if radius == 0 {
        return bin.clone();
    }
    let d = bin.dims();
    let mut m = bin.mask().to_vec();
    match op {
        MorphOp::Erode => apply(&mut m, d, radius, conn, false),
        MorphOp::Dilate => apply(&mut m, d, radius, conn, true),
        MorphOp::Open => {
            apply(&mut m, d, radius, conn, false);
            apply(&mut m, d, radius, conn, true);
        }
        MorphOp::Close => {
            apply(&mut m, d, radius, conn, true);
            apply(&mut m, d, radius, conn, false);
        }
    }
    BinaryVolume::new(d, bin.voxel_size(), m).expect("same geometry")
}

/// `grow = true` dilates, otherwise erodes.
fn apply(m: &mut Vec<bool>, d: Dims, radius: usize, conn: Connectivity, grow: bool) {
    match conn {
        Connectivity::Six => {
            for _ in 0..radius {
                cross_step(m, d, grow);
            }
        }
        Connectivity::TwentySix => {
            for axis in 0..3 {
                line_filter(m, d, axis, radius, grow);
            }
        }
    }
}

fn cross_step(m: &mut [bool], d: Dims, grow: bool) {
    let src = m.to_vec();
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let i = d.index(x, y, z);
                // dilation sets a voxel if any neighbour is set; erosion clears it if any is clear
                let target = grow;
                if src[i] == target {
                    continue;
                }
                let hit = (x > 0 && src[i - 1] == target)
                    || (x + 1 < d.nx && src[i + 1] == target)
                    || (y > 0 && src[i - d.nx] == target)
                    || (y + 1 < d.ny && src[i + d.nx] == target)
                    || (z > 0 && src[i - d.nx * d.ny] == target)
                    || (z + 1 < d.nz && src[i + d.nx * d.ny] == target);
                if hit {
                    m[i] = target;
                }
            }
        }
    }
}

/// Running any/all over a window of half-width `r` along one axis.
fn line_filter(m: &mut [bool], d: Dims, axis: usize, r: usize, grow: bool) {
    let ext = d.as_array()[axis];
    let stride = [1, d.nx, d.nx * d.ny][axis];
    let mut prefix = vec![0u32; ext + 1];
    let mut line = vec![false; ext];
    let target = grow;
    let [nx, ny, nz] = d.as_array();
    for z in 0..if axis == 2 { 1 } else { nz } {
        for y in 0..if axis == 1 { 1 } else { ny } {
            for x in 0..if axis == 0 { 1 } else { nx } {
                let base = d.index(x, y, z);
                for i in 0..ext {
                    line[i] = m[base + i * stride];
                    prefix[i + 1] = prefix[i] + u32::from(line[i] == target);
                }
                for i in 0..ext {
                    let lo = i.saturating_sub(r);
                    let hi = (i + r + 1).min(ext);
                    m[base + i * stride] = if prefix[hi] - prefix[lo] > 0 { target } else { !target };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::VoxelSize;

    fn cube_in(n: usize, lo: usize, hi: usize) -> BinaryVolume {
        BinaryVolume::from_fn(Dims::cube(n), VoxelSize::iso(1.0), |x, y, z| {
            [x, y, z].iter().all(|c| (lo..hi).contains(c))
        })
    }

    #[test]
    fn erode_cube_to_centre() {
        let e = morph_op(&cube_in(5, 1, 4), MorphOp::Erode, 1, Connectivity::Six);
        assert_eq!(e.count(), 1);
        assert!(e.get(2, 2, 2));
        let e = morph_op(&cube_in(5, 1, 4), MorphOp::Erode, 1, Connectivity::TwentySix);
        assert_eq!(e.count(), 1);
    }

    #[test]
    fn dilation_shapes() {
        let p = cube_in(7, 3, 4);
        assert_eq!(morph_op(&p, MorphOp::Dilate, 1, Connectivity::Six).count(), 7);
        assert_eq!(morph_op(&p, MorphOp::Dilate, 2, Connectivity::Six).count(), 25);
        assert_eq!(morph_op(&p, MorphOp::Dilate, 1, Connectivity::TwentySix).count(), 27);
    }

    #[test]
    fn radius_zero_is_identity() {
        let p = cube_in(6, 1, 3);
        for op in [MorphOp::Erode, MorphOp::Dilate, MorphOp::Open, MorphOp::Close] {
            assert_eq!(morph_op(&p, op, 0, Connectivity::Six), p);
        }
    }

    #[test]
    fn border_touching_solid_survives_erosion() {
        let full = BinaryVolume::full(Dims::cube(4), VoxelSize::iso(1.0));
        assert_eq!(morph_op(&full, MorphOp::Erode, 1, Connectivity::TwentySix), full);
        assert_eq!(morph_op(&full, MorphOp::Close, 2, Connectivity::Six), full);
    }

    #[test]
    fn connectivity_parsing() {
        assert_eq!(Connectivity::from_count(6).unwrap(), Connectivity::Six);
        assert!(Connectivity::from_count(18).is_err());
        assert_eq!(Connectivity::TwentySix.offsets().len(), 26);
    }
}

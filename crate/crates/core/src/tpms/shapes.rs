use serde::{Deserialize, Serialize};

use crate::{BinaryVolume, Error, Result};

/// Solid ball in voxel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [usize; 3],
    pub radius: f64,
}

/// Fill the bottom `thickness` z-slices.
pub fn add_base_plate(mask: &BinaryVolume, thickness: usize) -> Result<BinaryVolume> {
    let d = mask.dims();
    if thickness > d.nz {
        return Err(Error::InvalidArgument(format!(
            "plate thickness {thickness} exceeds nz = {}",
            d.nz
        )));
    }
    let mut out = mask.clone();
    let slab = thickness * d.nx * d.ny;
    out.mask_mut()[..slab].iter_mut().for_each(|m| *m = true);
    Ok(out)
}

/// Set every voxel within `radius` (Euclidean, voxel units) of each centre.
pub fn add_spheres(mask: &BinaryVolume, spheres: &[Sphere]) -> Result<BinaryVolume> {
    let d = mask.dims();
    let mut out = mask.clone();
    for s in spheres {
        let [cx, cy, cz] = s.center;
        if cx >= d.nx || cy >= d.ny || cz >= d.nz {
            return Err(Error::InvalidArgument(format!(
                "sphere centre {:?} outside {d}",
                s.center
            )));
        }
        paint_ball(&mut out, s.center, s.radius, true);
    }
    Ok(out)
}

pub(crate) fn paint_ball(mask: &mut BinaryVolume, center: [usize; 3], radius: f64, value: bool) {
    let d = mask.dims();
    let r = radius.max(0.0);
    let ri = r.floor() as isize;
    let r2 = r * r;
    let c = center.map(|v| v as isize);
    for dz in -ri..=ri {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if (dx * dx + dy * dy + dz * dz) as f64 > r2 {
                    continue;
                }
                let (x, y, z) = (c[0] + dx, c[1] + dy, c[2] + dz);
                if d.contains(x, y, z) {
                    mask.set(x as usize, y as usize, z as usize, value);
                }
            }
        }
    }
}

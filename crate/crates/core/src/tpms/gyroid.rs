use std::f64::consts::PI;

use super::TpmsSpec;
use crate::preprocess::distance_to_background;
use crate::{BinaryVolume, Dims, Error, Result, ScalarVolume, VoxelSize};

/// Gyroid implicit function sampled at voxel centres; voxel `(i, j, k)` sits at
/// physical position `(i, j, k) * voxel_size`.
pub fn gyroid_field(dims: Dims, voxel_size_um: f64, cell_size_mm: f64) -> ScalarVolume {
    let k = 2.0 * PI / cell_size_mm;
    let h = voxel_size_um / 1000.0;
    let trig = |n: usize| -> (Vec<f64>, Vec<f64>) {
        (0..n)
            .map(|i| {
                let a = k * i as f64 * h;
                (a.sin(), a.cos())
            })
            .unzip()
    };
    let (sx, cx) = trig(dims.nx);
    let (sy, cy) = trig(dims.ny);
    let (sz, cz) = trig(dims.nz);
    ScalarVolume::from_fn(dims, VoxelSize::iso(voxel_size_um as f32), |x, y, z| {
        (sx[x] * cy[y] + sy[y] * cz[z] + sz[z] * cx[x]) as f32
    })
}

/// Sheet gyroid: solid where `|F - C| <= band_halfwidth`.
pub fn tpms_solid(field: &ScalarVolume, spec: &TpmsSpec) -> Result<BinaryVolume> {
    if !(spec.band_halfwidth > 0.0) {
        return Err(Error::InvalidArgument("band half-width must be positive".into()));
    }
    let c = spec.c_param;
    let tau = spec.band_halfwidth;
    let mask: Vec<bool> = field.data().iter().map(|&f| (f64::from(f) - c).abs() <= tau).collect();
    let bin = BinaryVolume::new(field.dims(), field.voxel_size(), mask)?;
    if bin.count() == 0 {
        return Err(Error::EmptyMask(format!("no voxel within band {tau} of C = {c}")));
    }
    Ok(bin)
}

/// Mean wall thickness in voxels.
///
/// Each foreground voxel's erosion depth is its Euclidean distance to the
/// nearest background voxel. Walls are measured along their medial ridge
/// (voxels at least as deep as all 26 neighbours) as `2 * depth - 0.5`.
/// Ridge voxels whose depth could be influenced by the grid border are skipped.
/// Returns `None` when no ridge voxel qualifies.
pub fn measure_wall_thickness(mask: &BinaryVolume) -> Option<f64> {
    let d = mask.dims();
    let dist: Vec<f64> = distance_to_background(mask).into_iter().map(|s| s.sqrt()).collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let i = d.index(x, y, z);
                let depth = dist[i];
                if depth <= 0.0 || !depth.is_finite() {
                    continue;
                }
                let border = [x + 1, d.nx - x, y + 1, d.ny - y, z + 1, d.nz - z]
                    .into_iter()
                    .min()
                    .unwrap_or(0) as f64;
                if depth > border {
                    continue;
                }
                let mut ridge = true;
                'nb: for dz in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let (xx, yy, zz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                            if (dx, dy, dz) == (0, 0, 0) || !d.contains(xx, yy, zz) {
                                continue;
                            }
                            if dist[d.index(xx as usize, yy as usize, zz as usize)] > depth {
                                ridge = false;
                                break 'nb;
                            }
                        }
                    }
                }
                if ridge {
                    sum += 2.0 * depth - 0.5;
                    count += 1;
                }
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Bisection on the band half-width until the measured wall thickness is
/// within 5% of `target_mm`.
pub fn calibrate_band(target_mm: f64, spec: &TpmsSpec) -> Result<f64> {
    let voxel_mm = spec.voxel_mm();
    let target_vox = target_mm / voxel_mm;
    if !(target_vox >= 3.0) {
        return Err(Error::Calibration(format!(
            "target {target_mm} mm is {target_vox:.2} voxels at {} µm; need at least 3",
            spec.voxel_size_um
        )));
    }
    let cell_vox = spec.cell_size_mm / voxel_mm;
    let n = (cell_vox + 2.0 * target_vox).ceil() as usize + 2;
    let field = gyroid_field(Dims::cube(n), spec.voxel_size_um, spec.cell_size_mm);
    let measure = |tau: f64| -> f64 {
        let s = TpmsSpec {
            band_halfwidth: tau,
            ..spec.clone()
        };
        match tpms_solid(&field, &s) {
            Ok(mask) if mask.count() == mask.dims().len() => f64::INFINITY,
            Ok(mask) => measure_wall_thickness(&mask).unwrap_or(0.0),
            Err(_) => 0.0,
        }
    };
    let (mut lo, mut hi) = (1e-3, 1.0);
    let (t_lo, t_hi) = (measure(lo), measure(hi));
    if !(t_lo < target_vox && t_hi > target_vox) {
        return Err(Error::Calibration(format!(
            "target {target_vox:.2} voxels not bracketed by [{t_lo:.2}, {t_hi:.2}]"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let t = measure(mid);
        if (t - target_vox).abs() <= 0.05 * target_vox {
            return Ok(mid);
        }
        if t < target_vox {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!(
        "no band width reproduces {target_vox:.2} voxels within 5%"
    )))
}

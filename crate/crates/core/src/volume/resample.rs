use crate::{Dims, DisplacementField, Error, Result, ScalarVolume};

/// Halve every axis by averaging 2x2x2 blocks; trailing odd slices are dropped.
pub fn downsample2(vol: &ScalarVolume) -> Result<ScalarVolume> {
    let d = vol.dims();
    if d.nx < 2 || d.ny < 2 || d.nz < 2 {
        return Err(Error::InvalidArgument(format!(
            "downsample2 needs every axis >= 2, got {d}"
        )));
    }
    let out_dims = Dims::new(d.nx / 2, d.ny / 2, d.nz / 2);
    let src = vol.data();
    let out = ScalarVolume::from_fn(out_dims, vol.voxel_size().scaled(2.0), |x, y, z| {
        let mut acc = 0.0f64;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    acc += f64::from(src[d.index(2 * x + dx, 2 * y + dy, 2 * z + dz)]);
                }
            }
        }
        (acc / 8.0) as f32
    });
    Ok(out)
}

/// Rescale to `[0, 1]` with both bounds attained.
pub fn minmax_normalize(vol: &ScalarVolume) -> Result<ScalarVolume> {
    let (lo, hi) = vol.min_max();
    if hi <= lo {
        return Err(Error::ConstantVolume(lo));
    }
    let range = f64::from(hi) - f64::from(lo);
    let data = vol
        .data()
        .iter()
        .map(|&v| {
            if v == hi {
                1.0
            } else {
                ((f64::from(v) - f64::from(lo)) / range) as f32
            }
        })
        .collect();
    vol.with_data(data)
}

/// Offset of the source grid relative to the target for a centred crop/pad.
///
/// Positive means the source is cropped by that many voxels on the low side,
/// negative means that much padding is inserted. Odd remainders go to the high side.
pub(crate) fn crop_pad_offset(from: usize, to: usize) -> isize {
    if from >= to {
        ((from - to) / 2) as isize
    } else {
        -(((to - from) / 2) as isize)
    }
}

/// Centre-crop axes that are too large and symmetrically pad axes that are too small.
pub fn crop_or_pad(vol: &ScalarVolume, target: Dims, fill: f32) -> Result<ScalarVolume> {
    target.ensure_positive()?;
    let d = vol.dims();
    let ox = crop_pad_offset(d.nx, target.nx);
    let oy = crop_pad_offset(d.ny, target.ny);
    let oz = crop_pad_offset(d.nz, target.nz);
    Ok(ScalarVolume::from_fn(target, vol.voxel_size(), |x, y, z| {
        let (sx, sy, sz) = (x as isize + ox, y as isize + oy, z as isize + oz);
        if d.contains(sx, sy, sz) {
            vol.get(sx as usize, sy as usize, sz as usize)
        } else {
            fill
        }
    }))
}

/// Crop or pad every channel of a field with the same centred offsets as [`crop_or_pad`].
pub(crate) fn crop_or_pad_field(disp: &DisplacementField, target: Dims) -> DisplacementField {
    let d = disp.dims();
    let ox = crop_pad_offset(d.nx, target.nx);
    let oy = crop_pad_offset(d.ny, target.ny);
    let oz = crop_pad_offset(d.nz, target.nz);
    DisplacementField::from_fn(target, disp.voxel_size(), |x, y, z| {
        let (sx, sy, sz) = (x as isize + ox, y as isize + oy, z as isize + oz);
        if d.contains(sx, sy, sz) {
            disp.at(sx as usize, sy as usize, sz as usize)
        } else {
            [0.0; 3]
        }
    })
}

/// Integer translation: `out(x) = vol(x - shift)`, uncovered voxels set to `fill`.
pub fn translate(vol: &ScalarVolume, shift: [i64; 3], fill: f32) -> ScalarVolume {
    let d = vol.dims();
    ScalarVolume::from_fn(d, vol.voxel_size(), |x, y, z| {
        let sx = x as i64 - shift[0];
        let sy = y as i64 - shift[1];
        let sz = z as i64 - shift[2];
        if d.contains(sx as isize, sy as isize, sz as isize) {
            vol.get(sx as usize, sy as usize, sz as usize)
        } else {
            fill
        }
    })
}

#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Warp with an edge-clamped Catmull-Rom kernel: `out(x) = vol(x + u(x))`.
///
/// Used where a volume is resampled once to synthesise data, so that the
/// trilinear warp applied later is the only low-order interpolation in the chain.
pub fn warp_cubic(vol: &ScalarVolume, disp: &DisplacementField) -> Result<ScalarVolume> {
    let d = vol.dims();
    d.ensure_same(&disp.dims(), "warp_cubic")?;
    let src = vol.data();
    let n = d.len();
    let u = disp.data();
    let clampi = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y, z) = d.coords(i);
        let p = [
            (x as f64 + f64::from(u[i])).clamp(0.0, (d.nx - 1) as f64),
            (y as f64 + f64::from(u[n + i])).clamp(0.0, (d.ny - 1) as f64),
            (z as f64 + f64::from(u[2 * n + i])).clamp(0.0, (d.nz - 1) as f64),
        ];
        let base = p.map(|v| v.floor() as i64);
        let w: Vec<[f64; 4]> = (0..3).map(|a| catmull_rom(p[a] - base[a] as f64)).collect();
        let mut acc = 0.0;
        for (kz, wz) in w[2].iter().enumerate() {
            let zz = clampi(base[2] + kz as i64 - 1, d.nz);
            for (ky, wy) in w[1].iter().enumerate() {
                let yy = clampi(base[1] + ky as i64 - 1, d.ny);
                let row = d.index(0, yy, zz);
                for (kx, wx) in w[0].iter().enumerate() {
                    let xx = clampi(base[0] + kx as i64 - 1, d.nx);
                    acc += wz * wy * wx * f64::from(src[row + xx]);
                }
            }
        }
        out.push(acc as f32);
    }
    vol.with_data(out)
}

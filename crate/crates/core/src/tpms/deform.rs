use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::volume::gaussian_blur_slice;
use crate::{Dims, DisplacementField, Error, Result, VoxelSize};

/// Ground-truth deformation: isotropic shrink about the grid centre plus a
/// smooth random warp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformSpec {
    pub shrink_factor: f64,
    /// Largest absolute component of the smooth part, in voxels.
    pub warp_amplitude: f64,
    /// Gaussian sigma of the smooth part, in voxels.
    pub warp_smoothness: f64,
    pub seed: u64,
}

impl DeformSpec {
    pub fn identity() -> Self {
        Self {
            shrink_factor: 1.0,
            warp_amplitude: 0.0,
            warp_smoothness: 8.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.9..=1.0).contains(&self.shrink_factor) {
            return Err(Error::InvalidArgument(format!(
                "shrink factor {} outside [0.9, 1.0]",
                self.shrink_factor
            )));
        }
        if !(self.warp_amplitude >= 0.0) || !(self.warp_smoothness >= 1.0) {
            return Err(Error::InvalidArgument(
                "warp amplitude must be >= 0 and smoothness >= 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for DeformSpec {
    fn default() -> Self {
        Self {
            shrink_factor: 0.98,
            warp_amplitude: 3.0,
            warp_smoothness: 12.0,
            seed: 7,
        }
    }
}

/// `channels` planes of zero-mean Gaussian-smoothed white noise, scaled so the
/// largest absolute value over all planes equals `amplitude`.
///
/// The noise is drawn on a grid padded by `3 sigma` per side and cropped after
/// blurring, so its variance does not pile up at the borders.
pub fn smooth_noise(dims: Dims, channels: usize, sigma: f64, amplitude: f64, seed: u64) -> Vec<f32> {
    let n = dims.len();
    if amplitude == 0.0 {
        return vec![0.0; channels * n];
    }
    let pad = (3.0 * sigma).ceil().max(0.0) as usize;
    let big = Dims::new(dims.nx + 2 * pad, dims.ny + 2 * pad, dims.nz + 2 * pad);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(channels * n);
    for _ in 0..channels {
        let mut plane: Vec<f32> = (0..big.len())
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v as f32
            })
            .collect();
        gaussian_blur_slice(&mut plane, big, sigma);
        let mut cropped = Vec::with_capacity(n);
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                let row = big.index(pad, y + pad, z + pad);
                cropped.extend_from_slice(&plane[row..row + dims.nx]);
            }
        }
        let mean = cropped.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        cropped.iter_mut().for_each(|v| *v = (f64::from(*v) - mean) as f32);
        out.extend(cropped);
    }
    let peak = out.iter().fold(0.0f64, |m, &v| m.max(f64::from(v).abs()));
    if peak > 0.0 {
        let s = amplitude / peak;
        out.iter_mut().for_each(|v| *v = (f64::from(*v) * s) as f32);
    }
    out
}

/// `u*(x) = (shrink - 1) (x - centre) + s(x)` with `s` from [`smooth_noise`].
pub fn synth_displacement(dims: Dims, voxel_size: VoxelSize, spec: &DeformSpec) -> Result<DisplacementField> {
    spec.validate()?;
    dims.ensure_positive()?;
    let n = dims.len();
    let mut data = smooth_noise(dims, 3, spec.warp_smoothness, spec.warp_amplitude, spec.seed);
    let centre = dims.as_array().map(|v| (v as f64 - 1.0) / 2.0);
    let slope = spec.shrink_factor - 1.0;
    if slope != 0.0 {
        for i in 0..n {
            let (x, y, z) = dims.coords(i);
            for (c, p) in [x, y, z].into_iter().enumerate() {
                data[c * n + i] += (slope * (p as f64 - centre[c])) as f32;
            }
        }
    }
    DisplacementField::new(dims, voxel_size, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spec_gives_zero_field() {
        let f = synth_displacement(Dims::cube(8), VoxelSize::iso(1.0), &DeformSpec::identity()).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_shrink_is_affine_about_centre() {
        let spec = DeformSpec {
            shrink_factor: 0.98,
            warp_amplitude: 0.0,
            ..DeformSpec::default()
        };
        let f = synth_displacement(Dims::cube(9), VoxelSize::iso(1.0), &spec).unwrap();
        assert_eq!(f.at(4, 4, 4), [0.0, 0.0, 0.0]);
        let u = f.at(8, 0, 4);
        assert!((u[0] - (-0.02 * 4.0)).abs() < 1e-6);
        assert!((u[1] - (-0.02 * -4.0)).abs() < 1e-6);
        assert!(u[2].abs() < 1e-7);
    }

    #[test]
    fn amplitude_rescale_is_exact_and_mean_is_small() {
        let spec = DeformSpec {
            shrink_factor: 1.0,
            warp_amplitude: 3.0,
            warp_smoothness: 4.0,
            seed: 11,
        };
        let f = synth_displacement(Dims::cube(24), VoxelSize::iso(1.0), &spec).unwrap();
        assert!((f.max_abs() - 3.0).abs() < 1e-5);
        for c in 0..3 {
            let m: f64 = f.channel(c).iter().map(|&v| f64::from(v)).sum::<f64>() / f.dims().len() as f64;
            assert!(m.abs() <= 0.05 * 3.0);
        }
    }

    #[test]
    fn rejects_out_of_range_specs() {
        let bad = DeformSpec {
            shrink_factor: 0.8,
            ..DeformSpec::default()
        };
        assert!(synth_displacement(Dims::cube(4), VoxelSize::iso(1.0), &bad).is_err());
    }
}

//! Sliding-window tiling and Gaussian-weighted reassembly.

use crate::{Dims, DisplacementField, Error, Result};

/// Minimum window weight; keeps the accumulated weight positive on any covering grid.
pub const WEIGHT_FLOOR: f32 = 1e-4;

/// Cubic patch origins (`[x, y, z]` corners) covering a volume.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub dims: Dims,
    pub patch_size: usize,
    pub stride: usize,
    /// Sorted lexicographically by `(z, y, x)`.
    pub origins: Vec<[usize; 3]>,
}

fn axis_origins(n: usize, p: usize, s: usize) -> Vec<usize> {
    let last = n - p;
    let mut v: Vec<usize> = (0..=last).step_by(s).collect();
    if *v.last().expect("origin 0 always present") != last {
        v.push(last);
    }
    v
}

/// Regular origins at multiples of `stride`, plus a clamped final origin at
/// `n - patch_size` on any axis where the regular ones fall short.
pub fn make_patch_grid(dims: Dims, patch_size: usize, stride: usize) -> Result<PatchGrid> {
    if stride == 0 || patch_size == 0 {
        return Err(Error::InvalidArgument("patch size and stride must be positive".into()));
    }
    if dims.as_array().iter().any(|&n| patch_size > n) {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch_size} exceeds volume {dims}"
        )));
    }
    let ax = axis_origins(dims.nx, patch_size, stride);
    let ay = axis_origins(dims.ny, patch_size, stride);
    let az = axis_origins(dims.nz, patch_size, stride);
    let mut origins = Vec::with_capacity(ax.len() * ay.len() * az.len());
    for &z in &az {
        for &y in &ay {
            for &x in &ax {
                origins.push([x, y, z]);
            }
        }
    }
    Ok(PatchGrid {
        dims,
        patch_size,
        stride,
        origins,
    })
}

/// Separable Gaussian weights peaking at 1 in the patch centre, floored at [`WEIGHT_FLOOR`].
pub fn gaussian_window(patch_size: usize, sigma: f64) -> Result<Vec<f32>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "window sigma must be positive, got {sigma}"
        )));
    }
    let c = (patch_size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..patch_size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let mut w = Vec::with_capacity(patch_size.pow(3));
    for gz in &g {
        for gy in &g {
            for gx in &g {
                w.push(((gz * gy * gx) as f32).max(WEIGHT_FLOOR));
            }
        }
    }
    Ok(w)
}

/// Copy a `p³` block of a single-channel grid starting at `origin`.
pub fn extract_patch(data: &[f32], dims: Dims, origin: [usize; 3], p: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(p * p * p);
    for z in 0..p {
        for y in 0..p {
            let start = dims.index(origin[0], origin[1] + y, origin[2] + z);
            out.extend_from_slice(&data[start..start + p]);
        }
    }
    out
}

/// Channel-major `3 × p³` block of a displacement field.
pub fn extract_field_patch(disp: &DisplacementField, origin: [usize; 3], p: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(3 * p * p * p);
    for c in 0..3 {
        out.extend(extract_patch(disp.channel(c), disp.dims(), origin, p));
    }
    out
}

/// Running weighted sums for reassembling overlapping patch predictions.
///
/// Parallel callers keep one accumulator per worker and [`merge`](Self::merge)
/// them in a fixed order.
#[derive(Clone, Debug)]
pub struct BlendAccumulator {
    dims: Dims,
    channels: usize,
    patch_size: usize,
    sigma: f64,
    window: Vec<f32>,
    weighted_sum: Vec<f64>,
    weight_sum: Vec<f64>,
}

impl BlendAccumulator {
    pub fn new(dims: Dims, channels: usize, patch_size: usize, sigma: f64) -> Result<Self> {
        let window = gaussian_window(patch_size, sigma)?;
        Ok(Self {
            dims,
            channels,
            patch_size,
            sigma,
            window,
            weighted_sum: vec![0.0; channels * dims.len()],
            weight_sum: vec![0.0; dims.len()],
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weight_sum(&self) -> &[f64] {
        &self.weight_sum
    }

    /// Add a channel-major `channels × p³` patch at `origin`.
    pub fn add(&mut self, patch: &[f32], origin: [usize; 3]) -> Result<()> {
        let p = self.patch_size;
        let pn = p * p * p;
        if patch.len() != self.channels * pn {
            return Err(Error::DimMismatch(format!(
                "patch has {} values, expected {}",
                patch.len(),
                self.channels * pn
            )));
        }
        let d = self.dims;
        if origin[0] + p > d.nx || origin[1] + p > d.ny || origin[2] + p > d.nz {
            return Err(Error::InvalidArgument(format!(
                "patch at {origin:?} of size {p} does not fit in {d}"
            )));
        }
        let n = d.len();
        for z in 0..p {
            for y in 0..p {
                let row = d.index(origin[0], origin[1] + y, origin[2] + z);
                let prow = (z * p + y) * p;
                for x in 0..p {
                    let w = f64::from(self.window[prow + x]);
                    self.weight_sum[row + x] += w;
                    for c in 0..self.channels {
                        self.weighted_sum[c * n + row + x] += w * f64::from(patch[c * pn + prow + x]);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &BlendAccumulator) -> Result<()> {
        if self.dims != other.dims || self.channels != other.channels {
            return Err(Error::DimMismatch("merging incompatible accumulators".into()));
        }
        for (a, b) in self.weighted_sum.iter_mut().zip(&other.weighted_sum) {
            *a += b;
        }
        for (a, b) in self.weight_sum.iter_mut().zip(&other.weight_sum) {
            *a += b;
        }
        Ok(())
    }

    /// Per-channel weighted mean; fails if any voxel was never covered.
    pub fn finalize(&self) -> Result<Vec<f32>> {
        if let Some(i) = self.weight_sum.iter().position(|&w| w <= 0.0) {
            let (x, y, z) = self.dims.coords(i);
            return Err(Error::InvalidArgument(format!(
                "voxel ({x}, {y}, {z}) received no patch weight"
            )));
        }
        let n = self.dims.len();
        let mut out = Vec::with_capacity(self.channels * n);
        for c in 0..self.channels {
            for i in 0..n {
                out.push((self.weighted_sum[c * n + i] / self.weight_sum[i]) as f32);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(grid: &PatchGrid) -> Vec<usize> {
        let mut xs: Vec<usize> = grid.origins.iter().map(|o| o[0]).collect();
        xs.sort_unstable();
        xs.dedup();
        xs
    }

    #[test]
    fn grid_examples() {
        assert_eq!(axis(&make_patch_grid(Dims::cube(128), 128, 64).unwrap()), vec![0]);
        assert_eq!(axis(&make_patch_grid(Dims::cube(192), 128, 64).unwrap()), vec![0, 64]);
        assert_eq!(
            axis(&make_patch_grid(Dims::new(200, 128, 128), 128, 64).unwrap()),
            vec![0, 64, 72]
        );
        assert!(make_patch_grid(Dims::cube(100), 128, 64).is_err());
    }

    #[test]
    fn origins_sorted_z_major() {
        let g = make_patch_grid(Dims::new(10, 9, 8), 4, 3).unwrap();
        let keys: Vec<_> = g.origins.iter().map(|o| (o[2], o[1], o[0])).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn window_peak_symmetry_and_corner() {
        let w = gaussian_window(5, 1.25).unwrap();
        assert_eq!(w[(2 * 5 + 2) * 5 + 2], 1.0);
        let corner = (-3.0f64 * 4.0 / (2.0 * 1.25 * 1.25)).exp() as f32;
        assert!((w[0] - corner.max(WEIGHT_FLOOR)).abs() < 1e-7);
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    let a = w[(z * 5 + y) * 5 + x];
                    assert_eq!(a, w[(z * 5 + y) * 5 + (4 - x)]);
                    assert_eq!(a, w[((4 - z) * 5 + y) * 5 + x]);
                }
            }
        }
        let tight = gaussian_window(9, 0.5).unwrap();
        assert!(tight.iter().all(|&v| v >= WEIGHT_FLOOR));
        assert!(gaussian_window(4, 0.0).is_err());
    }

    #[test]
    fn constant_patches_blend_to_constant() {
        let dims = Dims::new(10, 7, 9);
        let grid = make_patch_grid(dims, 5, 2).unwrap();
        let mut acc = BlendAccumulator::new(dims, 1, 5, 1.25).unwrap();
        for o in &grid.origins {
            acc.add(&[3.5; 125], *o).unwrap();
        }
        assert!(acc.finalize().unwrap().iter().all(|&v| (v - 3.5).abs() < 1e-6));
    }

    #[test]
    fn uncovered_voxel_fails_finalize() {
        let mut acc = BlendAccumulator::new(Dims::cube(6), 1, 4, 1.0).unwrap();
        acc.add(&[1.0; 64], [0, 0, 0]).unwrap();
        assert!(acc.finalize().is_err());
        assert!(acc.add(&[1.0; 64], [3, 0, 0]).is_err());
    }

    #[test]
    fn single_patch_round_trips_exactly() {
        let dims = Dims::cube(6);
        let data: Vec<f32> = (0..216).map(|i| (i as f32 * 0.37).sin()).collect();
        let mut acc = BlendAccumulator::new(dims, 1, 6, 1.5).unwrap();
        acc.add(&data, [0, 0, 0]).unwrap();
        assert_eq!(acc.finalize().unwrap(), data);
    }
}

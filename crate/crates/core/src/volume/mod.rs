//! Dense voxel grids and the operations every other stage builds on.
//!
//! All grids use the same linear layout: `index = ((z * ny) + y) * nx + x`,
//! with `x` varying fastest. Displacement fields store three such planes
//! back to back (`ux`, `uy`, `uz`), in voxel units.

mod filter;
mod patch;
pub(crate) mod resample;
mod sample;
pub mod vvol;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use filter::{gaussian_blur, gaussian_blur_slice};
pub use patch::{
    extract_field_patch, extract_patch, gaussian_window, make_patch_grid, BlendAccumulator, PatchGrid, WEIGHT_FLOOR,
};
pub use resample::{crop_or_pad, downsample2, minmax_normalize, translate, warp_cubic};
pub use sample::{invert_field, trilinear, trilinear_with_grad, warp, warp_backward, warp_gradient, warp_slice};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    #[inline]
    pub const fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.nx;
        let y = (i / self.nx) % self.ny;
        let z = i / (self.nx * self.ny);
        (x, y, z)
    }

    /// Per-axis extents as `[nx, ny, nz]`.
    pub const fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub const fn from_array(a: [usize; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn contains(&self, x: isize, y: isize, z: isize) -> bool {
        x >= 0 && y >= 0 && z >= 0 && (x as usize) < self.nx && (y as usize) < self.ny && (z as usize) < self.nz
    }

    pub(crate) fn ensure_positive(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "dims must be positive, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_same(&self, other: &Dims, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::DimMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.nx, self.ny, self.nz, other.nx, other.ny, other.nz
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Physical voxel pitch in micrometers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelSize {
    pub vx: f32,
    pub vy: f32,
    pub vz: f32,
}

impl VoxelSize {
    pub const fn iso(v: f32) -> Self {
        Self { vx: v, vy: v, vz: v }
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            vx: self.vx * factor,
            vy: self.vy * factor,
            vz: self.vz * factor,
        }
    }

    fn validate(&self) -> Result<()> {
        if [self.vx, self.vy, self.vz].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "voxel size must be strictly positive, got {self:?}"
            )))
        }
    }
}

impl Default for VoxelSize {
    fn default() -> Self {
        Self::iso(1.0)
    }
}

/// Single-channel intensity volume.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    dims: Dims,
    voxel_size: VoxelSize,
    data: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(dims: Dims, voxel_size: VoxelSize, data: Vec<f32>) -> Result<Self> {
        dims.ensure_positive()?;
        voxel_size.validate()?;
        if data.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "scalar volume {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        Ok(Self { dims, voxel_size, data })
    }

    pub fn zeros(dims: Dims, voxel_size: VoxelSize) -> Self {
        Self::filled(dims, voxel_size, 0.0)
    }

    pub fn filled(dims: Dims, voxel_size: VoxelSize, value: f32) -> Self {
        Self {
            dims,
            voxel_size,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, voxel_size: VoxelSize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { dims, voxel_size, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size(&self) -> VoxelSize {
        self.voxel_size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.dims.index(x, y, z);
        self.data[i] = v;
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Trilinear interpolation at a point in voxel coordinates, edge-clamped.
    pub fn trilinear_sample(&self, point: [f32; 3]) -> f32 {
        trilinear(&self.data, self.dims, point)
    }

    /// Copy with the same geometry but new values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.voxel_size, data)
    }

    /// Keep values where `mask` is set and replace the rest with `fill`.
    pub fn masked(&self, mask: &BinaryVolume, fill: f32) -> Result<Self> {
        self.dims.ensure_same(&mask.dims(), "masked")?;
        let data = self
            .data
            .iter()
            .zip(mask.mask())
            .map(|(&v, &m)| if m { v } else { fill })
            .collect();
        self.with_data(data)
    }
}

/// Boolean foreground mask (`true` = material).
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryVolume {
    dims: Dims,
    voxel_size: VoxelSize,
    mask: Vec<bool>,
}

impl BinaryVolume {
    pub fn new(dims: Dims, voxel_size: VoxelSize, mask: Vec<bool>) -> Result<Self> {
        dims.ensure_positive()?;
        voxel_size.validate()?;
        if mask.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "binary volume {dims} needs {} values, got {}",
                dims.len(),
                mask.len()
            )));
        }
        Ok(Self { dims, voxel_size, mask })
    }

    pub fn empty(dims: Dims, voxel_size: VoxelSize) -> Self {
        Self {
            dims,
            voxel_size,
            mask: vec![false; dims.len()],
        }
    }

    pub fn full(dims: Dims, voxel_size: VoxelSize) -> Self {
        Self {
            dims,
            voxel_size,
            mask: vec![true; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, voxel_size: VoxelSize, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut mask = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    mask.push(f(x, y, z));
                }
            }
        }
        Self { dims, voxel_size, mask }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size(&self) -> VoxelSize {
        self.voxel_size
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mask_mut(&mut self) -> &mut [bool] {
        &mut self.mask
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.mask[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.dims.index(x, y, z);
        self.mask[i] = v;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_subset_of(&self, other: &BinaryVolume) -> bool {
        self.dims == other.dims && self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// 0/1 intensities as a scalar volume.
    pub fn to_scalar(&self) -> ScalarVolume {
        ScalarVolume {
            dims: self.dims,
            voxel_size: self.voxel_size,
            data: self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Three-channel per-voxel displacement in voxel units, stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    dims: Dims,
    voxel_size: VoxelSize,
    data: Vec<f32>,
}

impl DisplacementField {
    pub fn new(dims: Dims, voxel_size: VoxelSize, data: Vec<f32>) -> Result<Self> {
        dims.ensure_positive()?;
        voxel_size.validate()?;
        if data.len() != 3 * dims.len() {
            return Err(Error::DimMismatch(format!(
                "displacement field {dims} needs {} values, got {}",
                3 * dims.len(),
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("displacement field value at {bad}")));
        }
        Ok(Self { dims, voxel_size, data })
    }

    pub fn zeros(dims: Dims, voxel_size: VoxelSize) -> Self {
        Self {
            dims,
            voxel_size,
            data: vec![0.0; 3 * dims.len()],
        }
    }

    pub fn constant(dims: Dims, voxel_size: VoxelSize, u: [f32; 3]) -> Self {
        let n = dims.len();
        let mut data = Vec::with_capacity(3 * n);
        for c in u {
            data.extend(std::iter::repeat_n(c, n));
        }
        Self { dims, voxel_size, data }
    }

    pub fn from_fn(dims: Dims, voxel_size: VoxelSize, mut f: impl FnMut(usize, usize, usize) -> [f32; 3]) -> Self {
        let n = dims.len();
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            let (x, y, z) = dims.coords(i);
            let u = f(x, y, z);
            for c in 0..3 {
                data[c * n + i] = u[c];
            }
        }
        Self { dims, voxel_size, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size(&self) -> VoxelSize {
        self.voxel_size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.dims.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn vector(&self, i: usize) -> [f32; 3] {
        let n = self.dims.len();
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> [f32; 3] {
        self.vector(self.dims.index(x, y, z))
    }

    /// Per-voxel Euclidean norm.
    pub fn magnitude(&self) -> Vec<f32> {
        (0..self.dims.len())
            .map(|i| {
                let [a, b, c] = self.vector(i);
                (a * a + b * b + c * c).sqrt()
            })
            .collect()
    }

    /// Largest absolute component over all voxels and channels.
    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn max_norm(&self) -> f32 {
        self.magnitude().into_iter().fold(0.0, f32::max)
    }
}

//! Gyroid phantoms, synthetic deformations and XCT-style degradations.
//!
//! Every generator is a pure function of its spec and seed, so a sample can
//! be regenerated bit-for-bit from its JSON sidecar.

mod deform;
mod degrade;
mod gyroid;
mod shapes;

use serde::{Deserialize, Serialize};

use crate::{BinaryVolume, Dims, Error, Result, ScalarVolume, VoxelSize};

pub use deform::{smooth_noise, synth_displacement, DeformSpec};
pub use degrade::{degrade_to_xct, render_gray, DegradeSpec, SynthPair};
pub use gyroid::{calibrate_band, gyroid_field, measure_wall_thickness, tpms_solid};
pub use shapes::{add_base_plate, add_spheres, Sphere};

/// Level-set sweep used for the sample series: C = 0, -0.1, ..., -0.6.
pub const DEFAULT_C_SWEEP: [f64; 7] = [0.0, -0.1, -0.2, -0.3, -0.4, -0.5, -0.6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpmsSpec {
    /// Level-set offset C.
    pub c_param: f64,
    /// Gyroid period in mm.
    pub cell_size_mm: f64,
    pub wall_thickness_mm: f64,
    /// Edge length of the cubic part in mm.
    pub part_extent_mm: f64,
    pub voxel_size_um: f64,
    /// Half-width of the solid band around the iso-surface, in implicit-field units.
    pub band_halfwidth: f64,
}

impl TpmsSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("tpms spec: {m}")));
        if !(self.wall_thickness_mm > 0.0) {
            return bad("wall thickness must be positive");
        }
        if !(self.voxel_size_um > 0.0) {
            return bad("voxel size must be positive");
        }
        if !(self.part_extent_mm > 0.0) {
            return bad("part extent must be positive");
        }
        if !(self.cell_size_mm > 0.0) {
            return bad("cell size must be positive");
        }
        if !(-1.0..=1.0).contains(&self.c_param) {
            return bad("level-set parameter C must lie in [-1, 1]");
        }
        if !(self.band_halfwidth > 0.0) {
            return bad("band half-width must be positive");
        }
        Ok(())
    }

    pub fn voxel_size(&self) -> VoxelSize {
        VoxelSize::iso(self.voxel_size_um as f32)
    }

    fn voxel_mm(&self) -> f64 {
        self.voxel_size_um / 1000.0
    }
}

impl Default for TpmsSpec {
    fn default() -> Self {
        Self {
            c_param: 0.0,
            cell_size_mm: 2.5,
            wall_thickness_mm: 0.5,
            part_extent_mm: 5.0,
            voxel_size_um: 40.0,
            band_halfwidth: 0.875,
        }
    }
}

/// Full part layout: gyroid block, base plate and marker spheres on one grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub tpms: TpmsSpec,
    /// Solid z-slices at the bottom of the grid.
    pub plate_voxels: usize,
    pub markers: Vec<Sphere>,
}

impl PhantomSpec {
    /// Desk-scale default: 128³ grid at 40 µm.
    pub fn desk(c_param: f64) -> Self {
        Self {
            dims: Dims::cube(128),
            tpms: TpmsSpec {
                c_param,
                ..TpmsSpec::default()
            },
            plate_voxels: 4,
            markers: Vec::new(),
        }
    }

    /// The whole 5 mm part on a 64³ grid at 80 µm.
    pub fn compact(c_param: f64) -> Self {
        Self {
            dims: Dims::cube(64),
            tpms: TpmsSpec {
                c_param,
                voxel_size_um: 80.0,
                ..TpmsSpec::default()
            },
            plate_voxels: 2,
            markers: Vec::new(),
        }
    }

    /// Re-fit the band half-width so walls keep the nominal thickness at this C.
    pub fn with_calibrated_band(mut self) -> Result<Self> {
        self.tpms.band_halfwidth = calibrate_band(self.tpms.wall_thickness_mm, &self.tpms)?;
        Ok(self)
    }

    /// Voxel-index bounds `[lo, hi)` of the gyroid block per axis.
    ///
    /// Centred in x and y; in z the block sits directly on the plate.
    pub fn part_box(&self) -> [[usize; 2]; 3] {
        let ext = (self.tpms.part_extent_mm / self.tpms.voxel_mm()).round() as usize;
        let centred = |n: usize| {
            let e = ext.min(n);
            let lo = (n - e) / 2;
            [lo, lo + e]
        };
        let zlo = self.plate_voxels.min(self.dims.nz);
        let zhi = (zlo + ext).min(self.dims.nz);
        [centred(self.dims.nx), centred(self.dims.ny), [zlo, zhi]]
    }

    pub fn in_part(&self, x: usize, y: usize, z: usize) -> bool {
        let b = self.part_box();
        (b[0][0]..b[0][1]).contains(&x) && (b[1][0]..b[1][1]).contains(&y) && (b[2][0]..b[2][1]).contains(&z)
    }

    pub fn field(&self) -> ScalarVolume {
        gyroid_field(self.dims, self.tpms.voxel_size_um, self.tpms.cell_size_mm)
    }

    /// Gyroid band clipped to the part box, with plate and markers.
    pub fn solidify(&self, field: &ScalarVolume) -> Result<BinaryVolume> {
        let band = tpms_solid(field, &self.tpms)?;
        let mut mask = BinaryVolume::from_fn(self.dims, field.voxel_size(), |x, y, z| {
            band.get(x, y, z) && self.in_part(x, y, z)
        });
        mask = add_base_plate(&mask, self.plate_voxels)?;
        mask = add_spheres(&mask, &self.markers)?;
        Ok(mask)
    }

    /// Nominal (CAD) mask of this layout.
    pub fn cad_mask(&self) -> Result<BinaryVolume> {
        self.tpms.validate()?;
        self.solidify(&self.field())
    }
}

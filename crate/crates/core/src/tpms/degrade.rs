use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::deform::{smooth_noise, synth_displacement, DeformSpec};
use super::shapes::paint_ball;
use super::PhantomSpec;
use crate::volume::{gaussian_blur_slice, invert_field, warp_cubic};
use crate::{BinaryVolume, DisplacementField, Error, Result, ScalarVolume};

/// Fixed-point iterations used to invert the ground-truth field.
const INVERT_ITERATIONS: usize = 8;

/// Scanner-like degradations applied to the nominal geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeSpec {
    /// Peak perturbation of the implicit field.
    pub roughness_amplitude: f64,
    pub roughness_smoothness: f64,
    pub pore_close_count: usize,
    pub pore_close_radius: f64,
    pub breakage_count: usize,
    pub breakage_radius: f64,
    /// Point-spread blur sigma in voxels.
    pub psf_sigma: f64,
    pub noise_sigma: f64,
    pub fg_level: f64,
    pub bg_level: f64,
    pub seed: u64,
}

impl DegradeSpec {
    /// Imaging model only (levels and PSF); no geometric defects or noise.
    pub fn clean() -> Self {
        Self {
            roughness_amplitude: 0.0,
            roughness_smoothness: 1.5,
            pore_close_count: 0,
            pore_close_radius: 0.0,
            breakage_count: 0,
            breakage_radius: 0.0,
            psf_sigma: 1.2,
            noise_sigma: 0.0,
            fg_level: 1.0,
            bg_level: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let non_neg = [
            self.roughness_amplitude,
            self.roughness_smoothness,
            self.pore_close_radius,
            self.breakage_radius,
            self.psf_sigma,
            self.noise_sigma,
            self.fg_level,
            self.bg_level,
        ];
        if non_neg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "degradation parameters must be non-negative".into(),
            ));
        }
        if !(self.fg_level > self.bg_level) {
            return Err(Error::InvalidArgument(
                "foreground level must exceed background level".into(),
            ));
        }
        Ok(())
    }
}

impl Default for DegradeSpec {
    /// Mild desk-scale defaults.
    fn default() -> Self {
        Self {
            roughness_amplitude: 0.08,
            roughness_smoothness: 1.5,
            pore_close_count: 2,
            pore_close_radius: 2.0,
            breakage_count: 1,
            breakage_radius: 3.0,
            psf_sigma: 1.2,
            noise_sigma: 0.03,
            fg_level: 0.85,
            bg_level: 0.15,
            seed: 13,
        }
    }
}

/// A synthetic CAD/XCT pair with exact ground truth.
#[derive(Clone, Debug)]
pub struct SynthPair {
    /// Nominal geometry rendered with the imaging PSF at levels 0/1.
    pub cad_gray: ScalarVolume,
    pub cad_mask: BinaryVolume,
    /// Degraded geometry in nominal coordinates, before deformation.
    pub xct_mask: BinaryVolume,
    pub xct: ScalarVolume,
    /// Maps XCT to CAD: `xct(x + gt(x)) ≈ cad_gray(x)`.
    pub gt: DisplacementField,
}

/// Levels, PSF blur and additive Gaussian noise.
pub fn render_gray(
    mask: &BinaryVolume,
    fg: f64,
    bg: f64,
    psf_sigma: f64,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<ScalarVolume> {
    let mut data: Vec<f32> = mask
        .mask()
        .iter()
        .map(|&m| if m { fg as f32 } else { bg as f32 })
        .collect();
    gaussian_blur_slice(&mut data, mask.dims(), psf_sigma);
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
        for v in &mut data {
            *v += normal.sample(rng) as f32;
        }
    }
    ScalarVolume::new(mask.dims(), mask.voxel_size(), data)
}

fn surface_voxels(mask: &BinaryVolume) -> Vec<usize> {
    let d = mask.dims();
    let m = mask.mask();
    (0..d.len())
        .filter(|&i| {
            if !m[i] {
                return false;
            }
            let (x, y, z) = d.coords(i);
            let (x, y, z) = (x as isize, y as isize, z as isize);
            [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                .iter()
                .any(|&(dx, dy, dz)| {
                    let (a, b, c) = (x + dx, y + dy, z + dz);
                    d.contains(a, b, c) && !m[d.index(a as usize, b as usize, c as usize)]
                })
        })
        .collect()
}

/// Build a degraded, deformed XCT-like volume from the nominal implicit field.
///
/// Steps: roughness on the implicit field, pore closure, solidification,
/// breakage, grayscale rendering (levels, PSF, noise), then resampling through
/// the inverse of the ground-truth field so that `warp(xct, gt)` lands on the
/// nominal geometry.
pub fn degrade_to_xct(
    cad_field: &ScalarVolume,
    phantom: &PhantomSpec,
    deform: &DeformSpec,
    degrade: &DegradeSpec,
) -> Result<SynthPair> {
    phantom.tpms.validate()?;
    deform.validate()?;
    degrade.validate()?;
    let dims = cad_field.dims();
    dims.ensure_same(&phantom.dims, "phantom grid")?;
    let mut rng = ChaCha8Rng::seed_from_u64(degrade.seed);

    let cad_mask = phantom.solidify(cad_field)?;

    // (1) roughness rides on the implicit function
    let mut field = cad_field.clone();
    if degrade.roughness_amplitude > 0.0 {
        let noise = smooth_noise(
            dims,
            1,
            degrade.roughness_smoothness,
            degrade.roughness_amplitude,
            rng.gen(),
        );
        for (f, r) in field.data_mut().iter_mut().zip(noise) {
            *f += r;
        }
    }

    // (2) pore closure: pin the field to the iso-value inside spheres seeded in pores
    let c = phantom.tpms.c_param as f32;
    if degrade.pore_close_count > 0 {
        let band = phantom.tpms.band_halfwidth;
        let pores: Vec<usize> = (0..dims.len())
            .filter(|&i| {
                let (x, y, z) = dims.coords(i);
                phantom.in_part(x, y, z) && (f64::from(field.data()[i]) - phantom.tpms.c_param).abs() > band
            })
            .collect();
        if !pores.is_empty() {
            let r = degrade.pore_close_radius;
            let ri = r.floor() as isize;
            for _ in 0..degrade.pore_close_count {
                let (cx, cy, cz) = dims.coords(pores[rng.gen_range(0..pores.len())]);
                for dz in -ri..=ri {
                    for dy in -ri..=ri {
                        for dx in -ri..=ri {
                            if ((dx * dx + dy * dy + dz * dz) as f64) > r * r {
                                continue;
                            }
                            let (x, y, z) = (cx as isize + dx, cy as isize + dy, cz as isize + dz);
                            if dims.contains(x, y, z) {
                                field.set(x as usize, y as usize, z as usize, c);
                            }
                        }
                    }
                }
            }
        }
    }

    // (3) solidify, (4) breakage around random surface voxels
    let mut xct_mask = phantom.solidify(&field)?;
    if degrade.breakage_count > 0 {
        let surface = surface_voxels(&xct_mask);
        if !surface.is_empty() {
            for _ in 0..degrade.breakage_count {
                let (x, y, z) = dims.coords(surface[rng.gen_range(0..surface.len())]);
                paint_ball(&mut xct_mask, [x, y, z], degrade.breakage_radius, false);
            }
        }
    }

    // (5) grayscale
    let gray = render_gray(
        &xct_mask,
        degrade.fg_level,
        degrade.bg_level,
        degrade.psf_sigma,
        degrade.noise_sigma,
        &mut rng,
    )?;
    let cad_gray = render_gray(&cad_mask, 1.0, 0.0, degrade.psf_sigma, 0.0, &mut rng)?;

    // (6) geometric deformation through the inverse of the ground truth
    let gt = synth_displacement(dims, cad_field.voxel_size(), deform)?;
    let is_identity = gt.data().iter().all(|&v| v == 0.0);
    let xct = if is_identity {
        gray
    } else {
        warp_cubic(&gray, &invert_field(&gt, INVERT_ITERATIONS)?)?
    };

    Ok(SynthPair {
        cad_gray,
        cad_mask,
        xct_mask,
        xct,
        gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Dims;

    fn small_phantom() -> PhantomSpec {
        let mut p = PhantomSpec::compact(0.0);
        p.dims = Dims::cube(24);
        p.tpms.voxel_size_um = 160.0;
        p
    }

    #[test]
    fn zero_degradation_identity_reproduces_rendered_cad() {
        let p = small_phantom();
        let pair = degrade_to_xct(&p.field(), &p, &DeformSpec::identity(), &DegradeSpec::clean()).unwrap();
        assert_eq!(pair.xct, pair.cad_gray);
        assert_eq!(pair.xct_mask, pair.cad_mask);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = small_phantom();
        let f = p.field();
        let a = degrade_to_xct(&f, &p, &DeformSpec::default(), &DegradeSpec::default()).unwrap();
        let b = degrade_to_xct(&f, &p, &DeformSpec::default(), &DegradeSpec::default()).unwrap();
        assert_eq!(a.xct, b.xct);
        assert_eq!(a.gt, b.gt);
    }

    #[test]
    fn invalid_levels_rejected() {
        let p = small_phantom();
        let spec = DegradeSpec {
            fg_level: 0.1,
            bg_level: 0.2,
            ..DegradeSpec::default()
        };
        assert!(degrade_to_xct(&p.field(), &p, &DeformSpec::identity(), &spec).is_err());
    }
}

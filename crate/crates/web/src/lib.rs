//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported call returns a [`Panel`]: an RGBA image for a canvas plus a
//! JSON summary. The plain-Rust `*_panel` functions do the work and are what
//! the native tests exercise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use voxcorr::dvc::{multiscale_dvc, DvcConfig};
use voxcorr::metrics::{bdm, bdm_slice_images, dice, Image, SlicePlane};
use voxcorr::tpms::{render_gray, PhantomSpec};
use voxcorr::volume::{gaussian_blur, translate};
use voxcorr::{BinaryVolume, Dims, Error, Result, ScalarVolume, VoxelSize};
use wasm_bindgen::prelude::*;

/// Largest grid the demo will build; keeps calls interactive.
const MAX_GRID: usize = 96;

#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct Panel {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    summary: String,
}

#[wasm_bindgen]
impl Panel {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// JSON text.
    pub fn summary(&self) -> String {
        self.summary.clone()
    }
}

impl Panel {
    fn new(img: &Image, summary: serde_json::Value) -> Self {
        let mut rgba = Vec::with_capacity(img.width * img.height * 4);
        for px in img.data.chunks(img.channels) {
            let (r, g, b) = if img.channels == 1 {
                (px[0], px[0], px[0])
            } else {
                (px[0], px[1], px[2])
            };
            rgba.extend_from_slice(&[r, g, b, 255]);
        }
        Self {
            width: img.width,
            height: img.height,
            rgba,
            summary: summary.to_string(),
        }
    }
}

fn plane(name: &str) -> Result<SlicePlane> {
    SlicePlane::ALL
        .into_iter()
        .find(|p| p.name() == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown plane `{name}`, expected xy, xz or yz")))
}

fn phantom(c: f64, grid: usize) -> Result<PhantomSpec> {
    if !(16..=MAX_GRID).contains(&grid) {
        return Err(Error::InvalidArgument(format!("grid must lie in 16..={MAX_GRID}")));
    }
    let mut spec = PhantomSpec::compact(c);
    // keep the 5 mm part filling the grid
    spec.tpms.voxel_size_um = 5000.0 / grid as f64;
    spec.dims = Dims::cube(grid);
    spec.plate_voxels = (grid / 32).max(1);
    spec.tpms.validate()?;
    // calibration needs walls of at least 3 voxels
    spec.clone().with_calibrated_band().or(Ok(spec))
}

fn take(images: Vec<(SlicePlane, Image)>, which: SlicePlane) -> Image {
    images
        .into_iter()
        .find(|(p, _)| *p == which)
        .map(|(_, img)| img)
        .expect("every plane is rendered")
}

/// Rendered CAD slice of a gyroid phantom.
pub fn phantom_panel(c: f64, grid: usize, plane_name: &str) -> Result<Panel> {
    let which = plane(plane_name)?;
    let spec = phantom(c, grid)?;
    let mask = spec.cad_mask()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gray = render_gray(&mask, 1.0, 0.0, 1.0, 0.0, &mut rng)?;
    let (lo, hi) = gray.min_max();
    let d = gray.dims();
    let (w, h) = which.shape(d);
    let mut data = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let v = gray.data()[which.voxel(d, col, row)];
            data.push((255.0 * (v - lo) / (hi - lo).max(f32::EPSILON)).round() as u8);
        }
    }
    let img = Image {
        width: w,
        height: h,
        channels: 1,
        data,
    };
    Ok(Panel::new(
        &img,
        json!({
            "c": c,
            "grid": grid,
            "voxel_size_um": spec.tpms.voxel_size_um,
            "band_halfwidth": spec.tpms.band_halfwidth,
            "solid_pct": 100.0 * mask.count() as f64 / d.len() as f64,
        }),
    ))
}

/// Difference map between a phantom and a shifted copy of itself.
pub fn shifted_overlap_panel(c: f64, grid: usize, shift: [i64; 3]) -> Result<Panel> {
    let spec = phantom(c, grid)?;
    let cad = spec.cad_mask()?;
    let moved = translate(&cad.to_scalar(), shift, 0.0);
    let xct = BinaryVolume::new(
        cad.dims(),
        cad.voxel_size(),
        moved.data().iter().map(|&v| v > 0.5).collect(),
    )?;
    let r = bdm(&xct, &cad)?;
    let img = take(bdm_slice_images(&r), SlicePlane::Xy);
    Ok(Panel::new(
        &img,
        json!({
            "shift": shift,
            "dice_pct": dice(&xct, &cad)?,
            "bdm_minus1_pct": r.summary.minus1,
            "bdm_zero_pct": r.summary.zero,
            "bdm_plus1_pct": r.summary.plus1,
        }),
    ))
}

/// Node correlation on a random texture translated by `shift`; the image is
/// the recovered x displacement on the central slice.
pub fn translation_panel(shift: [i64; 3], seed: u64) -> Result<Panel> {
    let d = Dims::cube(48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = ScalarVolume::from_fn(d, VoxelSize::iso(1.0), |_, _, _| rng.gen_range(0.0..1.0));
    let fixed = gaussian_blur(&noise, 1.5);
    let moving = translate(&fixed, shift, 0.5);
    let cfg = DvcConfig {
        node_spacing: 8,
        window_halfsize: 6,
        search_radius: 4,
        pyramid_levels: 2,
        min_correlation: 0.3,
    };
    let (dense, nodes) = multiscale_dvc(&moving, &fixed, &cfg)?;
    let n = nodes.displacement.len() as f64;
    let mean: Vec<f64> = (0..3)
        .map(|c| nodes.displacement.iter().map(|u| u[c]).sum::<f64>() / n)
        .collect();
    let worst = nodes
        .displacement
        .iter()
        .flat_map(|u| (0..3).map(move |c| (u[c] - shift[c] as f64).abs()))
        .fold(0.0f64, f64::max);
    let which = SlicePlane::Xy;
    let (w, h) = which.shape(d);
    let ux = dense.channel(0);
    let span = shift.iter().map(|s| s.unsigned_abs()).max().unwrap_or(0).max(1) as f32;
    let mut data = Vec::with_capacity(w * h * 3);
    for row in 0..h {
        for col in 0..w {
            // red for +x, blue for -x
            let v = (ux[which.voxel(d, col, row)] / span).clamp(-1.0, 1.0);
            let a = (255.0 * v.abs()).round() as u8;
            data.extend_from_slice(&if v >= 0.0 {
                [255, 255 - a, 255 - a]
            } else {
                [255 - a, 255 - a, 255]
            });
        }
    }
    let img = Image {
        width: w,
        height: h,
        channels: 3,
        data,
    };
    Ok(Panel::new(
        &img,
        json!({
            "shift": shift,
            "mean_node_displacement": mean,
            "max_component_error": worst,
            "valid_nodes": nodes.valid_count(),
            "nodes": nodes.positions.len(),
        }),
    ))
}

fn js(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub fn phantom_slice(c: f64, grid: usize, plane: &str) -> std::result::Result<Panel, JsValue> {
    phantom_panel(c, grid, plane).map_err(js)
}

#[wasm_bindgen]
pub fn shifted_overlap(c: f64, grid: usize, sx: i32, sy: i32, sz: i32) -> std::result::Result<Panel, JsValue> {
    shifted_overlap_panel(c, grid, [sx.into(), sy.into(), sz.into()]).map_err(js)
}

#[wasm_bindgen]
pub fn recover_translation(sx: i32, sy: i32, sz: i32, seed: u32) -> std::result::Result<Panel, JsValue> {
    translation_panel([sx.into(), sy.into(), sz.into()], seed.into()).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(p: &Panel) -> serde_json::Value {
        serde_json::from_str(&p.summary()).unwrap()
    }

    #[test]
    fn phantom_slice_shape() {
        let p = phantom_panel(-0.3, 32, "xz").unwrap();
        assert_eq!((p.width, p.height), (32, 32));
        assert_eq!(p.rgba().len(), 32 * 32 * 4);
        assert!(summary(&p)["solid_pct"].as_f64().unwrap() > 0.0);
        assert!(phantom_panel(0.0, 32, "zz").is_err());
        assert!(phantom_panel(0.0, 500, "xy").is_err());
    }

    #[test]
    fn zero_shift_is_perfect_overlap() {
        let s = summary(&shifted_overlap_panel(0.0, 32, [0, 0, 0]).unwrap());
        assert_eq!(s["dice_pct"], 100.0);
        assert_eq!(s["bdm_zero_pct"], 100.0);
        let s = summary(&shifted_overlap_panel(0.0, 32, [2, 0, 0]).unwrap());
        assert!(s["dice_pct"].as_f64().unwrap() < 100.0);
    }

    #[test]
    fn translation_is_recovered() {
        let s = summary(&translation_panel([2, -1, 3], 5).unwrap());
        assert!(s["max_component_error"].as_f64().unwrap() <= 0.25, "{s}");
    }
}

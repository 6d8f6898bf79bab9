//! Central orthogonal slices as binary PGM/PPM images.

use std::path::{Path, PathBuf};

use super::BdmResult;
use crate::preprocess::binarize;
use crate::{BinaryVolume, Dims, DisplacementField, Error, Result, ScalarVolume};

const GREEN: [u8; 3] = [0, 200, 0];
const BLUE: [u8; 3] = [0, 0, 255];
const WHITE: [u8; 3] = [255, 255, 255];
const RED: [u8; 3] = [255, 0, 0];
const LIGHT_GRAY: [u8; 3] = [220, 220, 220];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlicePlane {
    Xy,
    Xz,
    Yz,
}

impl SlicePlane {
    pub const ALL: [SlicePlane; 3] = [SlicePlane::Xz, SlicePlane::Yz, SlicePlane::Xy];

    pub fn name(self) -> &'static str {
        match self {
            SlicePlane::Xy => "xy",
            SlicePlane::Xz => "xz",
            SlicePlane::Yz => "yz",
        }
    }

    /// Image width and height of the central slice.
    pub fn shape(self, d: Dims) -> (usize, usize) {
        match self {
            SlicePlane::Xy => (d.nx, d.ny),
            SlicePlane::Xz => (d.nx, d.nz),
            SlicePlane::Yz => (d.ny, d.nz),
        }
    }

    /// Voxel index under pixel `(col, row)`. Vertical planes put z = 0 on
    /// the bottom row.
    pub fn voxel(self, d: Dims, col: usize, row: usize) -> usize {
        match self {
            SlicePlane::Xy => d.index(col, row, d.nz / 2),
            SlicePlane::Xz => d.index(col, d.ny / 2, d.nz - 1 - row),
            SlicePlane::Yz => d.index(d.nx / 2, col, d.nz - 1 - row),
        }
    }

    fn render(self, d: Dims, channels: usize, mut pixel: impl FnMut(usize) -> [u8; 3]) -> Image {
        let (w, h) = self.shape(d);
        let mut data = Vec::with_capacity(w * h * channels);
        for row in 0..h {
            for col in 0..w {
                let p = pixel(self.voxel(d, col, row));
                data.extend_from_slice(&p[..channels]);
            }
        }
        Image {
            width: w,
            height: h,
            channels,
            data,
        }
    }
}

/// 8-bit raster with one (gray) or three (RGB) channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, col: usize, row: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// `P5` for gray, `P6` for RGB, maxval 255.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("netpbm: {m}"));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
        }
        let channels = match fields[0] {
            "P5" => 1,
            "P6" => 3,
            m => return Err(bad(&format!("unsupported magic {m}"))),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
        let (width, height) = (num(fields[1])?, num(fields[2])?);
        if num(fields[3])? != 255 {
            return Err(bad("maxval must be 255"));
        }
        let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?.to_vec();
        if data.len() != width * height * channels {
            return Err(Error::Truncated(format!(
                "raster has {} bytes, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }
}

fn gray_levels(vol: &ScalarVolume) -> Vec<u8> {
    let (lo, hi) = vol.min_max();
    let span = hi - lo;
    vol.data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

/// CAD-only foreground green, XCT intensity gray, overlap blended half and half.
pub fn overlay_slice_images(fixed: &ScalarVolume, moving: &ScalarVolume) -> Result<Vec<(SlicePlane, Image)>> {
    let d = fixed.dims();
    d.ensure_same(&moving.dims(), "overlay")?;
    let cad = binarize(fixed);
    let xct = binarize(moving);
    let gray = gray_levels(moving);
    Ok(SlicePlane::ALL
        .iter()
        .map(|&plane| {
            let img = plane.render(d, 3, |i| {
                let g = gray[i];
                match (cad.mask()[i], xct.mask()[i]) {
                    (true, false) => GREEN,
                    (true, true) => {
                        let mix = |a: u8, b: u8| (u16::from(a) + u16::from(b)).div_ceil(2) as u8;
                        [mix(g, GREEN[0]), mix(g, GREEN[1]), mix(g, GREEN[2])]
                    }
                    _ => [g, g, g],
                }
            });
            (plane, img)
        })
        .collect())
}

/// Blue for missing, white for match, red for excess, light gray off the union.
pub fn bdm_slice_images(bdm: &BdmResult) -> Vec<(SlicePlane, Image)> {
    SlicePlane::ALL
        .iter()
        .map(|&plane| {
            let img = plane.render(bdm.dims, 3, |i| match bdm.map[i] {
                -1 => BLUE,
                0 => WHITE,
                1 => RED,
                _ => LIGHT_GRAY,
            });
            (plane, img)
        })
        .collect()
}

/// Displacement magnitude, min-max scaled over the mask, background black.
///
/// A constant magnitude cannot be scaled: zero renders black, anything else
/// uniform mid-gray.
pub fn magnitude_slice_images(disp: &DisplacementField, mask: &BinaryVolume) -> Result<Vec<(SlicePlane, Image)>> {
    let d = disp.dims();
    d.ensure_same(&mask.dims(), "magnitude mask")?;
    let mag = disp.magnitude();
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for (&m, &v) in mask.mask().iter().zip(&mag) {
        if m {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let level = |v: f32| -> u8 {
        if hi > lo {
            (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8
        } else if hi > 0.0 {
            128
        } else {
            0
        }
    };
    Ok(SlicePlane::ALL
        .iter()
        .map(|&plane| {
            let img = plane.render(d, 1, |i| {
                let g = if mask.mask()[i] { level(mag[i]) } else { 0 };
                [g, g, g]
            });
            (plane, img)
        })
        .collect())
}

fn write_images(images: Vec<(SlicePlane, Image)>, out_dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::at_path(out_dir, e))?;
    images
        .into_iter()
        .map(|(plane, img)| {
            let ext = if img.channels == 1 { "pgm" } else { "ppm" };
            let path = out_dir.join(format!("{stem}_{}.{ext}", plane.name()));
            std::fs::write(&path, img.encode()).map_err(|e| Error::at_path(&path, e))?;
            Ok(path)
        })
        .collect()
}

pub fn export_overlay_slices(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    out_dir: impl AsRef<Path>,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    write_images(overlay_slice_images(fixed, moving)?, out_dir.as_ref(), stem)
}

pub fn export_bdm_slices(bdm: &BdmResult, out_dir: impl AsRef<Path>, stem: &str) -> Result<Vec<PathBuf>> {
    write_images(bdm_slice_images(bdm), out_dir.as_ref(), stem)
}

pub fn export_displacement_magnitude(
    disp: &DisplacementField,
    mask: &BinaryVolume,
    out_dir: impl AsRef<Path>,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    write_images(magnitude_slice_images(disp, mask)?, out_dir.as_ref(), stem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::bdm;
    use crate::VoxelSize;

    fn block(d: Dims, v: f32) -> ScalarVolume {
        ScalarVolume::from_fn(d, VoxelSize::iso(1.0), |x, y, z| {
            if (2..6).contains(&x) && (1..5).contains(&y) && (2..7).contains(&z) {
                v
            } else {
                0.0
            }
        })
    }

    #[test]
    fn image_shapes_follow_slices() {
        let d = Dims::new(8, 6, 9);
        let v = block(d, 1.0);
        let imgs = overlay_slice_images(&v, &v).unwrap();
        for (plane, img) in &imgs {
            assert_eq!((img.width, img.height), plane.shape(d));
            assert_eq!(img.data.len(), img.width * img.height * 3);
        }
    }

    #[test]
    fn identical_volumes_have_no_green_only_pixels() {
        let d = Dims::cube(10);
        let v = block(d, 1.0);
        for (_, img) in overlay_slice_images(&v, &v).unwrap() {
            assert!(img.data.chunks(3).all(|p| p != GREEN));
        }
    }

    #[test]
    fn empty_xct_leaves_cad_green() {
        let d = Dims::cube(10);
        let cad = block(d, 1.0);
        let empty = ScalarVolume::zeros(d, VoxelSize::iso(1.0));
        let bin = binarize(&cad);
        for (plane, img) in overlay_slice_images(&cad, &empty).unwrap() {
            for row in 0..img.height {
                for col in 0..img.width {
                    let fg = bin.mask()[plane.voxel(d, col, row)];
                    assert_eq!(img.pixel(col, row) == GREEN, fg);
                }
            }
        }
    }

    #[test]
    fn single_excess_voxel_is_one_red_pixel() {
        let d = Dims::cube(9);
        let v = VoxelSize::iso(1.0);
        let cad = BinaryVolume::from_fn(d, v, |x, _, _| x < 4);
        let mut xct = cad.clone();
        xct.set(6, 2, 4, true);
        let r = bdm(&xct, &cad).unwrap();
        let (_, xy) = bdm_slice_images(&r)
            .into_iter()
            .find(|(p, _)| *p == SlicePlane::Xy)
            .unwrap();
        assert_eq!(xy.data.chunks(3).filter(|p| *p == RED).count(), 1);
        assert_eq!(xy.pixel(6, 2), RED);
    }

    #[test]
    fn slice_histogram_matches_percentages() {
        // a single z-slice makes the xy image the whole volume
        let d = Dims::new(13, 11, 1);
        let v = VoxelSize::iso(1.0);
        let cad = BinaryVolume::from_fn(d, v, |x, y, _| (x * 7 + y * 3) % 5 < 2);
        let xct = BinaryVolume::from_fn(d, v, |x, y, _| (x + 2 * y) % 3 == 0);
        let r = bdm(&xct, &cad).unwrap();
        let (_, xy) = bdm_slice_images(&r)
            .into_iter()
            .find(|(p, _)| *p == SlicePlane::Xy)
            .unwrap();
        let count = |c: [u8; 3]| xy.data.chunks(3).filter(|p| *p == c).count() as f64;
        let union = count(BLUE) + count(WHITE) + count(RED);
        assert!((100.0 * count(BLUE) / union - r.summary.minus1).abs() < 1e-9);
        assert!((100.0 * count(WHITE) / union - r.summary.zero).abs() < 1e-9);
        assert!((100.0 * count(RED) / union - r.summary.plus1).abs() < 1e-9);
        assert_eq!(count(LIGHT_GRAY) + union, (d.nx * d.ny) as f64);
    }

    #[test]
    fn magnitude_images() {
        let d = Dims::cube(6);
        let v = VoxelSize::iso(1.0);
        let full = BinaryVolume::full(d, v);
        let zero = DisplacementField::zeros(d, v);
        for (_, img) in magnitude_slice_images(&zero, &full).unwrap() {
            assert!(img.data.iter().all(|&p| p == 0));
        }
        let constant = DisplacementField::constant(d, v, [3.0, 0.0, 0.0]);
        for (_, img) in magnitude_slice_images(&constant, &full).unwrap() {
            assert!(img.data.iter().all(|&p| p == img.data[0]));
        }
        // one voxel at |(1,2,2)| = 3 against a maximum of 6 and a minimum of 0
        let field = DisplacementField::from_fn(d, v, |x, y, z| match (x, y, z) {
            (1, 1, 3) => [1.0, 2.0, 2.0],
            (4, 4, 3) => [0.0, 6.0, 0.0],
            _ => [0.0; 3],
        });
        let (_, xy) = magnitude_slice_images(&field, &full)
            .unwrap()
            .into_iter()
            .find(|(p, _)| *p == SlicePlane::Xy)
            .unwrap();
        assert_eq!(xy.pixel(1, 1)[0], 128);
        assert_eq!(xy.pixel(4, 4)[0], 255);
        let bg = BinaryVolume::from_fn(d, v, |x, _, _| x != 4);
        let (_, xy) = magnitude_slice_images(&field, &bg)
            .unwrap()
            .into_iter()
            .find(|(p, _)| *p == SlicePlane::Xy)
            .unwrap();
        assert_eq!(xy.pixel(4, 4)[0], 0);
    }

    #[test]
    fn netpbm_round_trip_and_files() {
        let d = Dims::new(5, 4, 3);
        let v = block(d, 2.0);
        let dir = tempfile::tempdir().unwrap();
        let paths = export_overlay_slices(&v, &v, dir.path(), "ov").unwrap();
        assert_eq!(paths.len(), 3);
        for p in &paths {
            let bytes = std::fs::read(p).unwrap();
            assert!(bytes.starts_with(b"P6\n"));
            let img = Image::decode(&bytes).unwrap();
            assert_eq!(img.encode(), bytes);
        }
        let full = BinaryVolume::full(d, VoxelSize::iso(1.0));
        let zero = DisplacementField::zeros(d, VoxelSize::iso(1.0));
        let paths = export_displacement_magnitude(&zero, &full, dir.path(), "mag").unwrap();
        assert!(paths.iter().all(|p| p.extension().unwrap() == "pgm"));
        assert!(Image::decode(b"P6\n2 2\n255\nabc").is_err());
    }
}

use crate::{Dims, ScalarVolume};

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable Gaussian blur over a raw grid with edge-clamped borders.
///
/// `sigma <= 0` leaves the data untouched.
pub fn gaussian_blur_slice(data: &mut [f32], dims: Dims, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let k = kernel(sigma);
    let r = (k.len() / 2) as isize;
    let [nx, ny, nz] = dims.as_array();
    let mut line = Vec::new();
    // (extent, stride, number of lines, start index of line j)
    let strides = [1usize, nx, nx * ny];
    let extents = [nx, ny, nz];
    for axis in 0..3 {
        let n = extents[axis];
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        line.resize(n, 0.0f64);
        for z in 0..if axis == 2 { 1 } else { nz } {
            for y in 0..if axis == 1 { 1 } else { ny } {
                for x in 0..if axis == 0 { 1 } else { nx } {
                    let base = dims.index(x, y, z);
                    for (i, l) in line.iter_mut().enumerate() {
                        *l = f64::from(data[base + i * stride]);
                    }
                    for i in 0..n {
                        let mut acc = 0.0;
                        for (j, w) in k.iter().enumerate() {
                            let p = (i as isize + j as isize - r).clamp(0, n as isize - 1);
                            acc += w * line[p as usize];
                        }
                        data[base + i * stride] = acc as f32;
                    }
                }
            }
        }
    }
}

pub fn gaussian_blur(vol: &ScalarVolume, sigma: f64) -> ScalarVolume {
    let mut out = vol.clone();
    let dims = out.dims();
    gaussian_blur_slice(out.data_mut(), dims, sigma);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::VoxelSize;

    #[test]
    fn blur_preserves_constants_and_mass_in_interior() {
        let dims = Dims::cube(9);
        let c = ScalarVolume::filled(dims, VoxelSize::iso(1.0), 2.5);
        let b = gaussian_blur(&c, 1.3);
        assert!(b.data().iter().all(|v| (v - 2.5).abs() < 1e-5));

        let mut d = ScalarVolume::zeros(Dims::cube(21), VoxelSize::iso(1.0));
        d.set(10, 10, 10, 1.0);
        let b = gaussian_blur(&d, 1.0);
        let s: f32 = b.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
        assert!(b.get(10, 10, 10) > b.get(11, 10, 10));
        assert!((b.get(11, 10, 10) - b.get(10, 9, 10)).abs() < 1e-7);
    }
}

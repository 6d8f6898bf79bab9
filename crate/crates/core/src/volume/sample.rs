//! Trilinear sampling and the spatial-transformer warp.
//!
//! Points outside `[0, n - 1]` are clamped to the nearest edge voxel, so
//! sampling is total. The clamped coordinate has zero derivative.

use crate::real::Real;
use crate::{Dims, DisplacementField, Error, Result, ScalarVolume};

/// Lower lattice index, fractional weight, and d(frac)/d(point) along one axis.
#[inline]
fn axis<T: Real>(p: T, n: usize) -> (usize, usize, T, T) {
    if n == 1 {
        return (0, 0, T::zero(), T::zero());
    }
    let hi = T::of((n - 1) as f64);
    let (pc, d) = if p < T::zero() {
        (T::zero(), T::zero())
    } else if p > hi {
        (hi, T::zero())
    } else {
        (p, T::one())
    };
    let i0 = pc.floor().as_f64() as usize;
    let i0 = i0.min(n - 2);
    let f = pc - T::of(i0 as f64);
    (i0, i0 + 1, f, d)
}

/// Edge-clamped trilinear interpolation of `data` at `point = [x, y, z]`.
pub fn trilinear<T: Real>(data: &[T], dims: Dims, point: [T; 3]) -> T {
    trilinear_with_grad(data, dims, point).0
}

/// Trilinear value plus its gradient with respect to the sample point.
pub fn trilinear_with_grad<T: Real>(data: &[T], dims: Dims, point: [T; 3]) -> (T, [T; 3]) {
    let (x0, x1, fx, dx) = axis(point[0], dims.nx);
    let (y0, y1, fy, dy) = axis(point[1], dims.ny);
    let (z0, z1, fz, dz) = axis(point[2], dims.nz);
    let v = |x: usize, y: usize, z: usize| data[dims.index(x, y, z)];

    let c000 = v(x0, y0, z0);
    let c100 = v(x1, y0, z0);
    let c010 = v(x0, y1, z0);
    let c110 = v(x1, y1, z0);
    let c001 = v(x0, y0, z1);
    let c101 = v(x1, y0, z1);
    let c011 = v(x0, y1, z1);
    let c111 = v(x1, y1, z1);

    let one = T::one();
    // weighted form so that integer sample points return stored values exactly
    let lerp = |a: T, b: T, f: T| a * (one - f) + b * f;
    let c00 = lerp(c000, c100, fx);
    let c10 = lerp(c010, c110, fx);
    let c01 = lerp(c001, c101, fx);
    let c11 = lerp(c011, c111, fx);
    let c0 = lerp(c00, c10, fy);
    let c1 = lerp(c01, c11, fy);
    let value = lerp(c0, c1, fz);

    let gz = (c1 - c0) * dz;
    let gy = ((c10 - c00) * (one - fz) + (c11 - c01) * fz) * dy;
    let ex0 = (c100 - c000) * (one - fy) + (c110 - c010) * fy;
    let ex1 = (c101 - c001) * (one - fy) + (c111 - c011) * fy;
    let gx = (ex0 * (one - fz) + ex1 * fz) * dx;
    (value, [gx, gy, gz])
}

/// `out[v] = moving(v + u(v))` over raw slices; `disp` is channel-major.
pub fn warp_slice<T: Real>(moving: &[T], disp: &[T], dims: Dims) -> Vec<T> {
    let n = dims.len();
    debug_assert_eq!(moving.len(), n);
    debug_assert_eq!(disp.len(), 3 * n);
    let mut out = Vec::with_capacity(n);
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = dims.index(x, y, z);
                let p = [
                    T::of(x as f64) + disp[i],
                    T::of(y as f64) + disp[n + i],
                    T::of(z as f64) + disp[2 * n + i],
                ];
                out.push(trilinear(moving, dims, p));
            }
        }
    }
    out
}

/// Gradient of a scalar loss with respect to `disp`, given `grad_out = dL/d(out)`.
pub fn warp_backward<T: Real>(moving: &[T], disp: &[T], dims: Dims, grad_out: &[T]) -> Vec<T> {
    let n = dims.len();
    let mut grad = vec![T::zero(); 3 * n];
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = dims.index(x, y, z);
                let g = grad_out[i];
                if g == T::zero() {
                    continue;
                }
                let p = [
                    T::of(x as f64) + disp[i],
                    T::of(y as f64) + disp[n + i],
                    T::of(z as f64) + disp[2 * n + i],
                ];
                let (_, d) = trilinear_with_grad(moving, dims, p);
                grad[i] = g * d[0];
                grad[n + i] = g * d[1];
                grad[2 * n + i] = g * d[2];
            }
        }
    }
    grad
}

/// Spatial-transformer warp: `out(x) = moving(x + u(x))`.
pub fn warp(moving: &ScalarVolume, disp: &DisplacementField) -> Result<ScalarVolume> {
    moving.dims().ensure_same(&disp.dims(), "warp")?;
    let out = warp_slice(moving.data(), disp.data(), moving.dims());
    moving.with_data(out)
}

/// Analytic `dL/du` for a loss on `warp(moving, disp)` with upstream gradient `grad_out`.
pub fn warp_gradient(moving: &ScalarVolume, disp: &DisplacementField, grad_out: &[f32]) -> Result<DisplacementField> {
    moving.dims().ensure_same(&disp.dims(), "warp_gradient")?;
    if grad_out.len() != moving.dims().len() {
        return Err(Error::DimMismatch(format!(
            "upstream gradient has {} values, volume has {}",
            grad_out.len(),
            moving.dims().len()
        )));
    }
    let g = warp_backward(moving.data(), disp.data(), moving.dims(), grad_out);
    DisplacementField::new(disp.dims(), disp.voxel_size(), g)
}

/// Approximate inverse of a displacement field by fixed-point iteration
/// `g <- -u(y + g(y))`, starting from `g = -u`.
pub fn invert_field(disp: &DisplacementField, iterations: usize) -> Result<DisplacementField> {
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "invert_field needs at least one iteration".into(),
        ));
    }
    if disp.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("invert_field input".into()));
    }
    let dims = disp.dims();
    let n = dims.len();
    let u = disp.data();
    let mut g: Vec<f32> = u.iter().map(|v| -v).collect();
    let mut next = vec![0.0f32; 3 * n];
    for _ in 0..iterations {
        for i in 0..n {
            let (x, y, z) = dims.coords(i);
            let p = [x as f32 + g[i], y as f32 + g[n + i], z as f32 + g[2 * n + i]];
            for c in 0..3 {
                next[c * n + i] = -trilinear(&u[c * n..(c + 1) * n], dims, p);
            }
        }
        std::mem::swap(&mut g, &mut next);
    }
    DisplacementField::new(dims, disp.voxel_size(), g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::VoxelSize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vs() -> VoxelSize {
        VoxelSize::iso(1.0)
    }

    #[test]
    fn lattice_point_returns_voxel_value() {
        let mut vol = ScalarVolume::zeros(Dims::cube(3), vs());
        vol.set(1, 1, 1, 5.0);
        assert_eq!(vol.trilinear_sample([1.0, 1.0, 1.0]), 5.0);
    }

    #[test]
    fn midpoint_is_average_and_outside_is_clamped() {
        let vol = ScalarVolume::new(Dims::new(2, 1, 1), vs(), vec![0.0, 10.0]).unwrap();
        assert_eq!(vol.trilinear_sample([0.5, 0.0, 0.0]), 5.0);
        assert_eq!(vol.trilinear_sample([-3.2, 0.0, 0.0]), 0.0);
        assert_eq!(vol.trilinear_sample([7.0, 0.0, 0.0]), 10.0);
    }

    #[test]
    fn zero_field_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = Dims::new(5, 6, 7);
        let vol = ScalarVolume::from_fn(dims, vs(), |_, _, _| rng.gen());
        let out = warp(&vol, &DisplacementField::zeros(dims, vs())).unwrap();
        assert_eq!(out, vol);
    }

    #[test]
    fn unit_shift_pulls_content_backward() {
        let dims = Dims::cube(10);
        let mut vol = ScalarVolume::zeros(dims, vs());
        vol.set(5, 5, 5, 1.0);
        let out = warp(&vol, &DisplacementField::constant(dims, vs(), [1.0, 0.0, 0.0])).unwrap();
        assert_eq!(out.get(4, 5, 5), 1.0);
        assert_eq!(out.get(5, 5, 5), 0.0);
    }

    #[test]
    fn warp_rejects_mismatched_dims() {
        let vol = ScalarVolume::zeros(Dims::cube(4), vs());
        let disp = DisplacementField::zeros(Dims::cube(5), vs());
        assert!(matches!(warp(&vol, &disp), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn constant_field_inverts_to_negation() {
        let dims = Dims::cube(6);
        let u = DisplacementField::constant(dims, vs(), [1.25, -0.5, 2.0]);
        let g = invert_field(&u, 8).unwrap();
        assert_eq!(g, DisplacementField::constant(dims, vs(), [-1.25, 0.5, -2.0]));
        let z = DisplacementField::zeros(dims, vs());
        assert_eq!(invert_field(&z, 8).unwrap(), z);
    }

    #[test]
    fn invert_rejects_non_finite_and_zero_iterations() {
        let dims = Dims::cube(2);
        let mut u = DisplacementField::zeros(dims, vs());
        assert!(invert_field(&u, 0).is_err());
        u.data_mut()[3] = f32::NAN;
        assert!(matches!(invert_field(&u, 4), Err(Error::NonFinite(_))));
    }
}

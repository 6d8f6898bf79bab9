//! Similarity and smoothness losses with analytic gradients.
//!
//! Internally accumulated in f64 whatever the caller's precision.

use crate::real::Real;
use crate::Dims;

pub const NCC_EPS: f64 = 1e-5;

/// Zero-padded centred box sum with odd width `w`, separable. Self-adjoint.
fn box_sum(data: &[f64], d: Dims, w: usize) -> Vec<f64> {
    let r = (w / 2) as isize;
    let mut cur = data.to_vec();
    let mut line = Vec::new();
    let mut prefix = Vec::new();
    for axis in 0..3 {
        let (len, stride) = match axis {
            0 => (d.nx, 1),
            1 => (d.ny, d.nx),
            _ => (d.nz, d.nx * d.ny),
        };
        let mut next = vec![0.0; cur.len()];
        let starts: Vec<usize> = (0..d.len())
            .filter(|&i| {
                let (x, y, z) = d.coords(i);
                match axis {
                    0 => x == 0,
                    1 => y == 0,
                    _ => z == 0,
                }
            })
            .collect();
        for s in starts {
            line.clear();
            line.extend((0..len).map(|j| cur[s + j * stride]));
            prefix.clear();
            prefix.push(0.0);
            let mut acc = 0.0;
            for &v in &line {
                acc += v;
                prefix.push(acc);
            }
            for j in 0..len as isize {
                let lo = (j - r).max(0) as usize;
                let hi = ((j + r + 1).min(len as isize)) as usize;
                next[s + j as usize * stride] = prefix[hi] - prefix[lo];
            }
        }
        cur = next;
    }
    cur
}

/// Local squared normalized cross-correlation over `window³` neighbourhoods.
///
/// Returns `-mean(cc)` and its gradient with respect to `a`.
pub fn ncc_loss<T: Real>(a: &[T], b: &[T], dims: Dims, window: usize) -> (T, Vec<T>) {
    let n = dims.len();
    let ia: Vec<f64> = a.iter().map(|v| v.as_f64()).collect();
    let jb: Vec<f64> = b.iter().map(|v| v.as_f64()).collect();
    // in-grid voxel count per window, so that means ignore the zero padding
    let ws = box_sum(&vec![1.0; n], dims, window);
    let prod = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..n).map(f).collect() };
    let is = box_sum(&ia, dims, window);
    let js = box_sum(&jb, dims, window);
    let i2 = box_sum(&prod(&|k| ia[k] * ia[k]), dims, window);
    let j2 = box_sum(&prod(&|k| jb[k] * jb[k]), dims, window);
    let ij = box_sum(&prod(&|k| ia[k] * jb[k]), dims, window);

    let mut total = 0.0;
    let mut c_ij = vec![0.0; n];
    let mut c_is = vec![0.0; n];
    let mut c_i2 = vec![0.0; n];
    for k in 0..n {
        let cross = ij[k] - is[k] * js[k] / ws[k];
        let ivar = i2[k] - is[k] * is[k] / ws[k];
        let jvar = j2[k] - js[k] * js[k] / ws[k];
        let den = ivar * jvar + NCC_EPS;
        total += cross * cross / den;
        let d_cross = 2.0 * cross / den;
        let d_ivar = -cross * cross * jvar / (den * den);
        c_ij[k] = d_cross;
        c_is[k] = -d_cross * js[k] / ws[k] - 2.0 * d_ivar * is[k] / ws[k];
        c_i2[k] = d_ivar;
    }
    let b_ij = box_sum(&c_ij, dims, window);
    let b_is = box_sum(&c_is, dims, window);
    let b_i2 = box_sum(&c_i2, dims, window);
    let scale = -1.0 / n as f64;
    let grad = (0..n)
        .map(|k| T::of(scale * (jb[k] * b_ij[k] + b_is[k] + 2.0 * ia[k] * b_i2[k])))
        .collect();
    (T::of(-total / n as f64), grad)
}

/// Mean over the three axes of the mean squared forward difference
/// (all channels, last slice per axis excluded). `disp` is channel-major.
pub fn grad_l2_loss<T: Real>(disp: &[T], dims: Dims) -> (T, Vec<T>) {
    let n = dims.len();
    let channels = disp.len() / n;
    let mut grad = vec![0.0f64; disp.len()];
    let mut total = 0.0;
    for axis in 0..3 {
        let (len, stride) = match axis {
            0 => (dims.nx, 1),
            1 => (dims.ny, dims.nx),
            _ => (dims.nz, dims.nx * dims.ny),
        };
        if len < 2 {
            continue;
        }
        let count = (channels * n / len * (len - 1)) as f64;
        let mut sum = 0.0;
        for c in 0..channels {
            let base = c * n;
            for i in 0..n {
                let (x, y, z) = dims.coords(i);
                let pos = [x, y, z][axis];
                if pos + 1 >= len {
                    continue;
                }
                let diff = disp[base + i + stride].as_f64() - disp[base + i].as_f64();
                sum += diff * diff;
                let g = 2.0 * diff / (3.0 * count);
                grad[base + i + stride] += g;
                grad[base + i] -= g;
            }
        }
        total += sum / count;
    }
    (T::of(total / 3.0), grad.into_iter().map(T::of).collect())
}

/// `ncc(moved, fixed) + lambda * grad_l2(disp)` with gradients for `moved` and `disp`.
pub struct TotalLoss<T> {
    pub value: T,
    pub similarity: T,
    pub smoothness: T,
    pub grad_moved: Vec<T>,
    pub grad_disp: Vec<T>,
}

pub fn total_loss<T: Real>(moved: &[T], fixed: &[T], disp: &[T], dims: Dims, window: usize, lambda: T) -> TotalLoss<T> {
    let (sim, grad_moved) = ncc_loss(moved, fixed, dims, window);
    let (smooth, g) = grad_l2_loss(disp, dims);
    TotalLoss {
        value: sim + lambda * smooth,
        similarity: sim,
        smoothness: smooth,
        grad_moved,
        grad_disp: g.into_iter().map(|v| v * lambda).collect(),
    }
}

//! Differentiable 3D layers on channel-major feature grids.

use crate::real::Real;
use crate::{Dims, Error, Result};

/// `channels` planes over `dims`, channel-major, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Features<T> {
    pub channels: usize,
    pub dims: Dims,
    pub data: Vec<T>,
}

impl<T: Real> Features<T> {
    pub fn new(channels: usize, dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * dims.len() {
            return Err(Error::DimMismatch(format!(
                "{} values for {channels} channels over {dims}",
                data.len()
            )));
        }
        Ok(Self { channels, dims, data })
    }

    pub fn zeros(channels: usize, dims: Dims) -> Self {
        Self {
            channels,
            dims,
            data: vec![T::zero(); channels * dims.len()],
        }
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Stack `self` then `other` along channels.
    pub fn concat(&self, other: &Features<T>) -> Result<Features<T>> {
        self.dims.ensure_same(&other.dims, "channel concat")?;
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Features {
            channels: self.channels + other.channels,
            dims: self.dims,
            data,
        })
    }

    /// Inverse of [`concat`](Self::concat) for gradients: the first `first` channels, then the rest.
    pub fn split_at(self, first: usize) -> (Features<T>, Features<T>) {
        let n = self.dims.len();
        let mut a = self.data;
        let b = a.split_off(first * n);
        let rest = self.channels - first;
        (
            Features {
                channels: first,
                dims: self.dims,
                data: a,
            },
            Features {
                channels: rest,
                dims: self.dims,
                data: b,
            },
        )
    }
}

/// Weights of one same-padded 3D convolution.
///
/// Kernel layout `[cout, cin, k, k, k]` with the last index along x.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv<T> {
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        Self {
            cin,
            cout,
            k,
            kernel: vec![T::zero(); cout * cin * k * k * k],
            bias: vec![T::zero(); cout],
        }
    }

    fn taps(&self) -> usize {
        self.k * self.k * self.k
    }

    fn offsets(&self) -> impl Iterator<Item = (usize, [isize; 3])> {
        let k = self.k as isize;
        let r = k / 2;
        (0..k * k * k).map(move |t| {
            let dx = t % k - r;
            let dy = (t / k) % k - r;
            let dz = t / (k * k) - r;
            (t as usize, [dx, dy, dz])
        })
    }
}

/// Copy `src` shifted by `off` into `dst`: `dst[c](v) = src[c](v + off)`, zero outside.
fn gather_shift<T: Real>(src: &[T], channels: usize, d: Dims, off: [isize; 3], dst: &mut [T]) {
    let n = d.len();
    let (nx, ny, nz) = (d.nx as isize, d.ny as isize, d.nz as isize);
    let x0 = (-off[0]).max(0);
    let x1 = (nx - off[0]).min(nx);
    for c in 0..channels {
        let s = &src[c * n..(c + 1) * n];
        let o = &mut dst[c * n..(c + 1) * n];
        for z in 0..nz {
            let sz = z + off[2];
            for y in 0..ny {
                let sy = y + off[1];
                let row = ((z * ny + y) * nx) as usize;
                let out = &mut o[row..row + d.nx];
                if sz < 0 || sz >= nz || sy < 0 || sy >= ny || x0 >= x1 {
                    out.fill(T::zero());
                    continue;
                }
                let srow = ((sz * ny + sy) * nx) as usize;
                out[..x0 as usize].fill(T::zero());
                out[x1 as usize..].fill(T::zero());
                let a = (x0 + off[0]) as usize;
                let b = (x1 + off[0]) as usize;
                out[x0 as usize..x1 as usize].copy_from_slice(&s[srow + a..srow + b]);
            }
        }
    }
}

/// Adjoint of [`gather_shift`]: `dst[c](v + off) += src[c](v)`.
fn scatter_add_shift<T: Real>(src: &[T], channels: usize, d: Dims, off: [isize; 3], dst: &mut [T]) {
    let n = d.len();
    let (nx, ny, nz) = (d.nx as isize, d.ny as isize, d.nz as isize);
    let x0 = (-off[0]).max(0);
    let x1 = (nx - off[0]).min(nx);
    if x0 >= x1 {
        return;
    }
    for c in 0..channels {
        let s = &src[c * n..(c + 1) * n];
        let o = &mut dst[c * n..(c + 1) * n];
        for z in 0..nz {
            let sz = z + off[2];
            if sz < 0 || sz >= nz {
                continue;
            }
            for y in 0..ny {
                let sy = y + off[1];
                if sy < 0 || sy >= ny {
                    continue;
                }
                let row = ((z * ny + y) * nx) as usize;
                let drow = ((sz * ny + sy) * nx) as usize;
                let a = (x0 + off[0]) as usize;
                for (t, v) in o[drow + a..drow + a + (x1 - x0) as usize]
                    .iter_mut()
                    .zip(&s[row + x0 as usize..row + x1 as usize])
                {
                    *t += *v;
                }
            }
        }
    }
}

/// Same-padded cross-correlation plus bias.
pub fn conv3d<T: Real>(input: &Features<T>, conv: &Conv<T>) -> Result<Features<T>> {
    if input.channels != conv.cin {
        return Err(Error::DimMismatch(format!(
            "conv expects {} input channels, got {}",
            conv.cin, input.channels
        )));
    }
    if conv.k.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("kernel size {} is even", conv.k)));
    }
    let d = input.dims;
    let n = d.len();
    let (cin, cout, taps) = (conv.cin, conv.cout, conv.taps());
    let mut out = vec![T::zero(); cout * n];
    for o in 0..cout {
        out[o * n..(o + 1) * n].fill(conv.bias[o]);
    }
    let mut shifted = vec![T::zero(); cin * n];
    for (t, off) in conv.offsets() {
        let src: &[T] = if off == [0, 0, 0] {
            &input.data
        } else {
            gather_shift(&input.data, cin, d, off, &mut shifted);
            &shifted
        };
        T::gemm(
            cout,
            cin,
            n,
            T::one(),
            &conv.kernel[t..],
            cin * taps,
            taps,
            src,
            n,
            1,
            T::one(),
            &mut out,
            n,
            1,
        );
    }
    Features::new(cout, d, out)
}

/// Backward of [`conv3d`]. Adds into `grad` and returns the input gradient if requested.
pub fn conv3d_backward<T: Real>(
    input: &Features<T>,
    conv: &Conv<T>,
    grad_out: &Features<T>,
    grad: &mut Conv<T>,
    need_input_grad: bool,
) -> Option<Features<T>> {
    let d = input.dims;
    let n = d.len();
    let (cin, cout, taps) = (conv.cin, conv.cout, conv.taps());
    for o in 0..cout {
        grad.bias[o] += grad_out.data[o * n..(o + 1) * n].iter().copied().sum::<T>();
    }
    let mut shifted = vec![T::zero(); cin * n];
    let mut gs = if need_input_grad {
        vec![T::zero(); cin * n]
    } else {
        Vec::new()
    };
    let mut gin = if need_input_grad {
        vec![T::zero(); cin * n]
    } else {
        Vec::new()
    };
    for (t, off) in conv.offsets() {
        let centre = off == [0, 0, 0];
        let src: &[T] = if centre {
            &input.data
        } else {
            gather_shift(&input.data, cin, d, off, &mut shifted);
            &shifted
        };
        // dW[o, i, t] += sum_v g[o, v] * s[i, v]
        T::gemm(
            cout,
            n,
            cin,
            T::one(),
            &grad_out.data,
            n,
            1,
            src,
            1,
            n,
            T::one(),
            &mut grad.kernel[t..],
            cin * taps,
            taps,
        );
        if need_input_grad {
            let target: &mut [T] = if centre { &mut gin } else { &mut gs };
            T::gemm(
                cin,
                cout,
                n,
                T::one(),
                &conv.kernel[t..],
                taps,
                cin * taps,
                &grad_out.data,
                n,
                1,
                if centre { T::one() } else { T::zero() },
                target,
                n,
                1,
            );
            if !centre {
                scatter_add_shift(&gs, cin, d, off, &mut gin);
            }
        }
    }
    need_input_grad.then_some(Features {
        channels: cin,
        dims: d,
        data: gin,
    })
}

pub fn leaky_relu<T: Real>(x: &mut Features<T>, slope: T) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v *= slope;
        }
    }
}

/// Backward given the activation output; gradient 1 at zero.
pub fn leaky_relu_backward<T: Real>(y: &Features<T>, grad: &mut Features<T>, slope: T) {
    for (g, &v) in grad.data.iter_mut().zip(&y.data) {
        if v < T::zero() {
            *g *= slope;
        }
    }
}

/// Non-overlapping 2³ max pooling; returns the winning input index per output.
pub fn maxpool3d<T: Real>(x: &Features<T>) -> Result<(Features<T>, Vec<u32>)> {
    let d = x.dims;
    if !d.nx.is_multiple_of(2) || !d.ny.is_multiple_of(2) || !d.nz.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("max pooling needs even dims, got {d}")));
    }
    let od = Dims::new(d.nx / 2, d.ny / 2, d.nz / 2);
    let (n, on) = (d.len(), od.len());
    let mut out = Vec::with_capacity(x.channels * on);
    let mut arg = Vec::with_capacity(x.channels * on);
    for c in 0..x.channels {
        let s = &x.data[c * n..(c + 1) * n];
        for z in 0..od.nz {
            for y in 0..od.ny {
                for xx in 0..od.nx {
                    let mut best = d.index(2 * xx, 2 * y, 2 * z);
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = d.index(2 * xx + dx, 2 * y + dy, 2 * z + dz);
                                if s[i] > s[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    out.push(s[best]);
                    arg.push(best as u32);
                }
            }
        }
    }
    Ok((Features::new(x.channels, od, out)?, arg))
}

pub fn maxpool3d_backward<T: Real>(grad_out: &Features<T>, argmax: &[u32], input_dims: Dims) -> Features<T> {
    let n = input_dims.len();
    let on = grad_out.dims.len();
    let mut g = Features::zeros(grad_out.channels, input_dims);
    for c in 0..grad_out.channels {
        for j in 0..on {
            g.data[c * n + argmax[c * on + j] as usize] += grad_out.data[c * on + j];
        }
    }
    g
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample3d<T: Real>(x: &Features<T>) -> Features<T> {
    let d = x.dims;
    let od = Dims::new(d.nx * 2, d.ny * 2, d.nz * 2);
    let n = d.len();
    let mut out = Vec::with_capacity(x.channels * od.len());
    for c in 0..x.channels {
        let s = &x.data[c * n..(c + 1) * n];
        for z in 0..od.nz {
            for y in 0..od.ny {
                for xx in 0..od.nx {
                    out.push(s[d.index(xx / 2, y / 2, z / 2)]);
                }
            }
        }
    }
    Features {
        channels: x.channels,
        dims: od,
        data: out,
    }
}

pub fn upsample3d_backward<T: Real>(grad_out: &Features<T>) -> Features<T> {
    let od = grad_out.dims;
    let d = Dims::new(od.nx / 2, od.ny / 2, od.nz / 2);
    let (n, on) = (d.len(), od.len());
    let mut g = Features::zeros(grad_out.channels, d);
    for c in 0..grad_out.channels {
        for z in 0..od.nz {
            for y in 0..od.ny {
                for x in 0..od.nx {
                    g.data[c * n + d.index(x / 2, y / 2, z / 2)] += grad_out.data[c * on + od.index(x, y, z)];
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &Features<f64>, conv: &Conv<f64>) -> Vec<f64> {
        let d = input.dims;
        let n = d.len();
        let r = (conv.k / 2) as isize;
        let k = conv.k as isize;
        let mut out = vec![0.0; conv.cout * n];
        for o in 0..conv.cout {
            for z in 0..d.nz as isize {
                for y in 0..d.ny as isize {
                    for x in 0..d.nx as isize {
                        let mut acc = conv.bias[o];
                        for i in 0..conv.cin {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let (sx, sy, sz) = (x + kx - r, y + ky - r, z + kz - r);
                                        if !d.contains(sx, sy, sz) {
                                            continue;
                                        }
                                        let w = conv.kernel
                                            [((o * conv.cin + i) * conv.k.pow(3)) + ((kz * k + ky) * k + kx) as usize];
                                        acc += w * input.data[i * n + d.index(sx as usize, sy as usize, sz as usize)];
                                    }
                                }
                            }
                        }
                        out[o * n + d.index(x as usize, y as usize, z as usize)] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(seed: u64, len: usize) -> Vec<f64> {
        let mut s = seed;
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let d = Dims::new(3, 4, 5);
        let x = Features::new(1, d, pseudo(1, d.len())).unwrap();
        let mut c = Conv::zeros(1, 1, 1);
        c.kernel[0] = 1.0;
        assert_eq!(conv3d(&x, &c).unwrap(), x);
    }

    #[test]
    fn all_ones_centre_voxel() {
        let d = Dims::cube(3);
        let x = Features::new(1, d, vec![1.0f64; 27]).unwrap();
        let mut c = Conv::zeros(1, 1, 3);
        c.kernel.fill(1.0);
        c.bias[0] = 0.5;
        let y = conv3d(&x, &c).unwrap();
        assert_eq!(y.data[d.index(1, 1, 1)], 27.5);
        assert_eq!(y.data[0], 8.5);
    }

    #[test]
    fn matches_direct_loop() {
        let d = Dims::new(5, 4, 6);
        let x = Features::new(3, d, pseudo(2, 3 * d.len())).unwrap();
        let mut c = Conv::zeros(3, 2, 3);
        c.kernel = pseudo(3, c.kernel.len());
        c.bias = vec![0.25, -0.5];
        let y = conv3d(&x, &c).unwrap();
        let want = naive_conv(&x, &c);
        for (a, b) in y.data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_and_upsample_examples() {
        let d = Dims::cube(2);
        let x = Features::new(1, d, (1..=8).map(f64::from).collect()).unwrap();
        let (p, arg) = maxpool3d(&x).unwrap();
        assert_eq!(p.data, vec![8.0]);
        assert_eq!(arg, vec![7]);
        let flat = Features::new(1, d, vec![2.0f64; 8]).unwrap();
        let (p, arg) = maxpool3d(&flat).unwrap();
        assert_eq!(arg, vec![0]);
        let g = maxpool3d_backward(&Features::new(1, p.dims, vec![1.0]).unwrap(), &arg, d);
        assert_eq!(g.data, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(upsample3d(&p), flat);

        let one = Features::new(1, Dims::cube(1), vec![5.0f64]).unwrap();
        assert_eq!(upsample3d(&one).data, vec![5.0; 8]);
        let back = upsample3d_backward(&Features::new(1, d, vec![0.5f64; 8]).unwrap());
        assert_eq!(back.data, vec![4.0]);
        assert!(maxpool3d(&Features::<f64>::zeros(1, Dims::new(3, 2, 2))).is_err());
    }

    #[test]
    fn leaky_values() {
        let mut x = Features::new(1, Dims::new(3, 1, 1), vec![2.0f64, -2.0, 0.0]).unwrap();
        leaky_relu(&mut x, 0.2);
        assert_eq!(x.data, vec![2.0, -0.4, 0.0]);
        let mut g = Features::new(1, x.dims, vec![1.0; 3]).unwrap();
        leaky_relu_backward(&x, &mut g, 0.2);
        assert_eq!(g.data, vec![1.0, 0.2, 1.0]);
    }
}

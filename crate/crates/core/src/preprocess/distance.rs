use crate::BinaryVolume;

/// Squared Euclidean distance (voxel units) from every voxel to the nearest
/// background voxel; background voxels map to 0. With no background at all,
/// every value is `f64::INFINITY`.
pub fn distance_to_background(bin: &BinaryVolume) -> Vec<f64> {
    let d = bin.dims();
    let mut f: Vec<f64> = bin
        .mask()
        .iter()
        .map(|&m| if m { f64::INFINITY } else { 0.0 })
        .collect();
    let [nx, ny, nz] = d.as_array();
    let strides = [1, nx, nx * ny];
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..3 {
        let ext = d.as_array()[axis];
        let stride = strides[axis];
        line.resize(ext, 0.0);
        out.resize(ext, 0.0);
        for z in 0..if axis == 2 { 1 } else { nz } {
            for y in 0..if axis == 1 { 1 } else { ny } {
                for x in 0..if axis == 0 { 1 } else { nx } {
                    let base = d.index(x, y, z);
                    for i in 0..ext {
                        line[i] = f[base + i * stride];
                    }
                    envelope(&line, &mut out);
                    for i in 0..ext {
                        f[base + i * stride] = out[i];
                    }
                }
            }
        }
    }
    f
}

/// 1-D lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn envelope(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if finite.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut v: Vec<usize> = Vec::with_capacity(finite.len());
    let mut z: Vec<f64> = Vec::with_capacity(finite.len() + 1);
    for &q in &finite {
        let fq = f[q] + (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
                    if s <= *z.last().expect("z tracks v") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    let mut k = 0;
    for (qi, o) in out.iter_mut().enumerate() {
        let q = qi as f64;
        while k + 1 < v.len() && z[k + 1] < q {
            k += 1;
        }
        let p = v[k] as f64;
        *o = (q - p) * (q - p) + f[v[k]];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Dims, VoxelSize};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Dims::new(7, 6, 5);
        let bin = BinaryVolume::from_fn(d, VoxelSize::iso(1.0), |_, _, _| rng.gen_bool(0.85));
        let fast = distance_to_background(&bin);
        let bg: Vec<(usize, usize, usize)> = (0..d.len()).filter(|&i| !bin.mask()[i]).map(|i| d.coords(i)).collect();
        for i in 0..d.len() {
            let (x, y, z) = d.coords(i);
            let want = bg
                .iter()
                .map(|&(a, b, c)| {
                    let (dx, dy, dz) = (x as f64 - a as f64, y as f64 - b as f64, z as f64 - c as f64);
                    dx * dx + dy * dy + dz * dz
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(fast[i], want, "voxel {i}");
        }
    }

    #[test]
    fn all_foreground_is_infinite() {
        let bin = BinaryVolume::full(Dims::cube(3), VoxelSize::iso(1.0));
        assert!(distance_to_background(&bin).iter().all(|v| v.is_infinite()));
    }
}

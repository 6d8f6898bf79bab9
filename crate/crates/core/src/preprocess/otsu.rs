use crate::{BinaryVolume, Error, Result, ScalarVolume};

pub const DEFAULT_BINS: usize = 256;

#[inline]
pub(crate) fn bin_of(v: f32, lo: f32, hi: f32, bins: usize) -> usize {
    let t = (f64::from(v) - f64::from(lo)) / (f64::from(hi) - f64::from(lo));
    ((t * bins as f64).floor() as usize).min(bins - 1)
}

/// Global Otsu threshold.
///
/// The histogram spans `[min, max]` in `bins` equal buckets; class means use
/// the exact per-bin value sums. The split maximises between-class variance
/// with ties resolved toward the lower split. The returned threshold is the
/// largest value in the lower class, so foreground is exactly `v > threshold`.
pub fn otsu_threshold(vol: &ScalarVolume, bins: usize) -> Result<(f32, BinaryVolume)> {
    if bins < 2 {
        return Err(Error::InvalidArgument("otsu needs at least 2 bins".into()));
    }
    let (lo, hi) = vol.min_max();
    if !(hi > lo) {
        return Err(Error::ConstantVolume(lo));
    }
    let mut count = vec![0u64; bins];
    let mut sum = vec![0f64; bins];
    let mut top = vec![f32::NEG_INFINITY; bins];
    for &v in vol.data() {
        let b = bin_of(v, lo, hi, bins);
        count[b] += 1;
        sum[b] += f64::from(v);
        top[b] = top[b].max(v);
    }
    let total_n = vol.data().len() as f64;
    let total_s: f64 = sum.iter().sum();
    let mut best = (f64::NEG_INFINITY, 1usize);
    let (mut n0, mut s0) = (0f64, 0f64);
    for k in 1..bins {
        n0 += count[k - 1] as f64;
        s0 += sum[k - 1];
        let n1 = total_n - n0;
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let m0 = s0 / n0;
        let m1 = (total_s - s0) / n1;
        let var = (n0 / total_n) * (n1 / total_n) * (m0 - m1) * (m0 - m1);
        if var > best.0 {
            best = (var, k);
        }
    }
    let split = best.1;
    let threshold = top[..split].iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mask = vol.data().iter().map(|&v| v > threshold).collect();
    Ok((threshold, BinaryVolume::new(vol.dims(), vol.voxel_size(), mask)?))
}

/// Otsu foreground, or an empty mask for a constant volume.
pub fn binarize(vol: &ScalarVolume) -> BinaryVolume {
    match otsu_threshold(vol, DEFAULT_BINS) {
        Ok((_, bin)) => bin,
        Err(_) => BinaryVolume::empty(vol.dims(), vol.voxel_size()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Dims, VoxelSize};

    #[test]
    fn perfect_bimodal_split() {
        let data: Vec<f32> = (0..1000).map(|i| if i < 500 { 0.0 } else { 1.0 }).collect();
        let vol = ScalarVolume::new(Dims::new(10, 10, 10), VoxelSize::iso(1.0), data).unwrap();
        let (t, bin) = otsu_threshold(&vol, 256).unwrap();
        assert!((0.0..1.0).contains(&t));
        assert_eq!(bin.count(), 500);
    }

    #[test]
    fn inverted_intensities_swap_counts() {
        // 8-bit levels spanning 0..=255 so the mirrored histogram has the same bins
        let mut data: Vec<f32> = (0..512)
            .map(|i| if i % 3 == 0 { 180 + (i * 7) % 70 } else { (i * 37) % 120 } as f32)
            .collect();
        data[0] = 0.0;
        data[1] = 255.0;
        let vol = ScalarVolume::new(Dims::cube(8), VoxelSize::iso(1.0), data).unwrap();
        let (_, max) = vol.min_max();
        let inv = vol.with_data(vol.data().iter().map(|v| max - v).collect()).unwrap();
        let a = otsu_threshold(&vol, 256).unwrap().1.count();
        let b = otsu_threshold(&inv, 256).unwrap().1.count();
        assert_eq!(a, 512 - b);
    }

    #[test]
    fn constant_volume_is_rejected() {
        let vol = ScalarVolume::filled(Dims::cube(3), VoxelSize::iso(1.0), 2.0);
        assert!(matches!(otsu_threshold(&vol, 256), Err(Error::ConstantVolume(_))));
        assert_eq!(binarize(&vol).count(), 0);
    }
}

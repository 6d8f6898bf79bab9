//! On-demand patch sampling from in-memory pairs or a dataset manifest.

use std::path::PathBuf;

use rand::Rng;

use crate::preprocess::{DatasetManifest, Split};
use crate::volume::{extract_patch, vvol};
use crate::{Dims, Error, Result, ScalarVolume};

/// A set of (moving XCT, fixed CAD) volume pairs that can serve cubic patches.
pub trait PairSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn id(&self, index: usize) -> &str;

    fn dims(&self, index: usize) -> Dims;

    /// `(moving, fixed)` patches of `size³` at `origin`.
    fn read_patch(&self, index: usize, origin: [usize; 3], size: usize) -> Result<(Vec<f32>, Vec<f32>)>;
}

pub struct InMemoryPairs {
    pairs: Vec<(String, ScalarVolume, ScalarVolume)>,
}

impl InMemoryPairs {
    pub fn new(pairs: Vec<(String, ScalarVolume, ScalarVolume)>) -> Result<Self> {
        for (id, m, f) in &pairs {
            m.dims()
                .ensure_same(&f.dims(), "moving vs fixed")
                .map_err(|e| e.in_sample(id))?;
        }
        Ok(Self { pairs })
    }
}

impl PairSource for InMemoryPairs {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn id(&self, index: usize) -> &str {
        &self.pairs[index].0
    }

    fn dims(&self, index: usize) -> Dims {
        self.pairs[index].1.dims()
    }

    fn read_patch(&self, index: usize, origin: [usize; 3], size: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        let (_, m, f) = &self.pairs[index];
        check_fits(m.dims(), origin, size)?;
        Ok((
            extract_patch(m.data(), m.dims(), origin, size),
            extract_patch(f.data(), f.dims(), origin, size),
        ))
    }
}

/// Reads patch regions straight from the VVOL files of one manifest split.
pub struct ManifestPairs {
    entries: Vec<(String, PathBuf, PathBuf, Dims)>,
}

impl ManifestPairs {
    pub fn new(manifest: &DatasetManifest, split: Split) -> Result<Self> {
        let mut entries = Vec::new();
        for s in manifest.split(split) {
            let hx = vvol::read_header(&s.xct_path).map_err(|e| e.in_sample(&s.id))?;
            let hc = vvol::read_header(&s.cad_path).map_err(|e| e.in_sample(&s.id))?;
            hx.dims
                .ensure_same(&hc.dims, "XCT vs CAD")
                .map_err(|e| e.in_sample(&s.id))?;
            entries.push((s.id.clone(), s.xct_path.clone(), s.cad_path.clone(), hx.dims));
        }
        Ok(Self { entries })
    }
}

impl PairSource for ManifestPairs {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn id(&self, index: usize) -> &str {
        &self.entries[index].0
    }

    fn dims(&self, index: usize) -> Dims {
        self.entries[index].3
    }

    fn read_patch(&self, index: usize, origin: [usize; 3], size: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        let (id, xct, cad, d) = &self.entries[index];
        check_fits(*d, origin, size).map_err(|e| e.in_sample(id))?;
        let m = vvol::read_region(xct, 0, origin, size).map_err(|e| e.in_sample(id))?;
        let f = vvol::read_region(cad, 0, origin, size).map_err(|e| e.in_sample(id))?;
        Ok((m, f))
    }
}

fn check_fits(d: Dims, origin: [usize; 3], size: usize) -> Result<()> {
    if origin[0] + size > d.nx || origin[1] + size > d.ny || origin[2] + size > d.nz {
        return Err(Error::InvalidArgument(format!(
            "patch of size {size} at {origin:?} exceeds {d}"
        )));
    }
    Ok(())
}

/// Where one batch element comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRef {
    pub index: usize,
    pub origin: [usize; 3],
}

/// Uniformly random sample and origin per element; nothing is read yet.
pub fn sample_patch_refs(
    src: &dyn PairSource,
    batch_size: usize,
    patch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PatchRef>> {
    if src.is_empty() {
        return Err(Error::InvalidArgument("cannot sample from an empty split".into()));
    }
    for i in 0..src.len() {
        let d = src.dims(i);
        if d.as_array().iter().any(|&n| n < patch_size) {
            return Err(Error::InvalidArgument(format!(
                "sample {} ({d}) is smaller than patch size {patch_size}",
                src.id(i)
            )));
        }
    }
    Ok((0..batch_size)
        .map(|_| {
            let index = rng.gen_range(0..src.len());
            let d = src.dims(index);
            let origin = [d.nx, d.ny, d.nz].map(|n| rng.gen_range(0..=n - patch_size));
            PatchRef { index, origin }
        })
        .collect())
}

/// A batch of `(moving, fixed)` patch pairs read on demand.
pub fn sample_training_batch(
    src: &dyn PairSource,
    batch_size: usize,
    patch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
    sample_patch_refs(src, batch_size, patch_size, rng)?
        .into_iter()
        .map(|r| src.read_patch(r.index, r.origin, patch_size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::VoxelSize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn source() -> InMemoryPairs {
        let d = Dims::new(12, 10, 9);
        let m = ScalarVolume::from_fn(d, VoxelSize::iso(1.0), |x, y, z| (x + 2 * y + 3 * z) as f32);
        let f = ScalarVolume::from_fn(d, VoxelSize::iso(1.0), |x, _, _| x as f32);
        InMemoryPairs::new(vec![("a".into(), m, f)]).unwrap()
    }

    #[test]
    fn batches_are_seeded_and_in_bounds() {
        let src = source();
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = sample_patch_refs(&src, 8, 4, &mut r1).unwrap();
        let b = sample_patch_refs(&src, 8, 4, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        for r in &a {
            assert!(r.origin[0] + 4 <= 12 && r.origin[1] + 4 <= 10 && r.origin[2] + 4 <= 9);
        }
        let batch = sample_training_batch(&src, 8, 4, &mut r1).unwrap();
        assert!(batch.iter().all(|(m, f)| m.len() == 64 && f.len() == 64));
    }

    #[test]
    fn moving_is_xct_and_fixed_is_cad() {
        let src = source();
        let (m, f) = src.read_patch(0, [1, 2, 3], 2).unwrap();
        assert_eq!(m[0], (1 + 4 + 9) as f32);
        assert_eq!(f[0], 1.0);
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let src = source();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_training_batch(&src, 1, 10, &mut r).is_err());
        let empty = InMemoryPairs::new(Vec::new()).unwrap();
        assert!(sample_training_batch(&empty, 1, 2, &mut r).is_err());
    }
}

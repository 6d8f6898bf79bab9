use std::collections::VecDeque;

use super::morph::Connectivity;
use crate::{BinaryVolume, Error, Result};

/// Connected-component labelling result. Label 0 is background; labels are
/// assigned in order of each component's smallest linear index.
#[derive(Clone, Debug)]
pub struct Components {
    pub labels: Vec<u32>,
    /// `sizes[l - 1]` is the voxel count of label `l`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

pub fn label_components(bin: &BinaryVolume, conn: Connectivity) -> Components {
    let d = bin.dims();
    let m = bin.mask();
    let offsets = conn.offsets();
    let mut labels = vec![0u32; d.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..d.len() {
        if !m[seed] || labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[seed] = label;
        queue.push_back(seed);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y, z) = d.coords(i);
            for o in &offsets {
                let (a, b, c) = (x as isize + o[0], y as isize + o[1], z as isize + o[2]);
                if !d.contains(a, b, c) {
                    continue;
                }
                let j = d.index(a as usize, b as usize, c as usize);
                if m[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    Components { labels, sizes }
}

/// Keep only the largest component; ties go to the one with the smallest linear index.
pub fn largest_component(bin: &BinaryVolume, conn: Connectivity) -> Result<BinaryVolume> {
    let comps = label_components(bin, conn);
    let mut best: Option<(usize, u32)> = None;
    for (i, &s) in comps.sizes.iter().enumerate() {
        if best.is_none_or(|(bs, _)| s > bs) {
            best = Some((s, i as u32 + 1));
        }
    }
    let (_, keep) = best.ok_or_else(|| Error::EmptyMask("largest_component input".into()))?;
    let mask = comps.labels.iter().map(|&l| l == keep).collect();
    BinaryVolume::new(bin.dims(), bin.voxel_size(), mask)
}

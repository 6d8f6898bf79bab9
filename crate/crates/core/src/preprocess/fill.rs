use std::collections::VecDeque;

use crate::BinaryVolume;

/// Fill background pockets that the outside cannot reach.
///
/// Background is flood-filled (6-connected) from every voxel on the six
/// boundary faces; whatever background remains unreached becomes foreground.
pub fn fill_enclosed_voids(bin: &BinaryVolume) -> BinaryVolume {
    let d = bin.dims();
    let m = bin.mask();
    let mut reached = vec![false; d.len()];
    let mut queue = VecDeque::new();
    for i in 0..d.len() {
        let (x, y, z) = d.coords(i);
        let on_face = x == 0 || y == 0 || z == 0 || x + 1 == d.nx || y + 1 == d.ny || z + 1 == d.nz;
        if on_face && !m[i] {
            reached[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y, z) = d.coords(i);
        for (dx, dy, dz) in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)] {
            let (a, b, c) = (x as isize + dx, y as isize + dy, z as isize + dz);
            if !d.contains(a, b, c) {
                continue;
            }
            let j = d.index(a as usize, b as usize, c as usize);
            if !m[j] && !reached[j] {
                reached[j] = true;
                queue.push_back(j);
            }
        }
    }
    let mask = m.iter().zip(&reached).map(|(&f, &r)| f || !r).collect();
    BinaryVolume::new(d, bin.voxel_size(), mask).expect("same geometry")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Dims, VoxelSize};

    fn hollow(channel: bool) -> BinaryVolume {
        BinaryVolume::from_fn(Dims::cube(7), VoxelSize::iso(1.0), |x, y, z| {
            let shell = [x, y, z].iter().all(|c| (1..6).contains(c));
            let cavity = (x, y, z) == (3, 3, 3);
            let tunnel = channel && y == 3 && z == 3 && x >= 3;
            shell && !cavity && !tunnel
        })
    }

    #[test]
    fn sealed_cavity_is_filled() {
        let h = hollow(false);
        let f = fill_enclosed_voids(&h);
        assert!(f.get(3, 3, 3));
        assert_eq!(f.count(), h.count() + 1);
    }

    #[test]
    fn vented_cavity_is_left_alone() {
        let h = hollow(true);
        assert_eq!(fill_enclosed_voids(&h), h);
    }

    #[test]
    fn idempotent() {
        let f = fill_enclosed_voids(&hollow(false));
        assert_eq!(fill_enclosed_voids(&f), f);
    }
}

//! Node-based local-correlation DVC.
//!
//! Displacements are estimated independently at a regular lattice of
//! correlation windows by exhaustive integer search plus a per-axis quadratic
//! subvoxel fit, coarse to fine over an image pyramid, then interpolated
//! trilinearly into a dense field. Translation only: no per-node rotation or
//! strain degrees of freedom.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::volume::downsample2;
use crate::{Dims, DisplacementField, Error, Result, ScalarVolume};

/// Scores at or above this are treated as an exact match and skip the
/// subvoxel fit.
const PERFECT_MATCH: f64 = 1.0 - 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DvcConfig {
    pub node_spacing: usize,
    pub window_halfsize: usize,
    /// Integer search radius per pyramid level, in that level's voxels.
    pub search_radius: usize,
    pub pyramid_levels: usize,
    /// Nodes whose peak NCC falls below this are inpainted from neighbours.
    pub min_correlation: f64,
}

impl Default for DvcConfig {
    fn default() -> Self {
        Self {
            node_spacing: 16,
            window_halfsize: 10,
            search_radius: 4,
            pyramid_levels: 2,
            min_correlation: 0.3,
        }
    }
}

impl DvcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("dvc config: {m}")));
        if self.node_spacing < 2 {
            return bad("node spacing must be >= 2");
        }
        if self.window_halfsize < 1 {
            return bad("window half-size must be >= 1");
        }
        if self.search_radius < 1 {
            return bad("search radius must be >= 1");
        }
        if self.pyramid_levels < 1 {
            return bad("pyramid needs at least one level");
        }
        if !(-1.0..=1.0).contains(&self.min_correlation) {
            return bad("min correlation must lie in [-1, 1]");
        }
        Ok(())
    }

    /// Distance kept between every node and every face.
    pub fn margin(&self) -> usize {
        self.window_halfsize + self.search_radius
    }

    /// Window half-size at a pyramid level (level 0 is full resolution).
    fn halfsize_at(&self, level: usize) -> usize {
        (self.window_halfsize >> level).max(2)
    }
}

/// Node positions along each axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeLattice {
    pub axes: [Vec<usize>; 3],
}

impl NodeLattice {
    pub fn shape(&self) -> [usize; 3] {
        [self.axes[0].len(), self.axes[1].len(), self.axes[2].len()]
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// x-fastest node ordering.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.shape();
        i + nx * (j + ny * k)
    }

    pub fn position(&self, n: usize) -> [usize; 3] {
        let [nx, ny, _] = self.shape();
        [
            self.axes[0][n % nx],
            self.axes[1][(n / nx) % ny],
            self.axes[2][n / (nx * ny)],
        ]
    }

    pub fn positions(&self) -> Vec<[usize; 3]> {
        (0..self.len()).map(|n| self.position(n)).collect()
    }

    fn lattice_coords(&self, n: usize) -> [usize; 3] {
        let [nx, ny, _] = self.shape();
        [n % nx, (n / nx) % ny, n / (nx * ny)]
    }
}

/// Per-node estimates on a lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeField {
    pub lattice: NodeLattice,
    pub positions: Vec<[usize; 3]>,
    /// Voxels; the moving volume at `position + displacement` matches the fixed one at `position`.
    pub displacement: Vec<[f64; 3]>,
    pub correlation: Vec<f64>,
    pub valid: Vec<bool>,
}

impl NodeField {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::at_path(path, e))
    }

    /// Dense field by trilinear interpolation between nodes, held constant
    /// outside the lattice hull.
    pub fn to_dense(&self, dims: Dims, voxel_size: crate::VoxelSize) -> DisplacementField {
        let axis_weights = |axis: usize, n: usize| -> Vec<(usize, usize, f64)> {
            let nodes = &self.lattice.axes[axis];
            (0..n)
                .map(|x| {
                    let x = x as f64;
                    if nodes.len() == 1 || x <= nodes[0] as f64 {
                        return (0, 0, 0.0);
                    }
                    let last = nodes.len() - 1;
                    if x >= nodes[last] as f64 {
                        return (last, last, 0.0);
                    }
                    let cell = nodes.partition_point(|&p| (p as f64) <= x) - 1;
                    let (a, b) = (nodes[cell] as f64, nodes[cell + 1] as f64);
                    (cell, cell + 1, (x - a) / (b - a))
                })
                .collect()
        };
        let wx = axis_weights(0, dims.nx);
        let wy = axis_weights(1, dims.ny);
        let wz = axis_weights(2, dims.nz);
        let lerp = |a: f64, b: f64, f: f64| a * (1.0 - f) + b * f;
        DisplacementField::from_fn(dims, voxel_size, |x, y, z| {
            let (x0, x1, fx) = wx[x];
            let (y0, y1, fy) = wy[y];
            let (z0, z1, fz) = wz[z];
            let mut out = [0.0f32; 3];
            for (c, o) in out.iter_mut().enumerate() {
                let v = |i, j, k| self.displacement[self.lattice.index(i, j, k)][c];
                let y0v = lerp(
                    lerp(v(x0, y0, z0), v(x1, y0, z0), fx),
                    lerp(v(x0, y1, z0), v(x1, y1, z0), fx),
                    fy,
                );
                let y1v = lerp(
                    lerp(v(x0, y0, z1), v(x1, y0, z1), fx),
                    lerp(v(x0, y1, z1), v(x1, y1, z1), fx),
                    fy,
                );
                *o = lerp(y0v, y1v, fz) as f32;
            }
            out
        })
    }
}

/// Regular lattice starting `margin` voxels in from the low face of each axis.
///
/// An axis too short for two nodes gets a single node at its centre.
pub fn build_node_grid(dims: Dims, cfg: &DvcConfig) -> Result<NodeLattice> {
    cfg.validate()?;
    let margin = cfg.margin();
    let axis = |n: usize| -> Result<Vec<usize>> {
        if n < 2 * margin + 1 {
            return Err(Error::InvalidArgument(format!(
                "volume {dims} too small for any node: axis of {n} voxels needs at least {} for margin {margin}",
                2 * margin + 1
            )));
        }
        let usable = n - 1 - 2 * margin;
        if cfg.node_spacing > usable {
            return Ok(vec![n / 2]);
        }
        Ok((margin..=n - 1 - margin).step_by(cfg.node_spacing).collect())
    };
    Ok(NodeLattice {
        axes: [axis(dims.nx)?, axis(dims.ny)?, axis(dims.nz)?],
    })
}

/// Normalised cross-correlation of the fixed window at `center` against the
/// moving window at `center + offset`. Voxels falling outside either volume
/// are left out; fewer than half the window in range scores `None`.
fn window_ncc(
    moving: &ScalarVolume,
    fixed: &ScalarVolume,
    center: [usize; 3],
    offset: [i64; 3],
    half: usize,
) -> Option<f64> {
    let d = fixed.dims();
    let (m, f) = (moving.data(), fixed.data());
    let h = half as i64;
    let n_axis = [d.nx as i64, d.ny as i64, d.nz as i64];
    // per-axis range of window offsets `t` with both `c + t` and `c + t + o` in range
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for a in 0..3 {
        let c = center[a] as i64;
        lo[a] = (-h).max(-c).max(-c - offset[a]);
        hi[a] = h.min(n_axis[a] - 1 - c).min(n_axis[a] - 1 - c - offset[a]);
        if hi[a] < lo[a] {
            return None;
        }
    }
    let count = (hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1);
    if 2 * count < (2 * h + 1).pow(3) {
        return None;
    }
    let (mut sf, mut sm, mut sff, mut smm, mut sfm) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for tz in lo[2]..=hi[2] {
        let fz = center[2] as i64 + tz;
        let mz = fz + offset[2];
        for ty in lo[1]..=hi[1] {
            let fy = center[1] as i64 + ty;
            let my = fy + offset[1];
            let frow = d.index(0, fy as usize, fz as usize);
            let mrow = d.index(0, my as usize, mz as usize);
            for tx in lo[0]..=hi[0] {
                let fx = center[0] as i64 + tx;
                let a = f64::from(f[frow + fx as usize]);
                let b = f64::from(m[mrow + (fx + offset[0]) as usize]);
                sf += a;
                sm += b;
                sff += a * a;
                smm += b * b;
                sfm += a * b;
            }
        }
    }
    let n = count as f64;
    let vf = sff - sf * sf / n;
    let vm = smm - sm * sm / n;
    let cov = sfm - sf * sm / n;
    if vf <= 1e-12 * n || vm <= 1e-12 * n {
        return Some(0.0);
    }
    Some(cov / (vf * vm).sqrt())
}

/// Best offset of one node at one pyramid level.
///
/// Searches `init + [-r, r]³` exhaustively, then refines each axis with a
/// parabola through the peak and its two neighbours (clamped to ±0.5). A
/// zero-variance window returns peak 0.
pub fn correlate_node(
    moving: &ScalarVolume,
    fixed: &ScalarVolume,
    center: [usize; 3],
    init: [i64; 3],
    radius: usize,
    window_halfsize: usize,
) -> Result<([f64; 3], f64)> {
    moving.dims().ensure_same(&fixed.dims(), "correlate_node")?;
    let r = radius as i64;
    let score = |o: [i64; 3]| window_ncc(moving, fixed, center, o, window_halfsize);
    let mut best: Option<([i64; 3], f64)> = None;
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let o = [init[0] + dx, init[1] + dy, init[2] + dz];
                if let Some(s) = score(o) {
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((o, s));
                    }
                }
            }
        }
    }
    let Some((peak, s0)) = best else {
        return Ok(([0.0; 3], 0.0));
    };
    let mut out = [peak[0] as f64, peak[1] as f64, peak[2] as f64];
    if s0 <= 0.0 || s0 >= PERFECT_MATCH {
        return Ok((out, s0.max(0.0)));
    }
    for a in 0..3 {
        let mut lo = peak;
        let mut hi = peak;
        lo[a] -= 1;
        hi[a] += 1;
        if let (Some(sl), Some(sh)) = (score(lo), score(hi)) {
            let curv = sl - 2.0 * s0 + sh;
            if curv < 0.0 {
                out[a] += (0.5 * (sl - sh) / curv).clamp(-0.5, 0.5);
            }
        }
    }
    Ok((out, s0))
}

/// Replace invalid nodes by the mean of their already-known 6-neighbours,
/// sweeping until every node is filled.
fn inpaint_invalid(lattice: &NodeLattice, disp: &mut [[f64; 3]], valid: &[bool]) -> Result<()> {
    if !valid.iter().any(|&v| v) {
        return Err(Error::InvalidArgument("no node reached the minimum correlation".into()));
    }
    let shape = lattice.shape();
    let mut known = valid.to_vec();
    while known.iter().any(|&k| !k) {
        let mut updates = Vec::new();
        for n in 0..disp.len() {
            if known[n] {
                continue;
            }
            let c = lattice.lattice_coords(n);
            let mut acc = [0.0; 3];
            let mut cnt = 0;
            for a in 0..3 {
                for s in [-1i64, 1] {
                    let v = c[a] as i64 + s;
                    if v < 0 || v >= shape[a] as i64 {
                        continue;
                    }
                    let mut nc = c;
                    nc[a] = v as usize;
                    let m = lattice.index(nc[0], nc[1], nc[2]);
                    if known[m] {
                        for k in 0..3 {
                            acc[k] += disp[m][k];
                        }
                        cnt += 1;
                    }
                }
            }
            if cnt > 0 {
                updates.push((n, acc.map(|v| v / cnt as f64)));
            }
        }
        for (n, v) in updates {
            disp[n] = v;
            known[n] = true;
        }
    }
    Ok(())
}

/// Coarse-to-fine node DVC returning the dense field and the node estimates.
///
/// The returned field maps `moving` onto `fixed` in the same convention as
/// the network: `warp(moving, disp) ≈ fixed`.
pub fn multiscale_dvc(
    moving: &ScalarVolume,
    fixed: &ScalarVolume,
    cfg: &DvcConfig,
) -> Result<(DisplacementField, NodeField)> {
    cfg.validate()?;
    let dims = fixed.dims();
    dims.ensure_same(&moving.dims(), "multiscale_dvc")?;
    let lattice = build_node_grid(dims, cfg)?;
    let positions = lattice.positions();

    let mut pyramid = vec![(moving.clone(), fixed.clone())];
    for level in 1..cfg.pyramid_levels {
        let (m, f) = &pyramid[level - 1];
        let d = m.dims();
        if d.nx < 2 * cfg.halfsize_at(level) + 2
            || d.ny < 2 * cfg.halfsize_at(level) + 2
            || d.nz < 2 * cfg.halfsize_at(level) + 2
        {
            return Err(Error::InvalidArgument(format!(
                "pyramid level {level} of {d} is too small for the correlation window"
            )));
        }
        pyramid.push((downsample2(m)?, downsample2(f)?));
    }

    let mut disp = vec![[0.0f64; 3]; positions.len()];
    let mut corr = vec![0.0f64; positions.len()];
    let mut valid = vec![false; positions.len()];
    for level in (0..cfg.pyramid_levels).rev() {
        let (m, f) = &pyramid[level];
        let ld = m.dims();
        let scale = (1usize << level) as f64;
        let half = cfg.halfsize_at(level);
        let results: Vec<Result<([f64; 3], f64)>> = positions
            .par_iter()
            .zip(disp.par_iter())
            .map(|(p, u)| {
                let center = [
                    ((p[0] as f64 / scale).round() as usize).min(ld.nx - 1),
                    ((p[1] as f64 / scale).round() as usize).min(ld.ny - 1),
                    ((p[2] as f64 / scale).round() as usize).min(ld.nz - 1),
                ];
                let init = [
                    (u[0] / scale).round() as i64,
                    (u[1] / scale).round() as i64,
                    (u[2] / scale).round() as i64,
                ];
                let (o, s) = correlate_node(m, f, center, init, cfg.search_radius, half)?;
                Ok(([o[0] * scale, o[1] * scale, o[2] * scale], s))
            })
            .collect();
        for (n, r) in results.into_iter().enumerate() {
            let (u, s) = r?;
            disp[n] = u;
            corr[n] = s;
            valid[n] = s >= cfg.min_correlation && s > 0.0;
        }
        inpaint_invalid(&lattice, &mut disp, &valid)?;
    }

    let nodes = NodeField {
        lattice,
        positions,
        displacement: disp,
        correlation: corr,
        valid,
    };
    let dense = nodes.to_dense(dims, fixed.voxel_size());
    Ok((dense, nodes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{gaussian_blur, translate};
    use crate::VoxelSize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(n: usize, seed: u64) -> ScalarVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Dims::cube(n);
        let raw = ScalarVolume::from_fn(d, VoxelSize::iso(1.0), |_, _, _| rng.gen_range(0.0..1.0));
        gaussian_blur(&raw, 1.5)
    }

    #[test]
    fn lattice_for_64_cube() {
        let lat = build_node_grid(Dims::cube(64), &DvcConfig::default()).unwrap();
        // margin 10 + 4 = 14, then every 16 voxels while <= 49
        let expect: Vec<usize> = (0..).map(|k| 14 + 16 * k).take_while(|&p| p <= 63 - 14).collect();
        assert_eq!(lat.axes[0], expect);
        assert_eq!(lat.axes[0], vec![14, 30, 46]);
        assert_eq!(lat.len(), 27);
        for p in lat.positions() {
            assert!(p.iter().all(|&c| (14..=49).contains(&c)));
        }
    }

    #[test]
    fn wide_spacing_gives_centred_node() {
        let cfg = DvcConfig {
            node_spacing: 40,
            ..DvcConfig::default()
        };
        let lat = build_node_grid(Dims::cube(64), &cfg).unwrap();
        assert_eq!(lat.axes, [vec![32], vec![32], vec![32]]);
    }

    #[test]
    fn tiny_volume_rejected() {
        assert!(build_node_grid(Dims::cube(20), &DvcConfig::default()).is_err());
    }

    #[test]
    fn identical_volumes_give_zero_offset() {
        let v = texture(40, 1);
        let (o, s) = correlate_node(&v, &v, [20, 20, 20], [0; 3], 3, 6).unwrap();
        assert_eq!(o, [0.0; 3]);
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn integer_translation_found_exactly() {
        let f = texture(40, 2);
        let m = translate(&f, [2, -1, 3], 0.0);
        let (o, s) = correlate_node(&m, &f, [20, 20, 20], [0; 3], 4, 6).unwrap();
        assert_eq!(o, [2.0, -1.0, 3.0]);
        assert!(s > 0.999);
    }

    #[test]
    fn constant_window_scores_zero() {
        let f = ScalarVolume::filled(Dims::cube(30), VoxelSize::iso(1.0), 0.5);
        let (_, s) = correlate_node(&f, &f, [15, 15, 15], [0; 3], 2, 4).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn affine_intensity_change_keeps_offset() {
        let f = texture(40, 3);
        let m = translate(&f, [1, 2, -2], 0.0);
        let m2 = m.with_data(m.data().iter().map(|v| 3.0 * v - 0.7).collect()).unwrap();
        let a = correlate_node(&m, &f, [20, 20, 20], [0; 3], 3, 6).unwrap();
        let b = correlate_node(&m2, &f, [20, 20, 20], [0; 3], 3, 6).unwrap();
        assert_eq!(a.0.map(f64::round), b.0.map(f64::round));
    }

    #[test]
    fn dense_field_hits_node_values() {
        let lattice = NodeLattice {
            axes: [vec![2, 6], vec![3], vec![1, 4, 7]],
        };
        let n = lattice.len();
        let nodes = NodeField {
            positions: lattice.positions(),
            lattice,
            displacement: (0..n)
                .map(|i| [i as f64 * 0.3, -(i as f64), 0.125 * i as f64])
                .collect(),
            correlation: vec![1.0; n],
            valid: vec![true; n],
        };
        let dense = nodes.to_dense(Dims::new(9, 5, 9), VoxelSize::iso(1.0));
        for (i, p) in nodes.positions.iter().enumerate() {
            let got = dense.at(p[0], p[1], p[2]);
            for c in 0..3 {
                assert_eq!(got[c], nodes.displacement[i][c] as f32);
            }
        }
        // constant outside the hull
        assert_eq!(dense.at(0, 0, 0), dense.at(2, 3, 1));
    }

    #[test]
    fn inpainting_averages_neighbours() {
        let lattice = NodeLattice {
            axes: [vec![0, 1, 2], vec![0], vec![0]],
        };
        let mut disp = vec![[1.0; 3], [9.0; 3], [3.0; 3]];
        inpaint_invalid(&lattice, &mut disp, &[true, false, true]).unwrap();
        assert_eq!(disp[1], [2.0; 3]);
        assert!(inpaint_invalid(&lattice, &mut disp, &[false; 3]).is_err());
    }

    #[test]
    fn zero_translation_gives_zero_field() {
        let v = texture(48, 4);
        let cfg = DvcConfig {
            node_spacing: 12,
            window_halfsize: 6,
            search_radius: 2,
            ..DvcConfig::default()
        };
        let (dense, nodes) = multiscale_dvc(&v, &v, &cfg).unwrap();
        assert!(dense.data().iter().all(|&u| u == 0.0));
        assert_eq!(nodes.valid_count(), nodes.positions.len());
    }
}

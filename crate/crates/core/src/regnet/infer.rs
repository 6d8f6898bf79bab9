use rayon::prelude::*;

use super::model::{model_forward, ModelParams};
use crate::volume::{extract_patch, make_patch_grid, BlendAccumulator};
use crate::{DisplacementField, Result, ScalarVolume};

/// Patches predicted per parallel round; bounds peak memory on large volumes.
const ROUND: usize = 16;

/// Tile, predict each patch, and Gaussian-blend moved patches and displacements
/// with one shared window.
pub fn sliding_register(
    params: &ModelParams<f32>,
    moving: &ScalarVolume,
    fixed: &ScalarVolume,
    patch_size: usize,
    stride: usize,
    sigma: f64,
) -> Result<(ScalarVolume, DisplacementField)> {
    let d = moving.dims();
    d.ensure_same(&fixed.dims(), "moving vs fixed")?;
    params.config.check_patch(patch_size)?;
    let grid = make_patch_grid(d, patch_size, stride)?;
    let mut moved_acc = BlendAccumulator::new(d, 1, patch_size, sigma)?;
    let mut disp_acc = BlendAccumulator::new(d, 3, patch_size, sigma)?;
    for chunk in grid.origins.chunks(ROUND) {
        let preds: Vec<Result<_>> = chunk
            .par_iter()
            .map(|&o| {
                let m = extract_patch(moving.data(), d, o, patch_size);
                let f = extract_patch(fixed.data(), d, o, patch_size);
                let (pred, _) = model_forward(params, &m, &f, patch_size, false)?;
                Ok((o, pred))
            })
            .collect();
        for r in preds {
            let (o, pred) = r?;
            moved_acc.add(&pred.moved, o)?;
            disp_acc.add(&pred.disp, o)?;
        }
    }
    let moved = moving.with_data(moved_acc.finalize()?)?;
    let disp = DisplacementField::new(d, moving.voxel_size(), disp_acc.finalize()?)?;
    Ok((moved, disp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regnet::model::ModelConfig;
    use crate::{Dims, VoxelSize};

    fn cfg() -> ModelConfig {
        ModelConfig {
            enc_features: vec![4, 4],
            dec_features: vec![4, 4, 4],
            kernel_size: 3,
            leaky_slope: 0.2,
            patch_size: 8,
        }
    }

    fn vol(d: Dims, k: usize) -> ScalarVolume {
        ScalarVolume::from_fn(d, VoxelSize::iso(1.0), |x, y, z| ((x * 3 + y * k + z) % 7) as f32 / 7.0)
    }

    #[test]
    fn zero_network_is_identity_through_blending() {
        let p = ModelParams::<f32>::zeros(&cfg()).unwrap();
        let d = Dims::new(13, 12, 10);
        let m = vol(d, 5);
        let (moved, disp) = sliding_register(&p, &m, &vol(d, 2), 8, 4, 2.0).unwrap();
        assert!(disp.data().iter().all(|&v| v == 0.0));
        for (a, b) in moved.data().iter().zip(m.data()) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn single_patch_equals_direct_forward() {
        let p = ModelParams::<f32>::init(&cfg(), 1).unwrap();
        let mut p = p;
        for v in &mut p.convs.last_mut().unwrap().kernel {
            *v = 0.01;
        }
        let d = Dims::cube(8);
        let (m, f) = (vol(d, 5), vol(d, 2));
        let (moved, disp) = sliding_register(&p, &m, &f, 8, 8, 2.0).unwrap();
        let (pred, _) = model_forward(&p, m.data(), f.data(), 8, false).unwrap();
        assert_eq!(disp.data(), &pred.disp[..]);
        assert_eq!(moved.data(), &pred.moved[..]);
    }
}

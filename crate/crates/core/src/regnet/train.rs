use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{sample_patch_refs, ManifestPairs, PairSource, PatchRef};
use super::model::{evaluate_loss, loss_and_grad, ModelConfig, ModelParams};
use super::optim::{Adam, PlateauScheduler};
use crate::preprocess::{DatasetManifest, Split};
use crate::{Error, Result};

/// Mixed into the seed for the fixed validation origins.
const VAL_STREAM: u64 = 0x76a1_1d00;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub val_batch_size: usize,
    pub lambda_smooth: f64,
    pub ncc_window: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 200,
            steps_per_epoch: 5,
            batch_size: 8,
            val_batch_size: 4,
            lambda_smooth: 0.05,
            ncc_window: 9,
            plateau_factor: 0.5,
            plateau_patience: 10,
            plateau_min_delta: 1e-4,
            min_lr: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Single-CPU budget: 400 steps of two 32³ patches, NCC window 5.
    pub fn desk() -> Self {
        Self {
            epochs: 80,
            batch_size: 2,
            val_batch_size: 2,
            ncc_window: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train config: {m}")));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.lambda_smooth >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.ncc_window.is_multiple_of(2) {
            return bad("NCC window must be odd");
        }
        if self.batch_size == 0 || self.val_batch_size == 0 {
            return bad("batch sizes must be at least 1");
        }
        if self.steps_per_epoch == 0 {
            return bad("steps per epoch must be at least 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau factor must lie in (0, 1)");
        }
        if !(self.min_lr >= 0.0) {
            return bad("min lr must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation loss of the initial parameters.
    pub initial_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Learning rate used during each epoch.
    pub lr: Vec<f64>,
    /// Seconds since training started, at the end of each epoch. Not reproducible.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wall_time: Vec<f64>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Progress report passed to the caller after every epoch.
#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_time: f64,
}

fn mean_loss(params: &ModelParams<f32>, src: &dyn PairSource, refs: &[PatchRef], cfg: &TrainConfig) -> Result<f64> {
    let p = params.config.patch_size;
    let losses: Vec<Result<f64>> = refs
        .par_iter()
        .map(|r| {
            let (m, f) = src.read_patch(r.index, r.origin, p)?;
            let l = evaluate_loss(params, &m, &f, p, cfg.ncc_window, cfg.lambda_smooth as f32)?;
            Ok(f64::from(l.value))
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / refs.len() as f64)
}

/// Adam on random training patches, plateau schedule on fixed validation patches.
///
/// Batch elements run in parallel; their gradients are summed in batch order,
/// so results depend only on the seeds and the thread-independent arithmetic.
pub fn train_on(
    train_src: &dyn PairSource,
    val_src: &dyn PairSource,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<(ModelParams<f32>, TrainHistory)> {
    model_cfg.validate()?;
    cfg.validate()?;
    if train_src.is_empty() || val_src.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs non-empty train and val splits".into(),
        ));
    }
    let p = model_cfg.patch_size;
    let mut params = ModelParams::<f32>::init(model_cfg, cfg.seed)?;
    let mut adam = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ VAL_STREAM);
    let val_refs = sample_patch_refs(val_src, cfg.val_batch_size, p, &mut val_rng)?;

    let start = Instant::now();
    let mut history = TrainHistory {
        initial_val_loss: mean_loss(&params, val_src, &val_refs, cfg)?,
        ..TrainHistory::default()
    };
    let mut sched = PlateauScheduler::new(
        cfg.lr,
        cfg.plateau_factor,
        cfg.plateau_patience,
        cfg.plateau_min_delta,
        cfg.min_lr,
        history.initial_val_loss,
    );
    let lambda = cfg.lambda_smooth as f32;
    let inv_batch = 1.0 / cfg.batch_size as f32;
    for epoch in 0..cfg.epochs {
        let lr = sched.lr;
        let mut epoch_loss = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let refs = sample_patch_refs(train_src, cfg.batch_size, p, &mut rng)?;
            let results: Vec<Result<(f64, ModelParams<f32>)>> = refs
                .par_iter()
                .map(|r| {
                    let (m, f) = train_src.read_patch(r.index, r.origin, p)?;
                    let (loss, g) = loss_and_grad(&params, &m, &f, p, cfg.ncc_window, lambda)?;
                    Ok((f64::from(loss.value), g))
                })
                .collect();
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                grads.add_assign(&g);
            }
            grads.scale(inv_batch);
            batch_loss /= cfg.batch_size as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    reason: format!("loss is {batch_loss}"),
                });
            }
            adam.step(&mut params, &grads, lr).map_err(|e| Error::Diverged {
                epoch,
                step,
                reason: e.to_string(),
            })?;
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / cfg.steps_per_epoch as f64;
        let val_loss = mean_loss(&params, val_src, &val_refs, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: cfg.steps_per_epoch,
                reason: format!("validation loss is {val_loss}"),
            });
        }
        sched.step(val_loss);
        let wall_time = start.elapsed().as_secs_f64();
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.lr.push(lr);
        history.wall_time.push(wall_time);
        progress(&EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
            wall_time,
        });
    }
    Ok((params, history))
}

/// Train from the train/val splits of a dataset manifest.
pub fn train(
    manifest: &DatasetManifest,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    progress: impl FnMut(&EpochLog),
) -> Result<(ModelParams<f32>, TrainHistory)> {
    let tr = ManifestPairs::new(manifest, Split::Train)?;
    let va = ManifestPairs::new(manifest, Split::Val)?;
    train_on(&tr, &va, model_cfg, cfg, progress)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv3d, conv3d_backward, leaky_relu, leaky_relu_backward, maxpool3d, maxpool3d_backward, upsample3d,
    upsample3d_backward, Conv, Features,
};
use super::loss::{total_loss, TotalLoss};
use crate::real::Real;
use crate::volume::{warp_backward, warp_slice};
use crate::{Dims, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub enc_features: Vec<usize>,
    /// The first `enc_features.len()` entries are upsampling levels, the rest run at full resolution.
    pub dec_features: Vec<usize>,
    pub kernel_size: usize,
    pub leaky_slope: f64,
    pub patch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_features: vec![32; 4],
            dec_features: vec![32, 32, 32, 32, 32, 16],
            kernel_size: 3,
            leaky_slope: 0.2,
            patch_size: 128,
        }
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            patch_size: 32,
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.enc_features.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("model config: {m}")));
        if self.enc_features.is_empty() || self.enc_features.contains(&0) {
            return bad("encoder needs at least one non-empty level".into());
        }
        if self.dec_features.len() < self.levels() || self.dec_features.contains(&0) {
            return bad(format!("decoder needs at least {} non-empty levels", self.levels()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel size {} must be odd", self.kernel_size));
        }
        if !(self.leaky_slope >= 0.0) {
            return bad("leaky slope must be non-negative".into());
        }
        self.check_patch(self.patch_size)
    }

    pub fn check_patch(&self, p: usize) -> Result<()> {
        let f = 1usize << self.levels();
        if p == 0 || !p.is_multiple_of(f) {
            return Err(Error::InvalidArgument(format!(
                "patch size {p} must be a positive multiple of {f}"
            )));
        }
        Ok(())
    }

    /// `(name, cin, cout)` for every convolution in architectural order.
    pub fn layer_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut c = 2;
        for (i, &f) in self.enc_features.iter().enumerate() {
            out.push((format!("enc{i}"), c, f));
            c = f;
        }
        let levels = self.levels();
        for (i, &f) in self.dec_features.iter().enumerate() {
            let cin = if i < levels {
                c + self.enc_features[levels - 1 - i]
            } else {
                c
            };
            out.push((format!("dec{i}"), cin, f));
            c = f;
        }
        out.push(("head".into(), c, 3));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub convs: Vec<Conv<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        let convs = config
            .layer_shapes()
            .into_iter()
            .map(|(_, cin, cout)| Conv::zeros(cin, cout, k))
            .collect();
        Ok(Self {
            config: config.clone(),
            convs,
        })
    }

    /// Uniform `±1/sqrt(cin k³)` weights, zero biases, zero displacement head.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = p.convs.len() - 1;
        for conv in &mut p.convs[..last] {
            let b = 1.0 / ((conv.cin * conv.k.pow(3)) as f64).sqrt();
            for w in &mut conv.kernel {
                *w = T::of(rng.gen_range(-b..b));
            }
        }
        Ok(p)
    }

    pub fn names(&self) -> Vec<String> {
        self.config.layer_shapes().into_iter().map(|(n, _, _)| n).collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            convs: self.convs.iter().map(|c| Conv::zeros(c.cin, c.cout, c.k)).collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Vec<T>> {
        self.convs.iter().flat_map(|c| [&c.kernel, &c.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.convs.iter_mut().flat_map(|c| [&mut c.kernel, &mut c.bias])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| Conv {
                    cin: c.cin,
                    cout: c.cout,
                    k: c.k,
                    kernel: c.kernel.iter().map(|v| U::of(v.as_f64())).collect(),
                    bias: c.bias.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Intermediates kept for backprop.
pub struct Tape<T> {
    dims: Dims,
    moving: Vec<T>,
    conv_inputs: Vec<Features<T>>,
    activations: Vec<Features<T>>,
    pool_args: Vec<Vec<u32>>,
}

pub struct Prediction<T> {
    /// Channel-major 3 × p³ displacement.
    pub disp: Vec<T>,
    pub moved: Vec<T>,
}

/// Run the network on one cubic patch pair.
pub fn model_forward<T: Real>(
    params: &ModelParams<T>,
    moving: &[T],
    fixed: &[T],
    patch: usize,
    keep_tape: bool,
) -> Result<(Prediction<T>, Option<Tape<T>>)> {
    let cfg = &params.config;
    cfg.check_patch(patch)?;
    let dims = Dims::cube(patch);
    let n = dims.len();
    if moving.len() != n || fixed.len() != n {
        return Err(Error::DimMismatch(format!(
            "patch pair has {} and {} values, expected {n}",
            moving.len(),
            fixed.len()
        )));
    }
    let slope = T::of(cfg.leaky_slope);
    let levels = cfg.levels();
    let mut conv_inputs = Vec::new();
    let mut activations = Vec::new();
    let mut pool_args = Vec::new();
    let mut skips: Vec<Features<T>> = Vec::new();

    let mut data = moving.to_vec();
    data.extend_from_slice(fixed);
    let mut x = Features::new(2, dims, data)?;
    let mut layer = 0;
    let mut run = |x: Features<T>, act: bool, conv_inputs: &mut Vec<Features<T>>| -> Result<Features<T>> {
        let mut y = conv3d(&x, &params.convs[layer])?;
        layer += 1;
        if keep_tape {
            conv_inputs.push(x);
        }
        if act {
            leaky_relu(&mut y, slope);
        }
        Ok(y)
    };

    for _ in 0..levels {
        let y = run(x, true, &mut conv_inputs)?;
        let (pooled, arg) = maxpool3d(&y)?;
        if keep_tape {
            pool_args.push(arg);
            activations.push(y.clone());
        }
        skips.push(y);
        x = pooled;
    }
    for i in 0..cfg.dec_features.len() {
        let input = if i < levels {
            upsample3d(&x).concat(&skips[levels - 1 - i])?
        } else {
            x
        };
        let y = run(input, true, &mut conv_inputs)?;
        if keep_tape {
            activations.push(y.clone());
        }
        x = y;
    }
    let disp = run(x, false, &mut conv_inputs)?.data;
    let moved = warp_slice(moving, &disp, dims);
    let tape = keep_tape.then(|| Tape {
        dims,
        moving: moving.to_vec(),
        conv_inputs,
        activations,
        pool_args,
    });
    Ok((Prediction { disp, moved }, tape))
}

/// Backprop `dL/d(disp)` and `dL/d(moved)` through the warp and the network.
pub fn model_backward<T: Real>(
    params: &ModelParams<T>,
    tape: &Tape<T>,
    pred: &Prediction<T>,
    grad_moved: &[T],
    grad_disp: &[T],
) -> ModelParams<T> {
    let cfg = &params.config;
    let slope = T::of(cfg.leaky_slope);
    let levels = cfg.levels();
    let ndec = cfg.dec_features.len();
    let mut grads = params.zeros_like();

    let mut g_disp = warp_backward(&tape.moving, &pred.disp, tape.dims, grad_moved);
    for (a, b) in g_disp.iter_mut().zip(grad_disp) {
        *a += *b;
    }
    let mut g = Features {
        channels: 3,
        dims: tape.dims,
        data: g_disp,
    };
    let head = levels + ndec;
    let mut g_skip: Vec<Option<Features<T>>> = vec![None; levels];
    let mut layer = head;
    g = conv3d_backward(
        &tape.conv_inputs[layer],
        &params.convs[layer],
        &g,
        &mut grads.convs[layer],
        true,
    )
    .expect("input gradient requested");

    for i in (0..ndec).rev() {
        layer = levels + i;
        leaky_relu_backward(&tape.activations[levels + i], &mut g, slope);
        let gin = conv3d_backward(
            &tape.conv_inputs[layer],
            &params.convs[layer],
            &g,
            &mut grads.convs[layer],
            true,
        )
        .expect("input gradient requested");
        if i < levels {
            let up_channels = gin.channels - cfg.enc_features[levels - 1 - i];
            let (g_up, g_sk) = gin.split_at(up_channels);
            g_skip[levels - 1 - i] = Some(g_sk);
            g = upsample3d_backward(&g_up);
        } else {
            g = gin;
        }
    }
    // `g` is now the gradient of the deepest pooled encoder output
    for lvl in (0..levels).rev() {
        let act = &tape.activations[lvl];
        let mut ga = maxpool3d_backward(&g, &tape.pool_args[lvl], act.dims);
        if let Some(s) = &g_skip[lvl] {
            for (a, b) in ga.data.iter_mut().zip(&s.data) {
                *a += *b;
            }
        }
        leaky_relu_backward(act, &mut ga, slope);
        let need = lvl > 0;
        if let Some(gin) = conv3d_backward(
            &tape.conv_inputs[lvl],
            &params.convs[lvl],
            &ga,
            &mut grads.convs[lvl],
            need,
        ) {
            g = gin;
        }
    }
    grads
}

/// Forward, loss and backward for one patch pair.
pub fn loss_and_grad<T: Real>(
    params: &ModelParams<T>,
    moving: &[T],
    fixed: &[T],
    patch: usize,
    window: usize,
    lambda: T,
) -> Result<(TotalLoss<T>, ModelParams<T>)> {
    let (pred, tape) = model_forward(params, moving, fixed, patch, true)?;
    let tape = tape.expect("tape requested");
    let loss = total_loss(&pred.moved, fixed, &pred.disp, tape.dims, window, lambda);
    let grads = model_backward(params, &tape, &pred, &loss.grad_moved, &loss.grad_disp);
    Ok((loss, grads))
}

/// Loss only, without keeping intermediates.
pub fn evaluate_loss<T: Real>(
    params: &ModelParams<T>,
    moving: &[T],
    fixed: &[T],
    patch: usize,
    window: usize,
    lambda: T,
) -> Result<TotalLoss<T>> {
    let (pred, _) = model_forward(params, moving, fixed, patch, false)?;
    Ok(total_loss(
        &pred.moved,
        fixed,
        &pred.disp,
        Dims::cube(patch),
        window,
        lambda,
    ))
}

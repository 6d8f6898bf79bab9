#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct FdCheck {
    pub rel_err: f64,
    pub probed: usize,
    /// Candidates dropped because the function has a kink inside the stencil.
    pub skipped: usize,
}

/// Relative error `|a - n| / max(|a|, |n|)` (Euclidean norms over the probed
/// coordinates) between analytic and central-difference derivatives.
///
/// Piecewise-linear ops (ReLU-type, max pooling, trilinear cells) have kinks;
/// a candidate whose difference quotient at `h` and `h / 2` disagree is
/// straddling one and is replaced by the next candidate.
pub fn fd_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    candidates: &[usize],
    want: usize,
) -> FdCheck {
    let mut xs = x.to_vec();
    let mut quotient = |xs: &mut Vec<f64>, i: usize, h: f64| {
        let keep = xs[i];
        xs[i] = keep + h;
        let up = f(xs);
        xs[i] = keep - h;
        let down = f(xs);
        xs[i] = keep;
        (up - down) / (2.0 * h)
    };
    let mut num = Vec::new();
    let mut ana = Vec::new();
    let mut skipped = 0;
    for &i in candidates {
        if num.len() == want {
            break;
        }
        let a = quotient(&mut xs, i, FD_STEP);
        let b = quotient(&mut xs, i, FD_STEP / 2.0);
        let scale = a.abs().max(b.abs()).max(analytic[i].abs());
        if (a - b).abs() > 1e-4 * scale + 1e-12 {
            skipped += 1;
            continue;
        }
        num.push(a);
        ana.push(analytic[i]);
    }
    let diff: f64 = ana.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = ana.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    FdCheck {
        rel_err: if denom == 0.0 { 0.0 } else { diff / denom },
        probed: num.len(),
        skipped,
    }
}

/// All of `0..n` in a seeded random order.
pub fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, n).into_vec()
}

/// Writes past the test harness's output capture so the verdict shows up in
/// a plain `cargo test` run too.
pub fn line(criterion: u32, name: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {criterion} [{verdict}] {name}: {detail}");
    let _ = out.flush();
}

//! Per-channel batch normalization with running statistics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
/// Weight kept on the old running value at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Number of train-mode updates absorbed. Zero means eval mode has nothing to use.
    pub updates: u64,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            updates: 0,
        }
    }

    /// Zero mean, unit variance, marked usable for evaluation.
    pub fn identity(channels: usize) -> Self {
        BnState {
            updates: 1,
            ..Self::new(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn absorb(&mut self, mean: &[f64], unbiased_var: &[f64]) {
        for (r, m) in self.running_mean.iter_mut().zip(mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(unbiased_var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
        self.updates += 1;
    }
}

/// Values saved by a train-mode forward for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

fn check_affine(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    let c = x.dims().c;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::shape(
            "batch_norm",
            format!(
                "{c} channels with gamma {} / beta {}",
                gamma.numel(),
                beta.numel()
            ),
        ));
    }
    Ok(())
}

/// Normalizes by batch statistics and folds them into `state`.
pub fn batch_norm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &mut BnState,
) -> Result<(Tensor, BnCache)> {
    check_affine(x, gamma, beta)?;
    let d = x.dims();
    if state.channels() != d.c {
        return Err(Error::shape(
            "batch_norm",
            format!("state for {} channels, input {d}", state.channels()),
        ));
    }
    let m = d.n * d.plane();
    if m < 2 {
        return Err(Error::BatchNorm(format!(
            "train mode needs at least 2 values per channel, input {d}"
        )));
    }
    let data = x.data();
    let plane = d.plane();
    let mut mean = vec![0.0; d.c];
    let mut var = vec![0.0; d.c];
    for c in 0..d.c {
        let mut s = 0.0;
        for n in 0..d.n {
            let start = d.index(n, c, 0, 0);
            s += data[start..start + plane].iter().sum::<f64>();
        }
        mean[c] = s / m as f64;
        let mut sq = 0.0;
        for n in 0..d.n {
            let start = d.index(n, c, 0, 0);
            sq += data[start..start + plane]
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
        var[c] = sq / m as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

    let mut normalized = Tensor::zeros(d);
    let mut out = Tensor::zeros(d);
    {
        let xn = normalized.data_mut();
        for n in 0..d.n {
            for c in 0..d.c {
                let start = d.index(n, c, 0, 0);
                for i in start..start + plane {
                    xn[i] = (data[i] - mean[c]) * inv_std[c];
                }
            }
        }
    }
    apply_affine(&normalized, gamma, beta, &mut out);

    let unbiased: Vec<f64> = var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
    state.absorb(&mean, &unbiased);

    Ok((
        out.ensure_finite("batch_norm")?,
        BnCache {
            normalized,
            inv_std,
        },
    ))
}

fn apply_affine(normalized: &Tensor, gamma: &Tensor, beta: &Tensor, out: &mut Tensor) {
    let d = normalized.dims();
    let (g, b) = (gamma.data(), beta.data());
    let xn = normalized.data();
    let o = out.data_mut();
    for n in 0..d.n {
        for c in 0..d.c {
            let start = d.index(n, c, 0, 0);
            for i in start..start + d.plane() {
                o[i] = g[c] * xn[i] + b[c];
            }
        }
    }
}

/// Normalizes by running statistics. Fails if the statistics were never populated.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &BnState,
) -> Result<(Tensor, BnCache)> {
    check_affine(x, gamma, beta)?;
    let d = x.dims();
    if state.updates == 0 {
        return Err(Error::BatchNorm(
            "eval mode used before any running statistics were recorded".into(),
        ));
    }
    if state.channels() != d.c {
        return Err(Error::shape(
            "batch_norm",
            format!("state for {} channels, input {d}", state.channels()),
        ));
    }
    let inv_std: Vec<f64> = state
        .running_var
        .iter()
        .map(|v| 1.0 / (v + BN_EPSILON).sqrt())
        .collect();
    let mut normalized = Tensor::zeros(d);
    {
        let xn = normalized.data_mut();
        let data = x.data();
        for n in 0..d.n {
            for c in 0..d.c {
                let start = d.index(n, c, 0, 0);
                for i in start..start + d.plane() {
                    xn[i] = (data[i] - state.running_mean[c]) * inv_std[c];
                }
            }
        }
    }
    let mut out = Tensor::zeros(d);
    apply_affine(&normalized, gamma, beta, &mut out);
    Ok((
        out.ensure_finite("batch_norm")?,
        BnCache {
            normalized,
            inv_std,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct BnGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Backward pass. `batch_stats` selects between the train-mode adjoint (statistics
/// depend on the input) and the eval-mode one (statistics are constants).
pub fn batch_norm_backward(
    cache: &BnCache,
    gamma: &Tensor,
    grad_out: &Tensor,
    batch_stats: bool,
) -> Result<BnGrads> {
    let d = cache.normalized.dims();
    if grad_out.dims() != d {
        return Err(Error::shape(
            "batch_norm_backward",
            format!("grad {} vs {d}", grad_out.dims()),
        ));
    }
    let xn = cache.normalized.data();
    let gy = grad_out.data();
    let plane = d.plane();
    let m = (d.n * plane) as f64;
    let mut gg = vec![0.0; d.c];
    let mut gb = vec![0.0; d.c];
    for n in 0..d.n {
        for c in 0..d.c {
            let start = d.index(n, c, 0, 0);
            for i in start..start + plane {
                gb[c] += gy[i];
                gg[c] += gy[i] * xn[i];
            }
        }
    }
    let mut gx = Tensor::zeros(d);
    let g = gamma.data();
    let out = gx.data_mut();
    for n in 0..d.n {
        for c in 0..d.c {
            let start = d.index(n, c, 0, 0);
            let k = g[c] * cache.inv_std[c];
            for i in start..start + plane {
                out[i] = if batch_stats {
                    k * (gy[i] - gb[c] / m - xn[i] * gg[c] / m)
                } else {
                    k * gy[i]
                };
            }
        }
    }
    Ok(BnGrads {
        input: gx,
        gamma: Tensor::vector(gg),
        beta: Tensor::vector(gb),
    })
}

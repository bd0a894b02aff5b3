//! The Squeeze-and-Excitation operator: squeeze, excite, scale.
//!
//! Each stage exists twice: as a pure function over tensors, and as a
//! recording on a [`Tape`] so the whole block can be differentiated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, ActivationKind, PoolKind};
use crate::tape::{Tape, Var};
use crate::tensor::{Dims, Tensor};

pub const DEFAULT_RATIO: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeConfig {
    pub channels: usize,
    pub ratio: usize,
    pub squeeze: PoolKind,
    /// Non-linearity producing the gate. The inner one is always ReLU.
    pub excitation: ActivationKind,
    pub fc_bias: bool,
}

impl SeConfig {
    /// Average squeeze, sigmoid gate, no FC biases, `r = 16`.
    pub fn new(channels: usize) -> Self {
        SeConfig {
            channels,
            ratio: DEFAULT_RATIO,
            squeeze: PoolKind::Avg,
            excitation: ActivationKind::Sigmoid,
            fc_bias: false,
        }
    }

    pub fn with_ratio(mut self, ratio: usize) -> Self {
        self.ratio = ratio;
        self
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    /// `max(1, floor(C / r))`.
    pub fn bottleneck(&self) -> usize {
        bottleneck_width(self.channels, self.ratio)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.ratio == 0 {
            return Err(Error::Arch(format!(
                "SE block needs positive channels and ratio, got C={} r={}",
                self.channels, self.ratio
            )));
        }
        Ok(())
    }

    /// Learned parameters this configuration adds.
    pub fn param_count(&self) -> usize {
        let (c, b) = (self.channels, self.bottleneck());
        let bias = if self.fc_bias { b + c } else { 0 };
        2 * c * b + bias
    }
}

pub fn bottleneck_width(channels: usize, ratio: usize) -> usize {
    (channels / ratio.max(1)).max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeParams {
    /// `(C/r, C, 1, 1)`
    pub w1: Tensor,
    /// `(C, C/r, 1, 1)`
    pub w2: Tensor,
    pub b1: Option<Tensor>,
    pub b2: Option<Tensor>,
}

impl SeParams {
    pub fn zeros(config: &SeConfig) -> Self {
        let (c, b) = (config.channels, config.bottleneck());
        SeParams {
            w1: Tensor::zeros(Dims::new(b, c, 1, 1)),
            w2: Tensor::zeros(Dims::new(c, b, 1, 1)),
            b1: config.fc_bias.then(|| Tensor::zeros(Dims::new(1, b, 1, 1))),
            b2: config.fc_bias.then(|| Tensor::zeros(Dims::new(1, c, 1, 1))),
        }
    }

    pub fn check(&self, config: &SeConfig) -> Result<()> {
        let (c, b) = (config.channels, config.bottleneck());
        let ok = self.w1.dims() == Dims::new(b, c, 1, 1)
            && self.w2.dims() == Dims::new(c, b, 1, 1)
            && self.b1.as_ref().is_none_or(|t| t.numel() == b)
            && self.b2.as_ref().is_none_or(|t| t.numel() == c)
            && self.b1.is_some() == config.fc_bias
            && self.b2.is_some() == config.fc_bias;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "se",
                format!(
                    "params w1 {} / w2 {} do not fit C={c}, width {b}, bias={}",
                    self.w1.dims(),
                    self.w2.dims(),
                    config.fc_bias
                ),
            ))
        }
    }
}

/// Fan-in scaled Gaussian weights (variance `2 / fan_in`), zero biases.
pub fn init_se_params(config: &SeConfig, seed: u64) -> SeParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, b) = (config.channels, config.bottleneck());
    let mut p = SeParams::zeros(config);
    p.w1 = Tensor::gaussian(Dims::new(b, c, 1, 1), (2.0 / c as f64).sqrt(), &mut rng);
    p.w2 = Tensor::gaussian(Dims::new(c, b, 1, 1), (2.0 / b as f64).sqrt(), &mut rng);
    p
}

fn check_channels(u: Dims, config: &SeConfig) -> Result<()> {
    if u.c != config.channels {
        return Err(Error::shape(
            "se",
            format!("input {u} for an SE block over {} channels", config.channels),
        ));
    }
    Ok(())
}

pub fn squeeze(u: &Tensor, kind: PoolKind) -> Result<Tensor> {
    ops::global_pool(u, kind)
}

pub fn excite(z: &Tensor, params: &SeParams, config: &SeConfig) -> Result<Tensor> {
    params.check(config)?;
    check_channels(z.dims(), config)?;
    let hidden = ops::fully_connected(z, &params.w1, params.b1.as_ref())?;
    let hidden = ops::activation(&hidden, ActivationKind::Relu)?;
    let pre = ops::fully_connected(&hidden, &params.w2, params.b2.as_ref())?;
    ops::activation(&pre, config.excitation)
}

/// Channel-wise rescale: `out[n, c] = s[n, c] * u[n, c]`.
pub fn scale(u: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (du, ds) = (u.dims(), s.dims());
    if ds != Dims::new(du.n, du.c, 1, 1) {
        return Err(Error::shape("se scale", format!("gate {ds} for features {du}")));
    }
    ops::elementwise(u, s, ops::BinaryKind::Mul)
}

pub fn se_forward(u: &Tensor, params: &SeParams, config: &SeConfig) -> Result<Tensor> {
    check_channels(u.dims(), config)?;
    let z = squeeze(u, config.squeeze)?;
    let s = excite(&z, params, config)?;
    scale(u, &s)
}

/// SE parameters registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct SeVars {
    pub w1: Var,
    pub w2: Var,
    pub b1: Option<Var>,
    pub b2: Option<Var>,
}

impl SeVars {
    pub fn register(tape: &mut Tape, params: &SeParams) -> Self {
        SeVars {
            w1: tape.leaf(params.w1.clone()),
            w2: tape.leaf(params.w2.clone()),
            b1: params.b1.as_ref().map(|b| tape.leaf(b.clone())),
            b2: params.b2.as_ref().map(|b| tape.leaf(b.clone())),
        }
    }
}

pub fn squeeze_on(tape: &mut Tape, u: Var, kind: PoolKind) -> Result<Var> {
    tape.global_pool(u, kind)
}

pub fn excite_on(tape: &mut Tape, z: Var, vars: &SeVars, config: &SeConfig) -> Result<Var> {
    check_channels(tape.dims(z), config)?;
    let hidden = tape.linear(z, vars.w1, vars.b1)?;
    let hidden = tape.relu(hidden)?;
    let pre = tape.linear(hidden, vars.w2, vars.b2)?;
    tape.activation(pre, config.excitation)
}

pub fn scale_on(tape: &mut Tape, u: Var, s: Var) -> Result<Var> {
    let (du, ds) = (tape.dims(u), tape.dims(s));
    if ds != Dims::new(du.n, du.c, 1, 1) {
        return Err(Error::shape("se scale", format!("gate {ds} for features {du}")));
    }
    tape.mul(u, s)
}

pub fn se_forward_on(tape: &mut Tape, u: Var, vars: &SeVars, config: &SeConfig) -> Result<Var> {
    check_channels(tape.dims(u), config)?;
    let z = squeeze_on(tape, u, config.squeeze)?;
    let s = excite_on(tape, z, vars, config)?;
    scale_on(tape, u, s)
}

//! Parameter storage, layer handles and the forward context they run in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{BnState, ConvGeometry};
use crate::tape::{Tape, Var};
use crate::tensor::{Dims, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BnId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub role: ParamRole,
    /// Logical shape as stored in checkpoints (vectors are rank 1, FC weights rank 2).
    pub shape: Vec<usize>,
    pub value: Tensor,
}

/// Every learned tensor of a network, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn push(&mut self, name: String, role: ParamRole, shape: Vec<usize>, value: Tensor) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.numel());
        self.params.push(Param {
            name,
            role,
            shape,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Registers every parameter on `tape` as a leaf; index `i` holds `ParamId(i)`.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }
}

/// Named running-statistics buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BnBuffers {
    pub names: Vec<String>,
    pub states: Vec<BnState>,
}

impl BnBuffers {
    fn push(&mut self, name: String, channels: usize) -> BnId {
        self.names.push(name);
        self.states.push(BnState::new(channels));
        BnId(self.states.len() - 1)
    }
}

/// Allocates and initializes parameters in a fixed order from one seeded stream.
pub struct LayerBuilder<'a> {
    pub store: &'a mut ParamStore,
    pub bn: &'a mut BnBuffers,
    rng: ChaCha8Rng,
}

impl<'a> LayerBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, bn: &'a mut BnBuffers, seed: u64) -> Self {
        LayerBuilder {
            store,
            bn,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn he(&mut self, dims: Dims, fan_in: usize) -> Tensor {
        Tensor::gaussian(dims, (2.0 / fan_in as f64).sqrt(), &mut self.rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Conv> {
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::Arch(format!(
                "{name}: {groups} groups do not divide {c_in} -> {c_out} channels"
            )));
        }
        let cin_g = c_in / groups;
        let dims = Dims::new(c_out, cin_g, kernel, kernel);
        let w = self.he(dims, cin_g * kernel * kernel);
        let weight = self.store.push(format!("{name}.weight"), ParamRole::Weight, dims.as_array().to_vec(), w);
        let bias = bias.then(|| {
            self.store.push(
                format!("{name}.bias"),
                ParamRole::Bias,
                vec![c_out],
                Tensor::zeros(Dims::new(1, c_out, 1, 1)),
            )
        });
        Ok(Conv {
            name: name.to_string(),
            weight,
            bias,
            geom: ConvGeometry::new(stride, padding, groups),
        })
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> BatchNorm {
        let d = Dims::new(1, channels, 1, 1);
        let gamma = self.store.push(format!("{name}.gamma"), ParamRole::BnScale, vec![channels], Tensor::full(d, 1.0));
        let beta = self.store.push(format!("{name}.beta"), ParamRole::BnShift, vec![channels], Tensor::zeros(d));
        let state = self.bn.push(name.to_string(), channels);
        BatchNorm {
            name: name.to_string(),
            channels,
            gamma,
            beta,
            state,
        }
    }

    pub fn linear(&mut self, name: &str, inputs: usize, outputs: usize, bias: bool) -> Linear {
        let dims = Dims::new(outputs, inputs, 1, 1);
        let w = self.he(dims, inputs);
        let weight = self.store.push(format!("{name}.weight"), ParamRole::Weight, vec![outputs, inputs], w);
        let bias = bias.then(|| {
            self.store.push(
                format!("{name}.bias"),
                ParamRole::Bias,
                vec![outputs],
                Tensor::zeros(Dims::new(1, outputs, 1, 1)),
            )
        });
        Linear {
            name: name.to_string(),
            weight,
            bias,
        }
    }

    pub fn next_seed(&mut self) -> u64 {
        self.rng.random()
    }
}

/// Observes, and optionally replaces, SE gate outputs during a forward pass.
pub trait GateHook {
    /// Called with the gate of block `label` (e.g. `SE_3_2`). Returning `Some`
    /// substitutes a constant of the same dims for the gate.
    fn gate(&mut self, label: &str, gate: &Tensor) -> Option<Tensor>;
}

pub struct NoHook;

impl GateHook for NoHook {
    fn gate(&mut self, _: &str, _: &Tensor) -> Option<Tensor> {
        None
    }
}

/// Replaces every gate with a constant.
pub struct ForceGate(pub f64);

impl GateHook for ForceGate {
    fn gate(&mut self, _: &str, gate: &Tensor) -> Option<Tensor> {
        Some(Tensor::full(gate.dims(), self.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    /// Train mode with batch norm running on its frozen running statistics.
    TrainFrozenBn,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self != Mode::Eval
    }

    pub fn bn_uses_batch(self) -> bool {
        self == Mode::Train
    }
}

/// Everything a layer needs during a forward pass.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    /// Tape handle per [`ParamId`].
    pub params: &'a [Var],
    pub bn: &'a mut [BnState],
    pub mode: Mode,
    pub hook: &'a mut dyn GateHook,
    pub rng: ChaCha8Rng,
}

impl Ctx<'_> {
    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeometry,
}

impl Conv {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.weight), self.bias.map(|b| ctx.param(b)));
        ctx.tape.conv2d(x, w, b, self.geom).map_err(|e| e.in_layer(&self.name))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: BnId,
}

impl BatchNorm {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        let train = ctx.mode.bn_uses_batch();
        let state = &mut ctx.bn[self.state.0];
        ctx.tape.batch_norm(x, g, b, state, train).map_err(|e| match e {
            Error::BatchNorm(m) => Error::BatchNorm(format!("{}: {m}", self.name)),
            other => other.in_layer(&self.name),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.weight), self.bias.map(|b| ctx.param(b)));
        ctx.tape.linear(x, w, b).map_err(|e| e.in_layer(&self.name))
    }
}

/// Convolution, batch norm, optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        if self.relu {
            ctx.tape.relu(y).map_err(|e| e.in_layer(&self.conv.name))
        } else {
            Ok(y)
        }
    }
}

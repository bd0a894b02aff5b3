//! Residual bottleneck units, a two-branch inception module, and SE integration.

use crate::error::{Error, Result};
use crate::se::SeConfig;
use crate::tape::Var;

use super::layers::{Conv, ConvBn, Ctx, LayerBuilder, Linear};
use super::spec::{ArchSpec, Downsample, IntegrationVariant, SeSettings, StageSpec, StrideOn};

#[derive(Clone, Debug)]
pub enum Excitation {
    /// Global pooling then two FC layers.
    Global { fc1: Linear, fc2: Linear },
    /// No pooling; two 1x1 convolutions produce a per-position gate.
    NoSqueeze { conv1: Conv, conv2: Conv },
}

/// One SE unit bound to its parameters.
#[derive(Clone, Debug)]
pub struct SeUnit {
    /// `SE_<stage>_<block>`
    pub label: String,
    pub config: SeConfig,
    pub excitation: Excitation,
}

impl SeUnit {
    pub fn build(b: &mut LayerBuilder, prefix: &str, label: String, config: SeConfig, no_squeeze: bool) -> Result<Self> {
        config.validate()?;
        let (c, w) = (config.channels, config.bottleneck());
        let excitation = if no_squeeze {
            Excitation::NoSqueeze {
                conv1: b.conv(&format!("{prefix}.conv1"), c, w, 1, 1, 0, 1, config.fc_bias)?,
                conv2: b.conv(&format!("{prefix}.conv2"), w, c, 1, 1, 0, 1, config.fc_bias)?,
            }
        } else {
            Excitation::Global {
                fc1: b.linear(&format!("{prefix}.fc1"), c, w, config.fc_bias),
                fc2: b.linear(&format!("{prefix}.fc2"), w, c, config.fc_bias),
            }
        };
        Ok(SeUnit {
            label,
            config,
            excitation,
        })
    }

    /// Computes the gate for `u`, passes it through the hook, and rescales `u`.
    pub fn forward(&self, ctx: &mut Ctx, u: Var) -> Result<Var> {
        let layer = |e: Error| e.in_layer(&self.label);
        let c = ctx.tape.dims(u).c;
        if c != self.config.channels {
            return Err(Error::Arch(format!(
                "{}: expects {} channels, got {c}",
                self.label, self.config.channels
            )));
        }
        let pre = match &self.excitation {
            Excitation::Global { fc1, fc2 } => {
                let z = ctx.tape.global_pool(u, self.config.squeeze).map_err(layer)?;
                let h = fc1.forward(ctx, z)?;
                let h = ctx.tape.relu(h).map_err(layer)?;
                fc2.forward(ctx, h)?
            }
            Excitation::NoSqueeze { conv1, conv2 } => {
                let h = conv1.forward(ctx, u)?;
                let h = ctx.tape.relu(h).map_err(layer)?;
                conv2.forward(ctx, h)?
            }
        };
        let gate = ctx.tape.activation(pre, self.config.excitation).map_err(layer)?;
        let gate = match ctx.hook.gate(&self.label, ctx.tape.value(gate)) {
            Some(forced) => {
                if forced.dims() != ctx.tape.dims(gate) {
                    return Err(Error::shape("gate hook", format!("{}: replacement {}", self.label, forced.dims())));
                }
                ctx.tape.constant(forced)
            }
            None => gate,
        };
        ctx.tape.mul(u, gate).map_err(layer)
    }
}

/// 1x1 reduce, 3x3 (grouped), 1x1 expand, with a shortcut.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub reduce: ConvBn,
    pub spatial: ConvBn,
    pub expand: ConvBn,
    /// Projection used when the shape changes; identity otherwise.
    pub shortcut: Option<ConvBn>,
    pub variant: IntegrationVariant,
    pub se: Option<SeUnit>,
}

impl Bottleneck {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let layer = |e: Error| e.in_layer(&self.name);
        let v = self.variant;
        let se = |ctx: &mut Ctx, at: Var| -> Result<Var> {
            match &self.se {
                Some(unit) => unit.forward(ctx, at),
                None => Ok(at),
            }
        };
        let branch_in = if v == IntegrationVariant::Pre { se(ctx, x)? } else { x };
        let h = self.reduce.forward(ctx, branch_in)?;
        let mut h = self.spatial.forward(ctx, h)?;
        if v == IntegrationVariant::Inside3x3 {
            h = se(ctx, h)?;
        }
        let mut h = self.expand.forward(ctx, h)?;
        if matches!(v, IntegrationVariant::Standard | IntegrationVariant::NoSqueeze) {
            h = se(ctx, h)?;
        }
        let mut sc = match &self.shortcut {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        if v == IntegrationVariant::Identity {
            sc = se(ctx, sc)?;
        }
        let sum = ctx.tape.add(h, sc).map_err(layer)?;
        let y = ctx.tape.relu(sum).map_err(layer)?;
        if v == IntegrationVariant::Post {
            se(ctx, y)
        } else {
            Ok(y)
        }
    }

    /// Channel count an SE unit sees under `variant`.
    pub fn se_channels(&self, variant: IntegrationVariant) -> usize {
        match variant {
            IntegrationVariant::Pre => self.in_channels,
            IntegrationVariant::Inside3x3 => self.spatial.bn.channels,
            _ => self.out_channels,
        }
    }
}

/// Two parallel branches concatenated on channels: a 1x1 path and a 1x1 -> 3x3 path.
#[derive(Clone, Debug)]
pub struct InceptionModule {
    pub name: String,
    pub branch1: ConvBn,
    pub branch2_reduce: ConvBn,
    pub branch2: ConvBn,
    pub se: Option<SeUnit>,
}

impl InceptionModule {
    pub fn build(b: &mut LayerBuilder, name: &str, c_in: usize, c1: usize, c2_reduce: usize, c2: usize) -> Result<Self> {
        Ok(InceptionModule {
            name: name.to_string(),
            branch1: conv_bn(b, &format!("{name}.b1"), c_in, c1, 1, 1, 0, 1, true)?,
            branch2_reduce: conv_bn(b, &format!("{name}.b2a"), c_in, c2_reduce, 1, 1, 0, 1, true)?,
            branch2: conv_bn(b, &format!("{name}.b2b"), c2_reduce, c2, 3, 1, 1, 1, true)?,
            se: None,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.branch1.bn.channels + self.branch2.bn.channels
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let a = self.branch1.forward(ctx, x)?;
        let b = self.branch2_reduce.forward(ctx, x)?;
        let b = self.branch2.forward(ctx, b)?;
        let u = ctx.tape.concat(&[a, b]).map_err(|e| e.in_layer(&self.name))?;
        match &self.se {
            Some(unit) => unit.forward(ctx, u),
            None => Ok(u),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Bottleneck(Bottleneck),
    Inception(InceptionModule),
}

impl Block {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            Block::Bottleneck(b) => b.forward(ctx, x),
            Block::Inception(m) => m.forward(ctx, x),
        }
    }

    pub fn se_unit(&self) -> Option<&SeUnit> {
        match self {
            Block::Bottleneck(b) => b.se.as_ref(),
            Block::Inception(m) => m.se.as_ref(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_bn(
    b: &mut LayerBuilder,
    name: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    relu: bool,
) -> Result<ConvBn> {
    let conv = b.conv(&format!("{name}.conv"), c_in, c_out, kernel, stride, padding, groups, false)?;
    let bn = b.batch_norm(&format!("{name}.bn"), c_out);
    Ok(ConvBn { conv, bn, relu })
}

/// Position of a block inside a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockPosition {
    pub stage: usize,
    pub block: usize,
}

impl BlockPosition {
    pub fn prefix(&self) -> String {
        format!("stage{}.block{}", ArchSpec::stage_id(self.stage), self.block + 1)
    }

    pub fn se_label(&self) -> String {
        format!("SE_{}_{}", ArchSpec::stage_id(self.stage), self.block + 1)
    }
}

/// Builds a plain bottleneck unit (no SE); `position.block == 0` takes the stage stride.
pub fn build_bottleneck_block(
    b: &mut LayerBuilder,
    arch: &ArchSpec,
    stage: &StageSpec,
    in_channels: usize,
    position: BlockPosition,
) -> Result<Bottleneck> {
    let name = position.prefix();
    let stride = if position.block == 0 { stage.stride } else { 1 };
    let (s1, s3) = match arch.stride_on {
        StrideOn::Spatial3x3 => (1, stride),
        StrideOn::Reduce1x1 => (stride, 1),
    };
    let (r, m, o, g) = (
        stage.reduce_channels,
        stage.bottleneck_channels,
        stage.out_channels,
        stage.groups,
    );
    let reduce = conv_bn(b, &format!("{name}.reduce"), in_channels, r, 1, s1, 0, 1, true)?;
    let spatial = conv_bn(b, &format!("{name}.spatial"), r, m, 3, s3, 1, g, true)?;
    let expand = conv_bn(b, &format!("{name}.expand"), m, o, 1, 1, 0, 1, false)?;
    let shortcut = if stride != 1 || in_channels != o {
        Some(match arch.downsample {
            Downsample::Conv1x1 => conv_bn(b, &format!("{name}.proj"), in_channels, o, 1, stride, 0, 1, false)?,
            Downsample::Conv3x3 => conv_bn(b, &format!("{name}.proj"), in_channels, o, 3, stride, 1, 1, false)?,
        })
    } else {
        None
    };
    Ok(Bottleneck {
        name,
        in_channels,
        out_channels: o,
        reduce,
        spatial,
        expand,
        shortcut,
        variant: IntegrationVariant::None,
        se: None,
    })
}

/// Attaches an SE unit to `block` at the position `variant` names.
pub fn integrate_se(
    b: &mut LayerBuilder,
    block: &mut Block,
    variant: IntegrationVariant,
    settings: &SeSettings,
    label: String,
) -> Result<()> {
    match block {
        Block::Bottleneck(unit) => {
            if unit.se.is_some() {
                return Err(Error::Arch(format!("{} already carries an SE unit", unit.name)));
            }
            unit.variant = variant;
            if variant.has_se() {
                let config = settings.for_channels(unit.se_channels(variant));
                let prefix = format!("{}.se", unit.name);
                unit.se = Some(SeUnit::build(b, &prefix, label, config, variant == IntegrationVariant::NoSqueeze)?);
            }
            Ok(())
        }
        Block::Inception(module) => match variant {
            IntegrationVariant::None => Ok(()),
            IntegrationVariant::Standard => {
                let config = settings.for_channels(module.out_channels());
                let prefix = format!("{}.se", module.name);
                module.se = Some(SeUnit::build(b, &prefix, label, config, false)?);
                Ok(())
            }
            other => Err(Error::Arch(format!(
                "{}: variant {other} needs a residual unit; only standard applies here",
                module.name
            ))),
        },
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::BnState;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Dims, Tensor};

use super::blocks::{build_bottleneck_block, conv_bn, integrate_se, Block, BlockPosition, SeUnit};
use super::layers::{BnBuffers, ConvBn, Ctx, GateHook, LayerBuilder, Linear, Mode, NoHook, ParamStore};
use super::spec::{ArchSpec, StemKind};

/// A built network: stem, stages of blocks, global average pool, classifier.
#[derive(Clone, Debug)]
pub struct Network {
    spec: ArchSpec,
    params: ParamStore,
    bn: BnBuffers,
    stem: Vec<ConvBn>,
    stem_pool: bool,
    stages: Vec<Vec<Block>>,
    classifier: Linear,
    dropout_rng: ChaCha8Rng,
}

/// Handles produced by one forward pass.
pub struct ForwardPass {
    pub input: Var,
    pub logits: Var,
    /// Tape handle per parameter, in store order.
    pub params: Vec<Var>,
}

impl ForwardPass {
    /// Gradient per parameter in store order; parameters the root did not reach get zeros.
    pub fn param_grads(&self, grads: &Gradients, tape: &Tape) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|&v| grads.get_or_zeros(v, tape.dims(v)))
            .collect()
    }
}

/// Builds `arch` with parameters drawn deterministically from `seed`.
pub fn build_network(arch: &ArchSpec, seed: u64) -> Result<Network> {
    arch.validate()?;
    let mut params = ParamStore::default();
    let mut bn = BnBuffers::default();
    let mut b = LayerBuilder::new(&mut params, &mut bn, seed);

    let c_in = arch.input[0];
    let sc = arch.stem_channels;
    let (stem, stem_pool) = match arch.stem {
        StemKind::Cifar => (vec![conv_bn(&mut b, "stem.1", c_in, sc, 3, 1, 1, 1, true)?], false),
        StemKind::ImageNet => (vec![conv_bn(&mut b, "stem.1", c_in, sc, 7, 2, 3, 1, true)?], true),
        StemKind::Deep3x3 => {
            let half = sc / 2;
            (
                vec![
                    conv_bn(&mut b, "stem.1", c_in, half, 3, 2, 1, 1, true)?,
                    conv_bn(&mut b, "stem.2", half, half, 3, 1, 1, 1, true)?,
                    conv_bn(&mut b, "stem.3", half, sc, 3, 1, 1, 1, true)?,
                ],
                true,
            )
        }
    };

    let mut channels = sc;
    let mut stages = Vec::with_capacity(arch.stages.len());
    for (si, stage) in arch.stages.iter().enumerate() {
        let mut blocks = Vec::with_capacity(stage.blocks);
        for bi in 0..stage.blocks {
            let pos = BlockPosition { stage: si, block: bi };
            let unit = build_bottleneck_block(&mut b, arch, stage, channels, pos)?;
            let mut block = Block::Bottleneck(unit);
            if let Some(settings) = &stage.se {
                integrate_se(&mut b, &mut block, stage.variant, settings, pos.se_label())?;
            }
            channels = stage.out_channels;
            blocks.push(block);
        }
        stages.push(blocks);
    }
    let classifier = b.linear("fc", channels, arch.classes, true);
    let dropout_seed = b.next_seed();

    Ok(Network {
        spec: arch.clone(),
        params,
        bn,
        stem,
        stem_pool,
        stages,
        classifier,
        dropout_rng: ChaCha8Rng::seed_from_u64(dropout_seed),
    })
}

impl Network {
    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bn_buffers(&self) -> &BnBuffers {
        &self.bn
    }

    pub fn bn_buffers_mut(&mut self) -> &mut BnBuffers {
        &mut self.bn
    }

    /// Number of learned scalars (BN running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn stages(&self) -> &[Vec<Block>] {
        &self.stages
    }

    pub fn se_units(&self) -> Vec<&SeUnit> {
        self.stages
            .iter()
            .flatten()
            .filter_map(Block::se_unit)
            .collect()
    }

    /// Sets every BN layer to zero mean / unit variance running statistics.
    pub fn set_identity_bn_stats(&mut self) {
        for s in &mut self.bn.states {
            *s = BnState::identity(s.channels());
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let d = input.dims();
        let [c, h, w] = self.spec.input;
        if (d.c, d.h, d.w) != (c, h, w) || d.n == 0 {
            return Err(Error::shape(
                "network input",
                format!("{d} does not match {}x{c}x{h}x{w}", "n"),
            ));
        }
        Ok(())
    }

    /// Records a forward pass of `input` on `tape`.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        input: &Tensor,
        mode: Mode,
        hook: &mut dyn GateHook,
    ) -> Result<ForwardPass> {
        self.check_input(input)?;
        let params = self.params.register(tape);
        let x = tape.leaf(input.clone());
        let dropout_rng = if mode.is_train() && self.spec.dropout > 0.0 {
            ChaCha8Rng::seed_from_u64(self.dropout_rng.random())
        } else {
            ChaCha8Rng::seed_from_u64(0)
        };
        let mut ctx = Ctx {
            tape,
            params: &params,
            bn: &mut self.bn.states,
            mode,
            hook,
            rng: dropout_rng,
        };

        let mut h = x;
        for layer in &self.stem {
            h = layer.forward(&mut ctx, h)?;
        }
        if self.stem_pool {
            h = ctx.tape.max_pool2d(h, 3, 2, 1).map_err(|e| e.in_layer("stem.pool"))?;
        }
        for block in self.stages.iter().flatten() {
            h = block.forward(&mut ctx, h)?;
        }
        let pooled = ctx
            .tape
            .global_pool(h, crate::ops::PoolKind::Avg)
            .map_err(|e| e.in_layer("head.pool"))?;
        let features = if mode.is_train() && self.spec.dropout > 0.0 {
            let keep = 1.0 - self.spec.dropout;
            let d: Dims = ctx.tape.dims(pooled);
            let mask: Vec<f64> = (0..d.numel())
                .map(|_| if ctx.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let mask = ctx.tape.constant(Tensor::from_vec(d, mask)?);
            ctx.tape.mul(pooled, mask)?
        } else {
            pooled
        };
        let logits = self.classifier.forward(&mut ctx, features)?;
        Ok(ForwardPass {
            input: x,
            logits,
            params,
        })
    }

    /// Eval-mode logits, `(n, classes, 1, 1)`.
    pub fn predict(&mut self, input: &Tensor) -> Result<Tensor> {
        self.predict_with_hook(input, &mut NoHook)
    }

    pub fn predict_with_hook(&mut self, input: &Tensor, hook: &mut dyn GateHook) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let pass = self.forward(&mut tape, input, Mode::Eval, hook)?;
        Ok(tape.value(pass.logits).clone())
    }
}

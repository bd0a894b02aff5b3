//! Central finite differences against tape gradients.
//!
//! Each target draws a small random case from the seed: input tensors plus a
//! forward closure. The scalar checked is `sum(out * R)` for a random
//! projection `R`, so every output element contributes. Relative error is
//! `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`; the floor keeps
//! near-zero gradients from turning rounding noise into large ratios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::blocks::{build_bottleneck_block, integrate_se, Block, BlockPosition};
use crate::arch::layers::{BnBuffers, Ctx, LayerBuilder, Mode, NoHook, ParamStore};
use crate::arch::spec::{preset, IntegrationVariant, SeSettings, StageSpec};
use crate::error::{Error, Result};
use crate::ops::{ActivationKind, BinaryKind, BnState, ConvGeometry, PoolKind};
use crate::se::{init_se_params, SeConfig, SeVars};
use crate::tape::{Tape, Var};
use crate::tensor::{Dims, Tensor};

pub const STEP: f64 = 1e-5;
pub const ERROR_FLOOR: f64 = 1e-3;

type Forward = Box<dyn FnMut(&mut Tape, &[Var]) -> Result<Var>>;

/// Named inputs and the computation under test.
pub struct Case {
    pub inputs: Vec<(String, Tensor)>,
    forward: Forward,
}

impl Case {
    fn new(inputs: Vec<(String, Tensor)>, forward: impl FnMut(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Self {
        Case {
            inputs,
            forward: Box::new(forward),
        }
    }

    fn run(&mut self, values: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = (self.forward)(&mut tape, &vars)?;
        Ok((tape, vars, out))
    }
}

pub struct Target {
    pub name: &'static str,
    pub about: &'static str,
    build: fn(&mut ChaCha8Rng) -> Result<Case>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Worst {
    pub input: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub target: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<Worst>,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ERROR_FLOOR)
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn uniform(rng: &mut ChaCha8Rng, d: Dims) -> Tensor {
    Tensor::uniform(d, -1.0, 1.0, rng)
}

/// Uniform values with magnitude at least 0.1, away from activation kinks.
fn off_zero(rng: &mut ChaCha8Rng, d: Dims) -> Tensor {
    uniform(rng, d).map(|v| v.signum() * (0.1 + 0.9 * v.abs()))
}

/// Shuffled evenly spaced values in [-1, 1]: gaps of at least 2/numel keep max ops away from ties.
fn distinct(rng: &mut ChaCha8Rng, d: Dims) -> Tensor {
    use rand::seq::SliceRandom;
    let n = d.numel();
    let mut v: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
    v.shuffle(rng);
    Tensor::from_vec(d, v).expect("numel matches")
}

fn input(name: &str, t: Tensor) -> (String, Tensor) {
    (name.to_string(), t)
}

fn conv_case(rng: &mut ChaCha8Rng, groups: usize) -> Result<Case> {
    let n = dim(rng, 1, 3);
    let cin = groups * dim(rng, 1, 2);
    let cout = groups * dim(rng, 1, 2);
    let k = dim(rng, 1, 3);
    let h = dim(rng, k.max(2), 6);
    let w = dim(rng, k.max(2), 6);
    let geom = ConvGeometry::new(dim(rng, 1, 2), dim(rng, 0, k / 2), groups);
    let inputs = vec![
        input("x", uniform(rng, Dims::new(n, cin, h, w))),
        input("weight", uniform(rng, Dims::new(cout, cin / groups, k, k))),
        input("bias", uniform(rng, Dims::new(1, cout, 1, 1))),
    ];
    Ok(Case::new(inputs, move |t, v| t.conv2d(v[0], v[1], Some(v[2]), geom)))
}

fn small(rng: &mut ChaCha8Rng) -> Dims {
    Dims::new(dim(rng, 2, 4), dim(rng, 1, 6), dim(rng, 2, 6), dim(rng, 2, 6))
}

fn unary(rng: &mut ChaCha8Rng, f: fn(&mut Tape, Var) -> Result<Var>, kinked: bool) -> Result<Case> {
    let d = small(rng);
    let x = if kinked { off_zero(rng, d) } else { uniform(rng, d).map(|v| 3.0 * v) };
    Ok(Case::new(vec![input("x", x)], move |t, v| f(t, v[0])))
}

fn bn_case(rng: &mut ChaCha8Rng, train: bool) -> Result<Case> {
    let d = small(rng);
    let c = d.c;
    let mut state = BnState::new(c);
    if !train {
        state.running_mean = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        state.running_var = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
        state.updates = 1;
    }
    let inputs = vec![
        input("x", uniform(rng, d)),
        input("gamma", uniform(rng, Dims::new(1, c, 1, 1))),
        input("beta", uniform(rng, Dims::new(1, c, 1, 1))),
    ];
    Ok(Case::new(inputs, move |t, v| t.batch_norm(v[0], v[1], v[2], &mut state, train)))
}

fn binary_case(rng: &mut ChaCha8Rng, kind: BinaryKind, broadcast: bool) -> Result<Case> {
    let d = small(rng);
    let bd = if broadcast { Dims::new(d.n, d.c, 1, 1) } else { d };
    let inputs = vec![input("a", uniform(rng, d)), input("b", uniform(rng, bd))];
    Ok(Case::new(inputs, move |t, v| t.binary(v[0], v[1], kind)))
}

fn se_case(rng: &mut ChaCha8Rng, squeeze: PoolKind, bias: bool, excitation: ActivationKind) -> Result<Case> {
    let d = Dims::new(dim(rng, 1, 3), dim(rng, 2, 6), dim(rng, 2, 6), dim(rng, 2, 6));
    let config = SeConfig {
        squeeze,
        excitation,
        fc_bias: bias,
        ..SeConfig::new(d.c).with_ratio(2)
    };
    let mut p = init_se_params(&config, rng.random());
    if bias {
        p.b1 = Some(uniform(rng, Dims::new(1, config.bottleneck(), 1, 1)));
        p.b2 = Some(uniform(rng, Dims::new(1, d.c, 1, 1)));
    }
    let u = if squeeze == PoolKind::Max { distinct(rng, d) } else { uniform(rng, d) };
    let mut inputs = vec![input("u", u), input("w1", p.w1), input("w2", p.w2)];
    if let (Some(b1), Some(b2)) = (p.b1, p.b2) {
        inputs.push(input("b1", b1));
        inputs.push(input("b2", b2));
    }
    Ok(Case::new(inputs, move |t, v| {
        let vars = SeVars {
            w1: v[1],
            w2: v[2],
            b1: v.get(3).copied(),
            b2: v.get(4).copied(),
        };
        crate::se::se_forward_on(t, v[0], &vars, &config)
    }))
}

/// One bottleneck unit with the SE unit at `variant`, all parameters as inputs.
fn residual_case(rng: &mut ChaCha8Rng, variant: IntegrationVariant) -> Result<Case> {
    let arch = preset("toy").expect("toy preset");
    let c_in = 2 * dim(rng, 1, 3);
    let (out, stride) = if rng.random_bool(0.5) { (c_in, 1) } else { (2 * dim(rng, 1, 3), 2) };
    let mid = dim(rng, 1, 3);
    let stage = StageSpec::plain(1, mid, out, stride);
    let mut store = ParamStore::default();
    let mut bn = BnBuffers::default();
    let block = {
        let mut b = LayerBuilder::new(&mut store, &mut bn, rng.random());
        let pos = BlockPosition { stage: 0, block: 0 };
        let mut block = Block::Bottleneck(build_bottleneck_block(&mut b, &arch, &stage, c_in, pos)?);
        let settings = SeSettings {
            ratio: 2,
            ..SeSettings::default()
        };
        integrate_se(&mut b, &mut block, variant, &settings, pos.se_label())?;
        block
    };
    let d = Dims::new(dim(rng, 2, 3), c_in, dim(rng, 3, 6), dim(rng, 3, 6));
    let mut inputs = vec![input("x", uniform(rng, d))];
    // BN affine parameters start at 1 / 0; randomize them so every path is exercised.
    for p in store.iter() {
        let value = match p.role {
            crate::arch::layers::ParamRole::Weight => p.value.clone(),
            _ => uniform(rng, p.value.dims()).map(|v| v + 0.5),
        };
        inputs.push(input(&p.name, value));
    }
    Ok(Case::new(inputs, move |t, v| {
        let mut ctx = Ctx {
            tape: t,
            params: &v[1..],
            bn: &mut bn.states,
            mode: Mode::Train,
            hook: &mut NoHook,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        block.forward(&mut ctx, v[0])
    }))
}

/// `y = x^2` whose backward reports `3x` instead of `2x`.
fn corrupt_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let d = small(rng);
    Ok(Case::new(vec![input("x", off_zero(rng, d))], |t, v| {
        let y = t.value(v[0]).map(|x| x * x);
        Ok(t.custom(
            &[v[0]],
            y,
            Box::new(|ins, _, g| {
                let mut gx = ins[0].map(|x| 3.0 * x);
                gx.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a *= b);
                Ok(vec![gx])
            }),
        ))
    }))
}

macro_rules! target {
    ($name:expr, $about:expr, $build:expr) => {
        Target {
            name: $name,
            about: $about,
            build: $build,
        }
    };
}

pub const TARGETS: &[Target] = &[
    target!("conv2d", "dense 2-D convolution with bias", |r| conv_case(r, 1)),
    target!("conv2d_grouped", "grouped convolution", |r| {
        let g = dim(r, 2, 3);
        conv_case(r, g)
    }),
    target!("global_avg_pool", "global average pooling", |r| {
        let d = small(r);
        Ok(Case::new(vec![input("x", uniform(r, d))], |t, v| t.global_pool(v[0], PoolKind::Avg)))
    }),
    target!("global_max_pool", "global max pooling", |r| {
        let d = small(r);
        Ok(Case::new(vec![input("x", distinct(r, d))], |t, v| t.global_pool(v[0], PoolKind::Max)))
    }),
    target!("max_pool2d", "3x3 stride-2 windowed max pooling", |r| {
        let d = Dims::new(dim(r, 1, 3), dim(r, 1, 4), dim(r, 3, 6), dim(r, 3, 6));
        Ok(Case::new(vec![input("x", distinct(r, d))], |t, v| t.max_pool2d(v[0], 3, 2, 1)))
    }),
    target!("linear", "fully connected layer with bias", |r| {
        let (n, i, o) = (dim(r, 1, 4), dim(r, 1, 6), dim(r, 1, 6));
        let inputs = vec![
            input("x", uniform(r, Dims::new(n, i, 1, 1))),
            input("weight", uniform(r, Dims::new(o, i, 1, 1))),
            input("bias", uniform(r, Dims::new(1, o, 1, 1))),
        ];
        Ok(Case::new(inputs, |t, v| t.linear(v[0], v[1], Some(v[2]))))
    }),
    target!("relu", "rectifier", |r| unary(r, |t, x| t.relu(x), true)),
    target!("sigmoid", "logistic gate", |r| unary(r, |t, x| t.activation(x, ActivationKind::Sigmoid), false)),
    target!("tanh", "hyperbolic tangent", |r| unary(r, |t, x| t.activation(x, ActivationKind::Tanh), false)),
    target!("batch_norm", "batch norm on batch statistics", |r| bn_case(r, true)),
    target!("batch_norm_eval", "batch norm on running statistics", |r| bn_case(r, false)),
    target!("add", "elementwise sum", |r| binary_case(r, BinaryKind::Add, false)),
    target!("mul", "elementwise product", |r| binary_case(r, BinaryKind::Mul, false)),
    target!("mul_broadcast", "channel-wise scale by an (n, c) gate", |r| binary_case(r, BinaryKind::Mul, true)),
    target!("concat", "channel concatenation", |r| {
        let d = small(r);
        let e = Dims::new(d.n, dim(r, 1, 4), d.h, d.w);
        let inputs = vec![input("a", uniform(r, d)), input("b", uniform(r, e))];
        Ok(Case::new(inputs, |t, v| t.concat(&[v[0], v[1]])))
    }),
    target!("se_block", "SE unit: average squeeze, sigmoid gate", |r| {
        se_case(r, PoolKind::Avg, false, ActivationKind::Sigmoid)
    }),
    target!("se_block_max", "SE unit: max squeeze, biased FCs", |r| {
        se_case(r, PoolKind::Max, true, ActivationKind::Sigmoid)
    }),
    target!("se_block_tanh", "SE unit with a tanh gate", |r| se_case(r, PoolKind::Avg, false, ActivationKind::Tanh)),
    target!("residual", "bottleneck residual unit without SE", |r| residual_case(r, IntegrationVariant::None)),
    target!("se_residual", "SE-residual unit, standard placement", |r| {
        residual_case(r, IntegrationVariant::Standard)
    }),
    target!("se_residual_pre", "SE-residual unit, SE before the branch", |r| {
        residual_case(r, IntegrationVariant::Pre)
    }),
    target!("se_residual_post", "SE-residual unit, SE after the sum", |r| {
        residual_case(r, IntegrationVariant::Post)
    }),
    target!("se_residual_identity", "SE-residual unit, SE on the shortcut", |r| {
        residual_case(r, IntegrationVariant::Identity)
    }),
    target!("se_residual_inside3x3", "SE-residual unit, SE after the 3x3", |r| {
        residual_case(r, IntegrationVariant::Inside3x3)
    }),
    target!("se_residual_nosqueeze", "SE-residual unit with 1x1-conv gates", |r| {
        residual_case(r, IntegrationVariant::NoSqueeze)
    }),
    target!("fixture_corrupt", "deliberately wrong backward (must fail)", corrupt_case),
];

pub fn find_target(name: &str) -> Result<&'static Target> {
    TARGETS.iter().find(|t| t.name == name).ok_or_else(|| Error::Unknown {
        kind: "gradcheck target",
        name: name.to_string(),
    })
}

fn projected(tape: &Tape, out: Var, r: &Tensor) -> f64 {
    tape.value(out).dot(r)
}

/// Runs one target at one seed.
pub fn gradcheck(name: &str, seed: u64) -> Result<GradcheckReport> {
    let target = find_target(name)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut case = (target.build)(&mut rng)?;
    let mut values: Vec<Tensor> = case.inputs.iter().map(|(_, t)| t.clone()).collect();

    let (tape, vars, out) = case.run(&values)?;
    let r = uniform(&mut rng, tape.dims(out));
    let grads = tape.backward(out, r.clone())?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v, tape.dims(v))).collect();
    drop(tape);

    let mut report = GradcheckReport {
        target: name.to_string(),
        seed,
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for i in 0..values.len() {
        for j in 0..values[i].numel() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + STEP;
            let (tp, _, op) = case.run(&values)?;
            let plus = projected(&tp, op, &r);
            values[i].data_mut()[j] = orig - STEP;
            let (tm, _, om) = case.run(&values)?;
            let minus = projected(&tm, om, &r);
            values[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            if !numeric.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("{name}: finite difference of {}[{j}]", case.inputs[i].0),
                });
            }
            let a = analytic[i].data()[j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(Worst {
                    input: case.inputs[i].0.clone(),
                    index: j,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

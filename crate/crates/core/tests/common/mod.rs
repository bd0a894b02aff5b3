//! Brute-force oracles and experiment helpers shared by the integration tests
//! and the acceptance runner. Nothing here calls the kernels it checks.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use senet_core::arch::{preset, ForceGate, IntegrationVariant, Mode, NoHook, SeSettings};
use senet_core::ops::{self, ActivationKind, ConvGeometry, PoolKind};
use senet_core::probe::{record_excitations, ExcitationStats, Recorder};
use senet_core::se::{self, SeConfig, SeParams};
use senet_core::train::{fit, make_synthetic, Normalization, SyntheticConfig, TrainOptions, TrainReport};
use senet_core::{build_network, Dims, Network, Tape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, d: Dims) -> Tensor {
    Tensor::uniform(d, -1.0, 1.0, rng)
}

/// Largest `|a - b| / max(1, |b|)` over two equally shaped tensors.
pub fn rel_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims(), "shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn conv_oracle(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize, groups: usize) -> Tensor {
    let (xd, wd) = (x.dims(), w.dims());
    let oh = (xd.h + 2 * pad - wd.h) / stride + 1;
    let ow = (xd.w + 2 * pad - wd.w) / stride + 1;
    let (cin_g, cout_g) = (xd.c / groups, wd.n / groups);
    let mut out = Tensor::zeros(Dims::new(xd.n, wd.n, oh, ow));
    for n in 0..xd.n {
        for oc in 0..wd.n {
            let g = oc / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..cin_g {
                        for ky in 0..wd.h {
                            for kx in 0..wd.w {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= xd.h as isize || ix >= xd.w as isize {
                                    continue;
                                }
                                acc += w.at(oc, ic, ky, kx) * x.at(n, g * cin_g + ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    if let Some(b) = b {
                        acc += b.data()[oc];
                    }
                    out.set(n, oc, oy, ox, acc);
                }
            }
        }
    }
    out
}

pub fn global_pool_oracle(x: &Tensor, kind: PoolKind) -> Tensor {
    let d = x.dims();
    let mut out = Tensor::zeros(Dims::new(d.n, d.c, 1, 1));
    for n in 0..d.n {
        for c in 0..d.c {
            let mut sum = 0.0;
            let mut max = f64::NEG_INFINITY;
            for y in 0..d.h {
                for x_ in 0..d.w {
                    sum += x.at(n, c, y, x_);
                    max = max.max(x.at(n, c, y, x_));
                }
            }
            let v = match kind {
                PoolKind::Avg => sum / (d.h * d.w) as f64,
                PoolKind::Max => max,
            };
            out.set(n, c, 0, 0, v);
        }
    }
    out
}

pub fn max_pool_oracle(x: &Tensor, k: usize, stride: usize, pad: usize) -> Tensor {
    let d = x.dims();
    let oh = (d.h + 2 * pad - k) / stride + 1;
    let ow = (d.w + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(Dims::new(d.n, d.c, oh, ow));
    for n in 0..d.n {
        for c in 0..d.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && iy < d.h as isize && ix < d.w as isize {
                                m = m.max(x.at(n, c, iy as usize, ix as usize));
                            }
                        }
                    }
                    out.set(n, c, oy, ox, m);
                }
            }
        }
    }
    out
}

/// Naive triple loop; `x` is `(n, c, 1, 1)` and `w` is `(d, c, 1, 1)`.
pub fn fc_oracle(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (n, c, d) = (x.dims().n, x.dims().c, w.dims().n);
    let mut out = Tensor::zeros(Dims::new(n, d, 1, 1));
    for i in 0..n {
        for o in 0..d {
            let mut acc = 0.0;
            for k in 0..c {
                acc += w.at(o, k, 0, 0) * x.at(i, k, 0, 0);
            }
            if let Some(b) = b {
                acc += b.data()[o];
            }
            out.set(i, o, 0, 0, acc);
        }
    }
    out
}

fn act(kind: ActivationKind, v: f64) -> f64 {
    match kind {
        ActivationKind::Relu => v.max(0.0),
        ActivationKind::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        ActivationKind::Tanh => v.tanh(),
    }
}

/// Squeeze, excite and scale written out per sample and channel.
pub fn se_oracle(u: &Tensor, p: &SeParams, cfg: &SeConfig) -> Tensor {
    let d = u.dims();
    let z = global_pool_oracle(u, cfg.squeeze);
    let bw = cfg.bottleneck();
    let mut out = u.clone();
    for n in 0..d.n {
        let hidden: Vec<f64> = (0..bw)
            .map(|j| {
                let mut acc = 0.0;
                for c in 0..d.c {
                    acc += p.w1.at(j, c, 0, 0) * z.at(n, c, 0, 0);
                }
                acc += p.b1.as_ref().map_or(0.0, |b| b.data()[j]);
                acc.max(0.0)
            })
            .collect();
        for c in 0..d.c {
            let mut acc = 0.0;
            for (j, h) in hidden.iter().enumerate() {
                acc += p.w2.at(c, j, 0, 0) * h;
            }
            acc += p.b2.as_ref().map_or(0.0, |b| b.data()[c]);
            let s = act(cfg.excitation, acc);
            for y in 0..d.h {
                for x in 0..d.w {
                    out.set(n, c, y, x, u.at(n, c, y, x) * s);
                }
            }
        }
    }
    out
}

fn dim(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

/// Worst relative discrepancy per operator against its oracle over `cases`
/// random shapes, every dimension at most 6.
pub fn oracle_sweep(seed: u64, cases: usize) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut worst = vec![
        ("conv2d", 0.0f64),
        ("conv2d_grouped", 0.0),
        ("global_avg_pool", 0.0),
        ("global_max_pool", 0.0),
        ("max_pool2d", 0.0),
        ("fully_connected", 0.0),
        ("se_block", 0.0),
    ];
    for _ in 0..cases {
        // Plain and grouped convolution.
        let groups = [1, 2, 3][r.random_range(0..3)];
        for (slot, g) in [(0, 1), (1, groups)] {
            let cin = g * dim(&mut r, 1, 6 / g);
            let cout = g * dim(&mut r, 1, 6 / g);
            let k = dim(&mut r, 1, 3);
            let pad = r.random_range(0..k);
            let stride = dim(&mut r, 1, 2);
            let xd = Dims::new(dim(&mut r, 1, 3), cin, dim(&mut r, k, 6), dim(&mut r, k, 6));
            let x = uniform(&mut r, xd);
            let w = uniform(&mut r, Dims::new(cout, cin / g, k, k));
            let b = r.random_bool(0.5).then(|| uniform(&mut r, Dims::new(1, cout, 1, 1)));
            let got = ops::conv2d(&x, &w, b.as_ref(), ConvGeometry::new(stride, pad, g)).unwrap();
            let want = conv_oracle(&x, &w, b.as_ref(), stride, pad, g);
            worst[slot].1 = worst[slot].1.max(rel_diff(&got, &want));
        }

        let d = Dims::new(dim(&mut r, 1, 6), dim(&mut r, 1, 6), dim(&mut r, 1, 6), dim(&mut r, 1, 6));
        let x = uniform(&mut r, d);
        for (slot, kind) in [(2, PoolKind::Avg), (3, PoolKind::Max)] {
            let got = ops::global_pool(&x, kind).unwrap();
            worst[slot].1 = worst[slot].1.max(rel_diff(&got, &global_pool_oracle(&x, kind)));
        }

        let k = dim(&mut r, 1, 3);
        let pad = r.random_range(0..k);
        let stride = dim(&mut r, 1, 2);
        let d = Dims::new(dim(&mut r, 1, 3), dim(&mut r, 1, 6), dim(&mut r, k, 6), dim(&mut r, k, 6));
        let x = uniform(&mut r, d);
        let got = ops::max_pool2d(&x, k, stride, pad).unwrap();
        worst[4].1 = worst[4].1.max(rel_diff(&got, &max_pool_oracle(&x, k, stride, pad)));

        let (n, c, o) = (dim(&mut r, 1, 6), dim(&mut r, 1, 6), dim(&mut r, 1, 6));
        let x = uniform(&mut r, Dims::new(n, c, 1, 1));
        let w = uniform(&mut r, Dims::new(o, c, 1, 1));
        let b = r.random_bool(0.5).then(|| uniform(&mut r, Dims::new(1, o, 1, 1)));
        let got = ops::fully_connected(&x, &w, b.as_ref()).unwrap();
        worst[5].1 = worst[5].1.max(rel_diff(&got, &fc_oracle(&x, &w, b.as_ref())));

        let c = dim(&mut r, 1, 6);
        let cfg = SeConfig {
            channels: c,
            ratio: dim(&mut r, 1, 4),
            squeeze: if r.random_bool(0.5) { PoolKind::Avg } else { PoolKind::Max },
            excitation: [ActivationKind::Sigmoid, ActivationKind::Relu, ActivationKind::Tanh][r.random_range(0..3)],
            fc_bias: r.random_bool(0.5),
        };
        let mut p = se::init_se_params(&cfg, r.random());
        if cfg.fc_bias {
            p.b1 = Some(uniform(&mut r, Dims::new(1, cfg.bottleneck(), 1, 1)));
            p.b2 = Some(uniform(&mut r, Dims::new(1, c, 1, 1)));
        }
        let ud = Dims::new(dim(&mut r, 1, 4), c, dim(&mut r, 1, 6), dim(&mut r, 1, 6));
        let u = uniform(&mut r, ud);
        let got = se::se_forward(&u, &p, &cfg).unwrap();
        worst[6].1 = worst[6].1.max(rel_diff(&got, &se_oracle(&u, &p, &cfg)));
    }
    worst
}

/// Copies every parameter of `from` whose name also exists in `to`.
pub fn copy_shared_params(from: &Network, to: &mut Network) {
    for p in to.params_mut().iter_mut() {
        let id = from.params().find(&p.name).unwrap_or_else(|| panic!("{} missing", p.name));
        p.value = from.params().value(id).clone();
    }
}

/// For every SE integration variant on the toy net: with every gate forced to
/// one, are the logits bit-identical to the plain net carrying the same weights?
/// Checked in train mode (batch statistics) on a random batch.
pub fn identity_reduction(seed: u64) -> Vec<(IntegrationVariant, bool)> {
    let base = preset("toy").expect("toy preset");
    let x = uniform(&mut rng(seed), Dims::new(5, 4, 8, 8));
    IntegrationVariant::ALL_SE
        .iter()
        .map(|&v| {
            let settings = SeSettings { ratio: 4, ..SeSettings::default() };
            let mut se_net = build_network(&base.with_variant(v, settings), seed).unwrap();
            let mut plain = build_network(&base, seed ^ 1).unwrap();
            copy_shared_params(&se_net, &mut plain);
            let mut t1 = Tape::new();
            let a = se_net.forward(&mut t1, &x, Mode::Train, &mut ForceGate(1.0)).unwrap();
            let mut t2 = Tape::new();
            let b = plain.forward(&mut t2, &x, Mode::Train, &mut NoHook).unwrap();
            (v, t1.value(a.logits) == t2.value(b.logits))
        })
        .collect()
}

/// The synthetic training set and the options every desk-scale run uses.
pub fn desk_data() -> senet_core::train::Dataset {
    make_synthetic(&SyntheticConfig::default()).unwrap()
}

pub fn desk_options(epochs: usize) -> TrainOptions {
    TrainOptions {
        epochs,
        ..TrainOptions::default()
    }
}

pub fn train_preset(name: &str, epochs: usize, seed: u64) -> (Network, TrainReport) {
    let data = desk_data();
    let opts = TrainOptions { seed, ..desk_options(epochs) };
    let mut net = build_network(&preset(name).unwrap(), seed).unwrap();
    let report = fit(&mut net, &data, None, &opts, None).unwrap();
    (net, report)
}

/// Mean class similarity of the SE blocks in the first and the last SE stage.
pub fn stage_similarity(stats: &ExcitationStats) -> (f64, f64) {
    let blocks = stats.blocks();
    let stage = |b: &str| b.split('_').nth(1).and_then(|s| s.parse::<usize>().ok()).unwrap();
    let first = blocks.iter().map(|b| stage(b)).min().unwrap();
    let last = blocks.iter().map(|b| stage(b)).max().unwrap();
    let avg = |s: usize| {
        let sims: Vec<f64> = blocks.iter().filter(|b| stage(b) == s).map(|b| stats.class_similarity(b)).collect();
        sims.iter().sum::<f64>() / sims.len() as f64
    };
    (avg(first), avg(last))
}

/// Probes a trained net on held-out synthetic data.
pub fn probe_trained(net: &mut Network, per_class: usize) -> ExcitationStats {
    let val = make_synthetic(&SyntheticConfig {
        seed: 99,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let norm = Normalization::identity(4);
    record_excitations(net, &val, &norm, per_class, None).unwrap()
}

/// Are logits with a recording hook bit-identical to logits without one?
pub fn hooks_are_transparent(net: &mut Network) -> bool {
    let x = uniform(&mut rng(3), Dims::new(6, 4, 8, 8));
    let plain = net.predict(&x).unwrap();
    let mut rec = Recorder::default();
    let hooked = net.predict_with_hook(&x, &mut rec).unwrap();
    !rec.gates.is_empty() && plain == hooked
}

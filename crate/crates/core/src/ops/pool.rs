use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::conv::conv_out_len;
use crate::tensor::{Dims, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Avg,
    Max,
}

impl PoolKind {
    pub fn name(self) -> &'static str {
        match self {
            PoolKind::Avg => "avg",
            PoolKind::Max => "max",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "avg" | "mean" => Some(PoolKind::Avg),
            "max" => Some(PoolKind::Max),
            _ => None,
        }
    }
}

/// Reduces every `(n, c)` plane to one value: its mean or its maximum.
pub fn global_pool(input: &Tensor, kind: PoolKind) -> Result<Tensor> {
    let d = input.dims();
    if d.plane() == 0 {
        return Err(Error::shape("global_pool", format!("empty spatial extent {d}")));
    }
    let area = d.plane() as f64;
    let out: Vec<f64> = input
        .data()
        .chunks(d.plane())
        .map(|plane| match kind {
            PoolKind::Avg => plane.iter().sum::<f64>() / area,
            PoolKind::Max => plane.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    Tensor::from_vec(Dims::new(d.n, d.c, 1, 1), out)?.ensure_finite("global_pool")
}

/// Position of the first maximal element in scan order.
fn argmax_first(plane: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in plane.iter().enumerate() {
        if v > plane[best] {
            best = i;
        }
    }
    best
}

pub fn global_pool_backward(input: &Tensor, kind: PoolKind, grad_out: &Tensor) -> Result<Tensor> {
    let d = input.dims();
    if grad_out.dims() != Dims::new(d.n, d.c, 1, 1) {
        return Err(Error::shape(
            "global_pool_backward",
            format!("grad {} for input {d}", grad_out.dims()),
        ));
    }
    let mut gx = vec![0.0; d.numel()];
    let area = d.plane() as f64;
    for ((gplane, plane), &g) in gx
        .chunks_mut(d.plane())
        .zip(input.data().chunks(d.plane()))
        .zip(grad_out.data())
    {
        match kind {
            PoolKind::Avg => gplane.iter_mut().for_each(|v| *v = g / area),
            PoolKind::Max => gplane[argmax_first(plane)] = g,
        }
    }
    Tensor::from_vec(d, gx)
}

/// Windowed max pooling (the ImageNet stem's 3x3 stride-2 pool). Padding never wins.
pub fn max_pool2d(input: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let (out, _) = max_pool2d_with_indices(input, kernel, stride, padding)?;
    Ok(out)
}

pub(crate) fn max_pool2d_with_indices(
    input: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let d = input.dims();
    let (oh, ow) = match (
        conv_out_len(d.h, kernel, stride, padding),
        conv_out_len(d.w, kernel, stride, padding),
    ) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 && padding < kernel => (oh, ow),
        _ => {
            return Err(Error::shape(
                "max_pool2d",
                format!("window {kernel}/{stride}/{padding} does not fit {d}"),
            ))
        }
    };
    let od = Dims::new(d.n, d.c, oh, ow);
    let x = input.data();
    let mut out = Vec::with_capacity(od.numel());
    let mut arg = Vec::with_capacity(od.numel());
    for n in 0..d.n {
        for c in 0..d.c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = usize::MAX;
                    for ki in 0..kernel {
                        let h = i * stride + ki;
                        if h < padding || h - padding >= d.h {
                            continue;
                        }
                        for kj in 0..kernel {
                            let w = j * stride + kj;
                            if w < padding || w - padding >= d.w {
                                continue;
                            }
                            let at = d.index(n, c, h - padding, w - padding);
                            if best_at == usize::MAX || x[at] > best {
                                best = x[at];
                                best_at = at;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_at);
                }
            }
        }
    }
    Ok((Tensor::from_vec(od, out)?.ensure_finite("max_pool2d")?, arg))
}

pub(crate) fn max_pool2d_backward(input_dims: Dims, argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(input_dims);
    let g = gx.data_mut();
    for (&at, &go) in argmax.iter().zip(grad_out.data()) {
        g[at] += go;
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_pools_to_value() {
        let x = Tensor::full(Dims::new(2, 3, 4, 5), -1.25);
        for kind in [PoolKind::Avg, PoolKind::Max] {
            let z = global_pool(&x, kind).unwrap();
            assert_eq!(z.dims(), Dims::new(2, 3, 1, 1));
            assert!(z.data().iter().all(|&v| v == -1.25));
        }
    }

    #[test]
    fn small_map_avg_and_max() {
        let x = Tensor::from_vec(Dims::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_pool(&x, PoolKind::Avg).unwrap().data(), &[2.5]);
        assert_eq!(global_pool(&x, PoolKind::Max).unwrap().data(), &[4.0]);
    }

    #[test]
    fn empty_extent_is_an_error() {
        let x = Tensor::zeros(Dims::new(1, 2, 0, 3));
        assert!(global_pool(&x, PoolKind::Avg).is_err());
    }

    #[test]
    fn max_backward_picks_first_tie() {
        let x = Tensor::from_vec(Dims::new(1, 1, 2, 2), vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        let g = global_pool_backward(&x, PoolKind::Max, &Tensor::full(Dims::new(1, 1, 1, 1), 2.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn windowed_max_pool_halves() {
        let x = Tensor::from_vec(Dims::new(1, 1, 4, 4), (0..16).map(f64::from).collect()).unwrap();
        let y = max_pool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }
}

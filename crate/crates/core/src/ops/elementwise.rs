use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryKind {
    Add,
    Mul,
}

/// How `b` lines up against `a`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// `b` is `(n, c, 1, 1)`, repeated over every spatial position of `a`.
    Channel,
}

pub(crate) fn broadcast_mode(a: Dims, b: Dims) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b == Dims::new(a.n, a.c, 1, 1) {
        Ok(Broadcast::Channel)
    } else {
        Err(Error::shape(
            "elementwise",
            format!("{b} does not broadcast over {a}"),
        ))
    }
}

pub fn elementwise(a: &Tensor, b: &Tensor, kind: BinaryKind) -> Result<Tensor> {
    let mode = broadcast_mode(a.dims(), b.dims())?;
    let f = match kind {
        BinaryKind::Add => |x: f64, y: f64| x + y,
        BinaryKind::Mul => |x: f64, y: f64| x * y,
    };
    let d = a.dims();
    let out: Vec<f64> = match mode {
        Broadcast::Same => a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Channel => a
            .data()
            .chunks(d.plane().max(1))
            .zip(b.data())
            .flat_map(|(plane, &s)| plane.iter().map(move |&x| f(x, s)))
            .collect(),
    };
    Tensor::from_vec(d, out)?.ensure_finite(match kind {
        BinaryKind::Add => "add",
        BinaryKind::Mul => "mul",
    })
}

/// Gradients for `(a, b)`; the broadcast side is reduced over space.
pub fn elementwise_backward(
    a: &Tensor,
    b: &Tensor,
    kind: BinaryKind,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let mode = broadcast_mode(a.dims(), b.dims())?;
    let d = a.dims();
    if grad_out.dims() != d {
        return Err(Error::shape(
            "elementwise_backward",
            format!("grad {} vs {d}", grad_out.dims()),
        ));
    }
    let (ga, gb_full): (Tensor, Vec<f64>) = match kind {
        BinaryKind::Add => (grad_out.clone(), grad_out.data().to_vec()),
        BinaryKind::Mul => {
            let ga = match mode {
                Broadcast::Same => b
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(y, g)| y * g)
                    .collect(),
                Broadcast::Channel => grad_out
                    .data()
                    .chunks(d.plane().max(1))
                    .zip(b.data())
                    .flat_map(|(plane, &s)| plane.iter().map(move |&g| g * s))
                    .collect(),
            };
            let gb = a
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(x, g)| x * g)
                .collect();
            (Tensor::from_vec(d, ga)?, gb)
        }
    };
    let gb = match mode {
        Broadcast::Same => Tensor::from_vec(d, gb_full)?,
        Broadcast::Channel => Tensor::from_vec(
            b.dims(),
            gb_full
                .chunks(d.plane().max(1))
                .map(|plane| plane.iter().sum())
                .collect(),
        )?,
    };
    Ok((ga, gb))
}

/// Concatenates along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?
        .dims();
    let mut c = 0;
    for p in parts {
        let d = p.dims();
        if (d.n, d.h, d.w) != (first.n, first.h, first.w) {
            return Err(Error::shape("concat", format!("{d} vs {first}")));
        }
        c += d.c;
    }
    let od = Dims::new(first.n, c, first.h, first.w);
    let mut out = Vec::with_capacity(od.numel());
    for n in 0..first.n {
        for p in parts {
            let s = p.dims().sample();
            out.extend_from_slice(&p.data()[n * s..(n + 1) * s]);
        }
    }
    Tensor::from_vec(od, out)
}

pub fn concat_channels_backward(parts: &[Dims], grad_out: &Tensor) -> Result<Vec<Tensor>> {
    let od = grad_out.dims();
    let mut grads: Vec<Vec<f64>> = parts.iter().map(|d| Vec::with_capacity(d.numel())).collect();
    let g = grad_out.data();
    for n in 0..od.n {
        let mut offset = n * od.sample();
        for (d, buf) in parts.iter().zip(grads.iter_mut()) {
            let s = d.sample();
            buf.extend_from_slice(&g[offset..offset + s]);
            offset += s;
        }
    }
    parts
        .iter()
        .zip(grads)
        .map(|(d, v)| Tensor::from_vec(*d, v))
        .collect()
}

//! Reverse-mode differentiation by recording.
//!
//! A [`Tape`] stores every value produced during a forward pass together with
//! what is needed to differentiate it. [`Tape::backward`] walks the records in
//! exact reverse order and returns a [`Gradients`] table keyed by [`Var`].

use crate::error::{Error, Result};
use crate::ops::{
    self, activation::ActivationKind, conv::ConvGeometry, elementwise::BinaryKind, norm::BnCache,
    norm::BnState, pool::PoolKind,
};
use crate::tensor::{Dims, Tensor};

/// Handle to a value on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for [`Tape::custom`]: `(inputs, output, grad_out) -> grad per input`.
pub type CustomBackward = Box<dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Result<Vec<Tensor>> + Send>;

enum Op {
    Leaf,
    Constant,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    GlobalPool {
        x: Var,
        kind: PoolKind,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Activation {
        x: Var,
        kind: ActivationKind,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache,
        batch_stats: bool,
    },
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
    },
    Concat {
        parts: Vec<Var>,
    },
    Custom {
        inputs: Vec<Var>,
        backward: CustomBackward,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Conv { .. } => "conv2d",
            Op::GlobalPool { .. } => "global_pool",
            Op::MaxPool { .. } => "max_pool2d",
            Op::Linear { .. } => "fully_connected",
            Op::Activation { .. } => "activation",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Binary { .. } => "elementwise",
            Op::Concat { .. } => "concat",
            Op::Custom { .. } => "custom",
        }
    }
}

/// Recorded computation. One tape per forward pass; not shared across threads.
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    record: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            record: true,
        }
    }

    /// A tape that keeps values but no backward state; `backward` on it fails.
    pub fn inference() -> Self {
        Tape {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.values[v.0].dims()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(if self.record { op } else { Op::Constant });
        Var(self.values.len() - 1)
    }

    /// A differentiable input (parameter or data).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.values.push(value);
        self.ops.push(Op::Leaf);
        Var(self.values.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.values.push(value);
        self.ops.push(Op::Constant);
        Var(self.values.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let out = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        Ok(self.push(out, Op::Conv { x, w, b, geom }))
    }

    pub fn global_pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let out = ops::global_pool(self.value(x), kind)?;
        Ok(self.push(out, Op::GlobalPool { x, kind }))
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (out, argmax) = ops::pool::max_pool2d_with_indices(self.value(x), kernel, stride, padding)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = ops::fully_connected(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn activation(&mut self, x: Var, kind: ActivationKind) -> Result<Var> {
        let out = ops::activation(self.value(x), kind)?;
        Ok(self.push(out, Op::Activation { x, kind }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, ActivationKind::Relu)
    }

    /// Batch norm; `train` normalizes by batch statistics and updates `state`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BnState,
        train: bool,
    ) -> Result<Var> {
        let (out, cache) = if train {
            ops::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), state)?
        } else {
            ops::batch_norm_eval(self.value(x), self.value(gamma), self.value(beta), state)?
        };
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                batch_stats: train,
            },
        ))
    }

    pub fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let out = ops::elementwise(self.value(a), self.value(b), kind)?;
        Ok(self.push(out, Op::Binary { a, b, kind }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    /// Elementwise product; `b` may be `(n, c, 1, 1)` and is broadcast over space.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_channels(&tensors)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Records an externally computed value with a caller-supplied backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, backward: CustomBackward) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Propagates `seed` (the gradient of some scalar w.r.t. `root`) to every
    /// value recorded up to `root`.
    pub fn backward(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        if !self.record {
            return Err(Error::shape("backward", "tape was recorded in inference mode"));
        }
        if seed.dims() != self.dims(root) {
            return Err(Error::shape(
                "backward",
                format!("seed {} for value {}", seed.dims(), self.dims(root)),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        let mut visited = Vec::with_capacity(root.0 + 1);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            visited.push(Var(i));
            let op = &self.ops[i];
            let contributions = self.propagate(op, i, &g).map_err(|e| match e {
                Error::Shape { detail, .. } => Error::Shape {
                    op: "backward",
                    detail: format!("{} at #{i}: {detail}", op.name()),
                },
                other => other,
            })?;
            for (v, gv) in contributions {
                if matches!(self.ops[v.0], Op::Constant) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&gv),
                    slot @ None => *slot = Some(gv),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn propagate(&self, op: &Op, at: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        Ok(match op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Conv { x, w, b, geom } => {
                let cg = ops::conv2d_backward(self.value(*x), self.value(*w), b.is_some(), *geom, g)?;
                let mut out = vec![(*x, cg.input), (*w, cg.weight)];
                if let (Some(b), Some(gb)) = (b, cg.bias) {
                    out.push((*b, reshape_like(gb, self.dims(*b))?));
                }
                out
            }
            Op::GlobalPool { x, kind } => {
                vec![(*x, ops::global_pool_backward(self.value(*x), *kind, g)?)]
            }
            Op::MaxPool { x, argmax } => {
                vec![(*x, ops::pool::max_pool2d_backward(self.dims(*x), argmax, g))]
            }
            Op::Linear { x, w, b } => {
                let lg = ops::fully_connected_backward(self.value(*x), self.value(*w), b.is_some(), g)?;
                let mut out = vec![(*x, lg.input), (*w, lg.weight)];
                if let (Some(b), Some(gb)) = (b, lg.bias) {
                    out.push((*b, reshape_like(gb, self.dims(*b))?));
                }
                out
            }
            Op::Activation { x, kind } => {
                vec![(*x, ops::activation_backward(&self.values[at], *kind, g)?)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                batch_stats,
            } => {
                let bg = ops::batch_norm_backward(cache, self.value(*gamma), g, *batch_stats)?;
                vec![
                    (*x, bg.input),
                    (*gamma, reshape_like(bg.gamma, self.dims(*gamma))?),
                    (*beta, reshape_like(bg.beta, self.dims(*beta))?),
                ]
            }
            Op::Binary { a, b, kind } => {
                let (ga, gb) = ops::elementwise_backward(self.value(*a), self.value(*b), *kind, g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Concat { parts } => {
                let dims: Vec<Dims> = parts.iter().map(|&p| self.dims(p)).collect();
                let grads = ops::elementwise::concat_channels_backward(&dims, g)?;
                parts.iter().copied().zip(grads).collect()
            }
            Op::Custom { inputs, backward } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let grads = backward(&ins, &self.values[at], g)?;
                if grads.len() != inputs.len() {
                    return Err(Error::shape(
                        "custom",
                        format!("{} grads for {} inputs", grads.len(), inputs.len()),
                    ));
                }
                for (gv, &v) in grads.iter().zip(inputs) {
                    if gv.dims() != self.dims(v) {
                        return Err(Error::shape(
                            "custom",
                            format!("grad {} for input {}", gv.dims(), self.dims(v)),
                        ));
                    }
                }
                inputs.iter().copied().zip(grads).collect()
            }
        })
    }
}

fn reshape_like(t: Tensor, dims: Dims) -> Result<Tensor> {
    if t.dims() == dims {
        Ok(t)
    } else {
        t.reshape(dims)
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: Vec<Var>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if no path from the root reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, with unreached values reported as zeros of `dims`.
    pub fn get_or_zeros(&self, v: Var, dims: Dims) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(dims))
    }

    /// Values that carried a gradient, in the order the backward pass handled them.
    pub fn visit_order(&self) -> &[Var] {
        &self.visited
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visits_in_reverse_recording_order() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::full(Dims::new(1, 2, 2, 2), 0.5));
        let y = t.relu(x).unwrap();
        let z = t.global_pool(y, PoolKind::Avg).unwrap();
        let s = t.activation(z, ActivationKind::Sigmoid).unwrap();
        let g = t.backward(s, Tensor::full(t.dims(s), 1.0)).unwrap();
        assert_eq!(g.visit_order(), &[s, z, y, x]);
    }

    #[test]
    fn shared_value_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![3.0]));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y, Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![2.0]));
        let k = t.constant(Tensor::vector(vec![5.0]));
        let y = t.mul(x, k).unwrap();
        let g = t.backward(y, Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0]);
        assert!(g.get(k).is_none());
    }

    #[test]
    fn inference_tape_refuses_backward() {
        let mut t = Tape::inference();
        let x = t.leaf(Tensor::vector(vec![1.0]));
        let y = t.relu(x).unwrap();
        assert!(t.backward(y, Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn seed_shape_checked() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(t.backward(x, Tensor::vector(vec![1.0])).is_err());
    }
}

use crate::arch::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One SGD step with weight decay folded into the momentum buffer:
/// `v = momentum * v + g + weight_decay * p`, then `p -= lr * v`.
///
/// Nothing is modified if any gradient is non-finite.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("{} params, {} grads, {} buffers", params.len(), grads.len(), velocity.len()),
        ));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        if p.dims() != g.dims() || p.dims() != v.dims() {
            return Err(Error::shape(
                "sgd_step",
                format!("param {i}: {} vs grad {} vs buffer {}", p.dims(), g.dims(), v.dims()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                op: format!("gradient of parameter {i}"),
            });
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv + weight_decay * *pv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// Momentum SGD over a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: store.iter().map(|p| Tensor::zeros(p.value.dims())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if let Some((p, _)) = store.iter().zip(grads).find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("gradient of {}", p.name),
            });
        }
        let mut params: Vec<&mut Tensor> = store.iter_mut().map(|p| &mut p.value).collect();
        sgd_step(&mut params, grads, &mut self.velocity, lr, self.momentum, self.weight_decay)
    }
}

/// Learning rate divided by `factor` at each milestone epoch (0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct StepSchedule {
    pub initial: f64,
    pub factor: f64,
    pub milestones: Vec<usize>,
}

impl StepSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.initial / self.factor.powi(drops as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn schedule() {
        let s = StepSchedule {
            initial: 0.1,
            factor: 10.0,
            milestones: vec![3, 5],
        };
        assert_eq!(s.lr_at(0), 0.1);
        assert!((s.lr_at(3) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(9) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_leaves_params() {
        let mut p = Tensor::full(Dims::new(1, 2, 1, 1), 1.0);
        let g = Tensor::vector(vec![1.0, f64::NAN]);
        let mut v = vec![Tensor::zeros(p.dims())];
        assert!(sgd_step(&mut [&mut p], &[g], &mut v, 0.1, 0.9, 0.0).is_err());
        assert_eq!(p.data(), &[1.0, 1.0]);
    }
}

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

/// `out[n, d] = sum_c weight[d, c] * input[n, c] (+ bias[d])`.
///
/// `input` is `(n, c, 1, 1)`, `weight` is `(d, c, 1, 1)` and the bias has `d` entries.
pub fn fully_connected(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let id = input.dims();
    let wd = weight.dims();
    check(id, wd, bias)?;
    let (c, d) = (id.c, wd.n);
    let w = weight.data();
    let mut out = Vec::with_capacity(id.n * d);
    for row in input.data().chunks(c) {
        for o in 0..d {
            let wrow = &w[o * c..(o + 1) * c];
            let mut acc = 0.0;
            for (a, b) in wrow.iter().zip(row) {
                acc += a * b;
            }
            if let Some(b) = bias {
                acc += b.data()[o];
            }
            out.push(acc);
        }
    }
    Tensor::from_vec(Dims::new(id.n, d, 1, 1), out)?.ensure_finite("fully_connected")
}

fn check(id: Dims, wd: Dims, bias: Option<&Tensor>) -> Result<()> {
    if id.h != 1 || id.w != 1 {
        return Err(Error::shape(
            "fully_connected",
            format!("input {id} is not spatially 1x1"),
        ));
    }
    if wd.h != 1 || wd.w != 1 || wd.c != id.c {
        return Err(Error::shape(
            "fully_connected",
            format!("weight {wd} does not accept {} features", id.c),
        ));
    }
    if let Some(b) = bias {
        if b.numel() != wd.n {
            return Err(Error::shape(
                "fully_connected",
                format!("bias has {} entries for {} outputs", b.numel(), wd.n),
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

pub fn fully_connected_backward(
    input: &Tensor,
    weight: &Tensor,
    with_bias: bool,
    grad_out: &Tensor,
) -> Result<LinearGrads> {
    let id = input.dims();
    let wd = weight.dims();
    check(id, wd, None)?;
    let (c, d) = (id.c, wd.n);
    if grad_out.dims() != Dims::new(id.n, d, 1, 1) {
        return Err(Error::shape(
            "fully_connected_backward",
            format!("grad {} vs output {}x{d}", grad_out.dims(), id.n),
        ));
    }
    let x = input.data();
    let w = weight.data();
    let gy = grad_out.data();
    let mut gx = vec![0.0; id.numel()];
    let mut gw = vec![0.0; wd.numel()];
    let mut gb = vec![0.0; d];
    for n in 0..id.n {
        let xrow = &x[n * c..(n + 1) * c];
        let gxrow = &mut gx[n * c..(n + 1) * c];
        for o in 0..d {
            let g = gy[n * d + o];
            gb[o] += g;
            let wrow = &w[o * c..(o + 1) * c];
            let gwrow = &mut gw[o * c..(o + 1) * c];
            for j in 0..c {
                gxrow[j] += wrow[j] * g;
                gwrow[j] += xrow[j] * g;
            }
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(id, gx)?,
        weight: Tensor::from_vec(wd, gw)?,
        bias: with_bias.then(|| Tensor::vector(gb)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight() {
        let x = Tensor::from_vec(Dims::new(2, 3, 1, 1), vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        let mut w = Tensor::zeros(Dims::new(3, 3, 1, 1));
        for i in 0..3 {
            w.set(i, i, 0, 0, 1.0);
        }
        assert_eq!(fully_connected(&x, &w, None).unwrap(), x);
    }

    #[test]
    fn zero_weight_returns_bias() {
        let x = Tensor::full(Dims::new(3, 4, 1, 1), 7.0);
        let w = Tensor::zeros(Dims::new(2, 4, 1, 1));
        let b = Tensor::vector(vec![0.5, -1.5]);
        let y = fully_connected(&x, &w, Some(&b)).unwrap();
        for n in 0..3 {
            assert_eq!(y.at(n, 0, 0, 0), 0.5);
            assert_eq!(y.at(n, 1, 0, 0), -1.5);
        }
    }

    #[test]
    fn rejects_spatial_input_and_bad_weight() {
        let x = Tensor::zeros(Dims::new(1, 4, 2, 2));
        let w = Tensor::zeros(Dims::new(2, 4, 1, 1));
        assert!(fully_connected(&x, &w, None).is_err());
        let x = Tensor::zeros(Dims::new(1, 3, 1, 1));
        assert!(fully_connected(&x, &w, None).is_err());
    }
}

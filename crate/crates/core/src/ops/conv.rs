//! Grouped 2-D cross-correlation.
//!
//! Every output element is accumulated input channel by input channel, and
//! within a channel kernel row by kernel row, starting from zero; the bias is
//! added last. Keeping this order fixed makes results reproducible and lets a
//! naive nested-loop reference match bit for bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvGeometry {
            stride,
            padding,
            groups,
        }
    }
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self::new(1, 0, 1)
    }
}

/// Output extent of one spatial axis, or `None` if the window does not fit.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || len + 2 * padding < kernel {
        return None;
    }
    Some((len + 2 * padding - kernel) / stride + 1)
}

/// Validates input/kernel compatibility and returns the output dims.
pub fn conv2d_output_dims(input: Dims, weight: Dims, geom: ConvGeometry) -> Result<Dims> {
    let g = geom.groups;
    if g == 0 || weight.n % g != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("{} output channels not divisible by {} groups", weight.n, g),
        ));
    }
    if weight.c * g != input.c {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kernel {weight} with {g} groups expects {} input channels, got {}",
                weight.c * g,
                input.c
            ),
        ));
    }
    let oh = conv_out_len(input.h, weight.h, geom.stride, geom.padding);
    let ow = conv_out_len(input.w, weight.w, geom.stride, geom.padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(Dims::new(input.n, weight.n, oh, ow)),
        _ => Err(Error::shape(
            "conv2d",
            format!("non-positive output size for input {input}, kernel {weight}"),
        )),
    }
}

fn check_bias(bias: Option<&Tensor>, c_out: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != c_out {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} entries for {c_out} channels", b.numel()),
            ));
        }
    }
    Ok(())
}

/// Shape bookkeeping shared by the forward and backward passes.
#[derive(Clone, Copy)]
struct Plan {
    id: Dims,
    wd: Dims,
    od: Dims,
    stride: usize,
    pad: usize,
    cin_g: usize,
    cout_g: usize,
    /// Rows of the column matrix: `cin_g * kh * kw`.
    k: usize,
    /// Columns of the column matrix: output positions.
    p: usize,
}

impl Plan {
    fn new(id: Dims, wd: Dims, od: Dims, geom: ConvGeometry) -> Self {
        Plan {
            id,
            wd,
            od,
            stride: geom.stride,
            pad: geom.padding,
            cin_g: wd.c,
            cout_g: wd.n / geom.groups,
            k: wd.c * wd.h * wd.w,
            p: od.plane(),
        }
    }

    /// Input row read by output row `o` through kernel tap `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad).filter(|&i| i < len)
    }

    /// Fills `cols` (k x p) with the padded windows of group `g` of one sample.
    fn im2col(&self, x_n: &[f64], g: usize, cols: &mut [f64]) {
        let (id, wd, od) = (self.id, self.wd, self.od);
        for icg in 0..self.cin_g {
            let ic = g * self.cin_g + icg;
            let plane = &x_n[ic * id.plane()..(ic + 1) * id.plane()];
            for kh in 0..wd.h {
                for kw in 0..wd.w {
                    let row = (icg * wd.h + kh) * wd.w + kw;
                    let dst = &mut cols[row * self.p..(row + 1) * self.p];
                    for oh in 0..od.h {
                        let drow = &mut dst[oh * od.w..(oh + 1) * od.w];
                        let Some(ih) = self.src(oh, kh, id.h) else {
                            drow.fill(0.0);
                            continue;
                        };
                        let srow = &plane[ih * id.w..(ih + 1) * id.w];
                        for (ow, d) in drow.iter_mut().enumerate() {
                            *d = self.src(ow, kw, id.w).map_or(0.0, |iw| srow[iw]);
                        }
                    }
                }
            }
        }
    }

    /// Adds the column-matrix gradient of group `g` back onto the input gradient.
    fn col2im(&self, cols: &[f64], g: usize, gx_n: &mut [f64]) {
        let (id, wd, od) = (self.id, self.wd, self.od);
        for icg in 0..self.cin_g {
            let ic = g * self.cin_g + icg;
            let plane = &mut gx_n[ic * id.plane()..(ic + 1) * id.plane()];
            for kh in 0..wd.h {
                for kw in 0..wd.w {
                    let row = (icg * wd.h + kh) * wd.w + kw;
                    let src = &cols[row * self.p..(row + 1) * self.p];
                    for oh in 0..od.h {
                        let Some(ih) = self.src(oh, kh, id.h) else {
                            continue;
                        };
                        let srow = &src[oh * od.w..(oh + 1) * od.w];
                        let drow = &mut plane[ih * id.w..(ih + 1) * id.w];
                        for (ow, &v) in srow.iter().enumerate() {
                            if let Some(iw) = self.src(ow, kw, id.w) {
                                drow[iw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    geom: ConvGeometry,
) -> Result<Tensor> {
    let id = input.dims();
    let wd = weight.dims();
    let od = conv2d_output_dims(id, wd, geom)?;
    check_bias(bias, wd.n)?;
    let plan = Plan::new(id, wd, od, geom);
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0; od.numel()];

    out.par_chunks_mut(od.sample())
        .enumerate()
        .for_each(|(n, out_n)| {
            let x_n = &x[n * id.sample()..(n + 1) * id.sample()];
            let mut cols = vec![0.0; plan.k * plan.p];
            for g in 0..geom.groups {
                plan.im2col(x_n, g, &mut cols);
                for oc in g * plan.cout_g..(g + 1) * plan.cout_g {
                    let orow = &mut out_n[oc * plan.p..(oc + 1) * plan.p];
                    let wrow = &w[oc * plan.k..(oc + 1) * plan.k];
                    for (k, &wv) in wrow.iter().enumerate() {
                        let crow = &cols[k * plan.p..(k + 1) * plan.p];
                        for (o, &c) in orow.iter_mut().zip(crow) {
                            *o += wv * c;
                        }
                    }
                    if let Some(b) = bias {
                        let bv = b.data()[oc];
                        orow.iter_mut().for_each(|o| *o += bv);
                    }
                }
            }
        });

    Tensor::from_vec(od, out)?.ensure_finite("conv2d")
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Exact adjoint of [`conv2d`].
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    with_bias: bool,
    geom: ConvGeometry,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let id = input.dims();
    let wd = weight.dims();
    let od = conv2d_output_dims(id, wd, geom)?;
    if grad_out.dims() != od {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad {} vs output {od}", grad_out.dims()),
        ));
    }
    let plan = Plan::new(id, wd, od, geom);
    let x = input.data();
    let w = weight.data();
    let gy = grad_out.data();

    let mut gx = vec![0.0; id.numel()];
    gx.par_chunks_mut(id.sample())
        .enumerate()
        .for_each(|(n, gx_n)| {
            let gy_n = &gy[n * od.sample()..(n + 1) * od.sample()];
            let mut gcols = vec![0.0; plan.k * plan.p];
            for g in 0..geom.groups {
                gcols.fill(0.0);
                for oc in g * plan.cout_g..(g + 1) * plan.cout_g {
                    let grow = &gy_n[oc * plan.p..(oc + 1) * plan.p];
                    let wrow = &w[oc * plan.k..(oc + 1) * plan.k];
                    for (k, &wv) in wrow.iter().enumerate() {
                        let crow = &mut gcols[k * plan.p..(k + 1) * plan.p];
                        for (c, &gv) in crow.iter_mut().zip(grow) {
                            *c += wv * gv;
                        }
                    }
                }
                plan.col2im(&gcols, g, gx_n);
            }
        });

    // Batch loop stays sequential so each weight gradient sums samples in order.
    let mut gw = vec![0.0; wd.numel()];
    let mut cols = vec![0.0; plan.k * plan.p];
    for n in 0..id.n {
        let x_n = &x[n * id.sample()..(n + 1) * id.sample()];
        let gy_n = &gy[n * od.sample()..(n + 1) * od.sample()];
        for g in 0..geom.groups {
            plan.im2col(x_n, g, &mut cols);
            let oc0 = g * plan.cout_g;
            gw[oc0 * plan.k..(oc0 + plan.cout_g) * plan.k]
                .par_chunks_mut(plan.k)
                .enumerate()
                .for_each(|(j, gw_oc)| {
                    let grow = &gy_n[(oc0 + j) * plan.p..(oc0 + j + 1) * plan.p];
                    for (k, acc) in gw_oc.iter_mut().enumerate() {
                        let crow = &cols[k * plan.p..(k + 1) * plan.p];
                        *acc += crow.iter().zip(grow).map(|(c, g)| c * g).sum::<f64>();
                    }
                });
        }
    }

    let bias = with_bias.then(|| {
        let mut gb = vec![0.0; wd.n];
        for n in 0..od.n {
            for (oc, b) in gb.iter_mut().enumerate() {
                let start = od.index(n, oc, 0, 0);
                *b += gy[start..start + od.plane()].iter().sum::<f64>();
            }
        }
        Tensor::vector(gb)
    });

    Ok(ConvGrads {
        input: Tensor::from_vec(id, gx)?,
        weight: Tensor::from_vec(wd, gw)?,
        bias,
    })
}

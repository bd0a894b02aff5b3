//! Zero-pad, random crop, horizontal flip, then normalization.

use rand::Rng;

use crate::tensor::Tensor;

use super::data::Normalization;

pub const CROP_PADDING: usize = 4;

/// Random choices for one image. Offsets index the padded image, so
/// `dy = dx = pad` is the center crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

impl AugmentDraw {
    pub fn center(pad: usize) -> Self {
        AugmentDraw {
            dy: pad,
            dx: pad,
            flip: false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, pad: usize) -> Self {
        AugmentDraw {
            dy: rng.random_range(0..=2 * pad),
            dx: rng.random_range(0..=2 * pad),
            flip: rng.random_bool(0.5),
        }
    }
}

/// Crops an `h x w` window at `(dy, dx)` from the image zero-padded by `pad`, flipping if drawn.
pub fn pad_crop_flip(image: &Tensor, pad: usize, draw: AugmentDraw) -> Tensor {
    let d = image.dims();
    assert!(draw.dy <= 2 * pad && draw.dx <= 2 * pad, "crop offset outside padded image");
    let mut out = Tensor::zeros(d);
    for n in 0..d.n {
        for c in 0..d.c {
            for y in 0..d.h {
                let sy = (y + draw.dy) as isize - pad as isize;
                if sy < 0 || sy >= d.h as isize {
                    continue;
                }
                for x in 0..d.w {
                    let sx = (x + draw.dx) as isize - pad as isize;
                    if sx < 0 || sx >= d.w as isize {
                        continue;
                    }
                    let ox = if draw.flip { d.w - 1 - x } else { x };
                    out.set(n, c, y, ox, image.at(n, c, sy as usize, sx as usize));
                }
            }
        }
    }
    out
}

pub fn flip_horizontal(image: &Tensor) -> Tensor {
    pad_crop_flip(
        image,
        0,
        AugmentDraw {
            dy: 0,
            dx: 0,
            flip: true,
        },
    )
}

/// Pad-4 random crop and coin-flip mirror, then normalization.
pub fn augment<R: Rng + ?Sized>(image: &Tensor, norm: &Normalization, rng: &mut R) -> Tensor {
    augment_with(image, norm, AugmentDraw::sample(rng, CROP_PADDING))
}

pub fn augment_with(image: &Tensor, norm: &Normalization, draw: AugmentDraw) -> Tensor {
    let mut out = pad_crop_flip(image, CROP_PADDING, draw);
    norm.apply(&mut out);
    out
}

//! Sub-pixel rearrangement: `[N, C*U*U, H, W] -> [N, C, H*U, W*U]`.

use crate::error::{AdError, Result};
use crate::tape::{Ctx, Op, Tape, Var};
use crate::tensor::{dims4, shape4, Real, Tensor};

/// Index in the input buffer that feeds output element `(n, c, y, x)`.
fn source_index(n: usize, c: usize, y: usize, x: usize, ic: usize, h: usize, w: usize, u: usize) -> usize {
    let ch = c * u * u + (y % u) * u + (x % u);
    ((n * ic + ch) * h + y / u) * w + x / u
}

/// Plain-tensor pixel shuffle (no tape).
pub fn pixel_shuffle<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, ic, h, w) = dims4("pixel_shuffle", input.shape())?;
    if factor == 0 || ic % (factor * factor) != 0 {
        return Err(AdError::shape(
            "pixel_shuffle",
            format!("channel count {} not divisible by {}^2", ic, factor),
        ));
    }
    let oc = ic / (factor * factor);
    let (oh, ow) = (h * factor, w * factor);
    let src = input.data();
    let mut out = Vec::with_capacity(src.len());
    for ni in 0..n {
        for c in 0..oc {
            for y in 0..oh {
                for x in 0..ow {
                    out.push(src[source_index(ni, c, y, x, ic, h, w, factor)]);
                }
            }
        }
    }
    Tensor::new(shape4(input.shape(), n, oc, oh, ow), out)
}

/// Inverse rearrangement: `[N, C, H*U, W*U] -> [N, C*U*U, H, W]`.
pub fn pixel_unshuffle<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = dims4("pixel_unshuffle", input.shape())?;
    if factor == 0 || oh % factor != 0 || ow % factor != 0 {
        return Err(AdError::shape(
            "pixel_unshuffle",
            format!("spatial dims {}x{} not divisible by {}", oh, ow, factor),
        ));
    }
    let (h, w, ic) = (oh / factor, ow / factor, c * factor * factor);
    let src = input.data();
    let mut out = vec![T::zero(); src.len()];
    let mut i = 0;
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    out[source_index(ni, ci, y, x, ic, h, w, factor)] = src[i];
                    i += 1;
                }
            }
        }
    }
    Tensor::new(shape4(input.shape(), n, ic, h, w), out)
}

impl<T: Real> Tape<T> {
    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Result<Var> {
        self.check(x)?;
        let value = pixel_shuffle(self.value(x), factor)?;
        Ok(self.push(value, Op::PixelShuffle { x, factor }, &[x]))
    }
}

pub(crate) fn backward<T: Real>(ctx: &mut Ctx<'_, T>, x: Var, factor: usize, g: &[T]) {
    if !ctx.needs(x) {
        return;
    }
    let (n, ic, h, w) = dims4("pixel_shuffle", ctx.value(x).shape()).expect("validated in forward");
    let oc = ic / (factor * factor);
    let (oh, ow) = (h * factor, w * factor);
    let dx = ctx.slot(x);
    let mut i = 0;
    for ni in 0..n {
        for c in 0..oc {
            for y in 0..oh {
                for xx in 0..ow {
                    let s = source_index(ni, c, y, xx, ic, h, w, factor);
                    dx[s] = dx[s] + g[i];
                    i += 1;
                }
            }
        }
    }
}

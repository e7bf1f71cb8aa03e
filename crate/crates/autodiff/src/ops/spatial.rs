//! Fixed (non-learned) spatial resampling and filtering.

use crate::error::{AdError, Result};
use crate::tape::{Ctx, Node, Op, Tape, Var};
use crate::tensor::{dims4, shape4, Real, Tensor};

pub(crate) struct FilterSaved<T> {
    x: Var,
    kernel: Vec<T>,
    kh: usize,
    kw: usize,
}

/// Source taps `(i0, i1, w1)` for half-pixel bilinear upsampling of one axis.
fn bilinear_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<T: Real> Tape<T> {
    /// Non-overlapping `k x k` average pooling.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        self.check(x)?;
        let xs = self.shape(x).to_vec();
        let (n, c, h, w) = dims4("avg_pool", &xs)?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(AdError::shape("avg_pool", format!("{}x{} not divisible by {}", h, w, k)));
        }
        let (oh, ow) = (h / k, w / k);
        let inv = T::one() / T::from_usize(k * k).unwrap();
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..h {
                for xx in 0..w {
                    let o = (p * oh + y / k) * ow + xx / k;
                    out[o] = out[o] + src[(p * h + y) * w + xx];
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        let value = Tensor::new(shape4(&xs, n, c, oh, ow), out)?;
        Ok(self.push(value, Op::AvgPool { x, k }, &[x]))
    }

    /// Bilinear upsampling by an integer factor (half-pixel centers, clamped edges).
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        self.check(x)?;
        let xs = self.shape(x).to_vec();
        let (n, c, h, w) = dims4("upsample_bilinear", &xs)?;
        if factor == 0 {
            return Err(AdError::shape("upsample_bilinear", "factor must be >= 1".into()));
        }
        let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for &(y0, y1, wy) in &ty {
                let wy = T::lit(wy);
                for &(x0, x1, wx) in &tx {
                    let wx = T::lit(wx);
                    let top = plane[y0 * w + x0] * (T::one() - wx) + plane[y0 * w + x1] * wx;
                    let bot = plane[y1 * w + x0] * (T::one() - wx) + plane[y1 * w + x1] * wx;
                    out.push(top * (T::one() - wy) + bot * wy);
                }
            }
        }
        let value = Tensor::new(shape4(&xs, n, c, oh, ow), out)?;
        Ok(self.push(value, Op::Upsample { x, factor }, &[x]))
    }

    /// Per-channel valid correlation with a fixed `kh x kw` kernel.
    pub fn filter2d(&mut self, x: Var, kernel: &[T], kh: usize, kw: usize) -> Result<Var> {
        self.check(x)?;
        let xs = self.shape(x).to_vec();
        let (n, c, h, w) = dims4("filter2d", &xs)?;
        if kernel.len() != kh * kw || kh == 0 || kw == 0 {
            return Err(AdError::shape("filter2d", format!("kernel length {} != {}x{}", kernel.len(), kh, kw)));
        }
        if h < kh || w < kw {
            return Err(AdError::shape("filter2d", format!("input {}x{} smaller than kernel {}x{}", h, w, kh, kw)));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for i in 0..kh {
                for j in 0..kw {
                    let kv = kernel[i * kw + j];
                    for y in 0..oh {
                        let srow = &plane[(y + i) * w + j..(y + i) * w + j + ow];
                        let drow = &mut dst[y * ow..(y + 1) * ow];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d = *d + kv * *s;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(shape4(&xs, n, c, oh, ow), out)?;
        let saved = FilterSaved { x, kernel: kernel.to_vec(), kh, kw };
        Ok(self.push(value, Op::Filter(saved), &[x]))
    }
}

pub(crate) fn avg_pool_backward<T: Real>(ctx: &mut Ctx<'_, T>, x: Var, k: usize, node: &Node<T>, g: &[T]) {
    if !ctx.needs(x) {
        return;
    }
    let (n, c, h, w) = dims4("avg_pool", ctx.value(x).shape()).expect("validated");
    let (_, _, oh, ow) = dims4("avg_pool", node.value.shape()).expect("validated");
    let inv = T::one() / T::from_usize(k * k).unwrap();
    let dx = ctx.slot(x);
    for p in 0..n * c {
        for y in 0..h {
            for xx in 0..w {
                let o = (p * oh + y / k) * ow + xx / k;
                let d = &mut dx[(p * h + y) * w + xx];
                *d = *d + g[o] * inv;
            }
        }
    }
}

pub(crate) fn upsample_backward<T: Real>(ctx: &mut Ctx<'_, T>, x: Var, factor: usize, node: &Node<T>, g: &[T]) {
    if !ctx.needs(x) {
        return;
    }
    let (n, c, h, w) = dims4("upsample_bilinear", ctx.value(x).shape()).expect("validated");
    let (_, _, oh, ow) = dims4("upsample_bilinear", node.value.shape()).expect("validated");
    let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
    let dx = ctx.slot(x);
    for p in 0..n * c {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            let wy = T::lit(wy);
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let wx = T::lit(wx);
                let gv = gp[oy * ow + ox];
                let top = gv * (T::one() - wy);
                let bot = gv * wy;
                plane[y0 * w + x0] = plane[y0 * w + x0] + top * (T::one() - wx);
                plane[y0 * w + x1] = plane[y0 * w + x1] + top * wx;
                plane[y1 * w + x0] = plane[y1 * w + x0] + bot * (T::one() - wx);
                plane[y1 * w + x1] = plane[y1 * w + x1] + bot * wx;
            }
        }
    }
}

pub(crate) fn filter_backward<T: Real>(ctx: &mut Ctx<'_, T>, s: &FilterSaved<T>, node: &Node<T>, g: &[T]) {
    if !ctx.needs(s.x) {
        return;
    }
    let (n, c, h, w) = dims4("filter2d", ctx.value(s.x).shape()).expect("validated");
    let (_, _, oh, ow) = dims4("filter2d", node.value.shape()).expect("validated");
    let dx = ctx.slot(s.x);
    for p in 0..n * c {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..s.kh {
            for j in 0..s.kw {
                let kv = s.kernel[i * s.kw + j];
                for y in 0..oh {
                    let drow = &mut plane[(y + i) * w + j..(y + i) * w + j + ow];
                    for (d, gv) in drow.iter_mut().zip(&gp[y * ow..(y + 1) * ow]) {
                        *d = *d + kv * *gv;
                    }
                }
            }
        }
    }
}

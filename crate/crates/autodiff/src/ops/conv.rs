//! 2-D convolution via im2col + GEMM.

use crate::error::{AdError, Result};
use crate::tape::{Ctx, Node, Op, Tape, Var};
use crate::tensor::{dims4, shape4, Real, Tensor};

pub(crate) struct Saved<T> {
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    padding: usize,
    /// im2col buffer `[C*K*K, N*Ho*Wo]`, kept only when the weight needs a gradient.
    cols: Vec<T>,
}

#[derive(Clone, Copy)]
struct Geom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

fn im2col<T: Real>(g: &Geom, x: &[T]) -> Vec<T> {
    let ncols = g.cols();
    let mut cols = vec![T::zero(); g.rows() * ncols];
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let src = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let base = n * plane + oy * g.wo;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[base + ox] = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(g: &Geom, cols: &[T], dx: &mut [T]) {
    let ncols = g.cols();
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let dst = &mut dx[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = n * plane + oy * g.wo;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                let d = &mut dst[iy as usize * g.w + ix as usize];
                                *d = *d + src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `x` (`[C,H,W]` or `[N,C,H,W]`) with `weight` (`[F,C,K,K]`).
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        self.check(x)?;
        self.check(weight)?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let (n, c, h, w) = dims4("conv2d", &xs)?;
        let [f, wc, k, k2] = ws[..] else {
            return Err(AdError::shape("conv2d", format!("weight must be [F,C,K,K], got {:?}", ws)));
        };
        if k != k2 || k == 0 {
            return Err(AdError::shape("conv2d", format!("kernel must be square and non-empty, got {}x{}", k, k2)));
        }
        if wc != c {
            return Err(AdError::shape(
                "conv2d",
                format!("input channels {} do not match weight channels {}", c, wc),
            ));
        }
        if stride == 0 {
            return Err(AdError::shape("conv2d", "stride must be >= 1".into()));
        }
        if h + 2 * padding < k {
            return Err(AdError::shape("conv2d", format!("height {} + 2*{} < kernel {}", h, padding, k)));
        }
        if w + 2 * padding < k {
            return Err(AdError::shape("conv2d", format!("width {} + 2*{} < kernel {}", w, padding, k)));
        }
        if let Some(b) = bias {
            self.check(b)?;
            if self.shape(b) != [f] {
                return Err(AdError::shape(
                    "conv2d",
                    format!("bias must be [{}], got {:?}", f, self.shape(b)),
                ));
            }
        }
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (w + 2 * padding - k) / stride + 1;
        let g = Geom { n, c, h, w, k, stride, pad: padding, ho, wo };

        let cols = im2col(&g, self.value(x).data());
        let ncols = g.cols();
        let mut tmp = vec![T::zero(); f * ncols];
        T::gemm(
            f,
            g.rows(),
            ncols,
            T::one(),
            self.value(weight).data(),
            g.rows() as isize,
            1,
            &cols,
            ncols as isize,
            1,
            T::zero(),
            &mut tmp,
            ncols as isize,
            1,
        );
        let plane = ho * wo;
        let mut out = vec![T::zero(); n * f * plane];
        let bias_vals = bias.map(|b| self.value(b).data().to_vec());
        for fi in 0..f {
            let bv = bias_vals.as_ref().map_or(T::zero(), |b| b[fi]);
            for ni in 0..n {
                let src = &tmp[fi * ncols + ni * plane..fi * ncols + (ni + 1) * plane];
                let dst = &mut out[(ni * f + fi) * plane..(ni * f + fi + 1) * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *s + bv;
                }
            }
        }
        let value = Tensor::new(shape4(&xs, n, f, ho, wo), out)?;
        let keep_cols = self.requires_grad(weight);
        let saved = Saved { x, w: weight, b: bias, stride, padding, cols: if keep_cols { cols } else { Vec::new() } };
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv2d(saved), &inputs))
    }
}

pub(crate) fn backward<T: Real>(ctx: &mut Ctx<'_, T>, s: &Saved<T>, node: &Node<T>, g: &[T]) {
    let xs = ctx.value(s.x).shape().to_vec();
    let ws = ctx.value(s.w).shape().to_vec();
    let (n, c, h, w) = dims4("conv2d", &xs).expect("validated in forward");
    let (f, k) = (ws[0], ws[2]);
    let (_, _, ho, wo) = dims4("conv2d", node.value.shape()).expect("validated in forward");
    let geo = Geom { n, c, h, w, k, stride: s.stride, pad: s.padding, ho, wo };
    let plane = ho * wo;
    let ncols = geo.cols();

    // Output gradient rearranged to [F, N*Ho*Wo].
    let mut gmat = vec![T::zero(); f * ncols];
    for fi in 0..f {
        for ni in 0..n {
            gmat[fi * ncols + ni * plane..fi * ncols + (ni + 1) * plane]
                .copy_from_slice(&g[(ni * f + fi) * plane..(ni * f + fi + 1) * plane]);
        }
    }

    if let Some(b) = s.b {
        if ctx.needs(b) {
            let db = ctx.slot(b);
            for fi in 0..f {
                let sum: T = gmat[fi * ncols..(fi + 1) * ncols].iter().copied().sum();
                db[fi] = db[fi] + sum;
            }
        }
    }
    if ctx.needs(s.w) {
        let rows = geo.rows();
        let dw = ctx.slot(s.w);
        // dW[F, CKK] += G[F, cols] * cols^T
        T::gemm(f, ncols, rows, T::one(), &gmat, ncols as isize, 1, &s.cols, 1, ncols as isize, T::one(), dw, rows as isize, 1);
    }
    if ctx.needs(s.x) {
        let rows = geo.rows();
        let mut dcols = vec![T::zero(); rows * ncols];
        let wdata = ctx.value(s.w).data();
        // dcols[CKK, cols] = W^T * G
        T::gemm(rows, f, ncols, T::one(), wdata, 1, rows as isize, &gmat, ncols as isize, 1, T::zero(), &mut dcols, ncols as isize, 1);
        let dx = ctx.slot(s.x);
        col2im(&geo, &dcols, dx);
    }
}

//! Generalized divisive normalization and its inverse.
//!
//! Per pixel, `d_i = sqrt(beta_i + sum_j gamma_ij * x_j^2)`; the forward
//! transform divides by `d_i`, the inverse multiplies by it.

use crate::error::{AdError, Result};
use crate::tape::{Ctx, Op, Tape, Var};
use crate::tensor::{dims4, Real, Tensor};

/// Lower bound on `beta`; parameters are projected onto it after each update.
pub const BETA_MIN: f64 = 1e-6;

pub(crate) struct Saved<T> {
    x: Var,
    beta: Var,
    gamma: Var,
    inverse: bool,
    /// `d` for every element, same layout as `x`.
    norm: Vec<T>,
}

impl<T: Real> Tape<T> {
    pub fn gdn(&mut self, x: Var, beta: Var, gamma: Var, inverse: bool) -> Result<Var> {
        self.check(x)?;
        self.check(beta)?;
        self.check(gamma)?;
        let xs = self.shape(x).to_vec();
        let (n, c, h, w) = dims4("gdn", &xs)?;
        if self.shape(beta) != [c] {
            return Err(AdError::shape("gdn", format!("beta must be [{}], got {:?}", c, self.shape(beta))));
        }
        if self.shape(gamma) != [c, c] {
            return Err(AdError::shape(
                "gdn",
                format!("gamma must be [{}, {}], got {:?}", c, c, self.shape(gamma)),
            ));
        }
        let beta_min = T::lit(BETA_MIN);
        if let Some((i, b)) = self.value(beta).data().iter().enumerate().find(|(_, b)| **b < beta_min || b.is_nan()) {
            return Err(AdError::domain("gdn", format!("beta[{}] = {} is below {}", i, b, BETA_MIN)));
        }
        if let Some((i, gv)) = self.value(gamma).data().iter().enumerate().find(|(_, g)| **g < T::zero() || g.is_nan()) {
            return Err(AdError::domain("gdn", format!("gamma[{}] = {} is negative", i, gv)));
        }

        let plane = h * w;
        let xv = self.value(x).data();
        let bv = self.value(beta).data();
        let gv = self.value(gamma).data();
        let mut norm = vec![T::zero(); xv.len()];
        let sq: Vec<T> = xv.iter().map(|v| *v * *v).collect();
        for ni in 0..n {
            let off = ni * c * plane;
            let dst = &mut norm[off..off + c * plane];
            for (ci, row) in dst.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|d| *d = bv[ci]);
            }
            T::gemm(c, c, plane, T::one(), gv, c as isize, 1, &sq[off..off + c * plane], plane as isize, 1, T::one(), dst, plane as isize, 1);
        }
        norm.iter_mut().for_each(|d| *d = d.sqrt());
        let out: Vec<T> = xv
            .iter()
            .zip(&norm)
            .map(|(&v, &d)| if inverse { v * d } else { v / d })
            .collect();
        let value = Tensor::new(xs, out)?;
        Ok(self.push(value, Op::Gdn(Saved { x, beta, gamma, inverse, norm }), &[x, beta, gamma]))
    }
}

pub(crate) fn backward<T: Real>(ctx: &mut Ctx<'_, T>, s: &Saved<T>, g: &[T]) {
    let xs = ctx.value(s.x).shape().to_vec();
    let (n, c, h, w) = dims4("gdn", &xs).expect("validated in forward");
    let plane = h * w;
    let xv = ctx.value(s.x).data().to_vec();
    let two = T::lit(2.0);
    // u = dL/d(d^2) per element
    let u: Vec<T> = g
        .iter()
        .zip(&xv)
        .zip(&s.norm)
        .map(|((&gi, &xi), &d)| {
            if s.inverse {
                gi * xi / (two * d)
            } else {
                -gi * xi / (two * d * d * d)
            }
        })
        .collect();

    if ctx.needs(s.x) {
        let gamma = ctx.value(s.gamma).data().to_vec();
        let mut gtu = vec![T::zero(); xv.len()];
        for ni in 0..n {
            let off = ni * c * plane;
            T::gemm(c, c, plane, T::one(), &gamma, 1, c as isize, &u[off..off + c * plane], plane as isize, 1, T::zero(), &mut gtu[off..off + c * plane], plane as isize, 1);
        }
        let dx = ctx.slot(s.x);
        for i in 0..xv.len() {
            let direct = if s.inverse { g[i] * s.norm[i] } else { g[i] / s.norm[i] };
            dx[i] = dx[i] + direct + two * xv[i] * gtu[i];
        }
    }
    if ctx.needs(s.beta) {
        let db = ctx.slot(s.beta);
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * plane;
                let sum: T = u[off..off + plane].iter().copied().sum();
                db[ci] = db[ci] + sum;
            }
        }
    }
    if ctx.needs(s.gamma) {
        let sq: Vec<T> = xv.iter().map(|v| *v * *v).collect();
        let dg = ctx.slot(s.gamma);
        for ni in 0..n {
            let off = ni * c * plane;
            // dGamma[C, C] += U[C, P] * (X^2)^T
            T::gemm(c, plane, c, T::one(), &u[off..off + c * plane], plane as isize, 1, &sq[off..off + c * plane], 1, plane as isize, T::one(), dg, c as isize, 1);
        }
    }
}

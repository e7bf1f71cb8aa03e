//! Element-wise arithmetic, activations, reductions and channel concat.

use crate::error::{AdError, Result};
use crate::tape::{Ctx, Node, Op, Tape, Var};
use crate::tensor::{dims4, shape4, Real, Tensor};

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum UnaryKind<T> {
    AddScalar,
    Scale(T),
    Pow(T),
    Abs,
    LeakyRelu(T),
    Tanh,
    Sigmoid,
    Ln,
    Sqrt,
    Clamp(T, T),
    StraightThrough,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum ReduceKind {
    Sum,
    Mean,
    MeanPerSample,
}

fn broadcast_index(len: usize, i: usize) -> usize {
    if len == 1 {
        0
    } else {
        i
    }
}

impl<T: Real> Tape<T> {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let shape = if av.shape() == bv.shape() {
            av.shape().to_vec()
        } else if bv.len() == 1 {
            av.shape().to_vec()
        } else if av.len() == 1 {
            bv.shape().to_vec()
        } else {
            return Err(AdError::shape(
                "elementwise",
                format!("operand shapes {:?} and {:?} differ", av.shape(), bv.shape()),
            ));
        };
        let n: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let out: Vec<T> = (0..n)
            .map(|i| {
                let x = ad[broadcast_index(ad.len(), i)];
                let y = bd[broadcast_index(bd.len(), i)];
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Binary { kind, a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind<T>, a: Var, f: impl Fn(T) -> T) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).map(f);
        Ok(self.push(value, Op::Unary { kind, a }, &[a]))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        self.unary(UnaryKind::AddScalar, a, |v| v + s)
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        self.unary(UnaryKind::Scale(s), a, |v| v * s)
    }

    pub fn powf(&mut self, a: Var, p: T) -> Result<Var> {
        self.unary(UnaryKind::Pow(p), a, |v| v.powf(p))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, a, |v| v.abs())
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        let slope = T::lit(LEAKY_SLOPE);
        self.unary(UnaryKind::LeakyRelu(slope), a, |v| if v >= T::zero() { v } else { v * slope })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, a, |v| v.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, a, |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Ln, a, |v| v.ln())
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, a, |v| v.sqrt())
    }

    /// Clamp to `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        self.unary(UnaryKind::Clamp(lo, hi), a, |v| v.max(lo).min(hi))
    }

    /// Forward `value`, backward identity into `a`.
    pub fn straight_through(&mut self, a: Var, value: Tensor<T>) -> Result<Var> {
        self.check(a)?;
        if value.shape() != self.shape(a) {
            return Err(AdError::shape(
                "straight_through",
                format!("replacement {:?} differs from input {:?}", value.shape(), self.shape(a)),
            ));
        }
        Ok(self.push(value, Op::Unary { kind: UnaryKind::StraightThrough, a }, &[a]))
    }

    fn reduce(&mut self, kind: ReduceKind, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        if v.is_empty() {
            return Err(AdError::shape("reduce", "cannot reduce an empty tensor".into()));
        }
        let value = match kind {
            ReduceKind::Sum => Tensor::scalar(v.data().iter().copied().sum()),
            ReduceKind::Mean => {
                Tensor::scalar(v.data().iter().copied().sum::<T>() / T::from_usize(v.len()).unwrap())
            }
            ReduceKind::MeanPerSample => {
                let n = batch_of(v.shape());
                let per = v.len() / n;
                let inv = T::one() / T::from_usize(per).unwrap();
                let means = v.data().chunks(per).map(|c| c.iter().copied().sum::<T>() * inv).collect();
                Tensor::new(vec![n], means)?
            }
        };
        Ok(self.push(value, Op::Reduce { kind, a }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Sum, a)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, a)
    }

    /// Mean over all but the leading axis of a rank-4 tensor; rank <= 3 is one sample.
    pub fn mean_per_sample(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::MeanPerSample, a)
    }

    /// Concatenate image tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| AdError::shape("concat", "nothing to concatenate".into()))?;
        for &p in parts {
            self.check(p)?;
        }
        let fs = self.shape(first).to_vec();
        let (n, _, h, w) = dims4("concat", &fs)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let (pn, pc, ph, pw) = dims4("concat", s)?;
            if s.len() != fs.len() || pn != n || ph != h || pw != w {
                return Err(AdError::shape(
                    "concat",
                    format!("part {:?} incompatible with {:?}", s, fs),
                ));
            }
            total += pc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for ni in 0..n {
            for &p in parts {
                let pc = dims4("concat", self.shape(p))?.1;
                out.extend_from_slice(&self.value(p).data()[ni * pc * plane..(ni + 1) * pc * plane]);
            }
        }
        let value = Tensor::new(shape4(&fs, n, total, h, w), out)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }, parts))
    }
}

fn batch_of(shape: &[usize]) -> usize {
    if shape.len() == 4 {
        shape[0]
    } else {
        1
    }
}

pub(crate) fn binary_backward<T: Real>(ctx: &mut Ctx<'_, T>, kind: BinaryKind, a: Var, b: Var, g: &[T]) {
    let ad = ctx.value(a).data().to_vec();
    let bd = ctx.value(b).data().to_vec();
    let (na, nb) = (ad.len(), bd.len());
    let at = |i: usize| ad[broadcast_index(na, i)];
    let bt = |i: usize| bd[broadcast_index(nb, i)];
    if ctx.needs(a) {
        let da = ctx.slot(a);
        for (i, &gi) in g.iter().enumerate() {
            let d = match kind {
                BinaryKind::Add | BinaryKind::Sub => gi,
                BinaryKind::Mul => gi * bt(i),
                BinaryKind::Div => gi / bt(i),
            };
            let j = broadcast_index(na, i);
            da[j] = da[j] + d;
        }
    }
    if ctx.needs(b) {
        let db = ctx.slot(b);
        for (i, &gi) in g.iter().enumerate() {
            let d = match kind {
                BinaryKind::Add => gi,
                BinaryKind::Sub => -gi,
                BinaryKind::Mul => gi * at(i),
                BinaryKind::Div => -gi * at(i) / (bt(i) * bt(i)),
            };
            let j = broadcast_index(nb, i);
            db[j] = db[j] + d;
        }
    }
}

pub(crate) fn unary_backward<T: Real>(ctx: &mut Ctx<'_, T>, kind: &UnaryKind<T>, a: Var, node: &Node<T>, g: &[T]) {
    if !ctx.needs(a) {
        return;
    }
    let x = ctx.value(a).data().to_vec();
    let y = node.value.data();
    let two = T::lit(2.0);
    let da = ctx.slot(a);
    for i in 0..g.len() {
        let local = match *kind {
            UnaryKind::AddScalar | UnaryKind::StraightThrough => T::one(),
            UnaryKind::Scale(s) => s,
            UnaryKind::Pow(p) => p * x[i].powf(p - T::one()),
            UnaryKind::Abs => {
                if x[i] > T::zero() {
                    T::one()
                } else if x[i] < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            UnaryKind::LeakyRelu(slope) => {
                if x[i] >= T::zero() {
                    T::one()
                } else {
                    slope
                }
            }
            UnaryKind::Tanh => T::one() - y[i] * y[i],
            UnaryKind::Sigmoid => y[i] * (T::one() - y[i]),
            UnaryKind::Ln => T::one() / x[i],
            UnaryKind::Sqrt => T::one() / (two * y[i]),
            UnaryKind::Clamp(lo, hi) => {
                if x[i] >= lo && x[i] <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            }
        };
        da[i] = da[i] + g[i] * local;
    }
}

pub(crate) fn reduce_backward<T: Real>(ctx: &mut Ctx<'_, T>, kind: ReduceKind, a: Var, g: &[T]) {
    if !ctx.needs(a) {
        return;
    }
    let shape = ctx.value(a).shape().to_vec();
    let len = ctx.value(a).len();
    let da = ctx.slot(a);
    match kind {
        ReduceKind::Sum => da.iter_mut().for_each(|d| *d = *d + g[0]),
        ReduceKind::Mean => {
            let s = g[0] / T::from_usize(len).unwrap();
            da.iter_mut().for_each(|d| *d = *d + s);
        }
        ReduceKind::MeanPerSample => {
            let n = batch_of(&shape);
            let per = len / n;
            let inv = T::one() / T::from_usize(per).unwrap();
            for (ni, chunk) in da.chunks_mut(per).enumerate() {
                let s = g[ni] * inv;
                chunk.iter_mut().for_each(|d| *d = *d + s);
            }
        }
    }
}

pub(crate) fn concat_backward<T: Real>(ctx: &mut Ctx<'_, T>, parts: &[Var], g: &[T]) {
    let (n, _, h, w) = dims4("concat", ctx.value(parts[0]).shape()).expect("validated in forward");
    let plane = h * w;
    let chans: Vec<usize> = parts
        .iter()
        .map(|&p| dims4("concat", ctx.value(p).shape()).expect("validated").1)
        .collect();
    let total: usize = chans.iter().sum();
    let mut offset = 0;
    for (k, &p) in parts.iter().enumerate() {
        let pc = chans[k];
        if ctx.needs(p) {
            let dp = ctx.slot(p);
            for ni in 0..n {
                let src = &g[(ni * total + offset) * plane..(ni * total + offset + pc) * plane];
                let dst = &mut dp[ni * pc * plane..(ni + 1) * pc * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *d + *s;
                }
            }
        }
        offset += pc;
    }
}

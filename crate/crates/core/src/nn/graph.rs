//! Block forward passes recorded on a tape, generic over precision.

use ds2c2_autodiff::{Real, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::arch::{BaseArch, CodecArch, CompMode};
use crate::nn::plan::Bound;

fn spatial<T: Real>(tape: &Tape<T>, v: Var) -> (usize, usize, usize) {
    let s = tape.shape(v);
    let r = s.len();
    (s[r - 3], s[r - 2], s[r - 1])
}

fn expect_chw<T: Real>(tape: &Tape<T>, op: &'static str, v: Var, want: [usize; 3]) -> Result<()> {
    let s = tape.shape(v);
    if !(s.len() == 3 || s.len() == 4) || s[s.len() - 3..] != want {
        return Err(Error::shape(op, format!("expected [..,{},{},{}], got {:?}", want[0], want[1], want[2], s)));
    }
    Ok(())
}

pub fn bresnet_encode<T: Real>(tape: &mut Tape<T>, bound: &Bound, arch: &CodecArch, r: Var) -> Result<Var> {
    expect_chw(tape, "bresnet_encode", r, arch.input_shape())?;
    arch.encoder_plan().forward(tape, bound, "enc", r)
}

/// Decoded residual, clamped to [-2,2].
pub fn bresnet_decode<T: Real>(tape: &mut Tape<T>, bound: &Bound, arch: &CodecArch, bits: Var) -> Result<Var> {
    expect_chw(tape, "bresnet_decode", bits, arch.latent_shape())?;
    let y = arch.decoder_plan().forward(tape, bound, "dec", bits)?;
    Ok(tape.clamp(y, T::lit(-2.0), T::lit(2.0))?)
}

/// clamp(x′ + r̂ + correction([x′, r̂]), -1, 1).
pub fn sumnet<T: Real>(tape: &mut Tape<T>, bound: &Bound, arch: &CodecArch, x_prime: Var, r_hat: Var) -> Result<Var> {
    if tape.shape(x_prime) != tape.shape(r_hat) {
        return Err(Error::shape(
            "sumnet",
            format!("x′ {:?} vs r̂ {:?}", tape.shape(x_prime), tape.shape(r_hat)),
        ));
    }
    expect_chw(tape, "sumnet", x_prime, arch.input_shape())?;
    let joined = tape.concat_channels(&[x_prime, r_hat])?;
    let correction = arch.sumnet_plan().forward(tape, bound, "sum", joined)?;
    let plain = tape.add(x_prime, r_hat)?;
    let total = tape.add(plain, correction)?;
    Ok(tape.clamp(total, -T::one(), T::one())?)
}

/// 8-bit quantization of a [-1,1] tensor, as transmitted.
pub fn quantize8<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let half = T::lit(127.5);
    t.map(|v| {
        let byte = ((v + T::one()) * half).round().max(T::zero()).min(T::lit(255.0));
        byte / half - T::one()
    })
}

/// Coarse image c (H/f x W/f) and its upsampled estimate c′.
///
/// With `quantize`, c is rounded to 8 bits in the forward pass and passed
/// straight through in the backward pass.
pub fn compnet_coarse<T: Real>(
    tape: &mut Tape<T>,
    bound: Option<&Bound>,
    arch: &BaseArch,
    x: Var,
    quantize: bool,
) -> Result<(Var, Var)> {
    let (_, h, w) = spatial(tape, x);
    if arch.factor == 0 || h % arch.factor != 0 || w % arch.factor != 0 {
        return Err(Error::shape("compnet_coarse", format!("{}x{} not divisible by factor {}", h, w, arch.factor)));
    }
    let learned = match (arch.comp, bound) {
        (CompMode::Learned, Some(b)) => Some(b),
        (CompMode::Learned, None) => return Err(Error::Config("learned CompNet needs parameters".into())),
        (CompMode::Fixed, _) => None,
    };
    let plan = arch.comp_plan();
    let mut h0 = x;
    if let Some(b) = learned {
        let d = plan.forward(tape, b, "comp.enc", x)?;
        h0 = tape.add(x, d)?;
    }
    let pooled = tape.avg_pool(h0, arch.factor)?;
    let mut c = tape.clamp(pooled, -T::one(), T::one())?;
    if quantize {
        let q = quantize8(tape.value(c));
        c = tape.straight_through(c, q)?;
    }
    let mut up = tape.upsample_bilinear(c, arch.factor)?;
    if let Some(b) = learned {
        let d = plan.forward(tape, b, "comp.dec", up)?;
        up = tape.add(up, d)?;
    }
    let c_prime = tape.clamp(up, -T::one(), T::one())?;
    Ok((c, c_prime))
}

fn with_semantic<T: Real>(tape: &mut Tape<T>, op: &'static str, arch: &BaseArch, s: Option<Var>, rest: &[Var]) -> Result<Var> {
    let (_, h, w) = spatial(tape, rest[0]);
    let mut parts = Vec::new();
    match (arch.semantic, s) {
        (true, Some(s)) => {
            let (_, sh, sw) = spatial(tape, s);
            if (sh, sw) != (h, w) {
                return Err(Error::shape(op, format!("label map {}x{} vs image {}x{}", sh, sw, h, w)));
            }
            parts.push(s);
        }
        (true, None) => return Err(Error::Config(format!("{}: model is conditioned on a label map but none was given", op))),
        (false, Some(_)) => return Err(Error::Config(format!("{}: model has no label-map input", op))),
        (false, None) => {}
    }
    parts.extend_from_slice(rest);
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    Ok(tape.concat_channels(&parts)?)
}

/// One refinement step: f = FineNet_j([s, base]); refined = clamp(base + f).
pub fn finenet_step<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    arch: &BaseArch,
    step: usize,
    s: Option<Var>,
    base: Var,
) -> Result<(Var, Var)> {
    let input = with_semantic(tape, "finenet_step", arch, s, &[base])?;
    let f = arch.fine_plan().forward(tape, bound, &format!("fine.{}", step), input)?;
    let sum = tape.add(base, f)?;
    let refined = tape.clamp(sum, -T::one(), T::one())?;
    Ok((f, refined))
}

/// Sigmoid scores of discriminator `step` at every scale, each of shape `[N]` (or `[1]`).
pub fn discnet_scores<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    arch: &BaseArch,
    step: usize,
    s: Option<Var>,
    c_prime: Var,
    candidate: Var,
) -> Result<Vec<Var>> {
    if tape.shape(c_prime) != tape.shape(candidate) {
        return Err(Error::shape(
            "discnet_scores",
            format!("c′ {:?} vs candidate {:?}", tape.shape(c_prime), tape.shape(candidate)),
        ));
    }
    let input = with_semantic(tape, "discnet_scores", arch, s, &[c_prime, candidate])?;
    let plan = arch.disc_plan();
    let mut scores = Vec::with_capacity(arch.disc_scales);
    let mut scaled = input;
    for i in 0..arch.disc_scales {
        if i > 0 {
            scaled = tape.avg_pool(scaled, 2)?;
        }
        let logits = plan.forward(tape, bound, &format!("disc.{}.{}", step, i), scaled)?;
        let pooled = tape.mean_per_sample(logits)?;
        scores.push(tape.sigmoid(pooled)?);
    }
    Ok(scores)
}

/// Every intermediate of the base-layer generator.
pub struct BaseGraph {
    pub c: Var,
    pub c_prime: Var,
    /// FineNet outputs f_1..f_J.
    pub fine: Vec<Var>,
    /// Refined estimates x′_1..x′_J.
    pub refined: Vec<Var>,
}

impl BaseGraph {
    pub fn x_prime(&self) -> Var {
        *self.refined.last().expect("at least one step")
    }
}

pub fn base_generate<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    arch: &BaseArch,
    x: Var,
    s: Option<Var>,
    quantize: bool,
) -> Result<BaseGraph> {
    let (c, c_prime) = compnet_coarse(tape, Some(bound), arch, x, quantize)?;
    let mut fine = Vec::with_capacity(arch.steps);
    let mut refined = Vec::with_capacity(arch.steps);
    let mut current = c_prime;
    for j in 0..arch.steps {
        let (f, next) = finenet_step(tape, bound, arch, j, s, current)?;
        fine.push(f);
        refined.push(next);
        current = next;
    }
    Ok(BaseGraph { c, c_prime, fine, refined })
}

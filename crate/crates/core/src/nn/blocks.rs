//! Inference entry points on plain tensors.

use ds2c2_autodiff::{Tape, Tensor};

use crate::error::Result;
use crate::nn::arch::{CodecSource, CompMode};
use crate::nn::graph;
use crate::nn::params::ModelParams;
use crate::nn::plan::Bound;

fn frozen(tape: &mut Tape<f32>, params: &ModelParams) -> Bound {
    Bound::new(tape, &params.cast::<f32>(), |_| false)
}

/// Pre-binarization latent of `r` (`[C,H,W]` or batched).
pub fn bresnet_encode(params: &ModelParams, r: &Tensor<f32>) -> Result<Tensor<f32>> {
    let arch = *params.codec()?;
    let mut tape = Tape::new();
    let b = frozen(&mut tape, params);
    let r = tape.constant(r.clone());
    let y = graph::bresnet_encode(&mut tape, &b, &arch, r)?;
    Ok(tape.value(y).clone())
}

pub fn bresnet_decode(params: &ModelParams, bits: &Tensor<f32>) -> Result<Tensor<f32>> {
    let arch = *params.codec()?;
    let mut tape = Tape::new();
    let b = frozen(&mut tape, params);
    let v = tape.constant(bits.clone());
    let y = graph::bresnet_decode(&mut tape, &b, &arch, v)?;
    Ok(tape.value(y).clone())
}

pub fn sumnet(params: &ModelParams, x_prime: &Tensor<f32>, r_hat: &Tensor<f32>) -> Result<Tensor<f32>> {
    let arch = *params.codec()?;
    let mut tape = Tape::new();
    let b = frozen(&mut tape, params);
    let xp = tape.constant(x_prime.clone());
    let rh = tape.constant(r_hat.clone());
    let y = graph::sumnet(&mut tape, &b, &arch, xp, rh)?;
    Ok(tape.value(y).clone())
}

/// Whether the codec expects a base layer.
pub fn uses_base(params: &ModelParams) -> Result<bool> {
    Ok(params.codec()?.source == CodecSource::Residual)
}

/// Coarse image and its upsampling. Fixed mode needs no parameters.
pub fn compnet_coarse(
    x: &Tensor<f32>,
    factor: usize,
    mode: CompMode,
    params: Option<&ModelParams>,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let mut tape = Tape::new();
    let (mut arch, bound) = match params {
        Some(p) => (*p.base()?, Some(frozen(&mut tape, p))),
        None => (crate::nn::BaseArch::default(), None),
    };
    arch.factor = factor;
    arch.comp = mode;
    let xv = tape.constant(x.clone());
    let (c, cp) = graph::compnet_coarse(&mut tape, bound.as_ref(), &arch, xv, false)?;
    Ok((tape.value(c).clone(), tape.value(cp).clone()))
}

/// Base-layer output at the receiver.
#[derive(Clone, Debug)]
pub struct BaseOutput {
    /// 8-bit coarse image as sent, in [-1,1].
    pub c: Tensor<f32>,
    pub c_prime: Tensor<f32>,
    pub refined: Vec<Tensor<f32>>,
}

impl BaseOutput {
    pub fn x_prime(&self) -> &Tensor<f32> {
        self.refined.last().expect("at least one step")
    }
}

/// Run CompNet and every FineNet step with 8-bit coarse quantization.
pub fn synthesize(base: &ModelParams, x: &Tensor<f32>, s: Option<&Tensor<f32>>) -> Result<BaseOutput> {
    let arch = *base.base()?;
    let mut tape = Tape::new();
    let b = frozen(&mut tape, base);
    let xv = tape.constant(x.clone());
    let sv = s.map(|s| tape.constant(s.clone()));
    let g = graph::base_generate(&mut tape, &b, &arch, xv, sv, true)?;
    Ok(BaseOutput {
        c: tape.value(g.c).clone(),
        c_prime: tape.value(g.c_prime).clone(),
        refined: g.refined.iter().map(|&v| tape.value(v).clone()).collect(),
    })
}

/// One FineNet step on tensors: (f, refined).
pub fn finenet_step(
    base: &ModelParams,
    step: usize,
    s: Option<&Tensor<f32>>,
    input: &Tensor<f32>,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let arch = *base.base()?;
    let mut tape = Tape::new();
    let b = frozen(&mut tape, base);
    let iv = tape.constant(input.clone());
    let sv = s.map(|s| tape.constant(s.clone()));
    let (f, r) = graph::finenet_step(&mut tape, &b, &arch, step, sv, iv)?;
    Ok((tape.value(f).clone(), tape.value(r).clone()))
}

/// Discriminator scores (one per scale) for a single `[C,H,W]` candidate.
pub fn discnet_scores(
    base: &ModelParams,
    step: usize,
    s: Option<&Tensor<f32>>,
    c_prime: &Tensor<f32>,
    candidate: &Tensor<f32>,
) -> Result<Vec<f32>> {
    let arch = *base.base()?;
    let mut tape = Tape::new();
    let b = frozen(&mut tape, base);
    let cp = tape.constant(c_prime.clone());
    let cand = tape.constant(candidate.clone());
    let sv = s.map(|s| tape.constant(s.clone()));
    let scores = graph::discnet_scores(&mut tape, &b, &arch, step, sv, cp, cand)?;
    Ok(scores.iter().map(|&v| tape.value(v).data()[0]).collect())
}

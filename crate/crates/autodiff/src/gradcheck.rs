//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AdError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Parameters with more elements than this are checked on a seeded sample.
pub const SAMPLE_THRESHOLD: usize = 512;

/// Denominator floor so near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-4;

fn evaluate<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(AdError::NonScalar(tape.shape(out).to_vec()));
    }
    Ok(tape.value(out).data()[0])
}

/// Gradients of `f` at `params` as computed by the tape.
pub fn analytic_gradients<F>(f: &F, params: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(v, p)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect())
}

/// Worst relative error between `analytic` and central differences of `f`.
pub fn compare_gradients<F>(f: &F, params: &[Tensor<f64>], analytic: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, (p, a)) in params.iter().zip(analytic).enumerate() {
        let bad = p.data().iter().zip(a.data()).position(|(v, g)| !v.is_finite() || !g.is_finite());
        if let Some(index) = bad {
            return Err(AdError::NonFinite { param: pi, index });
        }
    }
    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let indices: Vec<usize> = if p.len() > SAMPLE_THRESHOLD {
            let mut idx = sample(&mut rng, p.len(), SAMPLE_THRESHOLD).into_vec();
            idx.sort_unstable();
            idx
        } else {
            (0..p.len()).collect()
        };
        for i in indices {
            let orig = p.data()[i];
            work[pi].data_mut()[i] = orig + eps;
            let plus = evaluate(f, &work)?;
            work[pi].data_mut()[i] = orig - eps;
            let minus = evaluate(f, &work)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(AdError::NonFinite { param: pi, index: i });
            }
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Check `f`'s tape gradients against central differences; returns the worst relative error.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(&f, params)?;
    compare_gradients(&f, params, &analytic, eps)
}

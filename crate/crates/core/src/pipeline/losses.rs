//! Distance and adversarial losses, recorded on a tape.

use ds2c2_autodiff::{Real, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::graph::discnet_scores;
use crate::nn::{BaseArch, Bound};
use crate::seeds;

/// Guard for logarithms of discriminator scores.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_l1: f64,
    pub w_ssim: f64,
    pub w_feat: f64,
    /// Scale of the adversarial term in the generator loss.
    pub w_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_l1: 1.0, w_ssim: 0.2, w_feat: 0.1, w_adv: 0.01 }
    }
}

/// Fixed random convolutions standing in for a pretrained perceptual network.
#[derive(Clone, Debug)]
pub struct FeatureBank {
    /// (weight `[F,C,3,3]`, stride)
    layers: Vec<(Tensor<f32>, usize)>,
}

impl FeatureBank {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut rng = seeds::rng(seeds::derive_seed(seed, "feature-bank"));
        let spec = [(channels, 8, 1), (8, 16, 2), (16, 16, 2)];
        let layers = spec
            .iter()
            .map(|&(c, f, stride)| {
                let bound = (3.0 / (c * 9) as f32).sqrt();
                (Tensor::from_fn(&[f, c, 3, 3], |_| rng.gen_range(-bound..bound)), stride)
            })
            .collect();
        Self { layers }
    }

    fn activations<T: Real>(&self, tape: &mut Tape<T>, weights: &[Var], x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for ((_, stride), &w) in self.layers.iter().zip(weights) {
            let c = tape.conv2d(h, w, None, *stride, 1)?;
            h = tape.leaky_relu(c)?;
            out.push(h);
        }
        Ok(out)
    }

    /// Sum over layers of the mean squared activation difference.
    pub fn distance<T: Real>(&self, tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
        let weights: Vec<Var> = self.layers.iter().map(|(w, _)| tape.constant(w.cast())).collect();
        let fx = self.activations(tape, &weights, x)?;
        let fy = self.activations(tape, &weights, y)?;
        let mut total: Option<Var> = None;
        for (a, b) in fx.into_iter().zip(fy) {
            let d = tape.sub(a, b)?;
            let sq = tape.square(d)?;
            let m = tape.mean(sq)?;
            total = Some(match total {
                Some(t) => tape.add(t, m)?,
                None => m,
            });
        }
        Ok(total.expect("bank has layers"))
    }
}

fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let mid = (n / 2) as f64;
    let g: Vec<f64> = (0..n).map(|i| (-(i as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM of two [-1,1] image tensors (dynamic range 2). The 11-tap window
/// shrinks to the largest odd size that fits smaller images.
pub fn ssim_graph<T: Real>(tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s != tape.shape(y) {
        return Err(Error::shape("ssim", format!("{:?} vs {:?}", s, tape.shape(y))));
    }
    let min_side = s[s.len() - 2].min(s[s.len() - 1]);
    let n = crate::metrics::SSIM_WINDOW.min(if min_side % 2 == 0 { min_side - 1 } else { min_side });
    let taps: Vec<T> = gaussian_taps(n, crate::metrics::SSIM_SIGMA).into_iter().map(T::lit).collect();
    let c1 = T::lit((0.01f64 * 2.0).powi(2));
    let c2 = T::lit((0.03f64 * 2.0).powi(2));
    let blur = |tape: &mut Tape<T>, v: Var| -> Result<Var> {
        let h = tape.filter2d(v, &taps, 1, n)?;
        Ok(tape.filter2d(h, &taps, n, 1)?)
    };
    let xx = tape.mul(x, x)?;
    let yy = tape.mul(y, y)?;
    let xy = tape.mul(x, y)?;
    let mx = blur(tape, x)?;
    let my = blur(tape, y)?;
    let exx = blur(tape, xx)?;
    let eyy = blur(tape, yy)?;
    let exy = blur(tape, xy)?;
    let mxx = tape.mul(mx, mx)?;
    let myy = tape.mul(my, my)?;
    let mxy = tape.mul(mx, my)?;
    let vx = tape.sub(exx, mxx)?;
    let vy = tape.sub(eyy, myy)?;
    let cov = tape.sub(exy, mxy)?;
    let a = tape.mul_scalar(mxy, T::lit(2.0))?;
    let a = tape.add_scalar(a, c1)?;
    let b = tape.mul_scalar(cov, T::lit(2.0))?;
    let b = tape.add_scalar(b, c2)?;
    let num = tape.mul(a, b)?;
    let d1 = tape.add(mxx, myy)?;
    let d1 = tape.add_scalar(d1, c1)?;
    let d2 = tape.add(vx, vy)?;
    let d2 = tape.add_scalar(d2, c2)?;
    let den = tape.mul(d1, d2)?;
    let map = tape.div(num, den)?;
    Ok(tape.mean(map)?)
}

/// w_l1·mean|x−y| + w_ssim·(1 − SSIM) + w_feat·feature distance.
pub fn loss_distance<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    y: Var,
    w: &LossWeights,
    bank: &FeatureBank,
) -> Result<Var> {
    if tape.shape(x) != tape.shape(y) {
        return Err(Error::shape("loss_distance", format!("{:?} vs {:?}", tape.shape(x), tape.shape(y))));
    }
    let d = tape.sub(x, y)?;
    let ad = tape.abs(d)?;
    let l1 = tape.mean(ad)?;
    let mut total = tape.mul_scalar(l1, T::lit(w.w_l1))?;
    if w.w_ssim != 0.0 {
        let s = ssim_graph(tape, x, y)?;
        let one_minus = tape.mul_scalar(s, -T::one())?;
        let one_minus = tape.add_scalar(one_minus, T::one())?;
        let term = tape.mul_scalar(one_minus, T::lit(w.w_ssim))?;
        total = tape.add(total, term)?;
    }
    if w.w_feat != 0.0 {
        let f = bank.distance(tape, x, y)?;
        let term = tape.mul_scalar(f, T::lit(w.w_feat))?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

fn guarded_log_mean<T: Real>(tape: &mut Tape<T>, score: Var, complement: bool) -> Result<Var> {
    if let Some(v) = tape.value(score).data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric { op: "rgan_losses", detail: format!("discriminator score {}", v) });
    }
    let p = if complement {
        let neg = tape.mul_scalar(score, -T::one())?;
        tape.add_scalar(neg, T::one())?
    } else {
        score
    };
    let g = tape.clamp(p, T::lit(LOG_EPS), T::one() - T::lit(LOG_EPS))?;
    let l = tape.ln(g)?;
    Ok(tape.mean(l)?)
}

fn accumulate<T: Real>(tape: &mut Tape<T>, acc: Option<Var>, v: Var) -> Result<Var> {
    Ok(match acc {
        Some(a) => tape.add(a, v)?,
        None => v,
    })
}

/// −Σ_j Σ_i log D_ji(s, c′, x′_j): the unweighted adversarial part of L_G.
pub fn generator_adversarial<T: Real>(
    tape: &mut Tape<T>,
    disc: &Bound,
    arch: &BaseArch,
    s: Option<Var>,
    c_prime: Var,
    refined: &[Var],
) -> Result<Var> {
    let mut acc = None;
    for (j, &xj) in refined.iter().enumerate() {
        for score in discnet_scores(tape, disc, arch, j, s, c_prime, xj)? {
            let l = guarded_log_mean(tape, score, false)?;
            acc = Some(accumulate(tape, acc, l)?);
        }
    }
    let sum = acc.ok_or_else(|| Error::Config("no refinement steps".into()))?;
    Ok(tape.mul_scalar(sum, -T::one())?)
}

/// −Σ_j Σ_i log D_ji(s, c′, x) − Σ_j Σ_i log(1 − D_ji(s, c′, x′_j)).
pub fn discriminator_loss<T: Real>(
    tape: &mut Tape<T>,
    disc: &Bound,
    arch: &BaseArch,
    s: Option<Var>,
    c_prime: Var,
    x: Var,
    refined: &[Var],
) -> Result<Var> {
    let mut acc = None;
    for (j, &xj) in refined.iter().enumerate() {
        for score in discnet_scores(tape, disc, arch, j, s, c_prime, x)? {
            let l = guarded_log_mean(tape, score, false)?;
            acc = Some(accumulate(tape, acc, l)?);
        }
        for score in discnet_scores(tape, disc, arch, j, s, c_prime, xj)? {
            let l = guarded_log_mean(tape, score, true)?;
            acc = Some(accumulate(tape, acc, l)?);
        }
    }
    let sum = acc.ok_or_else(|| Error::Config("no refinement steps".into()))?;
    Ok(tape.mul_scalar(sum, -T::one())?)
}

pub struct RganLosses {
    /// Unweighted −Σ log D(fake) term.
    pub adversarial: Var,
    /// Σ_j L_d(x, x′_j).
    pub distance: Var,
    pub l_g: Var,
    pub l_d: Var,
    pub l_rgan: Var,
}

/// L_G = w_adv·adversarial + Σ_j L_d(x, x′_j), L_D as above, L_RGAN = L_G + L_D.
#[allow(clippy::too_many_arguments)]
pub fn rgan_losses<T: Real>(
    tape: &mut Tape<T>,
    disc: &Bound,
    arch: &BaseArch,
    s: Option<Var>,
    c_prime: Var,
    x: Var,
    refined: &[Var],
    weights: &LossWeights,
    bank: &FeatureBank,
) -> Result<RganLosses> {
    let adversarial = generator_adversarial(tape, disc, arch, s, c_prime, refined)?;
    let mut distance = None;
    for &xj in refined {
        let d = loss_distance(tape, x, xj, weights, bank)?;
        distance = Some(accumulate(tape, distance, d)?);
    }
    let distance = distance.expect("refined is non-empty");
    let adv = tape.mul_scalar(adversarial, T::lit(weights.w_adv))?;
    let l_g = tape.add(adv, distance)?;
    let l_d = discriminator_loss(tape, disc, arch, s, c_prime, x, refined)?;
    let l_rgan = tape.add(l_g, l_d)?;
    Ok(RganLosses { adversarial, distance, l_g, l_d, l_rgan })
}

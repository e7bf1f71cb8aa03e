//! Declarative layer plans and their parameters.

use std::collections::BTreeMap;

use ds2c2_autodiff::{Real, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::CheckpointError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv { in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, zero_init: bool },
    Gdn { ch: usize },
    Igdn { ch: usize },
    PixelShuffle { factor: usize },
    /// conv -> leaky relu -> conv, plus identity skip.
    ResBlock { ch: usize, k: usize },
    Act(Activation),
}

impl Layer {
    pub fn conv(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        Layer::Conv { in_ch, out_ch, k, stride, pad, zero_init: false }
    }

    /// A 3x3 same-padding conv whose weights and bias start at zero.
    pub fn zero_conv(in_ch: usize, out_ch: usize) -> Self {
        Layer::Conv { in_ch, out_ch, k: 3, stride: 1, pad: 1, zero_init: true }
    }

    fn name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Gdn { .. } => "gdn",
            Layer::Igdn { .. } => "igdn",
            Layer::PixelShuffle { .. } => "pixel_shuffle",
            Layer::ResBlock { .. } => "resblock",
            Layer::Act(_) => "activation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub in_channels: usize,
    pub layers: Vec<Layer>,
}

fn conv_shapes(name: &str, in_ch: usize, out_ch: usize, k: usize) -> [(String, Vec<usize>); 2] {
    [(format!("{}.weight", name), vec![out_ch, in_ch, k, k]), (format!("{}.bias", name), vec![out_ch])]
}

impl LayerPlan {
    pub fn new(in_channels: usize, layers: Vec<Layer>) -> Result<Self> {
        let plan = Self { in_channels, layers };
        plan.out_channels()?;
        Ok(plan)
    }

    /// Channel count after the last layer; fails on incompatible neighbours.
    pub fn out_channels(&self) -> Result<usize> {
        let mut ch = self.in_channels;
        for (i, layer) in self.layers.iter().enumerate() {
            let expect = |want: usize| {
                if want == ch {
                    Ok(())
                } else {
                    Err(Error::Config(format!("layer {} ({}) expects {} channels, receives {}", i, layer.name(), want, ch)))
                }
            };
            match *layer {
                Layer::Conv { in_ch, out_ch, k, stride, .. } => {
                    expect(in_ch)?;
                    if k == 0 || stride == 0 || out_ch == 0 {
                        return Err(Error::Config(format!("layer {} (conv) needs k, stride, out_ch >= 1", i)));
                    }
                    ch = out_ch;
                }
                Layer::Gdn { ch: c } | Layer::Igdn { ch: c } | Layer::ResBlock { ch: c, .. } => expect(c)?,
                Layer::PixelShuffle { factor } => {
                    if factor == 0 || ch % (factor * factor) != 0 {
                        return Err(Error::Config(format!(
                            "layer {} (pixel_shuffle) cannot split {} channels by {}^2",
                            i, ch, factor
                        )));
                    }
                    ch /= factor * factor;
                }
                Layer::Act(_) => {}
            }
        }
        Ok(ch)
    }

    /// Output spatial size for an `h x w` input.
    pub fn out_hw(&self, mut h: usize, mut w: usize) -> Result<(usize, usize)> {
        for layer in &self.layers {
            match *layer {
                Layer::Conv { k, stride, pad, .. } => {
                    if h + 2 * pad < k || w + 2 * pad < k {
                        return Err(Error::shape("layer plan", format!("{}x{} too small for kernel {}", h, w, k)));
                    }
                    h = (h + 2 * pad - k) / stride + 1;
                    w = (w + 2 * pad - k) / stride + 1;
                }
                Layer::PixelShuffle { factor } => {
                    h *= factor;
                    w *= factor;
                }
                _ => {}
            }
        }
        Ok((h, w))
    }

    /// Names and shapes of every parameter under `prefix`, in plan order.
    pub fn param_shapes(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let base = format!("{}.{}", prefix, i);
            match *layer {
                Layer::Conv { in_ch, out_ch, k, .. } => out.extend(conv_shapes(&base, in_ch, out_ch, k)),
                Layer::Gdn { ch } | Layer::Igdn { ch } => {
                    out.push((format!("{}.beta", base), vec![ch]));
                    out.push((format!("{}.gamma", base), vec![ch, ch]));
                }
                Layer::ResBlock { ch, k } => {
                    out.extend(conv_shapes(&format!("{}.conv1", base), ch, ch, k));
                    out.extend(conv_shapes(&format!("{}.conv2", base), ch, ch, k));
                }
                Layer::PixelShuffle { .. } | Layer::Act(_) => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes("p").iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Fresh parameters: conv weights uniform in ±sqrt(3/fan_in), biases zero,
    /// GDN beta = 1 and gamma = 0.1·I.
    pub fn init(&self, prefix: &str, rng: &mut ChaCha8Rng, out: &mut BTreeMap<String, Tensor<f32>>) {
        let zero_layers: Vec<String> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Conv { zero_init: true, .. }))
            .map(|(i, _)| format!("{}.{}.", prefix, i))
            .collect();
        for (name, shape) in self.param_shapes(prefix) {
            let t = if name.ends_with(".beta") {
                Tensor::full(&shape, 1.0)
            } else if name.ends_with(".gamma") {
                let c = shape[0];
                Tensor::from_fn(&shape, |i| if i / c == i % c { 0.1 } else { 0.0 })
            } else if name.ends_with(".bias") || zero_layers.iter().any(|z| name.starts_with(z)) {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (3.0 / fan_in as f32).sqrt();
                Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound))
            };
            out.insert(name, t);
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bound: &Bound, prefix: &str, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            let base = format!("{}.{}", prefix, i);
            x = match *layer {
                Layer::Conv { stride, pad, .. } => conv(tape, bound, &base, x, stride, pad)?,
                Layer::Gdn { .. } | Layer::Igdn { .. } => {
                    let beta = bound.get(&format!("{}.beta", base))?;
                    let gamma = bound.get(&format!("{}.gamma", base))?;
                    tape.gdn(x, beta, gamma, matches!(layer, Layer::Igdn { .. }))?
                }
                Layer::PixelShuffle { factor } => tape.pixel_shuffle(x, factor)?,
                Layer::ResBlock { k, .. } => {
                    let h = conv(tape, bound, &format!("{}.conv1", base), x, 1, k / 2)?;
                    let h = tape.leaky_relu(h)?;
                    let h = conv(tape, bound, &format!("{}.conv2", base), h, 1, k / 2)?;
                    tape.add(x, h)?
                }
                Layer::Act(Activation::LeakyRelu) => tape.leaky_relu(x)?,
                Layer::Act(Activation::Tanh) => tape.tanh(x)?,
            };
        }
        Ok(x)
    }
}

fn conv<T: Real>(tape: &mut Tape<T>, bound: &Bound, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = bound.get(&format!("{}.weight", name))?;
    let b = bound.get(&format!("{}.bias", name))?;
    Ok(tape.conv2d(x, w, Some(b), stride, pad)?)
}

/// Parameters registered on a tape, looked up by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Register `tensors` on `tape`; names for which `trainable` holds become parameters.
    pub fn new<T: Real>(
        tape: &mut Tape<T>,
        tensors: &BTreeMap<String, Tensor<T>>,
        trainable: impl Fn(&str) -> bool,
    ) -> Self {
        let vars = tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable(name) { tape.param(t.clone()) } else { tape.constant(t.clone()) };
                (name.clone(), v)
            })
            .collect();
        Self { vars }
    }

    /// Wrap variables that are already on a tape.
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(CheckpointError::MissingParam(name.to_string())))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients of every trainable entry that received one.
    pub fn grads<T: Real>(&self, tape: &Tape<T>) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .iter()
            .filter_map(|(name, &v)| tape.grad(v).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

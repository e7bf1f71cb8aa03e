//! Two-stage training: the base-layer RGAN first, then BResNet + SumNet.

use ds2c2_autodiff::{Adam, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::binarizer::{binarize_values, BinarizeMode};
use crate::error::{Error, Result};
use crate::link::{apply_channel_bits, deinterleave, interleave, ChannelConfig, ChannelModel, InterleaverSpec, Scheme};
use crate::nn::graph::{base_generate, bresnet_decode, bresnet_encode, sumnet};
use crate::nn::{project_gdn, synthesize, Arch, BaseArch, Bound, CodecArch, CodecSource, ModelParams};
use crate::pipeline::dataset::{batch, Sample};
use crate::pipeline::losses::{discriminator_loss, generator_adversarial, loss_distance, FeatureBank, LossWeights};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Base,
    Residual,
    /// Base and codec updated together; unstable, off by default.
    Joint,
}

/// Interleaver family; concrete parameters follow from block size and seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterleaverKind {
    None,
    Stride,
    Permutation,
}

impl InterleaverKind {
    /// Stride depth is one channel block (8·block_bytes bits).
    pub fn scheme(&self, block_bytes: usize, seed: u64) -> Scheme {
        match self {
            InterleaverKind::None => Scheme::Identity,
            InterleaverKind::Stride => Scheme::Stride { depth: 8 * block_bytes as u64 },
            InterleaverKind::Permutation => Scheme::Permutation { seed: seeds::derive_seed(seed, "interleaver") },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Epochs at the base learning rate.
    pub flat_epochs: usize,
    /// Epochs of linear decay towards zero that follow.
    pub decay_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pe_train: f64,
    /// Draw each batch's pe uniformly from [0, pe_train].
    pub pe_jitter: bool,
    /// When false the bit chain is skipped entirely.
    pub channel_enabled: bool,
    pub channel_model: ChannelModel,
    pub block_bytes: usize,
    pub interleaver: InterleaverKind,
    pub rgan_steps: usize,
    pub disc_scales: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Residual,
            flat_epochs: 10,
            decay_epochs: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            pe_train: 0.0,
            pe_jitter: false,
            channel_enabled: true,
            channel_model: ChannelModel::Bbec,
            block_bytes: 1,
            interleaver: InterleaverKind::Stride,
            rgan_steps: 2,
            disc_scales: 3,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self) -> usize {
        self.flat_epochs + self.decay_epochs
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs() == 0 {
            return Err(Error::Config("epochs (flat + decay) must be >= 1".into()));
        }
        if !(0.0..=100.0).contains(&self.pe_train) {
            return Err(Error::Config(format!("pe_train must lie in [0,100], got {}", self.pe_train)));
        }
        if self.rgan_steps == 0 || self.disc_scales == 0 {
            return Err(Error::Config("rgan_steps and disc_scales must be >= 1".into()));
        }
        if self.batch_size == 0 || self.block_bytes == 0 {
            return Err(Error::Config("batch_size and block_bytes must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Flat for `flat_epochs`, then linear decay ending one step above zero.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.flat_epochs {
            self.learning_rate
        } else {
            let k = (epoch - self.flat_epochs + 1) as f64;
            self.learning_rate * (1.0 - k / (self.decay_epochs + 1) as f64)
        }
    }

    fn channel(&self, pe: f64, seed: u64) -> ChannelConfig {
        ChannelConfig { model: self.channel_model, pe, block_bytes: self.block_bytes, seed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub values: Vec<f64>,
}

/// Per-epoch mean losses.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub columns: Vec<&'static str>,
    pub epochs: Vec<EpochRecord>,
    pub train_samples: usize,
}

impl TrainLog {
    fn new(columns: &[&'static str], train_samples: usize) -> Self {
        Self { columns: columns.to_vec(), epochs: Vec::new(), train_samples }
    }

    /// Tab-separated, one line per epoch.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("epoch\tlr\t{}\n", self.columns.join("\t"));
        for e in &self.epochs {
            out.push_str(&format!("{}\t{:.6e}", e.epoch, e.lr));
            for v in &e.values {
                out.push_str(&format!("\t{:.6}", v));
            }
            out.push('\n');
        }
        out
    }

    pub fn last(&self, column: &str) -> Option<f64> {
        let i = self.columns.iter().position(|c| *c == column)?;
        self.epochs.last().map(|e| e.values[i])
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seeds::derive_indexed(seed, "order", &[epoch as u64])));
    order
}

fn scalar(tape: &Tape<f32>, v: Var) -> f64 {
    tape.value(v).data()[0] as f64
}

fn check_finite(v: f64, epoch: usize, batch: usize, params: &ModelParams) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        log::error!("non-finite loss at epoch {} batch {}", epoch, batch);
        Err(Error::NonFiniteLoss { epoch, batch, last_good: Box::new(params.clone()) })
    }
}

fn is_disc(name: &str) -> bool {
    name.starts_with("disc.")
}

fn check_samples(samples: &[Sample], shape: [usize; 3], op: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Dataset(format!("{}: no training samples", op)));
    }
    if let Some(s) = samples.iter().find(|s| s.image.shape() != shape) {
        return Err(Error::Config(format!("{}: sample {} has shape {:?}, model expects {:?}", op, s.id, s.image.shape(), shape)));
    }
    Ok(())
}

fn check_labels(samples: &[Sample], semantic: bool) -> Result<()> {
    if semantic && samples.iter().any(|s| s.label.is_none()) {
        return Err(Error::Config("model is conditioned on label maps but some samples have none".into()));
    }
    Ok(())
}

/// Adversarial training of CompNet + FineNet against the multi-scale discriminators.
pub fn train_base(samples: &[Sample], arch: BaseArch, cfg: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    if cfg.stage != Stage::Base {
        return Err(Error::Config("train_base needs stage = base".into()));
    }
    let arch = BaseArch { steps: cfg.rgan_steps, disc_scales: cfg.disc_scales, ..arch };
    check_samples(samples, arch.input_shape(), "train_base")?;
    check_labels(samples, arch.semantic)?;
    let mut params = ModelParams::init(Arch::Base(arch), cfg.seed)?;
    let bank = FeatureBank::new(arch.channels, cfg.seed);
    let mut g_opt = Adam::<f32>::default();
    let mut d_opt = Adam::<f32>::default();
    let mut log = TrainLog::new(&["l_g", "l_d", "l_rgan"], samples.len());
    for epoch in 0..cfg.epochs() {
        let lr = cfg.lr_at(epoch);
        let (mut sum_g, mut sum_d, mut batches) = (0.0, 0.0, 0usize);
        for (bi, chunk) in epoch_order(samples.len(), cfg.seed, epoch).chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (x, s) = batch(&refs)?;

            let mut tape = Tape::<f32>::new();
            let bound = Bound::new(&mut tape, &params.tensors, is_disc);
            let xv = tape.constant(x.clone());
            let sv = s.as_ref().map(|s| tape.constant(s.clone()));
            let g = base_generate(&mut tape, &bound, &arch, xv, sv, true)?;
            let l_d = discriminator_loss(&mut tape, &bound, &arch, sv, g.c_prime, xv, &g.refined)?;
            let d_value = scalar(&tape, l_d);
            check_finite(d_value, epoch, bi, &params)?;
            tape.backward(l_d)?;
            d_opt.step(&mut params.tensors, &bound.grads(&tape), lr as f32);

            let mut tape = Tape::<f32>::new();
            let bound = Bound::new(&mut tape, &params.tensors, |n| !is_disc(n));
            let xv = tape.constant(x);
            let sv = s.map(|s| tape.constant(s));
            let g = base_generate(&mut tape, &bound, &arch, xv, sv, true)?;
            let l_g = generator_loss(&mut tape, &bound, &arch, sv, xv, &g.c_prime, &g.refined, &cfg.weights, &bank)?;
            let g_value = scalar(&tape, l_g);
            check_finite(g_value, epoch, bi, &params)?;
            tape.backward(l_g)?;
            g_opt.step(&mut params.tensors, &bound.grads(&tape), lr as f32);
            project_gdn(&mut params.tensors);

            sum_g += g_value;
            sum_d += d_value;
            batches += 1;
        }
        let (mg, md) = (sum_g / batches as f64, sum_d / batches as f64);
        log::info!("base epoch {}: l_g {:.4} l_d {:.4}", epoch, mg, md);
        log.epochs.push(EpochRecord { epoch, lr, values: vec![mg, md, mg + md] });
    }
    params.meta.epochs = cfg.epochs();
    params.meta.train_images = samples.len();
    Ok((params, log))
}

#[allow(clippy::too_many_arguments)]
fn generator_loss(
    tape: &mut Tape<f32>,
    bound: &Bound,
    arch: &BaseArch,
    s: Option<Var>,
    x: Var,
    c_prime: &Var,
    refined: &[Var],
    weights: &LossWeights,
    bank: &FeatureBank,
) -> Result<Var> {
    let adv = generator_adversarial(tape, bound, arch, s, *c_prime, refined)?;
    let mut total = tape.mul_scalar(adv, weights.w_adv as f32)?;
    for &xj in refined {
        let d = loss_distance(tape, x, xj, weights, bank)?;
        total = tape.add(total, d)?;
    }
    Ok(total)
}

/// Receiver-side x′ for every sample: the frozen base output, or zeros for a direct codec.
pub fn base_estimates(samples: &[Sample], base: Option<&ModelParams>, arch: &CodecArch) -> Result<Vec<Tensor<f32>>> {
    match (arch.source, base) {
        (CodecSource::Direct, _) => Ok(samples.iter().map(|s| Tensor::zeros(s.image.shape())).collect()),
        (CodecSource::Residual, None) => Err(Error::Config("a residual codec needs a trained base model".into())),
        (CodecSource::Residual, Some(b)) => {
            let ba = b.base()?;
            if ba.input_shape() != arch.input_shape() {
                return Err(Error::Config(format!(
                    "base input {:?} does not match codec input {:?}",
                    ba.input_shape(),
                    arch.input_shape()
                )));
            }
            let mut out = Vec::with_capacity(samples.len());
            for chunk in samples.chunks(32) {
                let refs: Vec<&Sample> = chunk.iter().collect();
                let (x, s) = batch(&refs)?;
                let xp = synthesize(b, &x, s.as_ref())?;
                for k in 0..chunk.len() {
                    out.push(xp.x_prime().sample(k)?);
                }
            }
            Ok(out)
        }
    }
}

/// Pass a batch of ±1 decisions through interleave → channel → deinterleave.
fn bit_chain(bits: &[bool], per_sample: usize, cfg: &TrainConfig, epoch: usize, bi: usize) -> Result<Vec<bool>> {
    if !cfg.channel_enabled {
        return Ok(bits.to_vec());
    }
    let pe = if cfg.pe_jitter {
        seeds::rng(seeds::derive_indexed(cfg.seed, "jitter", &[epoch as u64, bi as u64])).gen_range(0.0..=cfg.pe_train)
    } else {
        cfg.pe_train
    };
    let spec = InterleaverSpec::new(cfg.interleaver.scheme(cfg.block_bytes, cfg.seed), per_sample)?;
    let mut out = Vec::with_capacity(bits.len());
    for (k, chunk) in bits.chunks(per_sample).enumerate() {
        let sent = interleave(chunk, &spec)?;
        let ch = cfg.channel(pe, seeds::derive_indexed(cfg.seed, "channel", &[epoch as u64, bi as u64, k as u64]));
        let (received, _) = apply_channel_bits(&sent, &ch)?;
        out.extend(deinterleave(&received, &spec)?);
    }
    Ok(out)
}

struct ResidualStep {
    l_r: Var,
    l_x: Var,
    total: Var,
}

/// Codec forward with the stochastic binarizer and the channel in the loop.
#[allow(clippy::too_many_arguments)]
fn residual_forward(
    tape: &mut Tape<f32>,
    bound: &Bound,
    arch: &CodecArch,
    xv: Var,
    xpv: Var,
    cfg: &TrainConfig,
    bank: &FeatureBank,
    epoch: usize,
    bi: usize,
) -> Result<ResidualStep> {
    let rv = tape.sub(xv, xpv)?;
    let latent = bresnet_encode(tape, bound, arch, rv)?;
    let lat = tape.value(latent).clone();
    let mut rng = seeds::rng(seeds::derive_indexed(cfg.seed, "binarize", &[epoch as u64, bi as u64]));
    let bits = binarize_values(lat.data(), BinarizeMode::Stochastic, &mut rng);
    let per_sample: usize = arch.latent_shape().iter().product();
    let received = bit_chain(&bits, per_sample, cfg, epoch, bi)?;
    let values = Tensor::new(lat.shape().to_vec(), received.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect())?;
    let v = tape.straight_through(latent, values)?;
    let r_hat = bresnet_decode(tape, bound, arch, v)?;
    let x_hat = sumnet(tape, bound, arch, xpv, r_hat)?;
    let l_r = loss_distance(tape, rv, r_hat, &cfg.weights, bank)?;
    let l_x = loss_distance(tape, xv, x_hat, &cfg.weights, bank)?;
    let total = tape.add(l_r, l_x)?;
    Ok(ResidualStep { l_r, l_x, total })
}

/// BResNet + SumNet against a frozen base layer (or none, for a direct codec).
pub fn train_residual(
    samples: &[Sample],
    base: Option<&ModelParams>,
    arch: CodecArch,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    if cfg.stage != Stage::Residual {
        return Err(Error::Config("train_residual needs stage = residual".into()));
    }
    check_samples(samples, arch.input_shape(), "train_residual")?;
    let x_primes = base_estimates(samples, base, &arch)?;
    let mut params = ModelParams::init(Arch::Codec(arch), cfg.seed)?;
    params.meta.pe_train = cfg.pe_train;
    let bank = FeatureBank::new(arch.channels, cfg.seed);
    let mut opt = Adam::<f32>::default();
    let mut log = TrainLog::new(&["l_bresnet", "l_sumnet", "total"], samples.len());
    for epoch in 0..cfg.epochs() {
        let lr = cfg.lr_at(epoch);
        let mut sums = [0.0; 3];
        let mut batches = 0usize;
        for (bi, chunk) in epoch_order(samples.len(), cfg.seed, epoch).chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (x, _) = batch(&refs)?;
            let xp = Tensor::stack(&chunk.iter().map(|&i| x_primes[i].clone()).collect::<Vec<_>>())?;
            let mut tape = Tape::<f32>::new();
            let bound = Bound::new(&mut tape, &params.tensors, |_| true);
            let xv = tape.constant(x);
            let xpv = tape.constant(xp);
            let step = residual_forward(&mut tape, &bound, &arch, xv, xpv, cfg, &bank, epoch, bi)?;
            let total = scalar(&tape, step.total);
            check_finite(total, epoch, bi, &params)?;
            sums[0] += scalar(&tape, step.l_r);
            sums[1] += scalar(&tape, step.l_x);
            sums[2] += total;
            batches += 1;
            tape.backward(step.total)?;
            opt.step(&mut params.tensors, &bound.grads(&tape), lr as f32);
            project_gdn(&mut params.tensors);
        }
        let means: Vec<f64> = sums.iter().map(|s| s / batches as f64).collect();
        log::info!("residual epoch {}: total {:.4}", epoch, means[2]);
        log.epochs.push(EpochRecord { epoch, lr, values: means });
    }
    params.meta.epochs = cfg.epochs();
    params.meta.train_images = samples.len();
    Ok((params, log))
}

/// `train_residual` on a seeded subset of `subset_size` samples.
pub fn retrain_lowdata(
    samples: &[Sample],
    subset_size: usize,
    base: Option<&ModelParams>,
    arch: CodecArch,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    if subset_size == 0 {
        return Err(Error::Config("subset size must be >= 1".into()));
    }
    if subset_size > samples.len() {
        return Err(Error::Config(format!("subset size {} exceeds the {} available samples", subset_size, samples.len())));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut seeds::rng(seeds::derive_seed(cfg.seed, "subset")));
    idx.truncate(subset_size);
    idx.sort_unstable();
    let subset: Vec<Sample> = idx.into_iter().map(|i| samples[i].clone()).collect();
    train_residual(&subset, base, arch, cfg)
}

/// Base and codec trained together on L_RGAN + L_d(r, r̂) + L_d(x, x̂).
pub fn train_joint(
    samples: &[Sample],
    base_arch: BaseArch,
    codec_arch: CodecArch,
    cfg: &TrainConfig,
) -> Result<(ModelParams, ModelParams, TrainLog)> {
    cfg.validate()?;
    if cfg.stage != Stage::Joint {
        return Err(Error::Config("train_joint needs stage = joint".into()));
    }
    if codec_arch.source != CodecSource::Residual || base_arch.input_shape() != codec_arch.input_shape() {
        return Err(Error::Config("joint training needs a residual codec with the base input shape".into()));
    }
    let base_arch = BaseArch { steps: cfg.rgan_steps, disc_scales: cfg.disc_scales, ..base_arch };
    check_samples(samples, base_arch.input_shape(), "train_joint")?;
    check_labels(samples, base_arch.semantic)?;
    let mut base = ModelParams::init(Arch::Base(base_arch), cfg.seed)?;
    let mut codec = ModelParams::init(Arch::Codec(codec_arch), seeds::derive_seed(cfg.seed, "codec"))?;
    codec.meta.pe_train = cfg.pe_train;
    let bank = FeatureBank::new(base_arch.channels, cfg.seed);
    let (mut g_opt, mut d_opt, mut c_opt) = (Adam::<f32>::default(), Adam::<f32>::default(), Adam::<f32>::default());
    let mut log = TrainLog::new(&["l_g", "l_d", "l_codec"], samples.len());
    for epoch in 0..cfg.epochs() {
        let lr = cfg.lr_at(epoch);
        let mut sums = [0.0; 3];
        let mut batches = 0usize;
        for (bi, chunk) in epoch_order(samples.len(), cfg.seed, epoch).chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (x, s) = batch(&refs)?;

            let mut tape = Tape::<f32>::new();
            let bound = Bound::new(&mut tape, &base.tensors, is_disc);
            let xv = tape.constant(x.clone());
            let sv = s.as_ref().map(|s| tape.constant(s.clone()));
            let g = base_generate(&mut tape, &bound, &base_arch, xv, sv, true)?;
            let l_d = discriminator_loss(&mut tape, &bound, &base_arch, sv, g.c_prime, xv, &g.refined)?;
            let d_value = scalar(&tape, l_d);
            check_finite(d_value, epoch, bi, &base)?;
            tape.backward(l_d)?;
            d_opt.step(&mut base.tensors, &bound.grads(&tape), lr as f32);

            let mut tape = Tape::<f32>::new();
            let gb = Bound::new(&mut tape, &base.tensors, |n| !is_disc(n));
            let cb = Bound::new(&mut tape, &codec.tensors, |_| true);
            let xv = tape.constant(x);
            let sv = s.map(|s| tape.constant(s));
            let g = base_generate(&mut tape, &gb, &base_arch, xv, sv, true)?;
            let l_g = generator_loss(&mut tape, &gb, &base_arch, sv, xv, &g.c_prime, &g.refined, &cfg.weights, &bank)?;
            let step = residual_forward(&mut tape, &cb, &codec_arch, xv, g.x_prime(), cfg, &bank, epoch, bi)?;
            let total = tape.add(l_g, step.total)?;
            let value = scalar(&tape, total);
            check_finite(value, epoch, bi, &base)?;
            sums[0] += scalar(&tape, l_g);
            sums[1] += d_value;
            sums[2] += scalar(&tape, step.total);
            batches += 1;
            tape.backward(total)?;
            g_opt.step(&mut base.tensors, &gb.grads(&tape), lr as f32);
            c_opt.step(&mut codec.tensors, &cb.grads(&tape), lr as f32);
            project_gdn(&mut codec.tensors);
        }
        let means: Vec<f64> = sums.iter().map(|s| s / batches as f64).collect();
        log.epochs.push(EpochRecord { epoch, lr, values: means });
    }
    for p in [&mut base, &mut codec] {
        p.meta.epochs = cfg.epochs();
        p.meta.train_images = samples.len();
    }
    Ok((base, codec, log))
}

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::link::domain::{to_image_domain, to_tensor_domain};
use crate::seeds;

pub const DEFAULT_BLOCK_BYTES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelModel {
    /// Ones inside a hit block are erased to zero.
    Bbec,
    /// Every bit inside a hit block is inverted.
    Bbsc,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    pub model: ChannelModel,
    /// Percentage of ones corrupted per payload.
    pub pe: f64,
    pub block_bytes: usize,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(model: ChannelModel, pe: f64, block_bytes: usize, seed: u64) -> Result<Self> {
        let cfg = Self { model, pe, block_bytes, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.pe) {
            return Err(Error::Config(format!("pe must lie in [0,100], got {}", self.pe)));
        }
        if self.block_bytes == 0 {
            return Err(Error::Config("block_bytes must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of ones to corrupt: pe% of `ones`, rounded half up.
    pub fn quota(&self, ones: usize) -> usize {
        (self.pe * ones as f64 / 100.0 + 0.5).floor() as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ErrorReport {
    pub blocks_hit: usize,
    pub ones_flipped: usize,
    pub zeros_flipped: usize,
    pub target: usize,
    pub warning: Option<String>,
}

/// Corrupt a bit stream in `block_bytes`-sized blocks until the ones quota is met.
pub fn apply_channel_bits(bits: &[bool], cfg: &ChannelConfig) -> Result<(Vec<bool>, ErrorReport)> {
    corrupt(bits, cfg, None)
}

/// Positions the channel sweeps over on `bits`: each hit block, the last one
/// only up to where the quota ran out.
pub fn erasure_footprint(bits: &[bool], cfg: &ChannelConfig) -> Result<Vec<bool>> {
    let mut mask = vec![false; bits.len()];
    corrupt(bits, cfg, Some(&mut mask))?;
    Ok(mask)
}

/// Corrupt `bits` exactly at a footprint taken from another payload.
pub fn apply_footprint(bits: &[bool], footprint: &[bool], model: ChannelModel) -> Result<Vec<bool>> {
    if bits.len() != footprint.len() {
        return Err(Error::shape("apply_footprint", format!("{} bits vs footprint of {}", bits.len(), footprint.len())));
    }
    Ok(bits
        .iter()
        .zip(footprint)
        .map(|(&b, &hit)| match (hit, model) {
            (false, _) => b,
            (true, ChannelModel::Bbec) => false,
            (true, ChannelModel::Bbsc) => !b,
        })
        .collect())
}

fn corrupt(bits: &[bool], cfg: &ChannelConfig, mut footprint: Option<&mut Vec<bool>>) -> Result<(Vec<bool>, ErrorReport)> {
    cfg.validate()?;
    let mut out = bits.to_vec();
    let ones = bits.iter().filter(|b| **b).count();
    let target = cfg.quota(ones);
    let mut report = ErrorReport { target, ..Default::default() };
    if cfg.pe > 0.0 && ones == 0 {
        let msg = "payload has no ones; nothing to corrupt".to_string();
        log::warn!("apply_channel: {}", msg);
        report.warning = Some(msg);
    }
    if target == 0 {
        return Ok((out, report));
    }
    let block = cfg.block_bytes * 8;
    let mut order: Vec<usize> = (0..bits.len().div_ceil(block)).collect();
    order.shuffle(&mut seeds::rng(cfg.seed));
    for b in order {
        let mut hit = false;
        for (i, bit) in out.iter_mut().enumerate().skip(b * block).take(block) {
            if report.ones_flipped == target {
                break;
            }
            if let Some(f) = footprint.as_deref_mut() {
                f[i] = true;
            }
            match (cfg.model, *bit) {
                (_, true) => {
                    *bit = false;
                    report.ones_flipped += 1;
                    hit = true;
                }
                (ChannelModel::Bbsc, false) => {
                    *bit = true;
                    report.zeros_flipped += 1;
                    hit = true;
                }
                (ChannelModel::Bbec, false) => {}
            }
        }
        report.blocks_hit += hit as usize;
        if report.ones_flipped == target {
            break;
        }
    }
    Ok((out, report))
}

/// Image-domain wrapper: bytes in {0,255}, one pixel per bit.
pub fn apply_channel(image: &[u8], cfg: &ChannelConfig) -> Result<(Vec<u8>, ErrorReport)> {
    let bits = to_tensor_domain(image)?;
    let (out, report) = apply_channel_bits(&bits, cfg)?;
    Ok((to_image_domain(&out), report))
}

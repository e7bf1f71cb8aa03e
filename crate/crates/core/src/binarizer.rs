//! Latent binarization and bits-per-pixel accounting.

use ds2c2_autodiff::Tensor;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinarizeMode {
    Stochastic,
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub source: String,
    pub mode: BinarizeMode,
    pub seed: u64,
}

/// A binarized latent `(C_l, H_l, W_l)`; `true` is +1, `false` is -1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentBits {
    shape: [usize; 3],
    bits: Vec<bool>,
    pub provenance: Provenance,
}

impl LatentBits {
    pub fn new(shape: [usize; 3], bits: Vec<bool>, provenance: Provenance) -> Result<Self> {
        let n: usize = shape.iter().product();
        if bits.len() != n {
            return Err(Error::shape("latent bits", format!("{} bits for shape {:?}", bits.len(), shape)));
        }
        Ok(Self { shape, bits, provenance })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Tensor-domain view with elements in {-1, +1}.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        Tensor::new(self.shape.to_vec(), data).expect("shape checked on construction")
    }

    pub fn with_bits(&self, bits: Vec<bool>) -> Result<Self> {
        Self::new(self.shape, bits, self.provenance.clone())
    }
}

/// Binarize raw values in place of a tensor, drawing from `rng` in stochastic mode.
pub fn binarize_values<R: Rng>(values: &[f32], mode: BinarizeMode, rng: &mut R) -> Vec<bool> {
    let mut clamped = 0usize;
    let out = values
        .iter()
        .map(|&v| {
            let v = if (-1.0..=1.0).contains(&v) {
                v
            } else {
                clamped += 1;
                v.clamp(-1.0, 1.0)
            };
            match mode {
                BinarizeMode::Deterministic => v >= 0.0,
                BinarizeMode::Stochastic => rng.gen::<f32>() < (1.0 + v) * 0.5,
            }
        })
        .collect();
    if clamped > 0 {
        log::warn!("binarize: {} latent values outside [-1,1] were clamped", clamped);
    }
    out
}

/// Binarize a `[C,H,W]` latent.
pub fn binarize(latent: &Tensor<f32>, mode: BinarizeMode, seed: u64, source: &str) -> Result<LatentBits> {
    let [c, h, w] = latent.shape()[..] else {
        return Err(Error::shape("binarize", format!("latent must be [C,H,W], got {:?}", latent.shape())));
    };
    let mut rng = seeds::rng(seed);
    let bits = binarize_values(latent.data(), mode, &mut rng);
    LatentBits::new([c, h, w], bits, Provenance { source: source.to_string(), mode, seed })
}

/// Bits per source pixel, split by payload.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BppLedger {
    pub bpp_r: f64,
    pub bpp_c: f64,
    pub bpp_s: f64,
    pub bpp_total: f64,
}

/// Byte sizes of the error-free base-layer payloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct BaseLayerBytes {
    pub c_bytes: usize,
    pub s_bytes: usize,
}

pub fn bpp(latent_shape: [usize; 3], image_hw: (usize, usize), base: Option<BaseLayerBytes>) -> Result<BppLedger> {
    let area = image_hw.0 * image_hw.1;
    if area == 0 {
        return Err(Error::domain("bpp", "image area is zero"));
    }
    if latent_shape.contains(&0) {
        return Err(Error::domain("bpp", format!("latent shape {:?} has a zero dimension", latent_shape)));
    }
    let area = area as f64;
    let bpp_r = latent_shape.iter().product::<usize>() as f64 / area;
    let base = base.unwrap_or_default();
    let bpp_c = (base.c_bytes * 8) as f64 / area;
    let bpp_s = (base.s_bytes * 8) as f64 / area;
    Ok(BppLedger { bpp_r, bpp_c, bpp_s, bpp_total: bpp_r + bpp_c + bpp_s })
}

/// -1 -> 0, +1 -> 1, MSB first, last byte zero-padded.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], count: usize) -> Result<Vec<bool>> {
    if bytes.len() != count.div_ceil(8) {
        return Err(Error::shape("unpack_bits", format!("{} bytes cannot hold exactly {} bits", bytes.len(), count)));
    }
    Ok((0..count).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect())
}

pub fn pack_latent(bits: &LatentBits) -> Vec<u8> {
    pack_bits(bits.bits())
}

pub fn unpack_latent(bytes: &[u8], shape: [usize; 3], provenance: Provenance) -> Result<LatentBits> {
    let bits = unpack_bits(bytes, shape.iter().product())?;
    LatentBits::new(shape, bits, provenance)
}

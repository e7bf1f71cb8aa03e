//! End-to-end transmission of one image through the full chain.

use ds2c2_autodiff::Tensor;

use crate::binarizer::{binarize, bpp, BaseLayerBytes, BinarizeMode, LatentBits};
use crate::error::{Error, Result};
use crate::imaging::{denormalize, Image8};
use crate::link::{
    apply_channel_bits, apply_footprint, deinterleave, erasure_footprint, frame_encode, interleave, to_image_domain, ChannelConfig, ErrorReport, FrameHeader,
    InterleaverSpec, Scheme,
};
use crate::metrics::{latent_stats, ms_ssim, mse, psnr, psnr_from_mse, ssim, to_db_capped, LatentStats, MetricsRecord, DEFAULT_TILE};
use crate::nn::{bresnet_decode, bresnet_encode, sumnet, synthesize, CodecSource, ModelParams};

/// Labels attached to the metrics of one transmission.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTag {
    pub image_id: String,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Transmission {
    pub x_prime: Tensor<f32>,
    pub r: Tensor<f32>,
    pub latent: Tensor<f32>,
    /// Deterministic bits before interleaving.
    pub sent: LatentBits,
    /// Bits after deinterleaving at the receiver.
    pub received: LatentBits,
    pub r_hat: Tensor<f32>,
    /// clamp(x′ + r̂) without SumNet.
    pub x_plain: Tensor<f32>,
    pub x_hat: Tensor<f32>,
    /// 8-bit base-layer payload, empty for a direct codec.
    pub c_bytes: Vec<u8>,
    /// Receiver-side frame of the interleaved stream as it came off the channel.
    pub frame: Vec<u8>,
    pub report: ErrorReport,
    pub metrics: MetricsRecord,
}

/// Image-domain view of latent bits as a `(C·H) x W` byte plane.
pub fn latent_plane(bits: &LatentBits) -> Image8 {
    let [c, h, w] = bits.shape();
    Image8 { channels: 1, height: c * h, width: w, data: to_image_domain(bits.bits()) }
}

/// Density-map tile: the default, shrunk to the latent width for small latents.
pub fn stats_tile(bits: &LatentBits) -> usize {
    DEFAULT_TILE.min(bits.shape()[2]).max(1)
}

fn clamp_sum(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (x + y).clamp(-1.0, 1.0)).collect();
    Ok(Tensor::new(a.shape().to_vec(), data)?)
}

/// Send `x` (`[3,H,W]`) through base layer, codec, interleaver and channel.
///
/// `channel = None` skips interleaving and corruption entirely.
pub fn transmit_image(
    x: &Tensor<f32>,
    s: Option<&Tensor<f32>>,
    base: Option<&ModelParams>,
    enh: &ModelParams,
    channel: Option<&ChannelConfig>,
    scheme: Scheme,
    tag: &EvalTag,
) -> Result<Transmission> {
    let arch = *enh.codec()?;
    if x.shape() != arch.input_shape() {
        return Err(Error::shape("transmit_image", format!("image {:?}, codec expects {:?}", x.shape(), arch.input_shape())));
    }
    let (x_prime, c_bytes, s_bytes) = match (arch.source, base) {
        (CodecSource::Direct, _) => (Tensor::zeros(x.shape()), Vec::new(), 0),
        (CodecSource::Residual, None) => return Err(Error::Config("a residual codec needs the base model".into())),
        (CodecSource::Residual, Some(b)) => {
            let out = synthesize(b, x, s)?;
            let c_bytes = denormalize(&out.c)?.data;
            let s_bytes = s.map_or(0, |s| s.len());
            (out.x_prime().clone(), c_bytes, s_bytes)
        }
    };
    let r_data = x.data().iter().zip(x_prime.data()).map(|(a, b)| a - b).collect();
    let r = Tensor::new(x.shape().to_vec(), r_data)?;
    let latent = bresnet_encode(enh, &r)?;
    let sent = binarize(&latent, BinarizeMode::Deterministic, 0, "enhancement")?;
    let n = sent.len();
    let (received, report, frame) = match channel {
        None => {
            let header = FrameHeader { latent_shape: sent.shape(), scheme: Scheme::Identity, binarizer_seed: 0 };
            (sent.clone(), ErrorReport::default(), frame_encode(&header, sent.bits())?)
        }
        Some(cfg) => {
            let spec = InterleaverSpec::new(scheme, n)?;
            let stream = interleave(sent.bits(), &spec)?;
            let (corrupted, report) = apply_channel_bits(&stream, cfg)?;
            let header = FrameHeader { latent_shape: sent.shape(), scheme, binarizer_seed: 0 };
            let frame = frame_encode(&header, &corrupted)?;
            (sent.with_bits(deinterleave(&corrupted, &spec)?)?, report, frame)
        }
    };
    let r_hat = bresnet_decode(enh, &received.to_tensor())?;
    let x_plain = clamp_sum(&x_prime, &r_hat)?;
    let x_hat = sumnet(enh, &x_prime, &r_hat)?;

    let x8 = denormalize(x)?;
    let hat8 = denormalize(&x_hat)?;
    let err = mse(&x8, &hat8)?;
    let ms = ms_ssim(&x8, &hat8, false)?;
    let ledger = bpp(sent.shape(), (arch.height, arch.width), Some(BaseLayerBytes { c_bytes: c_bytes.len(), s_bytes }))?;
    let metrics = MetricsRecord {
        image_id: tag.image_id.clone(),
        pe_train: enh.meta.pe_train,
        pe_test: channel.map_or(0.0, |c| c.pe),
        seed: tag.seed,
        psnr_db: psnr_from_mse(err),
        ssim: ssim(&x8, &hat8)?,
        ms_ssim: ms,
        ms_ssim_db: to_db_capped(ms),
        psnr_base_db: psnr(&x8, &denormalize(&x_prime)?)?,
        psnr_plain_sum_db: psnr(&x8, &denormalize(&x_plain)?)?,
        mse: err,
        bpp: ledger,
        latent_stats: latent_stats(&latent_plane(&sent), &latent_plane(&received), stats_tile(&sent))?,
        blocks_hit: report.blocks_hit,
        ones_flipped: report.ones_flipped,
    };
    Ok(Transmission { x_prime, r, latent, sent, received, r_hat, x_plain, x_hat, c_bytes, frame, report, metrics })
}

/// Latent statistics of the residual path and of the same codec fed the original image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureComparison {
    pub residual: LatentStats,
    pub original: LatentStats,
}

/// Encode both r and x with `enh` and compare latent statistics when the
/// original's interleaved stream is corrupted at exactly the positions the
/// channel swept on the residual's stream.
pub fn structure_comparison(
    x: &Tensor<f32>,
    s: Option<&Tensor<f32>>,
    base: Option<&ModelParams>,
    enh: &ModelParams,
    channel: &ChannelConfig,
    scheme: Scheme,
) -> Result<StructureComparison> {
    let tag = EvalTag { image_id: String::new(), seed: channel.seed };
    let t = transmit_image(x, s, base, enh, Some(channel), scheme, &tag)?;
    let latent = bresnet_encode(enh, x)?;
    let sent = binarize(&latent, BinarizeMode::Deterministic, 0, "original")?;
    let spec = InterleaverSpec::new(scheme, sent.len())?;
    let footprint = erasure_footprint(&interleave(t.sent.bits(), &spec)?, channel)?;
    let corrupted = apply_footprint(&interleave(sent.bits(), &spec)?, &footprint, channel.model)?;
    let received = sent.with_bits(deinterleave(&corrupted, &spec)?)?;
    let original = latent_stats(&latent_plane(&sent), &latent_plane(&received), stats_tile(&sent))?;
    Ok(StructureComparison { residual: t.metrics.latent_stats, original })
}

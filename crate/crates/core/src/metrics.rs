//! Image quality metrics, dB conversion, and latent-structure statistics.

use crate::binarizer::BppLedger;
use crate::error::{Error, Result};
use crate::imaging::Image8;

/// Reported for identical images so CSV values stay finite.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const DEFAULT_TILE: usize = 8;

fn same_dims(op: &'static str, a: &Image8, b: &Image8) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Image8, b: &Image8) -> Result<f64> {
    same_dims("mse", a, b)?;
    if a.data.is_empty() {
        return Err(Error::shape("mse", "empty image"));
    }
    let s: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(s / a.data.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &Image8, b: &Image8) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// -10 log10(1 - v), for similarity scores in [0,1).
pub fn to_db(v: f64) -> Result<f64> {
    if !(v < 1.0) {
        return Err(Error::domain("to_db", format!("value {} must be below 1", v)));
    }
    Ok(-10.0 * (1.0 - v).log10())
}

/// `to_db` with identical-image scores mapped to the PSNR cap.
pub fn to_db_capped(v: f64) -> f64 {
    to_db(v).map_or(PSNR_CAP_DB, |d| d.min(PSNR_CAP_DB))
}

fn gaussian(window: usize, sigma: f64) -> Vec<f64> {
    let mid = (window / 2) as f64;
    let g: Vec<f64> = (0..window).map(|i| (-(i as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a `h x w` plane.
fn blur(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ho, wo) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            tmp[y * wo + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..n).map(|i| k[i] * tmp[(y + i) * wo + x]).sum();
        }
    }
    (out, ho, wo)
}

/// Mean SSIM and mean contrast-structure term of two planes.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let k = gaussian(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 255.0).powi(2);
    let c2 = (SSIM_K2 * 255.0).powi(2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (mu_a, ..) = blur(a, h, w, &k);
    let (mu_b, ..) = blur(b, h, w, &k);
    let (e_aa, ..) = blur(&prod(a, a), h, w, &k);
    let (e_bb, ..) = blur(&prod(b, b), h, w, &k);
    let (e_ab, ..) = blur(&prod(a, b), h, w, &k);
    let n = mu_a.len() as f64;
    let (mut s, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let contrast = (2.0 * cov + c2) / (va + vb + c2);
        s += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * contrast;
        cs += contrast;
    }
    (s / n, cs / n)
}

fn planes(img: &Image8) -> Vec<Vec<f64>> {
    (0..img.channels).map(|c| img.plane(c).into_iter().map(f64::from).collect()).collect()
}

fn ssim_cs(a: &[Vec<f64>], b: &[Vec<f64>], h: usize, w: usize) -> (f64, f64) {
    let (mut s, mut cs) = (0.0, 0.0);
    for (pa, pb) in a.iter().zip(b) {
        let (si, ci) = ssim_plane(pa, pb, h, w);
        s += si;
        cs += ci;
    }
    (s / a.len() as f64, cs / a.len() as f64)
}

/// Gaussian-window SSIM averaged over channels, clamped to [0,1].
pub fn ssim(a: &Image8, b: &Image8) -> Result<f64> {
    same_dims("ssim", a, b)?;
    if a.height.min(a.width) < SSIM_WINDOW {
        return Err(Error::shape("ssim", format!("{}x{} is smaller than the {}-pixel window", a.height, a.width, SSIM_WINDOW)));
    }
    if a == b {
        return Ok(1.0);
    }
    let (s, _) = ssim_cs(&planes(a), &planes(b), a.height, a.width);
    Ok(s.clamp(0.0, 1.0))
}

fn halve(p: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let at = |dy: usize, dx: usize| p[(2 * y + dy) * w + 2 * x + dx];
            out[y * wo + x] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
        }
    }
    (out, ho, wo)
}

/// Number of MS-SSIM scales that fit an image of the given minimum side.
pub fn ms_ssim_scales(min_side: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len()).rev().find(|&m| min_side >> (m - 1) >= SSIM_WINDOW).unwrap_or(0)
}

/// Multi-scale SSIM with the standard weights. Small images use fewer scales
/// with renormalized weights, or fail when `strict`.
pub fn ms_ssim(a: &Image8, b: &Image8, strict: bool) -> Result<f64> {
    same_dims("ms_ssim", a, b)?;
    let min_side = a.height.min(a.width);
    let scales = ms_ssim_scales(min_side);
    if scales == 0 || (strict && scales < MS_SSIM_WEIGHTS.len()) {
        return Err(Error::shape(
            "ms_ssim",
            format!("{}x{} is too small for {} scales", a.height, a.width, MS_SSIM_WEIGHTS.len()),
        ));
    }
    if scales < MS_SSIM_WEIGHTS.len() {
        log::debug!("ms_ssim: {}x{} image, using {} scales", a.height, a.width, scales);
    }
    if a == b {
        return Ok(1.0);
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let (mut pa, mut pb) = (planes(a), planes(b));
    let (mut h, mut w) = (a.height, a.width);
    let mut value = 1.0;
    for (m, &wt) in weights.iter().enumerate() {
        let (s, cs) = ssim_cs(&pa, &pb, h, w);
        let term = if m + 1 == scales { s } else { cs };
        value *= term.max(0.0).powf(wt / wsum);
        if m + 1 < scales {
            let (mut na, mut nb) = (Vec::new(), Vec::new());
            let (mut nh, mut nw) = (0, 0);
            for (x, y) in pa.iter().zip(&pb) {
                let (hx, hh, ww) = halve(x, h, w);
                na.push(hx);
                nb.push(halve(y, h, w).0);
                (nh, nw) = (hh, ww);
            }
            (pa, pb, h, w) = (na, nb, nh, nw);
        }
    }
    Ok(value.clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentStats {
    pub ones_density_pre: f64,
    pub ones_density_post: f64,
    /// Pearson correlation of per-tile ones densities, pre vs post.
    pub local_density_correlation: f64,
    /// False when one density map is constant and the maps differ.
    pub correlation_defined: bool,
    /// Mean length of zero runs in raster order of the post image.
    pub mean_run_length_zero: f64,
}

fn tile_densities(img: &Image8, tile: usize) -> Vec<f64> {
    let (th, tw) = (img.height.div_ceil(tile), img.width.div_ceil(tile));
    let mut out = Vec::with_capacity(th * tw);
    for ty in 0..th {
        for tx in 0..tw {
            let (mut ones, mut n) = (0usize, 0usize);
            for y in ty * tile..((ty + 1) * tile).min(img.height) {
                for x in tx * tile..((tx + 1) * tile).min(img.width) {
                    ones += (img.data[y * img.width + x] == 255) as usize;
                    n += 1;
                }
            }
            out.push(ones as f64 / n as f64);
        }
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Structure statistics of an image-domain latent before and after the channel.
pub fn latent_stats(pre: &Image8, post: &Image8, tile: usize) -> Result<LatentStats> {
    same_dims("latent_stats", pre, post)?;
    if pre.channels != 1 {
        return Err(Error::shape("latent_stats", "expects single-channel byte images"));
    }
    if tile == 0 {
        return Err(Error::Config("tile must be >= 1".into()));
    }
    if let Some(v) = pre.data.iter().chain(&post.data).find(|&&v| v != 0 && v != 255) {
        return Err(Error::domain("latent_stats", format!("byte {} is not 0 or 255", v)));
    }
    let n = pre.data.len() as f64;
    let density = |img: &Image8| img.data.iter().filter(|&&v| v == 255).count() as f64 / n;
    let (tp, tq) = (tile_densities(pre, tile), tile_densities(post, tile));
    let (corr, defined) = if tp == tq {
        (1.0, true)
    } else {
        pearson(&tp, &tq).map_or((0.0, false), |c| (c, true))
    };
    let mut runs = Vec::new();
    let mut run = 0usize;
    for &v in &post.data {
        if v == 0 {
            run += 1;
        } else if run > 0 {
            runs.push(run);
            run = 0;
        }
    }
    if run > 0 {
        runs.push(run);
    }
    let mean_run = if runs.is_empty() { 0.0 } else { runs.iter().sum::<usize>() as f64 / runs.len() as f64 };
    Ok(LatentStats {
        ones_density_pre: density(pre),
        ones_density_post: density(post),
        local_density_correlation: corr,
        correlation_defined: defined,
        mean_run_length_zero: mean_run,
    })
}

/// One evaluation of one image at one operating point.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub image_id: String,
    pub pe_train: f64,
    pub pe_test: f64,
    pub seed: u64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub ms_ssim_db: f64,
    /// PSNR of the base-layer estimate x′ alone.
    pub psnr_base_db: f64,
    /// PSNR of the unrefined sum clamp(x′ + r̂).
    pub psnr_plain_sum_db: f64,
    pub mse: f64,
    pub bpp: BppLedger,
    pub latent_stats: LatentStats,
    pub blocks_hit: usize,
    pub ones_flipped: usize,
}

//! 8-bit images, PNM/PNG file IO, and the [-1,1] tensor normalization.

use std::path::Path;

use ds2c2_autodiff::Tensor;
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// Interleaved 8-bit image, row-major `[H][W][C]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image8 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "image",
                format!("{} bytes for {}x{}x{}", data.len(), channels, height, width),
            ));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn gray(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(1, height, width, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Value of channel `c` at `(y, x)`.
    pub fn at(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// One channel as a dense row-major plane.
    pub fn plane(&self, c: usize) -> Vec<u8> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }
}

/// byte 0 -> -1.0, byte 255 -> +1.0, as a `[C,H,W]` tensor.
pub fn normalize(img: &Image8) -> Tensor<f32> {
    let (c, h, w) = img.dims();
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        img.data[p * c + ch] as f32 / 127.5 - 1.0
    })
}

/// round((v+1)/2 * 255), clamped to [0,255].
pub fn denormalize_value(v: f32) -> u8 {
    ((v as f64 + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn denormalize(t: &Tensor<f32>) -> Result<Image8> {
    let [c, h, w] = t.shape()[..] else {
        return Err(Error::shape("denormalize", format!("expected [C,H,W], got {:?}", t.shape())));
    };
    let mut data = vec![0u8; c * h * w];
    for (i, &v) in t.data().iter().enumerate() {
        let (ch, p) = (i / (h * w), i % (h * w));
        data[p * c + ch] = denormalize_value(v);
    }
    Image8::new(c, h, w, data)
}

/// Read a P5/P6 (or PNG) file. 16-bit samples are reduced to 8 bits.
pub fn read_image(path: &Path) -> Result<Image8> {
    let img = image::open(path).map_err(|e| Error::Dataset(format!("{}: {}", path.display(), e)))?;
    Ok(match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            Image8 { channels: 1, height: g.height() as usize, width: g.width() as usize, data: g.into_raw() }
        }
        _ => {
            let rgb = img.to_rgb8();
            Image8 { channels: 3, height: rgb.height() as usize, width: rgb.width() as usize, data: rgb.into_raw() }
        }
    })
}

/// Write P5 (1 channel) or P6 (3 channels) binary PNM.
pub fn write_pnm(path: &Path, img: &Image8) -> Result<()> {
    let (w, h) = (img.width as u32, img.height as u32);
    let dynimg = match img.channels {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, img.data.clone()).expect("size checked")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, img.data.clone()).expect("size checked")),
        c => return Err(Error::shape("write_pnm", format!("{} channels; only 1 or 3 can be written", c))),
    };
    dynimg
        .save_with_format(path, ImageFormat::Pnm)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// Crop `[top, top+h) x [left, left+w)`.
pub fn crop(img: &Image8, top: usize, left: usize, h: usize, w: usize) -> Result<Image8> {
    if top + h > img.height || left + w > img.width {
        return Err(Error::shape(
            "crop",
            format!("{}x{} at ({},{}) exceeds {}x{}", h, w, top, left, img.height, img.width),
        ));
    }
    let c = img.channels;
    let mut data = Vec::with_capacity(c * h * w);
    for y in top..top + h {
        let row = (y * img.width + left) * c;
        data.extend_from_slice(&img.data[row..row + w * c]);
    }
    Image8::new(c, h, w, data)
}

/// Replicate a single channel to three.
pub fn to_rgb(img: &Image8) -> Image8 {
    if img.channels == 3 {
        return img.clone();
    }
    let data = img.data.iter().flat_map(|&v| [v, v, v]).collect();
    Image8 { channels: 3, height: img.height, width: img.width, data }
}

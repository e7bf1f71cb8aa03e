//! Architecture descriptions and the layer plans they expand to.

use crate::error::{Error, Result};
use crate::nn::plan::{Activation, Layer, LayerPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodecSource {
    /// Codes r = x - x′ against a frozen base layer.
    Residual,
    /// Codes x itself; the receiver has no base layer.
    Direct,
}

/// BResNet encoder/decoder plus SumNet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecArch {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Widths of the first two encoder convs; the decoder mirrors them.
    pub widths: [usize; 2],
    pub latent_channels: usize,
    pub sumnet_width: usize,
    pub sumnet_blocks: usize,
    pub source: CodecSource,
}

impl Default for CodecArch {
    fn default() -> Self {
        Self {
            channels: 3,
            height: 32,
            width: 32,
            widths: [32, 64],
            latent_channels: 4,
            sumnet_width: 16,
            sumnet_blocks: 3,
            source: CodecSource::Residual,
        }
    }
}

impl CodecArch {
    /// Spatial reduction of the encoder (three stride-2 convs).
    pub const DOWNSAMPLE: usize = 8;

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % Self::DOWNSAMPLE != 0 || self.width % Self::DOWNSAMPLE != 0 {
            return Err(Error::Config(format!(
                "codec input {}x{} must be a positive multiple of {}",
                self.height,
                self.width,
                Self::DOWNSAMPLE
            )));
        }
        if self.channels == 0 || self.latent_channels == 0 || self.widths.contains(&0) || self.sumnet_width == 0 {
            return Err(Error::Config("codec widths and channel counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [self.latent_channels, self.height / Self::DOWNSAMPLE, self.width / Self::DOWNSAMPLE]
    }

    pub fn encoder_plan(&self) -> LayerPlan {
        let [w1, w2] = self.widths;
        LayerPlan {
            in_channels: self.channels,
            layers: vec![
                Layer::conv(self.channels, w1, 5, 2, 2),
                Layer::Gdn { ch: w1 },
                Layer::conv(w1, w2, 5, 2, 2),
                Layer::Gdn { ch: w2 },
                Layer::ResBlock { ch: w2, k: 3 },
                Layer::conv(w2, self.latent_channels, 5, 2, 2),
                Layer::Act(Activation::Tanh),
            ],
        }
    }

    pub fn decoder_plan(&self) -> LayerPlan {
        let [w1, w2] = self.widths;
        LayerPlan {
            in_channels: self.latent_channels,
            layers: vec![
                Layer::conv(self.latent_channels, w2 * 4, 3, 1, 1),
                Layer::PixelShuffle { factor: 2 },
                Layer::Igdn { ch: w2 },
                Layer::ResBlock { ch: w2, k: 3 },
                Layer::conv(w2, w1 * 4, 3, 1, 1),
                Layer::PixelShuffle { factor: 2 },
                Layer::Igdn { ch: w1 },
                Layer::conv(w1, self.channels * 4, 3, 1, 1),
                Layer::PixelShuffle { factor: 2 },
            ],
        }
    }

    pub fn sumnet_plan(&self) -> LayerPlan {
        let w = self.sumnet_width;
        let mut layers = vec![Layer::conv(2 * self.channels, w, 3, 1, 1), Layer::Act(Activation::LeakyRelu)];
        layers.extend((0..self.sumnet_blocks).map(|_| Layer::ResBlock { ch: w, k: 3 }));
        layers.push(Layer::zero_conv(w, self.channels));
        LayerPlan { in_channels: 2 * self.channels, layers }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompMode {
    /// Average-pool down, bilinear up.
    Fixed,
    /// Fixed path plus zero-initialized learned corrections on both sides.
    Learned,
}

/// CompNet + recursive FineNet generator and its multi-scale discriminators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BaseArch {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub factor: usize,
    pub comp: CompMode,
    pub comp_width: usize,
    pub fine_width: usize,
    /// Refinement steps J.
    pub steps: usize,
    pub disc_width: usize,
    /// Discriminator scales I (full, 1/2, 1/4, ...).
    pub disc_scales: usize,
    /// Whether a single-channel label map conditions FineNet and DiscNet.
    pub semantic: bool,
}

impl Default for BaseArch {
    fn default() -> Self {
        Self {
            channels: 3,
            height: 32,
            width: 32,
            factor: 4,
            comp: CompMode::Learned,
            comp_width: 16,
            fine_width: 16,
            steps: 2,
            disc_width: 16,
            disc_scales: 3,
            semantic: false,
        }
    }
}

impl BaseArch {
    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 || self.height % self.factor != 0 || self.width % self.factor != 0 {
            return Err(Error::Config(format!(
                "base input {}x{} is not divisible by factor {}",
                self.height, self.width, self.factor
            )));
        }
        if self.steps == 0 || self.disc_scales == 0 {
            return Err(Error::Config("steps and disc_scales must be >= 1".into()));
        }
        let coarsest = 1usize << (self.disc_scales - 1);
        if self.height % coarsest != 0 || self.width % coarsest != 0 {
            return Err(Error::Config(format!(
                "base input {}x{} cannot be pooled {} times",
                self.height,
                self.width,
                self.disc_scales - 1
            )));
        }
        if self.channels == 0 || self.comp_width == 0 || self.fine_width == 0 || self.disc_width == 0 {
            return Err(Error::Config("base widths and channel counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn coarse_shape(&self) -> [usize; 3] {
        [self.channels, self.height / self.factor, self.width / self.factor]
    }

    fn semantic_channels(&self) -> usize {
        self.semantic as usize
    }

    pub fn comp_plan(&self) -> LayerPlan {
        LayerPlan {
            in_channels: self.channels,
            layers: vec![
                Layer::conv(self.channels, self.comp_width, 3, 1, 1),
                Layer::Act(Activation::LeakyRelu),
                Layer::zero_conv(self.comp_width, self.channels),
            ],
        }
    }

    pub fn fine_plan(&self) -> LayerPlan {
        let w = self.fine_width;
        let inc = self.channels + self.semantic_channels();
        LayerPlan {
            in_channels: inc,
            layers: vec![
                Layer::conv(inc, w, 3, 1, 1),
                Layer::Act(Activation::LeakyRelu),
                Layer::conv(w, w, 3, 1, 1),
                Layer::Act(Activation::LeakyRelu),
                Layer::zero_conv(w, self.channels),
            ],
        }
    }

    pub fn disc_plan(&self) -> LayerPlan {
        let w = self.disc_width;
        let inc = 2 * self.channels + self.semantic_channels();
        LayerPlan {
            in_channels: inc,
            layers: vec![
                Layer::conv(inc, w, 3, 2, 1),
                Layer::Act(Activation::LeakyRelu),
                Layer::conv(w, 2 * w, 3, 2, 1),
                Layer::Act(Activation::LeakyRelu),
                Layer::conv(2 * w, 1, 3, 2, 1),
            ],
        }
    }

    /// Every (prefix, plan) pair of the generator.
    pub fn generator_plans(&self) -> Vec<(String, LayerPlan)> {
        let mut out = Vec::new();
        if self.comp == CompMode::Learned {
            out.push(("comp.enc".to_string(), self.comp_plan()));
            out.push(("comp.dec".to_string(), self.comp_plan()));
        }
        out.extend((0..self.steps).map(|j| (format!("fine.{}", j), self.fine_plan())));
        out
    }

    pub fn discriminator_plans(&self) -> Vec<(String, LayerPlan)> {
        let mut out = Vec::new();
        for j in 0..self.steps {
            for i in 0..self.disc_scales {
                out.push((format!("disc.{}.{}", j, i), self.disc_plan()));
            }
        }
        out
    }
}

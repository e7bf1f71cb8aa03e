//! Model parameters, metadata, and the checkpoint file format.

use std::collections::BTreeMap;
use std::path::Path;

use ds2c2_autodiff::{Tensor, BETA_MIN};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::nn::arch::{BaseArch, CodecArch, CodecSource, CompMode};
use crate::nn::plan::LayerPlan;
use crate::seeds;

pub const CHECKPOINT_MAGIC: &[u8; 11] = b"DS2C-PARAMS";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checksum mismatch (file truncated or corrupted)")]
    Checksum,
    #[error("unknown checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("incompatible model: {0}")]
    Incompatible(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Base(BaseArch),
    Codec(CodecArch),
}

impl Arch {
    pub fn plans(&self) -> Vec<(String, LayerPlan)> {
        match self {
            Arch::Base(a) => {
                let mut p = a.generator_plans();
                p.extend(a.discriminator_plans());
                p
            }
            Arch::Codec(a) => vec![
                ("enc".to_string(), a.encoder_plan()),
                ("dec".to_string(), a.decoder_plan()),
                ("sum".to_string(), a.sumnet_plan()),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Arch::Base(a) => a.validate(),
            Arch::Codec(a) => a.validate(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelMeta {
    pub arch: Arch,
    pub seed: u64,
    pub pe_train: f64,
    pub epochs: usize,
    pub train_images: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub meta: ModelMeta,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl ModelParams {
    /// Freshly initialized parameters for `arch`, drawn from `seed`.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seeds::rng(seeds::derive_seed(seed, "init"));
        let mut tensors = BTreeMap::new();
        for (prefix, plan) in arch.plans() {
            plan.out_channels()?;
            plan.init(&prefix, &mut rng, &mut tensors);
        }
        Ok(Self { meta: ModelMeta { arch, seed, pe_train: 0.0, epochs: 0, train_images: 0 }, tensors })
    }

    pub fn codec(&self) -> Result<&CodecArch> {
        match &self.meta.arch {
            Arch::Codec(a) => Ok(a),
            Arch::Base(_) => Err(CheckpointError::Incompatible("expected an enhancement codec, found a base model".into()).into()),
        }
    }

    pub fn base(&self) -> Result<&BaseArch> {
        match &self.meta.arch {
            Arch::Base(a) => Ok(a),
            Arch::Codec(_) => Err(CheckpointError::Incompatible("expected a base model, found an enhancement codec".into()).into()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Check that every tensor the architecture needs is present with the right shape.
    pub fn check_layout(&self) -> Result<()> {
        let mut expected = 0;
        for (prefix, plan) in self.meta.arch.plans() {
            for (name, shape) in plan.param_shapes(&prefix) {
                expected += 1;
                match self.tensors.get(&name) {
                    None => return Err(CheckpointError::MissingParam(name).into()),
                    Some(t) if t.shape() != shape.as_slice() => {
                        return Err(CheckpointError::Incompatible(format!(
                            "{} has shape {:?}, architecture needs {:?}",
                            name,
                            t.shape(),
                            shape
                        ))
                        .into())
                    }
                    Some(_) => {}
                }
            }
        }
        if expected != self.tensors.len() {
            return Err(CheckpointError::Incompatible(format!(
                "{} tensors stored, architecture declares {}",
                self.tensors.len(),
                expected
            ))
            .into());
        }
        Ok(())
    }

    /// Tensors converted to another precision.
    pub fn cast<T: ds2c2_autodiff::Real>(&self) -> BTreeMap<String, Tensor<T>> {
        self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta: String = meta_to_kv(&self.meta).into_iter().map(|(k, v)| format!("{}={}\n", k, v)).collect();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
            return Err(CheckpointError::Checksum.into());
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
            return Err(CheckpointError::Checksum.into());
        }
        let mut r = Reader { buf: body, pos: CHECKPOINT_MAGIC.len() };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version).into());
        }
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?).map_err(|e| malformed(format!("metadata: {}", e)))?;
        let mut kv = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| malformed(format!("metadata line {:?}", line)))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let meta = meta_from_kv(&kv)?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| malformed(format!("tensor name: {}", e)))?.to_string();
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(malformed(format!("{}: unknown dtype {}", name, dtype)));
            }
            let rank = r.take(1)?[0] as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != body.len() {
            return Err(malformed(format!("{} trailing bytes", body.len() - r.pos)));
        }
        let params = Self { meta, tensors };
        params.check_layout()?;
        Ok(params)
    }
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, params.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelParams::from_bytes(&bytes)
}

/// Keep GDN parameters inside their domain after an optimizer step.
pub fn project_gdn(tensors: &mut BTreeMap<String, Tensor<f32>>) {
    for (name, t) in tensors.iter_mut() {
        let floor = if name.ends_with(".beta") {
            BETA_MIN as f32
        } else if name.ends_with(".gamma") {
            0.0
        } else {
            continue;
        };
        t.data_mut().iter_mut().for_each(|v| *v = v.max(floor));
    }
}

fn malformed(msg: String) -> Error {
    CheckpointError::Malformed(msg).into()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(malformed("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn dims(d: [usize; 3]) -> String {
    format!("{}x{}x{}", d[0], d[1], d[2])
}

fn meta_to_kv(meta: &ModelMeta) -> Vec<(String, String)> {
    let mut kv: Vec<(&str, String)> = Vec::new();
    match &meta.arch {
        Arch::Codec(a) => {
            kv.push(("kind", "enhancement".into()));
            kv.push(("source", if a.source == CodecSource::Residual { "residual" } else { "direct" }.into()));
            kv.push(("input_shape", dims(a.input_shape())));
            kv.push(("latent_shape", dims(a.latent_shape())));
            kv.push(("widths", format!("{},{}", a.widths[0], a.widths[1])));
            kv.push(("sumnet_width", a.sumnet_width.to_string()));
            kv.push(("sumnet_blocks", a.sumnet_blocks.to_string()));
        }
        Arch::Base(a) => {
            kv.push(("kind", "base".into()));
            kv.push(("input_shape", dims(a.input_shape())));
            kv.push(("coarse_shape", dims(a.coarse_shape())));
            kv.push(("factor", a.factor.to_string()));
            kv.push(("comp", if a.comp == CompMode::Fixed { "fixed" } else { "learned" }.into()));
            kv.push(("comp_width", a.comp_width.to_string()));
            kv.push(("fine_width", a.fine_width.to_string()));
            kv.push(("steps", a.steps.to_string()));
            kv.push(("disc_width", a.disc_width.to_string()));
            kv.push(("disc_scales", a.disc_scales.to_string()));
            kv.push(("semantic", a.semantic.to_string()));
        }
    }
    kv.push(("seed", meta.seed.to_string()));
    kv.push(("pe_train", meta.pe_train.to_string()));
    kv.push(("epochs", meta.epochs.to_string()));
    kv.push(("train_images", meta.train_images.to_string()));
    kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn meta_from_kv(kv: &BTreeMap<String, String>) -> Result<ModelMeta> {
    let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| malformed(format!("metadata key {} missing", k)));
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| malformed(format!("metadata {}={} is not a number", k, v)))
    }
    let n = |k: &str| -> Result<usize> { num(k, get(k)?) };
    let shape = |k: &str| -> Result<[usize; 3]> {
        let v = get(k)?;
        let parts: Vec<usize> = v.split('x').map(|p| num(k, p)).collect::<Result<_>>()?;
        parts.try_into().map_err(|_| malformed(format!("{}={} is not CxHxW", k, v)))
    };
    let [channels, height, width] = shape("input_shape")?;
    let arch = match get("kind")? {
        "enhancement" => {
            let w = get("widths")?;
            let (a, b) = w.split_once(',').ok_or_else(|| malformed(format!("widths={}", w)))?;
            let source = match get("source")? {
                "residual" => CodecSource::Residual,
                "direct" => CodecSource::Direct,
                other => return Err(malformed(format!("source={}", other))),
            };
            let arch = CodecArch {
                channels,
                height,
                width,
                widths: [num("widths", a)?, num("widths", b)?],
                latent_channels: shape("latent_shape")?[0],
                sumnet_width: n("sumnet_width")?,
                sumnet_blocks: n("sumnet_blocks")?,
                source,
            };
            if arch.latent_shape() != shape("latent_shape")? {
                return Err(malformed("latent_shape disagrees with input_shape".into()));
            }
            Arch::Codec(arch)
        }
        "base" => Arch::Base(BaseArch {
            channels,
            height,
            width,
            factor: n("factor")?,
            comp: match get("comp")? {
                "fixed" => CompMode::Fixed,
                "learned" => CompMode::Learned,
                other => return Err(malformed(format!("comp={}", other))),
            },
            comp_width: n("comp_width")?,
            fine_width: n("fine_width")?,
            steps: n("steps")?,
            disc_width: n("disc_width")?,
            disc_scales: n("disc_scales")?,
            semantic: num("semantic", get("semantic")?)?,
        }),
        other => return Err(malformed(format!("kind={}", other))),
    };
    arch.validate()?;
    let pe_train: f64 = num("pe_train", get("pe_train")?)?;
    if !(0.0..=100.0).contains(&pe_train) {
        return Err(malformed(format!("pe_train={} outside [0,100]", pe_train)));
    }
    Ok(ModelMeta { arch, seed: num("seed", get("seed")?)?, pe_train, epochs: n("epochs")?, train_images: n("train_images")? })
}

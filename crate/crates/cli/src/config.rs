//! Sectioned `key = value` run configuration.
//!
//! Every key has a default taken from the library's own defaults, so an empty
//! file is a complete configuration. Values are type-checked when set; the
//! typed getters below therefore never fail.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ds2c2::link::ChannelModel;
use ds2c2::nn::{BaseArch, CodecArch, CodecSource, CompMode};
use ds2c2::pipeline::{DatasetOptions, InterleaverKind, TrainConfig};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Count,
    Seed,
    Real,
    Flag,
    Text,
    Path,
    Choice(&'static [&'static str]),
    Counts,
    Reals,
    Seeds,
    Paths,
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Count => "integer".into(),
            Kind::Seed => "u64".into(),
            Kind::Real => "number".into(),
            Kind::Flag => "true|false".into(),
            Kind::Text => "text".into(),
            Kind::Path => "path".into(),
            Kind::Choice(c) => c.join("|"),
            Kind::Counts => "comma-separated integers".into(),
            Kind::Reals => "comma-separated numbers".into(),
            Kind::Seeds => "comma-separated u64".into(),
            Kind::Paths => "comma-separated paths".into(),
        }
    }

    fn check(&self, v: &str) -> Result<(), String> {
        fn list<T: std::str::FromStr>(v: &str) -> Result<(), String> {
            for item in split(v) {
                item.parse::<T>().map_err(|_| format!("cannot parse {:?}", item))?;
            }
            Ok(())
        }
        match self {
            Kind::Count => v.parse::<usize>().map(drop).map_err(|_| format!("expected an integer, got {:?}", v)),
            Kind::Seed => v.parse::<u64>().map(drop).map_err(|_| format!("expected a u64, got {:?}", v)),
            Kind::Real => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(()),
                _ => Err(format!("expected a finite number, got {:?}", v)),
            },
            Kind::Flag => v.parse::<bool>().map(drop).map_err(|_| format!("expected true or false, got {:?}", v)),
            Kind::Text | Kind::Path | Kind::Paths => Ok(()),
            Kind::Choice(c) if c.contains(&v) => Ok(()),
            Kind::Choice(c) => Err(format!("expected one of {}, got {:?}", c.join("|"), v)),
            Kind::Counts => list::<usize>(v),
            Kind::Reals => list::<f64>(v),
            Kind::Seeds => list::<u64>(v),
        }
    }
}

fn split(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

pub struct KeySpec {
    pub section: &'static str,
    pub name: &'static str,
    pub kind: Kind,
    pub help: &'static str,
}

const fn key(section: &'static str, name: &'static str, kind: Kind, help: &'static str) -> KeySpec {
    KeySpec { section, name, kind, help }
}

const CHANNELS: &[&str] = &["bbec", "bbsc"];
const INTERLEAVERS: &[&str] = &["none", "stride", "permutation"];

pub const KEYS: &[KeySpec] = &[
    key("run", "seed", Kind::Seed, "root seed; every random stream is derived from it"),
    key("run", "jobs", Kind::Count, "worker threads for evaluation"),
    key("run", "out_dir", Kind::Path, "directory receiving every output"),
    key("run", "strict", Kind::Flag, "fail when the model map does not cover the sweep grid"),
    key("data", "dir", Kind::Path, "image directory (P5/P6/PNG; optional <name>_label files)"),
    key("data", "name", Kind::Text, "dataset label written to CSV rows"),
    key("data", "crop", Kind::Count, "crop side in pixels, a multiple of 8"),
    key("data", "test_fraction", Kind::Real, "share of images held out for testing"),
    key("data", "train_crops_per_image", Kind::Count, "random training crops drawn per image"),
    key("data", "test_grid", Kind::Flag, "tile each test image instead of one centre crop"),
    key("base", "factor", Kind::Count, "downsampling factor of the coarse image"),
    key("base", "comp", Kind::Choice(&["learned", "fixed"]), "coarse compressor"),
    key("base", "comp_width", Kind::Count, "channels inside the learned compressor"),
    key("base", "fine_width", Kind::Count, "channels inside each refinement network"),
    key("base", "disc_width", Kind::Count, "channels inside each discriminator"),
    key("base", "semantic", Kind::Flag, "condition refinement on label maps"),
    key("codec", "widths", Kind::Counts, "encoder conv widths (two values); the decoder mirrors them"),
    key("codec", "latent_channels", Kind::Count, "latent channels; sets the enhancement rate"),
    key("codec", "sumnet_width", Kind::Count, "channels inside the fusion network"),
    key("codec", "sumnet_blocks", Kind::Count, "residual blocks in the fusion network"),
    key("codec", "source", Kind::Choice(&["residual", "direct"]), "code the residual or the image itself"),
    key("train", "flat_epochs", Kind::Count, "epochs at the base learning rate"),
    key("train", "decay_epochs", Kind::Count, "epochs of linear learning-rate decay"),
    key("train", "batch_size", Kind::Count, "samples per batch"),
    key("train", "learning_rate", Kind::Real, "base learning rate"),
    key("train", "pe_train", Kind::Real, "channel error percentage during training"),
    key("train", "pe_jitter", Kind::Flag, "draw each batch's error rate from [0, pe_train]"),
    key("train", "channel_enabled", Kind::Flag, "push latents through the channel while training"),
    key("train", "rgan_steps", Kind::Count, "refinement steps of the base layer"),
    key("train", "disc_scales", Kind::Count, "scales per discriminator"),
    key("train", "w_l1", Kind::Real, "weight of the L1 term"),
    key("train", "w_ssim", Kind::Real, "weight of the 1 - SSIM term"),
    key("train", "w_feat", Kind::Real, "weight of the feature distance"),
    key("train", "w_adv", Kind::Real, "weight of the adversarial term"),
    key("train", "subset_size", Kind::Count, "training crops kept by retrain"),
    key("channel", "model", Kind::Choice(CHANNELS), "block erasure (bbec) or block inversion (bbsc)"),
    key("channel", "pe", Kind::Real, "channel error percentage for transmit and stats"),
    key("channel", "block_bytes", Kind::Count, "channel block size in bytes"),
    key("channel", "interleaver", Kind::Choice(INTERLEAVERS), "interleaver family"),
    key("sweep", "latent_channels", Kind::Counts, "codec latent sizes to evaluate"),
    key("sweep", "pe_train", Kind::Reals, "training error rates to evaluate"),
    key("sweep", "pe_test", Kind::Reals, "channel error rates to evaluate"),
    key("sweep", "seeds", Kind::Seeds, "channel seeds"),
    key("models", "base", Kind::Path, "base-layer checkpoint"),
    key("models", "codec", Kind::Path, "codec checkpoint for transmit, decode and stats"),
    key("models", "codecs", Kind::Paths, "codec checkpoints available to sweep"),
    key("io", "image", Kind::Path, "input image for transmit (centre-cropped to the codec size)"),
    key("io", "frame", Kind::Path, "frame file for decode"),
];

fn spec(full: &str) -> Option<&'static KeySpec> {
    let (section, name) = full.split_once('.')?;
    KEYS.iter().find(|k| k.section == section && k.name == name)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn defaults() -> BTreeMap<&'static str, String> {
    let t = TrainConfig::default();
    let d = DatasetOptions::default();
    let b = BaseArch::default();
    let c = CodecArch::default();
    let pairs: Vec<(&str, String)> = vec![
        ("run.seed", "0".into()),
        ("run.jobs", "1".into()),
        ("run.out_dir", "out".into()),
        ("run.strict", "false".into()),
        ("data.dir", String::new()),
        ("data.name", "desk".into()),
        ("data.crop", d.crop.to_string()),
        ("data.test_fraction", d.test_fraction.to_string()),
        ("data.train_crops_per_image", d.train_crops_per_image.to_string()),
        ("data.test_grid", d.test_grid.to_string()),
        ("base.factor", b.factor.to_string()),
        ("base.comp", "learned".into()),
        ("base.comp_width", b.comp_width.to_string()),
        ("base.fine_width", b.fine_width.to_string()),
        ("base.disc_width", b.disc_width.to_string()),
        ("base.semantic", b.semantic.to_string()),
        ("codec.widths", join(&c.widths)),
        ("codec.latent_channels", c.latent_channels.to_string()),
        ("codec.sumnet_width", c.sumnet_width.to_string()),
        ("codec.sumnet_blocks", c.sumnet_blocks.to_string()),
        ("codec.source", "residual".into()),
        ("train.flat_epochs", t.flat_epochs.to_string()),
        ("train.decay_epochs", t.decay_epochs.to_string()),
        ("train.batch_size", t.batch_size.to_string()),
        ("train.learning_rate", t.learning_rate.to_string()),
        ("train.pe_train", t.pe_train.to_string()),
        ("train.pe_jitter", t.pe_jitter.to_string()),
        ("train.channel_enabled", t.channel_enabled.to_string()),
        ("train.rgan_steps", t.rgan_steps.to_string()),
        ("train.disc_scales", t.disc_scales.to_string()),
        ("train.w_l1", t.weights.w_l1.to_string()),
        ("train.w_ssim", t.weights.w_ssim.to_string()),
        ("train.w_feat", t.weights.w_feat.to_string()),
        ("train.w_adv", t.weights.w_adv.to_string()),
        ("train.subset_size", "16".into()),
        ("channel.model", "bbec".into()),
        ("channel.pe", "0".into()),
        ("channel.block_bytes", t.block_bytes.to_string()),
        ("channel.interleaver", "stride".into()),
        ("sweep.latent_channels", c.latent_channels.to_string()),
        ("sweep.pe_train", "0".into()),
        ("sweep.pe_test", "0,16".into()),
        ("sweep.seeds", "0".into()),
        ("models.base", String::new()),
        ("models.codec", String::new()),
        ("models.codecs", String::new()),
        ("io.image", String::new()),
        ("io.frame", String::new()),
    ];
    pairs.into_iter().collect()
}

/// Help text listing every key with its type and default.
pub fn keys_help() -> String {
    let defaults = defaults();
    let mut out = String::from("Configuration keys (file sections, or --set section.key=value):\n");
    let mut section = "";
    for k in KEYS {
        if k.section != section {
            section = k.section;
            out.push_str(&format!("\n  [{}]\n", section));
        }
        let full = format!("{}.{}", k.section, k.name);
        out.push_str(&format!("    {:<24} {} ({}; default {:?})\n", k.name, k.help, k.kind.describe(), defaults[full.as_str()]));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: defaults() }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| CliError::Config(format!("config syntax: {}", e)))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            for (name, value) in props.iter() {
                let full = match section {
                    Some(s) => format!("{}.{}", s, name),
                    None => return Err(CliError::Config(format!("key {:?} appears outside any section", name))),
                };
                cfg.set(&full, value)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("--config {}: {}", path.display(), e)))?;
        Self::parse(&text)
    }

    /// Set `section.key`, rejecting unknown keys and ill-typed values.
    pub fn set(&mut self, full: &str, value: &str) -> Result<(), CliError> {
        let k = spec(full).ok_or_else(|| CliError::Config(format!("unknown key {:?}", full)))?;
        let value = value.trim();
        k.kind.check(value).map_err(|e| CliError::Config(format!("{}: {}", full, e)))?;
        let slot = self.values.get_mut(full).expect("every key has a default");
        *slot = value.to_string();
        Ok(())
    }

    /// Apply a `section.key=value` override.
    pub fn apply(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects section.key=value, got {:?}", assignment)))?;
        self.set(k.trim(), v)
    }

    /// Every key, grouped by section in declaration order.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for k in KEYS {
            if k.section != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = k.section;
                out.push_str(&format!("[{}]\n", section));
            }
            out.push_str(&format!("{} = {}\n", k.name, self.raw(&format!("{}.{}", k.section, k.name))));
        }
        out
    }

    pub fn raw(&self, full: &str) -> &str {
        self.values.get(full).unwrap_or_else(|| panic!("no such key {}", full))
    }

    fn parsed<T: std::str::FromStr>(&self, full: &str) -> T {
        self.raw(full).parse().unwrap_or_else(|_| panic!("{} was validated on set", full))
    }

    pub fn count(&self, full: &str) -> usize {
        self.parsed(full)
    }

    pub fn seed(&self, full: &str) -> u64 {
        self.parsed(full)
    }

    pub fn real(&self, full: &str) -> f64 {
        self.parsed(full)
    }

    pub fn flag(&self, full: &str) -> bool {
        self.parsed(full)
    }

    pub fn list<T: std::str::FromStr>(&self, full: &str) -> Vec<T> {
        split(self.raw(full)).map(|s| s.parse().unwrap_or_else(|_| panic!("{} was validated on set", full))).collect()
    }

    /// A path key that must be set and must exist.
    pub fn existing_path(&self, full: &str) -> Result<PathBuf, CliError> {
        let raw = self.raw(full);
        if raw.is_empty() {
            return Err(CliError::Config(format!("{} is required", full)));
        }
        let p = PathBuf::from(raw);
        if !p.exists() {
            return Err(CliError::Config(format!("{}: {} does not exist", full, p.display())));
        }
        Ok(p)
    }

    pub fn optional_path(&self, full: &str) -> Result<Option<PathBuf>, CliError> {
        if self.raw(full).is_empty() {
            return Ok(None);
        }
        self.existing_path(full).map(Some)
    }

    pub fn existing_paths(&self, full: &str) -> Result<Vec<PathBuf>, CliError> {
        let paths: Vec<PathBuf> = split(self.raw(full)).map(PathBuf::from).collect();
        if paths.is_empty() {
            return Err(CliError::Config(format!("{} is required", full)));
        }
        if let Some(p) = paths.iter().find(|p| !p.exists()) {
            return Err(CliError::Config(format!("{}: {} does not exist", full, p.display())));
        }
        Ok(paths)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("run.out_dir"))
    }

    pub fn dataset_options(&self) -> DatasetOptions {
        DatasetOptions {
            crop: self.count("data.crop"),
            seed: self.seed("run.seed"),
            test_fraction: self.real("data.test_fraction"),
            train_crops_per_image: self.count("data.train_crops_per_image"),
            test_grid: self.flag("data.test_grid"),
        }
    }

    pub fn base_arch(&self) -> BaseArch {
        let crop = self.count("data.crop");
        BaseArch {
            height: crop,
            width: crop,
            factor: self.count("base.factor"),
            comp: if self.raw("base.comp") == "fixed" { CompMode::Fixed } else { CompMode::Learned },
            comp_width: self.count("base.comp_width"),
            fine_width: self.count("base.fine_width"),
            steps: self.count("train.rgan_steps"),
            disc_width: self.count("base.disc_width"),
            disc_scales: self.count("train.disc_scales"),
            semantic: self.flag("base.semantic"),
            ..Default::default()
        }
    }

    pub fn codec_arch(&self) -> Result<CodecArch, CliError> {
        let crop = self.count("data.crop");
        let widths: Vec<usize> = self.list("codec.widths");
        let [w0, w1] = widths[..] else {
            return Err(CliError::Config(format!("codec.widths needs exactly two values, got {}", widths.len())));
        };
        Ok(CodecArch {
            height: crop,
            width: crop,
            widths: [w0, w1],
            latent_channels: self.count("codec.latent_channels"),
            sumnet_width: self.count("codec.sumnet_width"),
            sumnet_blocks: self.count("codec.sumnet_blocks"),
            source: if self.raw("codec.source") == "direct" { CodecSource::Direct } else { CodecSource::Residual },
            ..Default::default()
        })
    }

    pub fn channel_model(&self) -> ChannelModel {
        if self.raw("channel.model") == "bbsc" {
            ChannelModel::Bbsc
        } else {
            ChannelModel::Bbec
        }
    }

    pub fn interleaver(&self) -> InterleaverKind {
        match self.raw("channel.interleaver") {
            "none" => InterleaverKind::None,
            "permutation" => InterleaverKind::Permutation,
            _ => InterleaverKind::Stride,
        }
    }

    pub fn train_config(&self, stage: ds2c2::pipeline::Stage) -> TrainConfig {
        let mut t = TrainConfig {
            stage,
            flat_epochs: self.count("train.flat_epochs"),
            decay_epochs: self.count("train.decay_epochs"),
            batch_size: self.count("train.batch_size"),
            learning_rate: self.real("train.learning_rate"),
            pe_train: self.real("train.pe_train"),
            pe_jitter: self.flag("train.pe_jitter"),
            channel_enabled: self.flag("train.channel_enabled"),
            channel_model: self.channel_model(),
            block_bytes: self.count("channel.block_bytes"),
            interleaver: self.interleaver(),
            rgan_steps: self.count("train.rgan_steps"),
            disc_scales: self.count("train.disc_scales"),
            seed: self.seed("run.seed"),
            ..Default::default()
        };
        t.weights.w_l1 = self.real("train.w_l1");
        t.weights.w_ssim = self.real("train.w_ssim");
        t.weights.w_feat = self.real("train.w_feat");
        t.weights.w_adv = self.real("train.w_adv");
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_key() {
        let d = defaults();
        assert_eq!(d.len(), KEYS.len());
        for k in KEYS {
            let full = format!("{}.{}", k.section, k.name);
            let v = &d[full.as_str()];
            assert!(k.kind.check(v).is_ok(), "{} default {:?}", full, v);
        }
    }

    #[test]
    fn emit_parse_fixpoint() {
        let mut c = RunConfig::default();
        c.apply("sweep.pe_test=0, 8,16").unwrap();
        c.apply("data.dir = /tmp/some where").unwrap();
        let once = RunConfig::parse(&c.emit()).unwrap();
        assert_eq!(once, c);
        assert_eq!(RunConfig::parse(&once.emit()).unwrap().emit(), once.emit());
    }

    #[test]
    fn unknown_and_bad_values_are_rejected() {
        assert!(RunConfig::parse("[train]\nepochz = 3\n").unwrap_err().to_string().contains("train.epochz"));
        assert!(RunConfig::parse("[channel]\nmodel = awgn\n").unwrap_err().to_string().contains("channel.model"));
        assert!(RunConfig::parse("seed = 3\n").is_err());
        assert!(RunConfig::default().apply("train.pe_train").is_err());
        assert!(RunConfig::default().apply("train.learning_rate=nan").is_err());
    }

    #[test]
    fn help_names_every_key() {
        let h = keys_help();
        for k in KEYS {
            assert!(h.contains(k.name), "{}", k.name);
        }
    }
}

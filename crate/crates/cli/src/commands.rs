use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ds2c2::autodiff::Tensor;
use ds2c2::binarizer::{BinarizeMode, LatentBits, Provenance};
use ds2c2::imaging::{crop, denormalize, normalize, read_image, to_rgb, write_pnm};
use ds2c2::link::{deinterleave, frame_decode, ChannelConfig, InterleaverSpec};
use ds2c2::metrics::LatentStats;
use ds2c2::nn::{bresnet_decode, CodecArch, load_params, save_params, sumnet, synthesize, CodecSource, ModelParams};
use ds2c2::pipeline::sweep::{record_row, CSV_HEADER};
use ds2c2::pipeline::{
    latent_plane, load_dataset, retrain_lowdata, structure_comparison, sweep, train_base, train_residual, transmit_image, Cell,
    Dataset, EvalTag, ModelSet, Stage, SweepGrid, SweepSetup, TrainLog,
};
use ds2c2::seeds;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::Command;

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<(), CliError> {
    match cmd {
        Command::TrainBase => cmd_train_base(cfg),
        Command::TrainResidual => cmd_train_codec(cfg, false),
        Command::Retrain => cmd_train_codec(cfg, true),
        Command::Transmit => cmd_transmit(cfg),
        Command::Decode => cmd_decode(cfg),
        Command::Sweep => cmd_sweep(cfg),
        Command::Stats => cmd_stats(cfg),
        Command::Config => {
            print!("{}", cfg.emit());
            Ok(())
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}

/// Create the output directory and record the effective configuration.
/// The timestamp lives only on the first line of run.log.
fn prepare(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|source| CliError::Output { path: out.clone(), source })?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    write(&out.join("run.log"), format!("# {} unix {}\n{}", name, stamp, cfg.emit()))?;
    write(&out.join("config.ini"), cfg.emit())?;
    Ok(out)
}

fn dataset(cfg: &RunConfig, dir: &Path) -> Result<Dataset, CliError> {
    let data = load_dataset(dir, &cfg.dataset_options())?;
    if data.skipped > 0 {
        eprintln!("warning: skipped {} unreadable or undersized files in {}", data.skipped, dir.display());
    }
    Ok(data)
}

fn save_model(out: &Path, stem: &str, params: &ModelParams, log: &TrainLog) -> Result<PathBuf, CliError> {
    let path = out.join(format!("{}.ckpt", stem));
    save_params(params, &path)?;
    write(&out.join(format!("{}_log.tsv", stem)), log.to_tsv())?;
    Ok(path)
}

fn cmd_train_base(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.existing_path("data.dir")?;
    let out = prepare(cfg, "train-base")?;
    let data = dataset(cfg, &dir)?;
    let (params, log) = train_base(&data.train, cfg.base_arch(), &cfg.train_config(Stage::Base))?;
    let path = save_model(&out, "base", &params, &log)?;
    println!("{} ({} crops, {} epochs)", path.display(), data.train.len(), log.epochs.len());
    Ok(())
}

fn codec_stem(params: &ModelParams, subset: Option<usize>) -> Result<String, CliError> {
    let arch = params.codec()?;
    let kind = match arch.source {
        CodecSource::Residual => "codec",
        CodecSource::Direct => "direct",
    };
    let mut stem = format!("{}_c{}_pe{}_s{}", kind, arch.latent_channels, params.meta.pe_train, params.meta.seed);
    if let Some(n) = subset {
        stem.push_str(&format!("_n{}", n));
    }
    Ok(stem)
}

fn base_for(cfg: &RunConfig, source: CodecSource) -> Result<Option<PathBuf>, CliError> {
    match source {
        CodecSource::Residual => cfg.existing_path("models.base").map(Some),
        CodecSource::Direct => Ok(None),
    }
}

/// A codec checkpoint; anything else is a format mismatch.
fn load_codec(path: &Path) -> Result<(ModelParams, CodecArch), CliError> {
    let params = load_params(path)?;
    let arch = *params
        .codec()
        .map_err(|_| CliError::Mismatch(format!("{} is not a codec checkpoint", path.display())))?;
    Ok((params, arch))
}

fn load(path: Option<PathBuf>) -> Result<Option<ModelParams>, CliError> {
    Ok(path.map(|p| load_params(&p)).transpose()?)
}

fn cmd_train_codec(cfg: &RunConfig, subset: bool) -> Result<(), CliError> {
    let arch = cfg.codec_arch()?;
    let dir = cfg.existing_path("data.dir")?;
    let base_path = base_for(cfg, arch.source)?;
    let out = prepare(cfg, if subset { "retrain" } else { "train-residual" })?;
    let base = load(base_path)?;
    let data = dataset(cfg, &dir)?;
    let tc = cfg.train_config(Stage::Residual);
    let (params, log, size) = if subset {
        let n = cfg.count("train.subset_size");
        let (p, l) = retrain_lowdata(&data.train, n, base.as_ref(), arch, &tc)?;
        (p, l, Some(n))
    } else {
        let (p, l) = train_residual(&data.train, base.as_ref(), arch, &tc)?;
        (p, l, None)
    };
    let path = save_model(&out, &codec_stem(&params, size)?, &params, &log)?;
    println!("{} ({} crops, {} epochs)", path.display(), log.train_samples, log.epochs.len());
    Ok(())
}

/// Centre crop of the configured input image at the codec's size, in [-1,1].
fn input_image(path: &Path, h: usize, w: usize) -> Result<Tensor<f32>, CliError> {
    let img = to_rgb(&read_image(path)?);
    if img.height < h || img.width < w {
        return Err(CliError::Config(format!(
            "io.image: {} is {}x{}, the codec needs at least {}x{}",
            path.display(),
            img.height,
            img.width,
            h,
            w
        )));
    }
    Ok(normalize(&crop(&img, (img.height - h) / 2, (img.width - w) / 2, h, w)?))
}

fn write_image(out: &Path, name: &str, t: &Tensor<f32>) -> Result<(), CliError> {
    Ok(write_pnm(&out.join(name), &denormalize(t)?)?)
}

/// Residuals span [-2,2]; halve them so mid-grey is zero.
fn write_residual(out: &Path, name: &str, r: &Tensor<f32>) -> Result<(), CliError> {
    write_image(out, name, &r.map(|v| v * 0.5))
}

fn image_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_transmit(cfg: &RunConfig) -> Result<(), CliError> {
    let image_path = cfg.existing_path("io.image")?;
    let codec_path = cfg.existing_path("models.codec")?;
    let base_path = cfg.optional_path("models.base")?;
    let (enh, arch) = load_codec(&codec_path)?;
    if arch.source == CodecSource::Residual && base_path.is_none() {
        return Err(CliError::Config("models.base is required for a residual codec".into()));
    }
    let base = load(base_path)?;
    let out = prepare(cfg, "transmit")?;
    let x = input_image(&image_path, arch.height, arch.width)?;
    let seed = cfg.seed("run.seed");
    let block_bytes = cfg.count("channel.block_bytes");
    let channel = ChannelConfig::new(
        cfg.channel_model(),
        cfg.real("channel.pe"),
        block_bytes,
        seeds::derive_indexed(seed, "channel", &[0]),
    )?;
    let scheme = cfg.interleaver().scheme(block_bytes, enh.meta.seed);
    let tag = EvalTag { image_id: image_id(&image_path), seed };
    let t = transmit_image(&x, None, base.as_ref(), &enh, Some(&channel), scheme, &tag)?;

    write_image(&out, "input.ppm", &x)?;
    write_image(&out, "x_hat.ppm", &t.x_hat)?;
    write_image(&out, "x_plain.ppm", &t.x_plain)?;
    if arch.source == CodecSource::Residual {
        write_image(&out, "x_prime.ppm", &t.x_prime)?;
        write_residual(&out, "residual.ppm", &t.r)?;
        write_residual(&out, "residual_hat.ppm", &t.r_hat)?;
    }
    write_pnm(&out.join("latent_sent.pgm"), &latent_plane(&t.sent))?;
    write_pnm(&out.join("latent_received.pgm"), &latent_plane(&t.received))?;
    write(&out.join("frame.bin"), &t.frame)?;
    let csv = format!("{}\n{}\n", CSV_HEADER.join(","), record_row(cfg.raw("data.name"), &t.metrics));
    write(&out.join("metrics.csv"), csv)?;
    if let Some(w) = &t.report.warning {
        eprintln!("warning: {}", w);
    }
    println!(
        "PSNR {:.3} dB (base {:.3} dB), {} blocks hit, {} ones erased",
        t.metrics.psnr_db, t.metrics.psnr_base_db, t.report.blocks_hit, t.report.ones_flipped
    );
    Ok(())
}

fn cmd_decode(cfg: &RunConfig) -> Result<(), CliError> {
    let frame_path = cfg.existing_path("io.frame")?;
    let codec_path = cfg.existing_path("models.codec")?;
    let base_path = cfg.optional_path("models.base")?;
    let image_path = cfg.optional_path("io.image")?;
    let bytes = std::fs::read(&frame_path).map_err(|source| CliError::Output { path: frame_path.clone(), source })?;
    let (header, stream) = frame_decode(&bytes).map_err(ds2c2::Error::from)?;
    let (enh, arch) = load_codec(&codec_path)?;
    if header.latent_shape != arch.latent_shape() {
        return Err(CliError::Mismatch(format!(
            "frame carries a {:?} latent, codec {} expects {:?}",
            header.latent_shape,
            codec_path.display(),
            arch.latent_shape()
        )));
    }
    let base = load(base_path)?;
    let out = prepare(cfg, "decode")?;
    let spec = InterleaverSpec::new(header.scheme, stream.len())?;
    let provenance = Provenance { source: "frame".into(), mode: BinarizeMode::Deterministic, seed: header.binarizer_seed };
    let received = LatentBits::new(header.latent_shape, deinterleave(&stream, &spec)?, provenance)?;
    let r_hat = bresnet_decode(&enh, &received.to_tensor())?;
    write_pnm(&out.join("latent_received.pgm"), &latent_plane(&received))?;

    // The base layer travels separately; rebuild it from the source image when given.
    let x_prime = match (arch.source, &base, &image_path) {
        (CodecSource::Direct, _, _) => Some(Tensor::zeros(&arch.input_shape())),
        (CodecSource::Residual, Some(b), Some(p)) => {
            let x = input_image(p, arch.height, arch.width)?;
            Some(synthesize(b, &x, None)?.x_prime().clone())
        }
        _ => None,
    };
    if arch.source == CodecSource::Residual {
        write_residual(&out, "residual_hat.ppm", &r_hat)?;
    }
    match x_prime {
        Some(xp) => {
            write_image(&out, "x_hat.ppm", &sumnet(&enh, &xp, &r_hat)?)?;
            println!("decoded {} bits to {}", stream.len(), out.join("x_hat.ppm").display());
        }
        None => println!("decoded {} bits; set models.base and io.image to rebuild the image", stream.len()),
    }
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.existing_path("data.dir")?;
    let codec_paths = cfg.existing_paths("models.codecs")?;
    let base_path = cfg.optional_path("models.base")?;
    let mut cells = Vec::new();
    for latent_channels in cfg.list::<usize>("sweep.latent_channels") {
        for pe_train in cfg.list::<f64>("sweep.pe_train") {
            cells.push(Cell { latent_channels, pe_train });
        }
    }
    let grid = SweepGrid { cells, pe_test: cfg.list("sweep.pe_test"), seeds: cfg.list("sweep.seeds") };
    grid.validate()?;
    let codecs = codec_paths.iter().map(|p| load_params(p)).collect::<Result<Vec<_>, _>>()?;
    let models = ModelSet { base: load(base_path)?, codecs };
    let missing: Vec<String> = grid
        .cells
        .iter()
        .filter(|c| models.find(c).is_none())
        .map(|c| format!("latent_channels={} pe_train={}", c.latent_channels, c.pe_train))
        .collect();
    if !missing.is_empty() {
        if cfg.flag("run.strict") {
            return Err(CliError::Incomplete(missing.join("; ")));
        }
        eprintln!("warning: no model for {}; rows marked absent", missing.join("; "));
    }
    let out = prepare(cfg, "sweep")?;
    let data = dataset(cfg, &dir)?;
    let setup = SweepSetup {
        dataset: cfg.raw("data.name").to_string(),
        channel_model: cfg.channel_model(),
        block_bytes: cfg.count("channel.block_bytes"),
        interleaver: cfg.interleaver(),
        jobs: cfg.count("run.jobs"),
    };
    let report = sweep(&data.test, &grid, &models, &setup)?;
    write(&out.join("sweep.csv"), report.to_csv())?;
    let summary = report.summary_csv();
    write(&out.join("sweep_summary.csv"), &summary)?;
    print!("{}", summary);
    Ok(())
}

fn stats_fields(s: &LatentStats) -> String {
    let ratio = if s.ones_density_pre > 0.0 { format!("{:.6}", s.ones_density_post / s.ones_density_pre) } else { "NA".into() };
    let corr = if s.correlation_defined { format!("{:.6}", s.local_density_correlation) } else { "NA".into() };
    format!("{:.6},{:.6},{},{},{:.6}", s.ones_density_pre, s.ones_density_post, ratio, corr, s.mean_run_length_zero)
}

fn cmd_stats(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.existing_path("data.dir")?;
    let codec_path = cfg.existing_path("models.codec")?;
    let base_path = cfg.optional_path("models.base")?;
    let (enh, _) = load_codec(&codec_path)?;
    let base = load(base_path)?;
    let out = prepare(cfg, "stats")?;
    let data = dataset(cfg, &dir)?;
    let seed = cfg.seed("run.seed");
    let block_bytes = cfg.count("channel.block_bytes");
    let scheme = cfg.interleaver().scheme(block_bytes, enh.meta.seed);
    let mut csv = String::from("image_id,coding,ones_density_pre,ones_density_post,density_ratio,density_correlation,mean_zero_run\n");
    let mut corr = [Vec::new(), Vec::new()];
    let mut ratios = Vec::new();
    for (k, s) in data.test.iter().enumerate() {
        let channel = ChannelConfig::new(
            cfg.channel_model(),
            cfg.real("channel.pe"),
            block_bytes,
            seeds::derive_indexed(seed, "channel", &[k as u64]),
        )?;
        let cmp = structure_comparison(&s.image, s.label.as_ref(), base.as_ref(), &enh, &channel, scheme)?;
        for (i, (coding, st)) in [("residual", cmp.residual), ("original", cmp.original)].into_iter().enumerate() {
            csv.push_str(&format!("{},{},{}\n", s.id, coding, stats_fields(&st)));
            if st.correlation_defined {
                corr[i].push(st.local_density_correlation);
            }
        }
        if cmp.residual.ones_density_pre > 0.0 {
            ratios.push(cmp.residual.ones_density_post / cmp.residual.ones_density_pre);
        }
    }
    write(&out.join("stats.csv"), &csv)?;
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let spread = ratios.iter().fold(0.0f64, |m, r| m.max((r - mean(&ratios)).abs()));
    println!(
        "{} images: ones density ratio {:.4} ± {:.4}; density correlation residual {:.4}, original {:.4}",
        data.test.len(),
        mean(&ratios),
        spread,
        mean(&corr[0]),
        mean(&corr[1])
    );
    Ok(())
}

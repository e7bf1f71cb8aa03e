use std::path::PathBuf;

use ds2c2::autodiff::Tensor;
use ds2c2::nn::{
    bresnet_decode, bresnet_encode, compnet_coarse, discnet_scores, load_params, save_params, sumnet, synthesize, Arch,
    BaseArch, CheckpointError, CodecArch, CompMode, ModelParams,
};
use ds2c2::Error;

fn small_codec() -> CodecArch {
    CodecArch { widths: [8, 8], sumnet_width: 4, sumnet_blocks: 1, ..Default::default() }
}

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden").join(name)
}

fn ramp(shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::from_fn(shape, |i| ((i as f32 * 0.618).fract() * 2.0 - 1.0) * 0.9 * (1.0 - i as f32 / n as f32))
}

#[test]
fn default_codec_shapes() {
    let arch = CodecArch::default();
    assert_eq!(arch.latent_shape(), [4, 4, 4]);
    let p = ModelParams::init(Arch::Codec(arch), 3).unwrap();
    let r = ramp(&[3, 32, 32]);
    let v = bresnet_encode(&p, &r).unwrap();
    assert_eq!(v.shape(), &[4, 4, 4]);
    assert!(v.data().iter().all(|x| (-1.0..=1.0).contains(x)));
    let r_hat = bresnet_decode(&p, &Tensor::from_fn(&[4, 4, 4], |i| if i % 3 == 0 { 1.0 } else { -1.0 })).unwrap();
    assert_eq!(r_hat.shape(), &[3, 32, 32]);
    let x_hat = sumnet(&p, &ramp(&[3, 32, 32]), &r_hat).unwrap();
    assert_eq!(x_hat.shape(), &[3, 32, 32]);
}

#[test]
fn rejects_indivisible_input() {
    let arch = CodecArch { height: 36, ..Default::default() };
    assert!(matches!(ModelParams::init(Arch::Codec(arch), 0), Err(Error::Config(_))));
}

#[test]
fn one_bit_flip_is_local() {
    let side = 128;
    let p = ModelParams::init(Arch::Codec(CodecArch { height: side, width: side, ..small_codec() }), 5).unwrap();
    let g = side / 8;
    let bits = Tensor::from_fn(&[4, g, g], |i| if (i * 5) % 7 < 3 { 1.0 } else { -1.0 });
    let base = bresnet_decode(&p, &bits).unwrap();
    let mut flipped = bits.clone();
    flipped.data_mut()[2 * g * g + 2 * g + 2] *= -1.0;
    let out = bresnet_decode(&p, &flipped).unwrap();
    let plane = side * side;
    let mut changed = vec![false; plane];
    for (i, (a, b)) in base.data().iter().zip(out.data()).enumerate() {
        if a != b {
            changed[i % plane] = true;
        }
    }
    let count = changed.iter().filter(|c| **c).count();
    assert!(count > 0 && count < plane, "changed {}", count);
    // The flipped cell covers pixels 16..24; the far corner must not move.
    for (i, c) in changed.iter().enumerate() {
        if *c {
            let (y, x) = (i / side, i % side);
            assert!(y < 80 && x < 80, "pixel ({},{}) changed", y, x);
        }
    }
}

#[test]
fn fixed_compnet_keeps_constant_image() {
    let x = Tensor::full(&[3, 32, 32], 0.3f32);
    let (c, cp) = compnet_coarse(&x, 4, CompMode::Fixed, None).unwrap();
    assert_eq!(c.shape(), &[3, 8, 8]);
    assert!(cp.max_abs_diff(&x) < 1e-6);
}

#[test]
fn fresh_base_starts_at_fixed_path() {
    let arch = BaseArch::default();
    let base = ModelParams::init(Arch::Base(arch), 1).unwrap();
    let x = ramp(&[3, 32, 32]);
    let (_, fixed) = compnet_coarse(&x, arch.factor, CompMode::Fixed, None).unwrap();
    let (_, learned) = compnet_coarse(&x, arch.factor, CompMode::Learned, Some(&base)).unwrap();
    assert!(fixed.max_abs_diff(&learned) < 1e-6);
    let out = synthesize(&base, &x, None).unwrap();
    assert_eq!(out.refined.len(), arch.steps);
    assert_eq!(out.x_prime().shape(), &[3, 32, 32]);
    let scores = discnet_scores(&base, 0, None, &out.c_prime, &x).unwrap();
    assert_eq!(scores.len(), arch.disc_scales);
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
}

#[test]
fn semantic_base_requires_labels() {
    let arch = BaseArch { semantic: true, ..Default::default() };
    let base = ModelParams::init(Arch::Base(arch), 1).unwrap();
    let x = ramp(&[3, 32, 32]);
    assert!(synthesize(&base, &x, None).is_err());
    let s = Tensor::full(&[1, 32, 32], 0.5f32);
    assert!(synthesize(&base, &x, Some(&s)).is_ok());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for arch in [Arch::Codec(small_codec()), Arch::Base(BaseArch::default())] {
        let mut p = ModelParams::init(arch, 9).unwrap();
        p.meta.pe_train = 8.0;
        p.meta.epochs = 3;
        let path = dir.path().join("m.ckpt");
        save_params(&p, &path).unwrap();
        let q = load_params(&path).unwrap();
        assert_eq!(q.meta, p.meta);
        assert_eq!(q.tensors, p.tensors);
        assert_eq!(q.to_bytes(), p.to_bytes());
    }
}

#[test]
fn checkpoint_matches_golden_file() {
    let mut p = ModelParams::init(Arch::Codec(small_codec()), 21).unwrap();
    p.meta.pe_train = 8.0;
    let bytes = p.to_bytes();
    assert_eq!(bytes, ModelParams::init(Arch::Codec(small_codec()), 21).map(|mut q| { q.meta.pe_train = 8.0; q.to_bytes() }).unwrap());
    let path = golden_path("codec.ckpt");
    if std::env::var_os("DS2C2_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &bytes).unwrap();
    }
    let golden = std::fs::read(&path).unwrap();
    assert_eq!(bytes, golden);
    assert_eq!(ModelParams::from_bytes(&golden).unwrap().to_bytes(), golden);
}

#[test]
fn checkpoint_corruption_is_detected() {
    let good = ModelParams::init(Arch::Codec(small_codec()), 2).unwrap().to_bytes();
    for i in (16..good.len()).step_by(good.len() / 97 + 1) {
        let mut bad = good.clone();
        bad[i] ^= 0x01;
        assert!(matches!(ModelParams::from_bytes(&bad), Err(Error::Checkpoint(CheckpointError::Checksum))), "byte {}", i);
    }
    assert!(matches!(
        ModelParams::from_bytes(&good[..good.len() / 2]),
        Err(Error::Checkpoint(CheckpointError::Checksum))
    ));
    let mut bad = good.clone();
    bad[0] = b'x';
    assert!(matches!(ModelParams::from_bytes(&bad), Err(Error::Checkpoint(CheckpointError::BadMagic))));
    assert!(matches!(ModelParams::from_bytes(b"DS2"), Err(Error::Checkpoint(_))));
}

#[test]
fn missing_checkpoint_is_io_error() {
    assert!(matches!(load_params(std::path::Path::new("/nonexistent/m.ckpt")), Err(Error::Io { .. })));
}

#[test]
fn checkpoint_future_version_is_rejected() {
    let mut bytes = ModelParams::init(Arch::Codec(small_codec()), 2).unwrap().to_bytes();
    bytes.truncate(bytes.len() - 4);
    bytes[11..15].copy_from_slice(&2u32.to_le_bytes());
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(ModelParams::from_bytes(&bytes), Err(Error::Checkpoint(CheckpointError::Version(2)))));
}

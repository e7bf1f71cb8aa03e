use std::path::PathBuf;

use ds2c2::link::{
    apply_channel, apply_channel_bits, apply_footprint, deinterleave, erasure_footprint, frame_decode, frame_encode, interleave, to_image_domain,
    to_tensor_domain, ChannelConfig, ChannelModel, FrameError, FrameHeader, InterleaverSpec, Scheme,
};
use ds2c2::seeds;
use proptest::prelude::*;
use rand::Rng;

fn random_bits(n: usize, density: f64, seed: u64) -> Vec<bool> {
    let mut rng = seeds::rng(seed);
    (0..n).map(|_| rng.gen::<f64>() < density).collect()
}

/// Row-column matrix with a ragged last row, read column by column.
fn stride_oracle(n: usize, d: usize) -> Vec<usize> {
    let rows = n.div_ceil(d);
    let mut pos = vec![0; n];
    let mut next = 0;
    for col in 0..d {
        for row in 0..rows {
            let i = row * d + col;
            if i < n {
                pos[i] = next;
                next += 1;
            }
        }
    }
    pos
}

fn scheme_strategy() -> impl Strategy<Value = Scheme> {
    prop_oneof![
        Just(Scheme::Identity),
        (1u64..200).prop_map(|depth| Scheme::Stride { depth }),
        any::<u64>().prop_map(|seed| Scheme::Permutation { seed }),
    ]
}

#[test]
fn stride_800_spreads_neighbours_80_apart() {
    let n = 64_000;
    let spec = InterleaverSpec::new(Scheme::Stride { depth: 800 }, n).unwrap();
    let pos = spec.positions();
    assert_eq!(n.div_ceil(800), 80);
    assert!(pos.windows(2).enumerate().filter(|(i, _)| (i + 1) % 800 != 0).all(|(_, w)| w[1] - w[0] == 80));
}

#[test]
fn stride_matches_matrix_oracle() {
    for (n, d) in [(64_000, 800), (64, 8), (70, 8), (5, 8), (103, 10), (1, 1), (17, 17)] {
        let spec = InterleaverSpec::new(Scheme::Stride { depth: d as u64 }, n).unwrap();
        assert_eq!(spec.positions(), stride_oracle(n, d), "n={} d={}", n, d);
    }
    assert!(InterleaverSpec::new(Scheme::Stride { depth: 0 }, 10).is_err());
}

#[test]
fn bbec_quota_examples() {
    let bits = random_bits(4000, 0.5, 3);
    let ones = bits.iter().filter(|b| **b).count();
    for pe in [0.0, 1.0, 8.0, 16.0, 50.0, 100.0] {
        let cfg = ChannelConfig::new(ChannelModel::Bbec, pe, 100, 9).unwrap();
        let (out, rep) = apply_channel_bits(&bits, &cfg).unwrap();
        let expect = (pe / 100.0 * ones as f64).round() as usize;
        assert_eq!(rep.ones_flipped, expect);
        assert_eq!(rep.zeros_flipped, 0);
        assert_eq!(out.iter().filter(|b| **b).count(), ones - expect);
    }
}

#[test]
fn quota_rounds_half_up() {
    let cfg = ChannelConfig::new(ChannelModel::Bbec, 50.0, 1, 0).unwrap();
    assert_eq!(cfg.quota(3), 2);
    assert_eq!(cfg.quota(1), 1);
    let cfg = ChannelConfig::new(ChannelModel::Bbec, 10.0, 1, 0).unwrap();
    assert_eq!(cfg.quota(14), 1);
    assert_eq!(cfg.quota(15), 2);
}

#[test]
fn bbsc_inverts_whole_blocks() {
    let bits = random_bits(2000, 0.4, 5);
    let cfg = ChannelConfig::new(ChannelModel::Bbsc, 16.0, 4, 1).unwrap();
    let (out, rep) = apply_channel_bits(&bits, &cfg).unwrap();
    assert_eq!(rep.ones_flipped, cfg.quota(bits.iter().filter(|b| **b).count()));
    assert!(rep.zeros_flipped > 0);
    let changed = bits.iter().zip(&out).filter(|(a, b)| a != b).count();
    assert_eq!(changed, rep.ones_flipped + rep.zeros_flipped);
}

#[test]
fn empty_of_ones_warns() {
    let cfg = ChannelConfig::new(ChannelModel::Bbec, 10.0, 1, 0).unwrap();
    let (out, rep) = apply_channel_bits(&[false; 64], &cfg).unwrap();
    assert_eq!(out, vec![false; 64]);
    assert!(rep.warning.is_some());
}

#[test]
fn invalid_channel_configs() {
    assert!(ChannelConfig::new(ChannelModel::Bbec, -1.0, 1, 0).is_err());
    assert!(ChannelConfig::new(ChannelModel::Bbec, 100.5, 1, 0).is_err());
    assert!(ChannelConfig::new(ChannelModel::Bbec, 5.0, 0, 0).is_err());
}

#[test]
fn image_domain_is_binary() {
    let bits = random_bits(300, 0.3, 8);
    let img = to_image_domain(&bits);
    assert!(img.iter().all(|&v| v == 0 || v == 255));
    assert_eq!(to_tensor_domain(&img).unwrap(), bits);
    assert!(to_tensor_domain(&[0, 128]).is_err());
    let cfg = ChannelConfig::new(ChannelModel::Bbec, 16.0, 2, 4).unwrap();
    let (out, _) = apply_channel(&img, &cfg).unwrap();
    assert!(out.iter().all(|&v| v == 0 || v == 255));
}

fn sample_frame() -> Vec<u8> {
    let header = FrameHeader { latent_shape: [4, 4, 4], scheme: Scheme::Stride { depth: 8 }, binarizer_seed: 42 };
    let bits: Vec<bool> = (0..64).map(|i| (i * 7 + 3) % 5 < 2).collect();
    frame_encode(&header, &bits).unwrap()
}

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden").join(name)
}

#[test]
fn frame_matches_golden_file() {
    let bytes = sample_frame();
    assert_eq!(bytes, sample_frame());
    let path = golden_path("frame.bin");
    if std::env::var_os("DS2C2_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &bytes).unwrap();
    }
    let golden = std::fs::read(&path).unwrap();
    assert_eq!(bytes, golden);
    let (header, bits) = frame_decode(&golden).unwrap();
    assert_eq!(frame_encode(&header, &bits).unwrap(), golden);
}

#[test]
fn frame_corruption_is_detected() {
    let good = sample_frame();
    for i in 12..good.len() {
        let mut bad = good.clone();
        bad[i] ^= 0x10;
        assert!(matches!(frame_decode(&bad), Err(FrameError::BadCrc { .. }) | Err(FrameError::UnknownScheme(_))), "byte {}", i);
    }
    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(frame_decode(&bad), Err(FrameError::BadMagic));
    let mut bad = good.clone();
    bad[4] = 9;
    assert_eq!(frame_decode(&bad), Err(FrameError::BadVersion(9)));
    assert!(matches!(frame_decode(&good[..good.len() - 1]), Err(FrameError::Truncated { .. })));
    let mut long = good.clone();
    long.push(0);
    assert!(matches!(frame_decode(&long), Err(FrameError::Length { .. })));
    let mut bad = good;
    bad[11] = 7;
    assert!(matches!(frame_decode(&bad), Err(FrameError::UnknownScheme(7))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn interleaver_is_bijection(scheme in scheme_strategy(), n in 0usize..2000) {
        let spec = InterleaverSpec::new(scheme, n).unwrap();
        let mut seen = vec![false; n];
        for p in spec.positions() {
            prop_assert!(p < n && !seen[p]);
            seen[p] = true;
        }
        let items: Vec<u32> = (0..n as u32).collect();
        prop_assert_eq!(deinterleave(&interleave(&items, &spec).unwrap(), &spec).unwrap(), items);
    }

    #[test]
    fn stride_separation_at_least_rows_minus_one(n in 2usize..3000, d in 1usize..300) {
        let spec = InterleaverSpec::new(Scheme::Stride { depth: d as u64 }, n).unwrap();
        let pos = spec.positions();
        let rows = n.div_ceil(d);
        for i in 0..n - 1 {
            if (i + 1) % d != 0 {
                prop_assert!(pos[i + 1] - pos[i] >= rows - 1);
            }
        }
    }

    #[test]
    fn bbec_law(n in 1usize..3000, density in 0.0f64..1.0, pe in 0.0f64..=100.0, block in 1usize..120, seed in any::<u64>()) {
        let bits = random_bits(n, density, seed);
        let ones = bits.iter().filter(|b| **b).count();
        let cfg = ChannelConfig::new(ChannelModel::Bbec, pe, block, seed).unwrap();
        let (out, rep) = apply_channel_bits(&bits, &cfg).unwrap();
        let quota = (pe / 100.0 * ones as f64 + 0.5).floor() as usize;
        prop_assert_eq!(rep.ones_flipped, quota);
        prop_assert_eq!(rep.zeros_flipped, 0);
        prop_assert!(bits.iter().zip(&out).all(|(a, b)| *a || !*b));
        prop_assert_eq!(out.iter().filter(|b| **b).count(), ones - quota);
    }

    #[test]
    fn footprint_replays_the_channel(n in 1usize..2000, density in 0.0f64..1.0, pe in 0.0f64..=100.0, block in 1usize..40, seed in any::<u64>(), bbsc: bool) {
        let model = if bbsc { ChannelModel::Bbsc } else { ChannelModel::Bbec };
        let bits = random_bits(n, density, seed);
        let cfg = ChannelConfig::new(model, pe, block, seed).unwrap();
        let mask = erasure_footprint(&bits, &cfg).unwrap();
        prop_assert_eq!(apply_footprint(&bits, &mask, model).unwrap(), apply_channel_bits(&bits, &cfg).unwrap().0);
        // Outside the footprint nothing changes, whatever the payload.
        let other = random_bits(n, 0.5, seed ^ 1);
        let hit = apply_footprint(&other, &mask, model).unwrap();
        prop_assert!(other.iter().zip(&hit).zip(&mask).all(|((a, b), m)| *m || a == b));
    }

    #[test]
    fn frame_round_trip(c in 1usize..6, h in 1usize..6, w in 1usize..6, scheme in scheme_strategy(), seed in any::<u64>()) {
        let header = FrameHeader { latent_shape: [c, h, w], scheme, binarizer_seed: seed };
        let bits = random_bits(c * h * w, 0.5, seed);
        let bytes = frame_encode(&header, &bits).unwrap();
        prop_assert_eq!(bytes.len(), 28 + (c * h * w).div_ceil(8) + 4);
        prop_assert_eq!(frame_decode(&bytes).unwrap(), (header, bits));
    }
}

use ds2c2::autodiff::{Tape, Tensor};
use ds2c2::binarizer::{
    binarize, binarize_values, bpp, pack_bits, pack_latent, unpack_bits, unpack_latent, BaseLayerBytes, BinarizeMode,
};
use ds2c2::seeds;
use proptest::prelude::*;

fn empirical_mean(v: f32, draws: usize, seed: u64) -> f64 {
    let bits = binarize_values(&vec![v; draws], BinarizeMode::Stochastic, &mut seeds::rng(seed));
    bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).sum::<f64>() / draws as f64
}

#[test]
fn stochastic_zero_is_unbiased() {
    let n = 100_000;
    let sigma = 1.0 / (n as f64).sqrt();
    let m = empirical_mean(0.0, n, 11);
    assert!(m.abs() <= 3.0 * sigma, "mean {} exceeds {}", m, 3.0 * sigma);
}

#[test]
fn endpoints_are_certain() {
    assert!(binarize_values(&[1.0; 1000], BinarizeMode::Stochastic, &mut seeds::rng(1)).iter().all(|b| *b));
    assert!(binarize_values(&[-1.0; 1000], BinarizeMode::Stochastic, &mut seeds::rng(1)).iter().all(|b| !*b));
}

#[test]
fn out_of_range_values_are_clamped() {
    assert!(binarize_values(&[3.0; 100], BinarizeMode::Stochastic, &mut seeds::rng(2)).iter().all(|b| *b));
    assert!(binarize_values(&[-7.5; 100], BinarizeMode::Stochastic, &mut seeds::rng(2)).iter().all(|b| !*b));
}

#[test]
fn deterministic_mode_thresholds_at_zero() {
    let bits = binarize_values(&[-0.9, -0.01, 0.0, 0.2, 1.0], BinarizeMode::Deterministic, &mut seeds::rng(0));
    assert_eq!(bits, vec![false, false, true, true, true]);
}

#[test]
fn binarize_is_seed_reproducible() {
    let t = Tensor::from_fn(&[2, 3, 4], |i| ((i as f32) * 0.37).sin());
    let a = binarize(&t, BinarizeMode::Stochastic, 5, "r").unwrap();
    let b = binarize(&t, BinarizeMode::Stochastic, 5, "r").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), [2, 3, 4]);
    assert!(binarize(&Tensor::<f32>::zeros(&[2, 3]), BinarizeMode::Stochastic, 5, "r").is_err());
    let pm = a.to_tensor();
    assert!(pm.data().iter().all(|v| *v == 1.0 || *v == -1.0));
}

#[test]
fn straight_through_passes_gradient_unchanged() {
    let mut tape = Tape::<f64>::new();
    let v = tape.param(Tensor::new(vec![3], vec![-0.4, 0.1, 0.9]).unwrap());
    let hard = Tensor::new(vec![3], vec![-1.0, 1.0, 1.0]).unwrap();
    let b = tape.straight_through(v, hard).unwrap();
    assert_eq!(tape.value(b).data(), &[-1.0, 1.0, 1.0]);
    let w = tape.constant(Tensor::new(vec![3], vec![2.0, -3.0, 0.5]).unwrap());
    let y = tape.mul(b, w).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(v).unwrap().data(), &[2.0, -3.0, 0.5]);
}

#[test]
fn pack_is_msb_first() {
    let mut bits = vec![false; 10];
    bits[0] = true;
    bits[9] = true;
    assert_eq!(pack_bits(&bits), vec![0x80, 0x40]);
    assert!(unpack_bits(&[0x80], 9).is_err());
}

#[test]
fn bpp_default_desk_latent() {
    let l = bpp([4, 4, 4], (32, 32), None).unwrap();
    assert_eq!(l.bpp_r, 64.0 / 1024.0);
    assert_eq!(l.bpp_r, 0.0625);
    assert!(bpp([4, 4, 4], (0, 32), None).is_err());
}

/// Rows of the r / (c+s) / total split. A 160x160 image has a 20x20 latent
/// grid at 8x downsampling, so each row's c+s share is a whole number of bytes.
#[test]
fn bpp_reported_rows() {
    let rows = [(4, 152, 0.0625, 0.0475, 0.11), (8, 144, 0.125, 0.045, 0.17), (12, 168, 0.1875, 0.0525, 0.24), (32, 128, 0.5, 0.04, 0.54)];
    for (channels, base_bytes, r, cs, total) in rows {
        let l = bpp([channels, 20, 20], (160, 160), Some(BaseLayerBytes { c_bytes: base_bytes / 2, s_bytes: base_bytes / 2 })).unwrap();
        assert!((l.bpp_r - r).abs() < 1e-12);
        assert!((l.bpp_c + l.bpp_s - cs).abs() < 1e-12);
        assert!((l.bpp_total - total).abs() < 1e-12, "{} vs {}", l.bpp_total, total);
    }
}

proptest! {
    #[test]
    fn pack_round_trip(bits in prop::collection::vec(any::<bool>(), 0..300)) {
        let bytes = pack_bits(&bits);
        prop_assert_eq!(bytes.len(), bits.len().div_ceil(8));
        prop_assert_eq!(unpack_bits(&bytes, bits.len()).unwrap(), bits);
    }

    #[test]
    fn latent_pack_round_trip(c in 1usize..5, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let t = Tensor::from_fn(&[c, h, w], |i| ((i as f32 + seed as f32) * 0.71).cos());
        let bits = binarize(&t, BinarizeMode::Stochastic, seed, "r").unwrap();
        let back = unpack_latent(&pack_latent(&bits), bits.shape(), bits.provenance.clone()).unwrap();
        prop_assert_eq!(back, bits);
    }

    #[test]
    fn bpp_total_is_sum(c in 1usize..40, hl in 1usize..10, wl in 1usize..10, cb in 0usize..5000, sb in 0usize..5000) {
        let l = bpp([c, hl, wl], (hl * 8, wl * 8), Some(BaseLayerBytes { c_bytes: cb, s_bytes: sb })).unwrap();
        prop_assert!((l.bpp_total - (l.bpp_r + l.bpp_c + l.bpp_s)).abs() <= 1e-12);
        prop_assert!((l.bpp_r - c as f64 / 64.0).abs() <= 1e-12);
    }
}

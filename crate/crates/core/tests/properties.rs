mod common;

use nnfi_core::engine::{conv2d_naive, dense, relu_inplace};
use nnfi_core::io::{
    idx_bytes, load_idx, model_from_bytes, model_to_bytes, traces_from_bytes, traces_to_bytes,
};
use nnfi_core::model::LayerSpec;
use nnfi_core::synthetic;
use nnfi_core::tensor::{compute_dec, dequantize, quantize, requantize};
use nnfi_core::trace::record_traces;
use nnfi_core::{
    AccumMode, Accumulator, CountermeasureConfig, EngineOptions, Error, FaultInjector, FaultSpec,
    NoFaults, QuantTensor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mode() -> impl Strategy<Value = AccumMode> {
    prop_oneof![Just(AccumMode::Saturate), Just(AccumMode::Wrap)]
}

proptest! {
    #[test]
    fn quantize_is_monotone(dec in -4i32..=8, a in -600.0f64..600.0, b in -600.0f64..600.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(lo, dec) <= quantize(hi, dec));
    }

    #[test]
    fn quantize_round_trip_bound(dec in -4i32..=8, frac in -1.0f64..=1.0) {
        let x = frac * 2f64.powi(dec);
        let err = (dequantize(quantize(x, dec), dec) - x).abs();
        let clamped = x > 127.0 * 2f64.powi(dec - 7);
        let exp = if clamped { dec - 7 } else { dec - 8 };
        prop_assert!(err <= 2f64.powi(exp));
    }

    #[test]
    fn compute_dec_covers_max(max in 1e-6f64..1e6) {
        let dec = compute_dec(max);
        prop_assert!(2f64.powi(dec) >= max);
        prop_assert!(2f64.powi(dec - 1) < max);
    }

    #[test]
    fn requantize_matches_rational_rounding(v in any::<i32>(), shift in 0u32..=31) {
        let exact = (f64::from(v) / 2f64.powi(shift as i32) + 0.5).floor();
        let sat = requantize(Accumulator::new(v, AccumMode::Saturate), shift);
        prop_assert_eq!(f64::from(sat), exact.clamp(-128.0, 127.0));
        let wrap = requantize(Accumulator::new(v, AccumMode::Wrap), shift);
        prop_assert_eq!(i64::from(wrap), (exact as i64 + 128).rem_euclid(256) - 128);
    }

    #[test]
    fn wrap_requantize_is_periodic(v in -(1i32 << 22)..(1 << 22), shift in 0u32..=8, m in -4i32..=4) {
        let shifted = v + m * (256 << shift);
        prop_assert_eq!(
            requantize(Accumulator::new(v, AccumMode::Wrap), shift),
            requantize(Accumulator::new(shifted, AccumMode::Wrap), shift)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Early exit at j: channels below j are fresh, the rest keep stale data.
    /// Skipping kernel j leaves exactly channel j stale.
    #[test]
    fn conv_faults_only_touch_their_channels(
        seed in any::<u64>(), h in 1usize..=6, w in 1usize..=6, c in 1usize..=3,
        k in 1usize..=6, j in 0usize..=6, mode in mode(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = common::random_conv(&mut rng, [h, w, c], k, 3);
        let input = common::random_bytes(&mut rng, layer.input_len());
        let stale = common::random_bytes(&mut rng, layer.output_len());
        let mut clean = stale.clone();
        conv2d_naive(&input, &layer, &mut clean, mode, &mut NoFaults).unwrap();
        let j = j.min(k);
        let cm = CountermeasureConfig::default();

        let mut exited = stale.clone();
        let spec = FaultSpec::ConvEarlyExit { layer: "conv1".into(), last_kernel: j };
        conv2d_naive(&input, &layer, &mut exited, mode, &mut FaultInjector::new(spec, cm)).unwrap();
        for (i, &v) in exited.iter().enumerate() {
            let expected = if i % k < j { clean[i] } else { stale[i] };
            prop_assert_eq!(v, expected);
        }

        if j < k {
            let mut skipped = stale.clone();
            let spec = FaultSpec::ConvSkipKernel { layer: "conv1".into(), kernel: j };
            conv2d_naive(&input, &layer, &mut skipped, mode, &mut FaultInjector::new(spec, cm)).unwrap();
            for (i, &v) in skipped.iter().enumerate() {
                prop_assert_eq!(v, if i % k == j { stale[i] } else { clean[i] });
            }
        }
    }

    #[test]
    fn relu_faults_are_local(values in prop::collection::vec(any::<i8>(), 1..64), pick in any::<prop::sample::Index>(), force in any::<bool>()) {
        let e = pick.index(values.len());
        let mut clean = values.clone();
        relu_inplace(&mut clean, "r", &mut NoFaults);
        let spec = if force {
            FaultSpec::ReluForceReset { layer: "r".into(), element: e }
        } else {
            FaultSpec::ReluSkipReset { layer: "r".into(), element: e }
        };
        let mut faulted = values.clone();
        relu_inplace(&mut faulted, "r", &mut FaultInjector::new(spec, CountermeasureConfig::default()));
        for i in 0..values.len() {
            let expected = match (i == e, force) {
                (false, _) => clean[i],
                (true, true) => 0,
                (true, false) => values[i],
            };
            prop_assert_eq!(faulted[i], expected);
        }
    }

    #[test]
    fn bias_corruption_is_local(
        seed in any::<u64>(), n_in in 1usize..40, n_out in 1usize..12,
        pick in any::<prop::sample::Index>(), corrupt in any::<i32>(), mode in mode(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = LayerSpec::dense(
            "d",
            QuantTensor::new(vec![n_in, n_out], common::random_bytes(&mut rng, n_in * n_out), 0).unwrap(),
            QuantTensor::new(vec![n_out], common::random_bytes(&mut rng, n_out), 0).unwrap(),
            6, 3, 0,
        ).unwrap();
        let input = common::random_bytes(&mut rng, n_in);
        let neuron = pick.index(n_out);
        let mut clean = vec![0; n_out];
        dense(&input, &layer, &mut clean, mode, &mut NoFaults).unwrap();
        let mut faulted = vec![0; n_out];
        let spec = FaultSpec::BiasCorrupt { layer: "d".into(), neuron, corrupt_value: corrupt };
        dense(&input, &layer, &mut faulted, mode, &mut FaultInjector::new(spec, CountermeasureConfig::default())).unwrap();
        for j in (0..n_out).filter(|&j| j != neuron) {
            prop_assert_eq!(faulted[j], clean[j]);
        }
    }
}

fn small_model_bytes() -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    model_to_bytes(&synthetic::small_cnn(&mut rng, 4, 2, 3, 5).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn truncated_model_is_rejected(cut in any::<prop::sample::Index>()) {
        let bytes = small_model_bytes();
        let cut = cut.index(bytes.len());
        prop_assert!(model_from_bytes(&bytes[..cut]).is_err());
    }

    #[test]
    fn extended_model_is_rejected(extra in prop::collection::vec(any::<u8>(), 1..32)) {
        let mut bytes = small_model_bytes();
        bytes.extend(extra);
        prop_assert!(model_from_bytes(&bytes).is_err());
    }

    /// Arbitrary corruption may yield another valid model but never a panic.
    #[test]
    fn corrupted_model_never_panics(flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..8)) {
        let mut bytes = small_model_bytes();
        let n = bytes.len();
        for (at, v) in flips {
            bytes[at.index(n)] = v;
        }
        let _ = model_from_bytes(&bytes);
    }

    #[test]
    fn truncated_traces_are_rejected(cut in any::<prop::sample::Index>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = synthetic::small_cnn(&mut rng, 28, 1, 2, 3).unwrap();
        let data = synthetic::self_labeled_dataset(&mut rng, &model, 2).unwrap();
        let bytes = traces_to_bytes(&record_traces(&model, &data, EngineOptions::default()).unwrap()).unwrap();
        prop_assert!(traces_from_bytes(&bytes[..cut.index(bytes.len())]).is_err());
    }

    #[test]
    fn truncated_idx_is_rejected(img_cut in any::<prop::sample::Index>(), lbl_cut in any::<prop::sample::Index>()) {
        let images = vec![vec![7u8; 28 * 28]; 3];
        let (img, lbl) = idx_bytes(28, 28, &images, &[1, 2, 3]);
        let (ic, lc) = (img_cut.index(img.len()), lbl_cut.index(lbl.len()));
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        std::fs::write(&ip, &img[..ic]).unwrap();
        std::fs::write(&lp, &lbl).unwrap();
        prop_assert!(load_idx(&ip, &lp).is_err());
        std::fs::write(&ip, &img).unwrap();
        std::fs::write(&lp, &lbl[..lc]).unwrap();
        prop_assert!(load_idx(&ip, &lp).is_err());
    }
}

#[test]
fn model_round_trip_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = synthetic::reference_cnn(&mut rng).unwrap();
    let bytes = model_to_bytes(&model).unwrap();
    let back = model_from_bytes(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(model_to_bytes(&back).unwrap(), bytes);
}

#[test]
fn loader_errors_are_typed() {
    let bytes = small_model_bytes();
    assert!(matches!(
        model_from_bytes(&bytes[..3]),
        Err(Error::Truncated { .. })
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        model_from_bytes(&bad),
        Err(Error::BadMagic { .. })
    ));
}

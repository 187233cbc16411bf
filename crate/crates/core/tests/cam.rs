mod common;

use common::oracle::{self, Img};
use common::{imgs, oracle_ms_cam, wide};
use proptest::prelude::*;
use sarcam::cam::{
    apply_element_weights, channel_weights_gradcam, fuse, match_normalized, ElementWeights,
};
use sarcam::synth::random_bundle;
use sarcam::{
    compute_cam, normalize_minmax, CamConfig, CamError, CamMethod, ChannelStrategy, FeatureBundle,
    Grid, IntermediateSize, Stack,
};

fn ms(m: IntermediateSize) -> CamConfig {
    CamConfig::new(CamMethod::MsCam).with_intermediate(m)
}

fn map_of<T: sarcam::Scalar>(b: &FeatureBundle<T>, cfg: &CamConfig) -> Vec<f64> {
    wide(compute_cam(b, cfg).unwrap().grid())
}

#[test]
fn ms_cam_matches_reference_in_f32_and_f64() {
    for seed in 0..6u64 {
        let b32 = random_bundle(seed, 24, 6, 5);
        let b64 = b32.cast::<f64>();
        for m in [6, 9, 12, 24] {
            let want = oracle_ms_cam(&b64, m);
            let cfg = ms(IntermediateSize::Explicit(m));
            let d32 = oracle::max_abs_diff(&map_of(&b32, &cfg), &want.px);
            let d64 = oracle::max_abs_diff(&map_of(&b64, &cfg), &want.px);
            assert!(d32 <= 1e-5, "seed {seed} M {m}: f32 off by {d32}");
            assert!(d64 <= 1e-10, "seed {seed} M {m}: f64 off by {d64}");
        }
    }
}

#[test]
fn auto_intermediate_side_is_used() {
    let b = random_bundle(3, 32, 8, 4).cast::<f64>();
    let want = oracle_ms_cam(&b, 16);
    let d = oracle::max_abs_diff(&map_of(&b, &ms(IntermediateSize::Auto)), &want.px);
    assert!(d <= 1e-10);
}

#[test]
fn baselines_match_reference() {
    for seed in 10..16u64 {
        let b = random_bundle(seed, 20, 5, 6).cast::<f64>();
        let (f, g, n) = (imgs(&b.features), imgs(&b.grads), b.image_side());
        let cases: [(CamMethod, Img); 3] = [
            (CamMethod::GradCam, oracle::grad_cam(&f, &g, n)),
            (CamMethod::GradCamPp, oracle::grad_cam_pp(&f, &g, n)),
            (CamMethod::LayerCam, oracle::layer_cam(&f, &g, n)),
        ];
        for (method, want) in cases {
            let d = oracle::max_abs_diff(&map_of(&b, &CamConfig::new(method)), &want.px);
            assert!(d <= 1e-10, "{method:?} seed {seed}: {d}");
        }
    }
}

#[test]
fn self_matching_equals_ms_cam_under_constant_positive_gradients() {
    let mut b = random_bundle(4, 16, 4, 3).cast::<f64>();
    b.grads = Stack::from_maps(
        4,
        (0..3).map(|k| Grid::filled(4, 4, 0.5 + k as f64)).collect(),
    )
    .unwrap();
    let m = IntermediateSize::Explicit(8);
    let smc = map_of(
        &b,
        &CamConfig::new(CamMethod::SelfMatchingCam).with_intermediate(m),
    );
    let msc = map_of(&b, &ms(m));
    assert!(oracle::max_abs_diff(&smc, &msc) <= 1e-12);
}

#[test]
fn white_box_reduction_to_grad_cam() {
    for seed in 0..5u64 {
        let mut b = random_bundle(seed, 8, 8, 6).cast::<f64>();
        b.features = b.features.map_channels(normalize_minmax);
        let weighted = apply_element_weights(&b.features, &ElementWeights::ones(6, 8)).unwrap();
        let ones = Grid::filled(8, 8, 1.0);
        let matched = match_normalized(&ones, &weighted, 8).unwrap();
        let reduced = fuse(&matched, &channel_weights_gradcam(&b.grads), 8).unwrap();
        let grad_cam = compute_cam(&b, &CamConfig::new(CamMethod::GradCam)).unwrap();
        let d = oracle::max_abs_diff(&wide(reduced.grid()), &wide(grad_cam.grid()));
        assert!(d <= 1e-12, "seed {seed}: {d}");
    }
}

#[test]
fn layer_cam_unnormalized_core_matches_reference() {
    let b = random_bundle(21, 6, 6, 4).cast::<f64>();
    let raw = oracle::layer_cam_raw(&imgs(&b.features), &imgs(&b.grads));
    let got = map_of(&b, &CamConfig::new(CamMethod::LayerCam));
    let d = oracle::max_abs_diff(&got, &oracle::normalize(&raw).px);
    assert!(d <= 1e-12);
}

#[test]
fn channel_subset_of_one_matches_single_channel_bundle() {
    let b = random_bundle(9, 16, 4, 5).cast::<f64>();
    for k in 0..5 {
        let mut single = b.clone();
        single.features = b.features.permuted(&[k]);
        single.grads = b.grads.permuted(&[k]);
        for method in CamMethod::ALL {
            let cfg = CamConfig::new(method).with_intermediate(IntermediateSize::Explicit(8));
            let sub = map_of(&b, &cfg.clone().with_subset(vec![k]));
            let one = map_of(&single, &cfg);
            assert!(
                oracle::max_abs_diff(&sub, &one) <= 1e-12,
                "{method:?} channel {k}"
            );
        }
    }
}

#[test]
fn strategies_change_channel_weights_only() {
    let b = random_bundle(2, 16, 4, 3).cast::<f64>();
    let gap = map_of(&b, &ms(IntermediateSize::Auto));
    let uni = map_of(
        &b,
        &ms(IntermediateSize::Auto).with_strategy(ChannelStrategy::Uniform),
    );
    assert!(oracle::max_abs_diff(&gap, &uni) > 1e-6);
    assert_eq!(
        map_of(
            &b,
            &ms(IntermediateSize::Auto).with_strategy(ChannelStrategy::GradcamGap)
        ),
        gap
    );
}

#[test]
fn config_errors() {
    let b = random_bundle(1, 16, 4, 3);
    let bad_m = compute_cam(&b, &ms(IntermediateSize::Explicit(3)));
    assert!(matches!(
        bad_m,
        Err(CamError::BadIntermediateSize { m: 3, g: 4, n: 16 })
    ));
    let too_big = compute_cam(&b, &ms(IntermediateSize::Explicit(17)));
    assert!(matches!(too_big, Err(CamError::BadIntermediateSize { .. })));
    let bad_channel = compute_cam(&b, &ms(IntermediateSize::Auto).with_subset(vec![0, 3]));
    assert!(matches!(bad_channel, Err(CamError::BadChannelIndex { .. })));
    let empty = compute_cam(&b, &ms(IntermediateSize::Auto).with_subset(vec![]));
    assert!(matches!(empty, Err(CamError::EmptyChannelSubset)));

    let mut broken = b.clone();
    broken.grads = Stack::filled(3, 5, 0.0);
    assert!(matches!(
        compute_cam(&broken, &ms(IntermediateSize::Auto)),
        Err(CamError::InvalidBundle(_))
    ));
}

fn bundle_strategy() -> impl Strategy<Value = FeatureBundle<f32>> {
    (any::<u64>(), 1usize..=8, 1usize..=6)
        .prop_flat_map(|(seed, g, k)| (g..=3 * g).prop_map(move |n| random_bundle(seed, n, g, k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_scale_invariance(b in bundle_strategy(), c in prop::sample::select(vec![0.1f32, 3.7, 1000.0])) {
        let mut scaled = b.clone();
        scaled.grads = b.grads.scaled(c);
        let cfg = ms(IntermediateSize::Auto);
        prop_assert!(oracle::max_abs_diff(&map_of(&b, &cfg), &map_of(&scaled, &cfg)) <= 1e-6);
    }

    #[test]
    fn channel_permutation_is_exact((b, order) in bundle_strategy().prop_flat_map(|b| {
        let order = Just((0..b.channels()).collect::<Vec<_>>()).prop_shuffle();
        (Just(b), order)
    })) {
        let mut p = b.clone();
        p.features = b.features.permuted(&order);
        p.grads = b.grads.permuted(&order);
        for method in CamMethod::ALL {
            let cfg = CamConfig::new(method);
            prop_assert_eq!(compute_cam(&b, &cfg).unwrap(), compute_cam(&p, &cfg).unwrap());
        }
    }

    #[test]
    fn zero_gradients_give_zero_map(b in bundle_strategy()) {
        let mut z = b.clone();
        z.grads = Stack::filled(b.channels(), b.grid_side(), 0.0);
        for method in CamMethod::ALL {
            prop_assert!(compute_cam(&z, &CamConfig::new(method)).unwrap().is_all_zero(), "{:?}", method);
        }
    }

    #[test]
    fn zero_image_pixels_stay_zero_at_full_resolution(b in bundle_strategy()) {
        let n = b.image_side();
        let cfg = ms(IntermediateSize::Explicit(n));
        let map = compute_cam(&b, &cfg).unwrap();
        let image = normalize_minmax(&b.image);
        for (s, i) in map.as_slice().iter().zip(image.as_slice()) {
            if *i == 0.0 {
                prop_assert_eq!(*s, 0.0);
            }
        }
        let mut dark = b.clone();
        dark.image = Grid::zeros(n, n);
        prop_assert!(compute_cam(&dark, &cfg).unwrap().is_all_zero());
    }

    #[test]
    fn output_is_n_by_n_in_unit_range(b in bundle_strategy()) {
        let n = b.image_side();
        for method in CamMethod::ALL {
            let map = compute_cam(&b, &CamConfig::new(method)).unwrap();
            prop_assert_eq!(map.dims(), (n, n));
            prop_assert!(map.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn f32_pipeline_tracks_f64(b in bundle_strategy()) {
        let cfg = ms(IntermediateSize::Auto);
        let d = oracle::max_abs_diff(&map_of(&b, &cfg), &map_of(&b.cast::<f64>(), &cfg));
        prop_assert!(d <= 1e-4, "{}", d);
    }
}

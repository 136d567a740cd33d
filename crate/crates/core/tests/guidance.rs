mod common;

use mddpm::denoiser::{Activation, Architecture, SmallDenoiserNet, ZeroPredictor};
use mddpm::diffusion::sample_unconditional;
use mddpm::guidance::{
    box_downsample, lowpass, refine, sample_guided, sample_guided_observed, GuidanceOptions, GuidanceSet,
    GuidanceSpec,
};
use mddpm::rng::NoiseDraw;
use mddpm::schedule::{build_schedule, ScheduleKind};
use mddpm::ImageGrid;
use proptest::prelude::*;

fn random(seed: u64, w: usize, h: usize) -> ImageGrid {
    NoiseDraw::from_seed(seed, w, h).grid
}

fn small_net(w: usize, h: usize) -> SmallDenoiserNet {
    let arch = Architecture::Unet {
        width: w,
        height: h,
        base_channels: 4,
        time_dim: 16,
        activation: Activation::Silu,
    };
    SmallDenoiserNet::initialize(arch, 9).unwrap()
}

fn any_factor() -> GuidanceOptions {
    GuidanceOptions {
        allow_any_factor: true,
        ..Default::default()
    }
}

#[test]
fn filter_matches_scalar_reference() {
    for (w, h) in [(8, 8), (16, 12), (13, 9), (5, 7)] {
        for n in 1..=w.min(h) {
            let x = random((w * 31 + h + n) as u64, w, h);
            let got = lowpass(&x, n).unwrap();
            let want = common::scalar_lowpass(x.values(), w, h, n);
            let err = got.values().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{w}x{h} n={n}: {err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn refine_matches_per_pixel_sum(
        seed in any::<u64>(),
        conds in prop::collection::vec((prop::sample::select(vec![1usize, 2, 4, 8]), 1usize..=20), 1..=3),
        t in 1usize..=20,
    ) {
        let x = random(seed, 8, 8);
        let refs: Vec<_> = (0..conds.len()).map(|i| random(seed ^ (i as u64 + 1), 8, 8)).collect();
        let specs = conds.iter().zip(&refs).map(|(&(n, a), y)| GuidanceSpec::new(y.clone(), n, a, "c")).collect();
        let set = GuidanceSet::new(specs, GuidanceOptions::default()).unwrap();
        let got = refine(&x, &refs, &set, t).unwrap();
        let want = common::scalar_refine(&x, &refs, &conds, t);
        for (g, w) in got.values().iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-6);
        }
    }

    #[test]
    fn single_condition_locks_coarse_means(seed in any::<u64>(), n in prop::sample::select(vec![2usize, 3, 4, 5, 8])) {
        let x = random(seed, 16, 16);
        let y = random(seed.wrapping_add(1), 16, 16);
        let set = GuidanceSet::new(vec![GuidanceSpec::new(y.clone(), n, 1, "c")], any_factor()).unwrap();
        let out = refine(&x, std::slice::from_ref(&y), &set, 3).unwrap();
        let d = box_downsample(&out, n).unwrap().max_abs_diff(&box_downsample(&y, n).unwrap());
        prop_assert!(d < 1e-12);
    }
}

#[test]
fn inactive_conditions_leave_the_latent_alone() {
    let x = random(1, 8, 8);
    let y = random(2, 8, 8);
    let set = GuidanceSet::new(vec![GuidanceSpec::new(y.clone(), 2, 10, "late")], GuidanceOptions::default()).unwrap();
    assert!(refine(&x, std::slice::from_ref(&y), &set, 9).unwrap().bitwise_eq(&x));
    assert!(!refine(&x, std::slice::from_ref(&y), &set, 10).unwrap().bitwise_eq(&x));
}

#[test]
fn empty_guidance_is_unconditional_sampling() {
    let sched = build_schedule(ScheduleKind::Cosine, 30).unwrap();
    let net = small_net(16, 16);
    for seed in 0..4 {
        let a = sample_unconditional(&net, &sched, (16, 16), seed).unwrap();
        let b = sample_guided(&net, &sched, &GuidanceSet::empty(), (16, 16), seed).unwrap();
        assert!(a.bitwise_eq(&b));
    }
}

#[test]
fn identity_filter_returns_the_reference() {
    let sched = build_schedule(ScheduleKind::Linear, 25).unwrap();
    let net = small_net(8, 8);
    let y = random(77, 8, 8);
    let set = GuidanceSet::new(vec![GuidanceSpec::new(y.clone(), 1, 1, "y")], GuidanceOptions::default()).unwrap();
    let out = sample_guided(&net, &sched, &set, (8, 8), 5).unwrap();
    assert!(out.bitwise_eq(&y));
}

#[test]
fn coarse_lock_after_every_guided_step() {
    let sched = build_schedule(ScheduleKind::Cosine, 40).unwrap();
    let net = small_net(16, 16);
    let y = random(3, 16, 16);
    for n in [2, 4, 8] {
        let set = GuidanceSet::new(vec![GuidanceSpec::new(y.clone(), n, 1, "y")], GuidanceOptions::default()).unwrap();
        let mut worst: f64 = 0.0;
        let mut steps = 0;
        sample_guided_observed(&net, &sched, &set, (16, 16), 11, |s| {
            let a = box_downsample(s.refined, n).unwrap();
            let b = box_downsample(&s.noisy_refs[0], n).unwrap();
            worst = worst.max(a.max_abs_diff(&b));
            steps += 1;
        })
        .unwrap();
        assert_eq!(steps, 40);
        assert!(worst < 1e-5, "n={n}: {worst}");
    }
}

#[test]
fn observed_applications_match_the_count_formula() {
    let sched = build_schedule(ScheduleKind::Linear, 30).unwrap();
    let y = random(4, 8, 8);
    let set = GuidanceSet::new(
        vec![
            GuidanceSpec::new(y.clone(), 2, 1, "a"),
            GuidanceSpec::new(y.clone(), 4, 10, "b"),
            GuidanceSpec::new(y, 8, 30, "c"),
        ],
        GuidanceOptions::default(),
    )
    .unwrap();
    let mut applied = 0;
    sample_guided_observed(&ZeroPredictor, &sched, &set, (8, 8), 0, |s| applied += s.applied).unwrap();
    assert_eq!(applied, set.application_count(30));
    assert_eq!(applied, 30 + 21 + 1);
}

#[test]
fn guided_sampling_is_seed_deterministic() {
    let sched = build_schedule(ScheduleKind::Cosine, 20).unwrap();
    let net = small_net(8, 8);
    let set = GuidanceSet::new(
        vec![GuidanceSpec::new(random(1, 8, 8), 4, 5, "y")],
        GuidanceOptions::default(),
    )
    .unwrap();
    let a = sample_guided(&net, &sched, &set, (8, 8), 42).unwrap();
    let b = sample_guided(&net, &sched, &set, (8, 8), 42).unwrap();
    let c = sample_guided(&net, &sched, &set, (8, 8), 43).unwrap();
    assert!(a.bitwise_eq(&b));
    assert!(!a.bitwise_eq(&c));
}

#[test]
fn guidance_set_validation() {
    let y = random(1, 8, 8);
    let spec = |n, a| GuidanceSpec::new(y.clone(), n, a, "y");
    assert!(GuidanceSet::new(vec![spec(3, 1)], GuidanceOptions::default()).is_err());
    assert!(GuidanceSet::new(vec![spec(3, 1)], any_factor()).is_ok());
    assert!(GuidanceSet::new(vec![spec(2, 0)], GuidanceOptions::default()).is_err());
    assert!(GuidanceSet::new(vec![spec(2, 1); 5], GuidanceOptions::default()).is_err());
    let many = GuidanceSet::new(
        vec![spec(2, 1); 5],
        GuidanceOptions {
            allow_over_limit: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(many.validate_for((8, 8), 10).is_ok());
    assert!(many.validate_for((8, 4), 10).is_err());
    let late = GuidanceSet::new(vec![spec(2, 11)], GuidanceOptions::default()).unwrap();
    assert!(late.validate_for((8, 8), 10).is_err());
    let wide = GuidanceSet::new(vec![spec(16, 1)], GuidanceOptions::default()).unwrap();
    assert!(wide.validate_for((8, 8), 10).is_err());
}

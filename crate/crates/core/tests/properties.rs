//! Invariants checked over randomized inputs.

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use steer_tse::conditioning::{fuse_mask, spatial_attention, ConditioningMode, DoAOneHot};
use steer_tse::discriminator::DiscOutputs;
use steer_tse::eval::{evaluate, seg_snr_frames, si_snr, Example, SegSnrConfig};
use steer_tse::generator::{Generator, GeneratorConfig};
use steer_tse::io::{parse_manifest, write_manifest, ManifestRecord, SceneSummary, Split};
use steer_tse::losses::{adv_gen_loss, disc_loss, feat_match_loss, scalar};
use steer_tse::nn::softmax;
use steer_tse::scene::{
    check_scene, doa_to_index, render_with_rirs, sample_scene, simulate_rir, DoaGrid, Rir, RirOptions, RoomSpec,
    SimulationConfig,
};
use steer_tse::tf::{assemble_input, istft_framed, stft_framed, StftConfig};
use steer_tse::training::{Checkpoint, RngState};
use steer_tse::SPEED_OF_SOUND;

const DIVISORS: [f64; 8] = [1.0, 2.0, 5.0, 10.0, 15.0, 30.0, 45.0, 90.0];

fn signal(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_abs(t: &Tensor) -> f64 {
    t.abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

#[test]
fn sampled_scenes_satisfy_every_constraint() {
    let cfg = SimulationConfig::default();
    for seed in 0..10_000u64 {
        let scene = sample_scene(seed, &cfg).unwrap();
        check_scene(&scene, &cfg).unwrap();
        let r = &scene.room;
        assert!((2.5..=5.0).contains(&r.width) && (3.0..=9.0).contains(&r.length));
        assert!((2.2..=3.5).contains(&r.height) && (0.2..=0.5).contains(&r.t60));
        assert_eq!(scene.interferer_count(), 5);
        assert_eq!(scene.array.mic_positions().len(), 3);
    }
}

/// Kolmogorov distribution tail `P(K > x)`.
fn kolmogorov_tail(x: f64) -> f64 {
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-2.0 * (k * k) as f64 * x * x).exp();
        p += if k % 2 == 1 { term } else { -term };
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn reverberation_times_are_uniform() {
    let cfg = SimulationConfig::default();
    let mut t60: Vec<f64> = (0..1000u64).map(|s| sample_scene(s, &cfg).unwrap().room.t60).collect();
    t60.sort_by(f64::total_cmp);
    let n = t60.len() as f64;
    let d = t60
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let cdf = (t - 0.2) / 0.3;
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max);
    let p = kolmogorov_tail((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d);
    assert!(p > 0.01, "KS statistic {d}, p = {p}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn doa_grid_round_trips(res_i in 0usize..DIVISORS.len(), index in 0usize..360) {
        let res = DIVISORS[res_i];
        let grid = DoaGrid::new(res).unwrap();
        let i = index % grid.len();
        prop_assert_eq!(doa_to_index(i as f64 * res, res), i);
        prop_assert_eq!(grid.index(grid.degrees(i)), i);
    }

    #[test]
    fn direct_path_within_one_sample(
        w in 2.5f64..5.0, l in 3.0f64..9.0, h in 2.2f64..3.5, t60 in 0.2f64..0.5,
        s in prop::array::uniform3(0.05f64..0.95), m in prop::array::uniform3(0.05f64..0.95),
    ) {
        let room = RoomSpec { width: w, length: l, height: h, t60 };
        let src = [s[0] * w, s[1] * l, s[2] * h];
        let mic = [m[0] * w, m[1] * l, m[2] * h];
        let opts = RirOptions { length: Some(2000), ..Default::default() };
        let rir = simulate_rir(&room, src, &[mic], 16_000, opts).unwrap();
        let taps = &rir.taps[0];
        prop_assert!(taps.iter().all(|v| v.is_finite()));
        let d = src.iter().zip(&mic).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let delay = d * 16_000.0 / SPEED_OF_SOUND;
        let first = taps.iter().position(|&v| v != 0.0).unwrap();
        prop_assert!((first as f64 - delay).abs() <= 1.0);
    }

    #[test]
    fn mixture_is_linear_in_the_target(seed in any::<u64>(), gain in 0.1f64..10.0) {
        let target = signal(seed, 600);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let rir = Rir {
            taps: (0..3).map(|_| (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            sample_rate: 16_000,
        };
        let a = render_with_rirs(&rir, &[], &target, &[], 0.0).unwrap();
        let scaled: Vec<f64> = target.iter().map(|v| v * gain).collect();
        let b = render_with_rirs(&rir, &[], &scaled, &[], 0.0).unwrap();
        let err = (&b.mixture - &(&a.mixture * gain)).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        let scale = b.mixture.mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        prop_assert!(err <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn stft_round_trip(seed in any::<u64>(), len in 200usize..3000, cfg_i in 0usize..4) {
        let cfg = [
            StftConfig::generator(),
            StftConfig::provider(),
            StftConfig::new(256, 256, 64),
            StftConfig::new(128, 96, 32),
        ][cfg_i];
        let x = signal(seed, len);
        let y = istft_framed(&stft_framed(&x, &cfg).unwrap(), &cfg, len).unwrap();
        let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = x.iter().map(|a| a * a).sum();
        prop_assert!((num / den).sqrt() < 1e-6);
    }

    #[test]
    fn input_phase_is_scale_invariant(seed in any::<u64>(), gains in prop::array::uniform3(0.01f64..100.0)) {
        let cfg = StftConfig::new(128, 128, 32);
        let x = Array2::from_shape_vec((3, 700), signal(seed, 2100)).unwrap();
        let mut y = x.clone();
        for (mut row, g) in y.rows_mut().into_iter().zip(gains) {
            row *= g;
        }
        let a = assemble_input(&x, &cfg).unwrap().values;
        let b = assemble_input(&y, &cfg).unwrap().values;
        for ((c, f, t), &va) in a.indexed_iter() {
            let vb = b[[c, f, t]];
            if c < 3 {
                if va > -15.0 {
                    prop_assert!((vb - va - gains[c].ln()).abs() < 1e-9);
                }
            } else {
                prop_assert!((vb - va).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spectrogram_energy_tracks_signal_energy(seed in any::<u64>()) {
        // framed Hann at hop N/4: sum_t w^2(n - t hop) = 3N / (8 hop) = 1.5
        let cfg = StftConfig::new(512, 512, 128);
        // support kept where every sample lies under four full windows
        let mut x = signal(seed, 4000);
        x[..512].fill(0.0);
        x[3488..].fill(0.0);
        let spec = stft_framed(&x, &cfg).unwrap();
        let mut total = 0.0;
        for ((f, _), c) in spec.values.indexed_iter() {
            let w = if f == 0 || f == 256 { 1.0 } else { 2.0 };
            total += w * c.norm_sqr();
        }
        let e: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!((total / (512.0 * 1.5 * e) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn si_snr_ignores_estimate_scale(seed in any::<u64>(), gain in 1e-3f64..1e3) {
        let r = signal(seed, 500);
        let e: Vec<f64> = signal(seed ^ 7, 500).iter().zip(&r).map(|(n, s)| s + 0.5 * n).collect();
        let scaled: Vec<f64> = e.iter().map(|v| v * gain).collect();
        prop_assert!((si_snr(&scaled, &r).unwrap() - si_snr(&e, &r).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn seg_snr_frames_are_clamped(seed in any::<u64>(), noise in 0.0f64..10.0) {
        let r = signal(seed, 3200);
        let e: Vec<f64> = signal(seed ^ 3, 3200).iter().zip(&r).map(|(n, s)| s + noise * n).collect();
        let cfg = SegSnrConfig::default();
        for v in seg_snr_frames(&e, &r, &cfg, 16_000).unwrap() {
            prop_assert!((-10.0..=35.0).contains(&v));
        }
    }

    #[test]
    fn channel_softmax_sums_to_one(seed in any::<u64>(), scale in 0.1f64..100.0) {
        let x = (Tensor::randn(0f64, 1.0, (2, 5, 3, 4), &Device::Cpu).unwrap() * scale).unwrap();
        let _ = seed;
        let s = softmax(&x, 1).unwrap().sum(1).unwrap();
        prop_assert!(max_abs(&(s - 1.0).unwrap()) < 1e-6);
    }

    #[test]
    fn mask_and_fusion_stay_bounded(scale in 0.1f64..1e3) {
        let dev = Device::Cpu;
        let e = (Tensor::randn(0f64, 1.0, (1, 4, 6, 5), &dev).unwrap() * scale).unwrap();
        let q = (Tensor::randn(0f64, 1.0, (1, 4, 6, 5), &dev).unwrap() * scale).unwrap();
        let logits = (Tensor::randn(0f64, 1.0, (1, 4, 6, 5), &dev).unwrap() * scale).unwrap();
        let a = spatial_attention(&e, &q).unwrap();
        let (fused, m) = fuse_mask(&e, &a, &logits).unwrap();
        let lo = m.flatten_all().unwrap().min(0).unwrap().to_scalar::<f64>().unwrap();
        let hi = m.flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap();
        prop_assert!(lo >= 0.0 && hi <= 2.0);
        // attention is a convex combination over channels of E'
        prop_assert!(max_abs(&a) <= max_abs(&e) * (1.0 + 1e-12));
        prop_assert!(max_abs(&fused) <= 3.0 * max_abs(&e) * (1.0 + 1e-12));
    }

    #[test]
    fn hinge_losses_are_nonnegative_and_monotone(scores in prop::collection::vec(-3.0f64..3.0, 6), bump in 0.0f64..2.0) {
        let dev = Device::Cpu;
        let out = |v: &[f64]| DiscOutputs {
            scores: vec![Tensor::from_slice(&v[..4], (1, 4), &dev).unwrap(), Tensor::from_slice(&v[4..], (1, 2), &dev).unwrap()],
            features: vec![vec![], vec![]],
        };
        let fake = out(&scores);
        let higher: Vec<f64> = scores.iter().map(|s| s + bump).collect();
        let adv = scalar(&adv_gen_loss(&fake).unwrap()).unwrap();
        prop_assert!(adv >= 0.0);
        prop_assert!(scalar(&adv_gen_loss(&out(&higher)).unwrap()).unwrap() <= adv + 1e-12);
        prop_assert!(scalar(&disc_loss(&out(&higher), &fake).unwrap()).unwrap() >= 0.0);
    }

    #[test]
    fn feature_matching_is_symmetric_and_separating(seed in any::<u64>()) {
        let dev = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feats = || -> Vec<Vec<Tensor>> {
            (0..2)
                .map(|_| (0..3).map(|_| {
                    let v: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
                    Tensor::from_vec(v, (1, 3, 4), &dev).unwrap()
                }).collect())
                .collect()
        };
        let score = || vec![Tensor::zeros((1, 2), DType::F64, &dev).unwrap(); 2];
        let a = DiscOutputs { scores: score(), features: feats() };
        let b = DiscOutputs { scores: score(), features: feats() };
        let ab = scalar(&feat_match_loss(&a, &b).unwrap()).unwrap();
        let ba = scalar(&feat_match_loss(&b, &a).unwrap()).unwrap();
        prop_assert!((ab - ba).abs() < 1e-15);
        prop_assert!(ab > 0.0);
        prop_assert_eq!(scalar(&feat_match_loss(&a, &a).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn manifests_round_trip_byte_identically(
        ids in prop::collection::vec("[a-z0-9_]{1,12}", 1..6),
        snr in -10.0f64..10.0, doa in 0usize..72,
    ) {
        let records: Vec<ManifestRecord> = ids.iter().enumerate().map(|(i, id)| ManifestRecord {
            id: id.clone(),
            mixture: format!("audio/{id}_mix.wav").into(),
            target: format!("audio/{id}_target.wav").into(),
            snr_db: snr + i as f64,
            doa_index: doa,
            doa_degrees: doa as f64 * 5.0,
            scene: SceneSummary { room: [3.1, 4.2, 2.7], t60: 0.25 + 0.01 * i as f64, interferers: 5 },
            split: [Split::Train, Split::Valid, Split::Test][i % 3],
        }).collect();
        let mut first = Vec::new();
        write_manifest(&mut first, &records).unwrap();
        let parsed = parse_manifest(&first).unwrap();
        prop_assert_eq!(&parsed, &records);
        let mut second = Vec::new();
        write_manifest(&mut second, &parsed).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn checkpoints_round_trip_byte_identically(seed in any::<u64>(), step in 0u64..1_000_000) {
        let dev = Device::Cpu;
        let (_, store) = Generator::init(GeneratorConfig::tiny(ConditioningMode::XPhi, 4), seed, DType::F32, &dev).unwrap();
        let rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ck = Checkpoint::new("stage2", step, RngState::capture(seed, &rng), serde_json::json!({"seed": seed}));
        ck.add_store("generator", &store);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, &dev).unwrap();
        prop_assert_eq!(back.step, step);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generator_modes_ignore_unused_conditions(seed in any::<u64>(), a in 0usize..4, b in 0usize..4) {
        let dev = Device::Cpu;
        let base = GeneratorConfig::tiny(ConditioningMode::XPhiDl, 4);
        let feature_shape = base.feature_shape.unwrap_or((3, 9));
        let mut x_rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..9 * 17 * 6).map(|_| x_rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(x, (1, 9, 17, 6), &dev).unwrap();
        let codes = |i| DoAOneHot::batch(&[steer_tse::conditioning::encode_doa(i, 4).unwrap()], DType::F64, &dev).unwrap();
        let feats = |s: f64| (Tensor::ones((1, feature_shape.0, feature_shape.1, 4), DType::F64, &dev).unwrap() * s).unwrap();

        let cfg = GeneratorConfig { mode: ConditioningMode::XPhi, feature_shape: None, ..base.clone() };
        let (g, _) = Generator::init(cfg, seed, DType::F64, &dev).unwrap();
        let y1 = g.forward(&x, &codes(a), Some(&feats(1.0))).unwrap();
        let y2 = g.forward(&x, &codes(a), Some(&feats(-3.0))).unwrap();
        prop_assert_eq!(max_abs(&(y1 - y2).unwrap()), 0.0);

        let cfg = GeneratorConfig { mode: ConditioningMode::XDl, feature_shape: Some(feature_shape), ..base };
        let (g, _) = Generator::init(cfg, seed, DType::F64, &dev).unwrap();
        let y1 = g.forward(&x, &codes(a), Some(&feats(0.5))).unwrap();
        let y2 = g.forward(&x, &codes(b), Some(&feats(0.5))).unwrap();
        prop_assert_eq!(max_abs(&(y1 - y2).unwrap()), 0.0);
    }
}

#[test]
fn evaluation_is_pure() {
    let cfg = SimulationConfig {
        interferer_count: 1,
        ..SimulationConfig::default()
    };
    let scene = sample_scene(3, &cfg).unwrap();
    let target = signal(1, 4000);
    let item = steer_tse::scene::render_mixture(&scene, &target, &[signal(2, 4000)], 0.0, 0, 16_000).unwrap();
    let examples = vec![Example::from(&item); 3];
    let model = |m: &Array2<f64>, _: usize| -> steer_tse::Result<Vec<f64>> { Ok(m.row(1).iter().map(|v| v * 0.5).collect()) };
    let a = evaluate(&model, &examples, &SegSnrConfig::default(), 16_000).unwrap();
    let b = evaluate(&model, &examples, &SegSnrConfig::default(), 16_000).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.overall.count, 3);
}

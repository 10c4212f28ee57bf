//! Acceptance suite. Runs every criterion at its stated tolerance, prints one PASS/FAIL
//! line per criterion and exits non-zero if any hard check fails.

mod common;

use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{gradient_error, random_signal, random_var};
use steer_tse::conditioning::{encode_doa, film, fuse_mask, spatial_attention, ConditioningMode, DoAOneHot};
use steer_tse::discriminator::{DiscConfig, DiscOutputs, MultiScaleDiscriminator};
use steer_tse::eval::{evaluate, selectivity_sweep, Example, Extractor, SegSnrConfig};
use steer_tse::generator::{Generator, GeneratorConfig};
use steer_tse::io::{simulate_item, Corpus, DatasetConfig, ExperimentConfig, Split};
use steer_tse::losses::{adv_gen_loss, disc_loss, feat_match_loss, scalar, weighted_gen_loss, LossWeights, ReconLoss};
use steer_tse::nn::softplus;
use steer_tse::scene::{
    fft_convolve, render_mixture, render_with_rirs, sample_scene, scene_rirs, SimulationConfig, REFERENCE_MIC,
};
use steer_tse::tf::{istft_framed, stft_framed, DiffStft, Resolution, StftConfig};
use steer_tse::training::{train_stage1, FeatureProvider, GanTrainer, Precision};
use steer_tse::SPEED_OF_SOUND;

const FS: u32 = 16_000;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Direct-form linear convolution truncated to `x.len()`.
fn naive_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let k_max = n.min(h.len() - 1);
            (0..=k_max).map(|k| h[k] * x[n - k]).sum()
        })
        .collect()
}

/// Reverberation time from the Schroeder backward integral, fitted between -5 and -25 dB.
fn schroeder_t60(h: &[f64], fs: u32) -> f64 {
    let mut edc = vec![0.0; h.len()];
    let mut acc = 0.0;
    for i in (0..h.len()).rev() {
        acc += h[i] * h[i];
        edc[i] = acc;
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / edc[0]).log10()).collect();
    let pts: Vec<(f64, f64)> = db
        .iter()
        .enumerate()
        .filter(|(_, &d)| (-25.0..=-5.0).contains(&d))
        .map(|(i, &d)| (i as f64 / fs as f64, d))
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    -60.0 / (sxy / sxx)
}

fn c1_stft_round_trip() -> Outcome {
    let start = Instant::now();
    let cfg = StftConfig::generator();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let x = random_signal(seed, FS as usize);
        let y = istft_framed(&stft_framed(&x, &cfg).unwrap(), &cfg, x.len()).unwrap();
        let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / energy(&x).sqrt();
        worst = worst.max(err);
    }
    let t = start.elapsed();
    Outcome::new(worst < 1e-6 && within(t, 10.0), format!("max rel err {worst:.2e}, {:.2} s", t.as_secs_f64()))
}

fn c2_rir() -> Outcome {
    let sim = SimulationConfig::default();
    let mut peak_ok = 0;
    let mut t60_ok = 0;
    let mut worst_t60 = 0.0f64;
    for seed in 0..50u64 {
        let scene = sample_scene(seed, &sim).unwrap();
        let (rir, _) = scene_rirs(&scene, FS).unwrap();
        let src = scene.target_position();
        let mics = scene.array.mic_positions();
        let all_peaks = rir.taps.iter().zip(&mics).all(|(h, m)| {
            let d = src.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let analytic = d * FS as f64 / SPEED_OF_SOUND;
            let peak = h
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap()
                .0;
            (peak as f64 - analytic).abs() <= 1.0
        });
        peak_ok += all_peaks as usize;
        let est = schroeder_t60(&rir.taps[REFERENCE_MIC], FS);
        let rel = (est / scene.room.t60 - 1.0).abs();
        worst_t60 = worst_t60.max(rel);
        t60_ok += (rel <= 0.25) as usize;
    }
    Outcome::new(
        peak_ok == 50 && t60_ok == 50,
        format!("direct-path peak ok {peak_ok}/50, T60 within 25% {t60_ok}/50 (worst {:.1}%)", 100.0 * worst_t60),
    )
}

fn c3_mixture_snr() -> Outcome {
    let sim = SimulationConfig {
        interferer_count: 2,
        ..SimulationConfig::default()
    };
    let len = 8000;
    let mut worst = 0.0f64;
    for (i, &snr) in [-5.0, 0.0, 5.0].iter().enumerate() {
        let scene = sample_scene(100 + i as u64, &sim).unwrap();
        let target = random_signal(10 + i as u64, len);
        let interferers: Vec<Vec<f64>> = (0..2).map(|k| random_signal(20 + 3 * i as u64 + k, len)).collect();
        let item = render_mixture(&scene, &target, &interferers, snr, 0, FS).unwrap();
        let (rir, _) = scene_rirs(&scene, FS).unwrap();
        let image = naive_convolve(&target, &rir.taps[REFERENCE_MIC]);
        let residual: Vec<f64> = item.reference().iter().zip(&image).map(|(m, t)| m - t).collect();
        let realized = 10.0 * (energy(&image) / energy(&residual)).log10();
        worst = worst.max((realized - snr).abs());
    }
    // K = 0: per-channel convolution, untouched by any scaling
    let scene = sample_scene(7, &SimulationConfig {
        interferer_count: 0,
        ..SimulationConfig::default()
    })
    .unwrap();
    let (rir, _) = scene_rirs(&scene, FS).unwrap();
    let target = random_signal(8, len);
    let item = render_with_rirs(&rir, &[], &target, &[], 0.0).unwrap();
    let exact = rir
        .taps
        .iter()
        .enumerate()
        .all(|(m, h)| item.mixture.row(m).iter().zip(fft_convolve(&target, h)).all(|(a, b)| a.to_bits() == b.to_bits()));
    let naive_err = rir
        .taps
        .iter()
        .enumerate()
        .map(|(m, h)| {
            item.mixture
                .row(m)
                .iter()
                .zip(naive_convolve(&target, h))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    Outcome::new(
        worst <= 0.05 && exact && naive_err < 1e-9,
        format!("max SNR error {worst:.2e} dB; K=0 bit-exact {exact}, vs direct convolution {naive_err:.1e}"),
    )
}

fn outputs(scores: &[&[f64]], features: &[&[f64]]) -> DiscOutputs {
    let dev = Device::Cpu;
    let t = |v: &[f64]| Tensor::from_slice(v, (1, v.len()), &dev).unwrap();
    DiscOutputs {
        scores: scores.iter().map(|s| t(s)).collect(),
        features: features.iter().map(|f| vec![t(f)]).collect(),
    }
}

fn c4_loss_closed_forms() -> Outcome {
    let zero = outputs(&[&[0.0; 4], &[0.0; 3]], &[&[0.0; 2], &[0.0; 2]]);
    let adv0 = scalar(&adv_gen_loss(&zero).unwrap()).unwrap();
    let d0 = scalar(&disc_loss(&zero, &zero).unwrap()).unwrap();

    let real = outputs(&[&[0.5, 2.0, -1.0], &[1.5, 0.25]], &[&[1.0, -2.0, 0.5], &[0.0, 4.0]]);
    let fake = outputs(&[&[0.5, -3.0, 1.5], &[3.0, 0.2]], &[&[0.0, -1.0, 2.5], &[1.0, 1.0]]);
    // [1 - s]_+ per scale: (0.5 + 4 + 0)/3 and (0 + 0.8)/2
    let adv_hand = (4.5 / 3.0 + 0.4) / 2.0;
    // real [1 - s]_+: (0.5 + 0 + 2)/3, (0 + 0.75)/2; fake [1 + s]_+: (1.5 + 0 + 2.5)/3, (4 + 1.2)/2
    let d_hand = (2.5 / 3.0 + 4.0 / 3.0 + (0.75 + 5.2) / 2.0) / 2.0;
    // per-layer mean |diff|: (1 + 1 + 2)/3 and (1 + 3)/2
    let fm_hand = (4.0 / 3.0 + 2.0) / 2.0;
    let adv = scalar(&adv_gen_loss(&fake).unwrap()).unwrap();
    let d = scalar(&disc_loss(&real, &fake).unwrap()).unwrap();
    let fm = scalar(&feat_match_loss(&real, &fake).unwrap()).unwrap();
    let fm_same = scalar(&feat_match_loss(&real, &real).unwrap()).unwrap();
    let errs = [adv0 - 1.0, d0 - 2.0, adv - adv_hand, d - d_hand, fm - fm_hand, fm_same];
    let worst = errs.iter().map(|e| e.abs()).fold(0.0, f64::max);
    Outcome::new(
        worst < 1e-6,
        format!("L_adv(0) = {adv0}, L_D(0) = {d0}, max deviation from hand values {worst:.1e}"),
    )
}

fn weighted_sum(t: &Tensor, seed: u64) -> Tensor {
    let r = random_var(t.dims(), 1.0, seed);
    (t * r.as_tensor()).unwrap().sum_all().unwrap()
}

fn generator_loss_error(mode: ConditioningMode, seed: u64) -> f64 {
    let dev = Device::Cpu;
    let stft = StftConfig::new(32, 32, 8);
    let len = 96;
    let res = [Resolution { stft, mel_bands: 4 }];
    let rl = ReconLoss::new(&res, FS, DType::F64, &dev).unwrap();
    let synth = DiffStft::new(stft, DType::F64, &dev).unwrap();
    let (disc, _) = MultiScaleDiscriminator::init(DiscConfig::tiny(), seed, DType::F64, &dev).unwrap();
    let target = Tensor::from_vec(random_signal(seed + 1, len), (1, len), &dev).unwrap();
    let frames = len.div_ceil(stft.hop_length) + 1;
    let x = random_var(&[1, 9, stft.bins(), frames], 1.0, seed + 2).as_tensor().clone();
    let feats = random_var(&[1, 2, 5, 4], 1.0, seed + 3).as_tensor().clone();
    let codes = DoAOneHot::batch(&[encode_doa(1, 4).unwrap()], DType::F64, &dev).unwrap();
    let mut cfg = GeneratorConfig::tiny(mode, 4);
    if mode.uses_features() {
        cfg.feature_shape = Some((2, 5));
    }
    let (g, store) = Generator::init(cfg, seed + 4, DType::F64, &dev).unwrap();
    let loss = || {
        let grid = g.forward(&x, &codes, Some(&feats)).unwrap();
        let mag = softplus(&grid.narrow(1, 0, 1).unwrap().squeeze(1).unwrap()).unwrap();
        let re = (&mag * grid.narrow(1, 1, 1).unwrap().squeeze(1).unwrap()).unwrap();
        let im = (&mag * grid.narrow(1, 2, 1).unwrap().squeeze(1).unwrap()).unwrap();
        let s_hat = synth.inverse_framed(&re, &im, len).unwrap();
        let (lt, lf) = rl.forward(&target, &s_hat).unwrap();
        let fake = disc.forward(&s_hat).unwrap();
        let real = disc.forward(&target).unwrap().detach();
        let adv = adv_gen_loss(&fake).unwrap();
        let feat = feat_match_loss(&real, &fake).unwrap();
        weighted_gen_loss(&(lt + lf).unwrap(), Some(&adv), Some(&feat), &LossWeights::default()).unwrap()
    };
    let vars: Vec<_> = store.vars().map(|(_, v)| v).collect();
    gradient_error(&vars, &loss, 3, seed + 5)
}

fn c5_gradients() -> Outcome {
    let start = Instant::now();
    let e = random_var(&[2, 4, 5, 3], 1.5, 1);
    let q = random_var(&[2, 4, 5, 3], 1.5, 2);
    let attention = gradient_error(&[&e, &q], &|| weighted_sum(&spatial_attention(e.as_tensor(), q.as_tensor()).unwrap(), 3), 400, 4);
    let l = random_var(&[2, 4, 5, 3], 4.0, 5);
    let fusion = gradient_error(
        &[&e, &q, &l],
        &|| {
            let (fused, mask) = fuse_mask(e.as_tensor(), q.as_tensor(), l.as_tensor()).unwrap();
            (weighted_sum(&fused, 6) + weighted_sum(&mask, 7)).unwrap()
        },
        400,
        8,
    );
    let gamma = random_var(&[2, 4, 1, 1], 1.0, 9);
    let beta = random_var(&[2, 4, 5, 1], 1.0, 10);
    let filmed = gradient_error(
        &[&e, &gamma, &beta],
        &|| weighted_sum(&film(e.as_tensor(), gamma.as_tensor(), beta.as_tensor()).unwrap(), 11),
        400,
        12,
    );
    let generator = ConditioningMode::ALL
        .iter()
        .enumerate()
        .map(|(i, &m)| generator_loss_error(m, 100 + 10 * i as u64))
        .fold(0.0, f64::max);
    let worst = [attention, fusion, filmed, generator].into_iter().fold(0.0, f64::max);
    let t = start.elapsed();
    Outcome::new(
        worst < 1e-3 && within(t, 300.0),
        format!(
            "attention {attention:.1e}, fusion {fusion:.1e}, FiLM {filmed:.1e}, generator {generator:.1e}, {:.1} s",
            t.as_secs_f64()
        ),
    )
}

fn c6_mask_bounds() -> Outcome {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shape = (4, 16, 40, 50);
    let n = 4 * 16 * 40 * 50;
    let mut total = 0usize;
    let mut violations = 0usize;
    for scale in [1.0, 10.0, 100.0, 1e4] {
        let logits: Vec<f32> = (0..n).map(|_| (rng.random_range(-1.0..1.0) * scale) as f32).collect();
        let l = Tensor::from_vec(logits, shape, &dev).unwrap();
        let e = Tensor::randn(0f32, 1.0, shape, &dev).unwrap();
        let (_, mask) = fuse_mask(&e, &e, &l).unwrap();
        let m: Vec<f32> = mask.flatten_all().unwrap().to_vec1().unwrap();
        violations += m.iter().filter(|v| !(0.0..=2.0).contains(*v)).count();
        total += m.len();
    }
    // masks inside a randomly initialised generator
    let cfg = GeneratorConfig::desk(ConditioningMode::XPhi, 72);
    let (g, _) = Generator::init(cfg.clone(), 6, DType::F32, &dev).unwrap();
    let x = (Tensor::randn(0f32, 1.0, (2, 9, 257, 30), &dev).unwrap() * 5.0).unwrap();
    let codes = DoAOneHot::batch(&[encode_doa(3, 72).unwrap(), encode_doa(40, 72).unwrap()], DType::F32, &dev).unwrap();
    let trace = g.encode(&x, &codes, None).unwrap();
    for block in &trace.blocks {
        let m: Vec<f32> = block.mask.flatten_all().unwrap().to_vec1().unwrap();
        violations += m.iter().filter(|v| !(0.0..=2.0).contains(*v)).count();
        total += m.len();
    }
    Outcome::new(violations == 0 && total >= 100_000, format!("{violations} violations over {total} elements"))
}

fn c7_shapes() -> Outcome {
    let dev = Device::Cpu;
    let t = 40;
    let x = Tensor::randn(0f32, 1.0, (1, 9, 257, t), &dev).unwrap();
    let codes = DoAOneHot::batch(&[encode_doa(24, 72).unwrap()], DType::F32, &dev).unwrap();
    let feats = Tensor::randn(0f32, 1.0, (1, 8, 257, 21), &dev).unwrap();
    let mut shapes = Vec::new();
    let mut ok = true;
    for mode in ConditioningMode::ALL {
        let mut cfg = GeneratorConfig::desk(mode, 72);
        if mode.uses_features() {
            cfg.feature_shape = Some((8, 257));
        }
        let (g, _) = Generator::init(cfg, 7, DType::F32, &dev).unwrap();
        let y = g.forward(&x, &codes, Some(&feats)).unwrap();
        ok &= y.dims() == [1, 3, 257, t];
        shapes.push(format!("{mode}: {:?}", y.dims()));
    }
    Outcome::new(ok, format!("(9, 257, {t}) -> {}", shapes.join(", ")))
}

fn c8_overfit() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::toy();
    let corpus = Corpus::synthetic(4, 1.0, 8, FS);
    let ds = DatasetConfig {
        count: 1,
        item_seconds: OVERFIT_SECONDS,
        valid_fraction: 0.0,
        ..cfg.dataset.clone()
    };
    let (item, _) = simulate_item(0, &corpus, &cfg.simulation, &ds, 8).unwrap();
    let example = Example::from(&item);
    let mut tc = cfg.train.clone();
    tc.weights = LossWeights::RECONSTRUCTION_ONLY;
    tc.batch_size = 1;
    tc.segment_samples = example.len();
    tc.steps = 1000;
    tc.generator_optim.lr = OVERFIT_LR;
    let mut trainer = GanTrainer::new(tc).unwrap();
    let crop = [(example.mixture.clone(), example.target.clone(), example.doa_index)];
    let batch = trainer.make_batch(&crop, None).unwrap();
    let initial = trainer.gan_step(&batch).unwrap().l_rec;
    let mut last = initial;
    while trainer.step < 1000 && last >= 0.1 * initial {
        last = trainer.gan_step(&batch).unwrap().l_rec;
    }
    let t = start.elapsed();
    Outcome::new(
        last < 0.1 * initial && within(t, 600.0),
        format!(
            "L_rec {initial:.3} -> {last:.3} ({:.1}%) after {} steps, {:.0} s",
            100.0 * last / initial,
            trainer.step,
            t.as_secs_f64()
        ),
    )
}

const OVERFIT_SECONDS: f64 = 0.5;
const OVERFIT_LR: f64 = 1e-3;

/// Stage-2 steps per conditioning mode in the toy pipeline.
const TOY_STAGE1_STEPS: u64 = 300;
const TOY_STAGE2_STEPS: u64 = 800;

struct ToyResult {
    c9: Outcome,
    c10: Outcome,
}

fn toy_pipeline() -> ToyResult {
    let start = Instant::now();
    let cfg = ExperimentConfig::toy();
    let corpus = Corpus::synthetic(120, 8.0, 11, FS);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for i in 0..cfg.dataset.count {
        let (item, split) = simulate_item(i, &corpus, &cfg.simulation, &cfg.dataset, cfg.seed).unwrap();
        let mut ex = Example::from(&item);
        ex.id = format!("train_{i:04}");
        if split == Split::Valid {
            valid.push(ex);
        } else {
            train.push(ex);
        }
    }
    let audio_min = cfg.dataset.count as f64 * cfg.dataset.item_seconds / 60.0;
    // held-out talkers and scenes
    let test_corpus = Corpus::synthetic(30, 8.0, 99, FS);
    let test_ds = DatasetConfig {
        count: 40,
        test: true,
        ..cfg.dataset.clone()
    };
    let test: Vec<Example> = (0..test_ds.count)
        .map(|i| {
            let mut ex = Example::from(&simulate_item(i, &test_corpus, &cfg.simulation, &test_ds, 1234).unwrap().0);
            ex.id = format!("test_{i:04}");
            ex
        })
        .collect();

    let mut tc = cfg.train.clone();
    tc.stage = 1;
    tc.steps = TOY_STAGE1_STEPS;
    tc.log_every = 0;
    let stage1 = train_stage1(&train, &valid, &tc, &mut |_| {}).unwrap();
    let provider: &dyn FeatureProvider = &stage1.provider;

    let seg = SegSnrConfig::default();
    let grid = cfg.simulation.grid().unwrap();
    let mut means = Vec::new();
    let mut sweep = (0, 0, 0);
    for mode in [ConditioningMode::XPhi, ConditioningMode::XPhiDl] {
        let mut tc = cfg.train.clone();
        tc.generator.mode = mode;
        tc.steps = TOY_STAGE2_STEPS;
        tc.log_every = 0;
        let mut trainer = GanTrainer::new(tc).unwrap();
        let p = mode.uses_features().then_some(provider);
        trainer.train(&train, &valid, p, &mut |_| {}).unwrap();
        let model = |m: &Array2<f64>, d: usize| trainer.extract(m, d, p);
        let report = evaluate(&model, &test, &seg, FS).unwrap();
        means.push(report.overall.delta_si_snr);
        if mode == ConditioningMode::XPhiDl {
            for ex in test.iter().take(20) {
                let profile = selectivity_sweep(&model as &dyn Extractor, ex, &grid, cfg.evaluation.sweep_step_deg).unwrap();
                sweep.0 += profile.peak_within(1) as usize;
                sweep.1 += (profile.matched() > 0.0 && profile.antipodal() <= 0.0) as usize;
                sweep.2 += 1;
            }
        }
    }
    let t = start.elapsed();
    let (phi, phi_dl) = (means[0], means[1]);
    let c9 = Outcome::new(
        phi_dl > 0.0 && within(t, 7200.0),
        format!(
            "{audio_min:.0} min audio, {:.0} min total; mean dSI-SNR {{X,phi}} {phi:+.2} dB, {{X,phi,D_L}} {phi_dl:+.2} dB; \
             soft ordering {{X,phi,D_L}} >= {{X,phi}}: {}",
            t.as_secs_f64() / 60.0,
            if phi_dl >= phi { "holds" } else { "does not hold" }
        ),
    );
    let need = (0.7 * sweep.2 as f64).ceil() as usize;
    let c10 = Outcome::new(
        sweep.0 >= need && sweep.1 >= need,
        format!(
            "argmax within one step {}/{}, matched > 0 and antipode <= 0 {}/{}",
            sweep.0, sweep.2, sweep.1, sweep.2
        ),
    );
    ToyResult { c9, c10 }
}

fn determinism_run() -> Vec<u8> {
    let mut cfg = ExperimentConfig::toy();
    cfg.dataset.count = 8;
    cfg.dataset.item_seconds = 0.5;
    let corpus = Corpus::synthetic(6, 1.0, 3, FS);
    let train: Vec<Example> = (0..8)
        .map(|i| Example::from(&simulate_item(i, &corpus, &cfg.simulation, &cfg.dataset, 5).unwrap().0))
        .collect();
    let mut tc = cfg.train.clone();
    tc.seed = 11;
    tc.steps = 100;
    tc.batch_size = 2;
    tc.segment_samples = 4096;
    tc.precision = Precision::F32;
    tc.log_every = 0;
    tc.generator = GeneratorConfig {
        stft: StftConfig::new(256, 256, 64),
        pre_channels: 4,
        channels: vec![4, 8],
        latent: 8,
        lstm_layers: 1,
        ..GeneratorConfig::desk(ConditioningMode::XPhi, 8)
    };
    tc.discriminator = DiscConfig {
        scales: vec![StftConfig::new(256, 256, 64), StftConfig::new(512, 512, 128)],
        channels: 4,
        layers: 3,
        ..DiscConfig::default()
    };
    tc.resolutions = vec![
        Resolution { stft: StftConfig::new(128, 128, 32), mel_bands: 10 },
        Resolution { stft: StftConfig::new(512, 512, 128), mel_bands: 40 },
    ];
    let mut trainer = GanTrainer::new(tc).unwrap();
    trainer.train(&train, &[], None, &mut |_| {}).unwrap();
    trainer.checkpoint(None).unwrap().to_bytes().unwrap()
}

fn c11_determinism() -> Outcome {
    let start = Instant::now();
    let a = determinism_run();
    let b = determinism_run();
    Outcome::new(
        a == b,
        format!("{} checkpoint bytes, identical: {}, {:.0} s", a.len(), a == b, start.elapsed().as_secs_f64()),
    )
}

fn report(id: usize, name: &str, o: &Outcome) {
    println!("criterion {id:>2} {:<28} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() {
    // `cargo test -- --list` and filters from other targets are accepted and ignored
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let quick = std::env::var_os("ACCEPTANCE_SKIP_TOY").is_some();
    let mut failed = Vec::new();
    let checks: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "stft round trip", c1_stft_round_trip),
        (2, "rir direct path and T60", c2_rir),
        (3, "mixture snr", c3_mixture_snr),
        (4, "loss closed forms", c4_loss_closed_forms),
        (5, "gradient checks", c5_gradients),
        (6, "mask boundedness", c6_mask_bounds),
        (7, "shape contract", c7_shapes),
        (8, "overfit sanity", c8_overfit),
    ];
    let mut record = |id: usize, name: &str, o: &Outcome| {
        report(id, name, o);
        if !o.pass {
            failed.push(id);
        }
    };
    for (id, name, f) in checks {
        record(id, name, &f());
    }
    if quick {
        println!("criterion  9 toy end-to-end               SKIP  ACCEPTANCE_SKIP_TOY is set");
        println!("criterion 10 selectivity sweep            SKIP  ACCEPTANCE_SKIP_TOY is set");
    } else {
        let toy = toy_pipeline();
        record(9, "toy end-to-end", &toy.c9);
        record(10, "selectivity sweep", &toy.c10);
    }
    record(11, "determinism", &c11_determinism());
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

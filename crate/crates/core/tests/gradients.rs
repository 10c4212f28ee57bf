//! Backpropagated gradients against central finite differences in double precision.

mod common;

use candle_core::{DType, Device, Tensor, Var};

use common::{gradient_error, random_signal, random_var};
use steer_tse::conditioning::{encode_doa, film, fuse_mask, spatial_attention, ConditioningMode, DoAOneHot};
use steer_tse::discriminator::{DiscConfig, DiscOutputs, MultiScaleDiscriminator};
use steer_tse::generator::{Generator, GeneratorConfig};
use steer_tse::losses::{adv_gen_loss, disc_loss, feat_match_loss, weighted_gen_loss, LossWeights, ReconLoss};
use steer_tse::nn::softplus;
use steer_tse::tf::{DiffStft, Resolution, StftConfig};

fn weighted_sum(t: &Tensor, seed: u64) -> Tensor {
    let r = random_var(t.dims(), 1.0, seed);
    (t * r.as_tensor()).unwrap().sum_all().unwrap()
}

#[test]
fn attention_gradients_match() {
    let e = random_var(&[2, 4, 5, 3], 1.5, 1);
    let q = random_var(&[2, 4, 5, 3], 1.5, 2);
    let err = gradient_error(&[&e, &q], &|| weighted_sum(&spatial_attention(e.as_tensor(), q.as_tensor()).unwrap(), 3), 200, 4);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn mask_fusion_gradients_match() {
    let e = random_var(&[1, 3, 4, 5], 2.0, 5);
    let a = random_var(&[1, 3, 4, 5], 2.0, 6);
    let l = random_var(&[1, 3, 4, 5], 4.0, 7);
    let loss = || {
        let (fused, mask) = fuse_mask(e.as_tensor(), a.as_tensor(), l.as_tensor()).unwrap();
        (weighted_sum(&fused, 8) + weighted_sum(&mask, 9)).unwrap()
    };
    let err = gradient_error(&[&e, &a, &l], &loss, 200, 10);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn film_gradients_match() {
    let x = random_var(&[2, 3, 4, 5], 1.0, 11);
    let g = random_var(&[2, 3, 1, 1], 1.0, 12);
    let b = random_var(&[1, 3, 4, 1], 1.0, 13);
    let err = gradient_error(&[&x, &g, &b], &|| weighted_sum(&film(x.as_tensor(), g.as_tensor(), b.as_tensor()).unwrap(), 14), 200, 15);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn hinge_subgradients_match_away_from_kinks() {
    let dev = Device::Cpu;
    // scores kept at least 0.1 away from +-1
    let values = [-2.3, -0.4, 0.2, 0.7, 1.6, -1.3, 0.05, 2.2];
    let var = |v: &[f64]| Var::from_tensor(&Tensor::from_slice(v, (1, v.len()), &dev).unwrap()).unwrap();
    let real = [var(&values[..4]), var(&values[4..])];
    let fake = [var(&values[2..6]), var(&values[..4])];
    let outputs = |v: &[Var; 2]| DiscOutputs {
        scores: v.iter().map(|t| t.as_tensor().clone()).collect(),
        features: vec![vec![v[0].as_tensor().clone()], vec![v[1].as_tensor().clone()]],
    };
    let loss = || {
        let d = disc_loss(&outputs(&real), &outputs(&fake)).unwrap();
        let g = adv_gen_loss(&outputs(&fake)).unwrap();
        let f = feat_match_loss(&outputs(&real), &outputs(&fake)).unwrap();
        ((d + g).unwrap() + f).unwrap()
    };
    let err = gradient_error(&[&real[0], &real[1], &fake[0], &fake[1]], &loss, 50, 16);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn reconstruction_loss_gradient_matches() {
    let dev = Device::Cpu;
    let res = [
        Resolution { stft: StftConfig::new(32, 32, 8), mel_bands: 4 },
        Resolution { stft: StftConfig::new(64, 64, 16), mel_bands: 8 },
    ];
    let rl = ReconLoss::new(&res, 16_000, DType::F64, &dev).unwrap();
    let s = Tensor::from_vec(random_signal(17, 200), (1, 200), &dev).unwrap();
    let s_hat = Var::from_tensor(&Tensor::from_vec(random_signal(18, 200), (1, 200), &dev).unwrap()).unwrap();
    let loss = || {
        let (t, f) = rl.forward(&s, s_hat.as_tensor()).unwrap();
        (t + f).unwrap()
    };
    let err = gradient_error(&[&s_hat], &loss, 60, 19);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn discriminator_score_gradient_matches() {
    let dev = Device::Cpu;
    let (disc, _) = MultiScaleDiscriminator::init(DiscConfig::tiny(), 20, DType::F64, &dev).unwrap();
    let wave = Var::from_tensor(&Tensor::from_vec(random_signal(21, 96), (1, 96), &dev).unwrap()).unwrap();
    let loss = || {
        let out = disc.forward(wave.as_tensor()).unwrap();
        let means: Vec<Tensor> = out.scores.iter().map(|s| s.mean_all().unwrap()).collect();
        Tensor::stack(&means, 0).unwrap().mean_all().unwrap()
    };
    let err = gradient_error(&[&wave], &loss, 40, 22);
    assert!(err < 1e-3, "{err}");
}

#[test]
fn generator_loss_gradient_matches_for_every_mode() {
    let dev = Device::Cpu;
    let stft = StftConfig::new(32, 32, 8);
    let len = 96;
    let res = [Resolution { stft: StftConfig::new(32, 32, 8), mel_bands: 4 }];
    let rl = ReconLoss::new(&res, 16_000, DType::F64, &dev).unwrap();
    let synth = DiffStft::new(stft, DType::F64, &dev).unwrap();
    let (disc, _) = MultiScaleDiscriminator::init(DiscConfig::tiny(), 23, DType::F64, &dev).unwrap();
    let target = Tensor::from_vec(random_signal(24, len), (1, len), &dev).unwrap();
    let frames = len.div_ceil(stft.hop_length) + 1;
    let x = random_var(&[1, 9, stft.bins(), frames], 1.0, 25).as_tensor().clone();
    let feats = random_var(&[1, 2, 5, 4], 1.0, 26).as_tensor().clone();
    let codes = DoAOneHot::batch(&[encode_doa(1, 4).unwrap()], DType::F64, &dev).unwrap();
    for (i, mode) in ConditioningMode::ALL.into_iter().enumerate() {
        let mut cfg = GeneratorConfig::tiny(mode, 4);
        if mode.uses_features() {
            cfg.feature_shape = Some((2, 5));
        }
        let (g, store) = Generator::init(cfg, 27 + i as u64, DType::F64, &dev).unwrap();
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
        let vars: Vec<&Var> = store.vars().map(|(_, v)| v).collect();
        let err = gradient_error(&vars, &loss, 2, 28);
        assert!(err < 1e-3, "{mode}: {err}");
    }
}

//! Multichannel mixture rendering: per-channel convolution of every source with its
//! room impulse response, interferers jointly scaled to the requested SNR.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::ism::dist;
use super::{lattice_absorption, simulate_rir, Rir, RirOptions, SceneSpec};
use crate::{Error, Result, SPEED_OF_SOUND};

/// Index of the microphone used for SNR scaling and as the unprocessed baseline.
pub const REFERENCE_MIC: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureItem {
    /// `M x L` microphone signals.
    pub mixture: Array2<f64>,
    /// Unreverberated target, shifted to the direct-path arrival at the reference microphone.
    pub dry_target: Vec<f64>,
    pub snr_db: f64,
    pub doa_index: usize,
    pub scene: SceneSpec,
    pub sample_rate: u32,
    /// Direct-path delay (samples) applied to `dry_target`.
    pub target_delay: usize,
}

impl MixtureItem {
    pub fn len(&self) -> usize {
        self.dry_target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dry_target.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.mixture.nrows()
    }

    pub fn reference(&self) -> Vec<f64> {
        self.mixture.row(REFERENCE_MIC).to_vec()
    }
}

/// Linear convolution of `x` with `h`, truncated to `x.len()` samples.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(n, Complex64::default());
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(n, Complex64::default());
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a.iter().take(x.len()).map(|c| c.re * scale).collect()
}

fn fit_length(x: &[f64], len: usize) -> Vec<f64> {
    let mut v: Vec<f64> = x.iter().copied().take(len).collect();
    v.resize(len, 0.0);
    v
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Target and interferer RIRs for every microphone of the scene.
pub fn scene_rirs(scene: &SceneSpec, fs: u32) -> Result<(Rir, Vec<Rir>)> {
    let mics = scene.array.mic_positions();
    let opts = RirOptions {
        absorption: Some(lattice_absorption(&scene.room, fs)),
        ..RirOptions::default()
    };
    let target = simulate_rir(&scene.room, scene.target_position(), &mics, fs, opts)?;
    let interferers = scene
        .interferer_positions()
        .into_iter()
        .map(|p| simulate_rir(&scene.room, p, &mics, fs, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok((target, interferers))
}

/// Renders a mixture for a sampled scene, simulating its RIRs first.
pub fn render_mixture(
    scene: &SceneSpec,
    target: &[f64],
    interferers: &[Vec<f64>],
    snr_db: f64,
    doa_index: usize,
    fs: u32,
) -> Result<MixtureItem> {
    if interferers.len() != scene.interferer_count() {
        return Err(Error::Domain(format!(
            "scene has {} interferers but {} waves were given",
            scene.interferer_count(),
            interferers.len()
        )));
    }
    let (t_rir, i_rirs) = scene_rirs(scene, fs)?;
    let mics = scene.array.mic_positions();
    let d0 = dist(&scene.target_position(), &mics[REFERENCE_MIC]);
    let delay = (d0 * fs as f64 / SPEED_OF_SOUND).round() as usize;
    let mut item = render_with_rirs(&t_rir, &i_rirs, target, interferers, snr_db)?;
    item.target_delay = delay;
    item.dry_target = shift(target, delay);
    item.doa_index = doa_index;
    item.scene = scene.clone();
    item.sample_rate = fs;
    Ok(item)
}

fn shift(x: &[f64], delay: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    if delay < x.len() {
        out[delay..].copy_from_slice(&x[..x.len() - delay]);
    }
    out
}

/// Mixes `x_m = h_{m,t} * s_t + g Σ_k h_{m,k} * s_k` for precomputed RIRs, with the common
/// interferer gain `g` chosen so that the reverberant target image and the summed
/// reverberant interference at the reference microphone have the requested energy ratio.
///
/// The returned item carries an unshifted dry target and a placeholder scene; use
/// [`render_mixture`] for complete items.
pub fn render_with_rirs(
    target_rir: &Rir,
    interferer_rirs: &[Rir],
    target: &[f64],
    interferers: &[Vec<f64>],
    snr_db: f64,
) -> Result<MixtureItem> {
    if interferers.len() != interferer_rirs.len() {
        return Err(Error::Domain("interferer waves and RIRs differ in count".into()));
    }
    if !snr_db.is_finite() {
        return Err(Error::Domain(format!("non-finite SNR {snr_db}")));
    }
    let m = target_rir.taps.len();
    let len = target.len();
    if interferer_rirs.iter().any(|r| r.taps.len() != m) {
        return Err(Error::Domain("RIR channel counts differ".into()));
    }
    if energy(target) == 0.0 {
        return Err(Error::SnrScaling("silent target".into()));
    }

    let target_img: Vec<Vec<f64>> = target_rir.taps.iter().map(|h| fft_convolve(target, h)).collect();
    let mut interf_img = vec![vec![0.0; len]; m];
    for (wave, rir) in interferers.iter().zip(interferer_rirs) {
        let w = fit_length(wave, len);
        for (acc, h) in interf_img.iter_mut().zip(&rir.taps) {
            for (a, v) in acc.iter_mut().zip(fft_convolve(&w, h)) {
                *a += v;
            }
        }
    }

    let mut mixture = Array2::<f64>::zeros((m, len));
    if interferers.is_empty() {
        for (ch, img) in target_img.iter().enumerate() {
            mixture.row_mut(ch).assign(&ndarray::ArrayView1::from(img));
        }
    } else {
        let e_t = energy(&target_img[REFERENCE_MIC]);
        let e_i = energy(&interf_img[REFERENCE_MIC]);
        if e_t == 0.0 || e_i == 0.0 {
            return Err(Error::SnrScaling(
                "silent target or interference at the reference microphone".into(),
            ));
        }
        let gain = (e_t / (e_i * 10f64.powf(snr_db / 10.0))).sqrt();
        for ch in 0..m {
            for (n, x) in mixture.row_mut(ch).iter_mut().enumerate() {
                *x = target_img[ch][n] + gain * interf_img[ch][n];
            }
        }
    }

    Ok(MixtureItem {
        mixture,
        dry_target: target.to_vec(),
        snr_db,
        doa_index: 0,
        scene: placeholder_scene(m),
        sample_rate: target_rir.sample_rate,
        target_delay: 0,
    })
}

fn placeholder_scene(m: usize) -> SceneSpec {
    SceneSpec {
        room: super::RoomSpec {
            width: 0.0,
            length: 0.0,
            height: 0.0,
            t60: 0.0,
        },
        array: super::ArrayPose {
            center: [0.0; 3],
            rotation: 0.0,
            mic_count: m,
            diameter: 0.0,
        },
        target_doa: 0.0,
        target_dist: 0.0,
        interferer_doas: vec![],
        interferer_dists: vec![],
    }
}

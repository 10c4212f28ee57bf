//! Synthetic speech-like sources.
//!
//! Used when no recorded corpus is available: a glottal-like harmonic series with a
//! drifting pitch contour, shaped by per-syllable formant resonances and a syllabic
//! on/off envelope, with short fricative noise bursts. Different speaker profiles differ
//! in pitch range and formant scaling, which is enough to make mixtures of several
//! "talkers" overlap in time and frequency like real speech babble.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerProfile {
    pub base_f0: f64,
    pub formant_scale: f64,
}

impl SpeakerProfile {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            base_f0: rng.random_range(85.0..260.0),
            formant_scale: rng.random_range(0.85..1.2),
        }
    }
}

const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [300.0, 870.0, 2240.0],
    [570.0, 840.0, 2410.0],
    [440.0, 1020.0, 2240.0],
];

fn formant_gain(freq: f64, formants: &[f64; 3], scale: f64) -> f64 {
    let mut g = 0.02;
    for (i, &f) in formants.iter().enumerate() {
        let fc = f * scale;
        let bw = 80.0 + 40.0 * i as f64;
        g += 1.0 / (1.0 + ((freq - fc) / bw).powi(2)) / (1.0 + i as f64);
    }
    g
}

/// Renders `len` samples of speech-like signal at `fs`, normalized to an RMS of 0.1.
pub fn synth_voice(seed: u64, len: usize, fs: u32, profile: SpeakerProfile) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = fs as f64;
    let nyquist = fs / 2.0;
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut out = vec![0.0; len];
    let mut pos = rng.random_range(0..(0.2 * fs) as usize);
    let mut phase = 0.0f64;
    while pos < len {
        let syl_len = (rng.random_range(0.12..0.32) * fs) as usize;
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        let next = VOWELS[rng.random_range(0..VOWELS.len())];
        let f0_start = profile.base_f0 * rng.random_range(0.85..1.15);
        let f0_end = profile.base_f0 * rng.random_range(0.8..1.2);
        let level = rng.random_range(0.5..1.0);
        let end = (pos + syl_len).min(len);
        for n in pos..end {
            let u = (n - pos) as f64 / syl_len as f64;
            let env = (std::f64::consts::PI * u).sin().powf(0.7) * level;
            let f0 = f0_start + (f0_end - f0_start) * u;
            phase = (phase + TAU * f0 / fs) % (TAU * 1e3);
            let mut formants = [0.0; 3];
            for i in 0..3 {
                formants[i] = vowel[i] + (next[i] - vowel[i]) * u;
            }
            let mut s = 0.0;
            let mut h = 1;
            while f0 * h as f64 <= nyquist.min(4500.0) {
                let f = f0 * h as f64;
                s += formant_gain(f, &formants, profile.formant_scale) / (h as f64).sqrt()
                    * (phase * h as f64).sin();
                h += 1;
            }
            out[n] += env * s;
        }
        pos = end;
        if rng.random_bool(0.35) && pos < len {
            // fricative: crudely high-passed noise burst
            let burst = ((rng.random_range(0.03..0.08)) * fs) as usize;
            let end = (pos + burst).min(len);
            let mut prev = 0.0;
            for o in out.iter_mut().take(end).skip(pos) {
                let w: f64 = noise.sample(&mut rng);
                *o += 0.15 * (w - prev);
                prev = w;
            }
            pos = end;
        }
        if rng.random_bool(0.3) {
            pos += (rng.random_range(0.05..0.3) * fs) as usize;
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        for v in &mut out {
            *v *= 0.1 / rms;
        }
    }
    out
}

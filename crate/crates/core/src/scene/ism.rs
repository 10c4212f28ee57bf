//! Image-source room impulse responses for a shoebox room with uniform absorption.

use super::{Point3, RoomSpec};
use crate::{Error, Result, SPEED_OF_SOUND};

/// Per-microphone impulse responses from one source.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RirOptions {
    /// Maximum total number of wall reflections. `None` derives it from the RIR length.
    pub max_order: Option<usize>,
    /// RIR length in samples. `None` uses `t60 * fs` plus the direct-path delay.
    pub length: Option<usize>,
    /// Energy absorption coefficient of all walls. `None` uses [`lattice_absorption`].
    pub absorption: Option<f64>,
}

/// Wall absorption that yields `room.t60` under Eyring's reverberation formula.
pub fn eyring_absorption(room: &RoomSpec) -> f64 {
    let k = 24.0 * std::f64::consts::LN_10 / SPEED_OF_SOUND;
    1.0 - (-k * room.volume() / (room.surface() * room.t60)).exp()
}

/// Wall absorption under which a sampled image-source RIR of `room` decays with reverberation
/// time `room.t60`, measured by a Schroeder fit between -5 and -35 dB.
///
/// An image reached along direction `u` after `t` seconds has undergone about `c t g(u)`
/// reflections, `g(u) = Σ |u_i| / L_i`. Images arrive at `μ(t) = 4π (ct)² c / (fs V)` per
/// sample and, all amplitudes being positive, add coherently once `μ > 1`. The expected
/// energy per sample is then proportional to
/// `E[(1-α)^(ctg)] + μ(t) E[(1-α)^(ctg/2)]²`, which is solved for `α` by bisection.
/// A direction-independent `g` without coherent overlap gives Eyring's formula.
pub fn lattice_absorption(room: &RoomSpec, fs: u32) -> f64 {
    const DIRECTIONS: usize = 256;
    const POINTS: usize = 300;
    let dims = room.dims();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let g: Vec<f64> = (0..DIRECTIONS)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / DIRECTIONS as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let u = [r * phi.cos(), r * phi.sin(), z];
            u.iter().zip(&dims).map(|(c, l)| c.abs() / l).sum()
        })
        .collect();
    let c = SPEED_OF_SOUND;
    let dt = 2.0 * room.t60 / POINTS as f64;
    let per_sample = 4.0 * std::f64::consts::PI * c * c * c / (fs as f64 * room.volume());
    // reverberation time of the envelope for a = -ln(1 - α)
    let decay_time = |a: f64| {
        let energy: Vec<f64> = (0..POINTS)
            .map(|k| {
                let ct = c * (k as f64 + 0.5) * dt;
                let (mut full, mut half) = (0.0, 0.0);
                for gi in &g {
                    let e = (-0.5 * a * ct * gi).exp();
                    half += e;
                    full += e * e;
                }
                let n = DIRECTIONS as f64;
                full / n + per_sample * (ct / c).powi(2) * (half / n).powi(2)
            })
            .collect();
        let mut edc = energy;
        for k in (0..POINTS - 1).rev() {
            edc[k] += edc[k + 1];
        }
        let pts: Vec<(f64, f64)> = edc
            .iter()
            .enumerate()
            .map(|(k, e)| (k as f64 * dt, 10.0 * (e / edc[0]).log10()))
            .filter(|(_, d)| (-35.0..=-5.0).contains(d))
            .collect();
        if pts.len() < 2 {
            return f64::INFINITY;
        }
        let n = pts.len() as f64;
        let (mt, md) = pts.iter().fold((0.0, 0.0), |(x, y), (t, d)| (x + t / n, y + d / n));
        let sxy: f64 = pts.iter().map(|(t, d)| (t - mt) * (d - md)).sum();
        let sxx: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
        -60.0 * sxx / sxy
    };
    let (mut lo, mut hi) = (1e-4f64, 20.0f64);
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        if decay_time(mid) > room.t60 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    1.0 - (-(lo * hi).sqrt()).exp()
}

/// One axis of the image lattice: offsets from the microphone coordinate and the
/// reflection count for every image whose offset stays within `radius`.
fn axis_images(src: f64, mic: f64, dim: f64, radius: f64) -> Vec<(f64, u32)> {
    let n_max = (radius / (2.0 * dim)).ceil() as i64 + 1;
    let mut out = Vec::new();
    for n in -n_max..=n_max {
        for q in 0..2i64 {
            let pos = (1 - 2 * q) as f64 * src + 2.0 * n as f64 * dim;
            let d = pos - mic;
            if d.abs() <= radius {
                out.push((d, ((n - q).abs() + n.abs()) as u32));
            }
        }
    }
    out
}

fn rir_single(
    room: &RoomSpec,
    src: &Point3,
    mic: &Point3,
    fs: f64,
    beta: f64,
    max_order: u32,
    len: usize,
) -> Vec<f64> {
    let mut h = vec![0.0; len];
    let radius = len as f64 * SPEED_OF_SOUND / fs;
    let dims = room.dims();
    let ax: Vec<Vec<(f64, u32)>> = (0..3)
        .map(|i| axis_images(src[i], mic[i], dims[i], radius))
        .collect();
    let r2 = radius * radius;
    for &(dx, ox) in &ax[0] {
        let dx2 = dx * dx;
        if dx2 > r2 || ox > max_order {
            continue;
        }
        for &(dy, oy) in &ax[1] {
            let dxy2 = dx2 + dy * dy;
            if dxy2 > r2 || ox + oy > max_order {
                continue;
            }
            for &(dz, oz) in &ax[2] {
                let order = ox + oy + oz;
                if order > max_order {
                    continue;
                }
                let d2 = dxy2 + dz * dz;
                if d2 > r2 {
                    continue;
                }
                let d = d2.sqrt();
                let idx = (d * fs / SPEED_OF_SOUND).round() as usize;
                if idx < len {
                    h[idx] += beta.powi(order as i32) / (4.0 * std::f64::consts::PI * d);
                }
            }
        }
    }
    h
}

/// Simulates the impulse responses from `source` to every microphone in `mics`.
///
/// Fractional delays are rounded to the nearest sample; each image contributes
/// `β^order / (4π d)` with `β = sqrt(1 - absorption)`.
pub fn simulate_rir(
    room: &RoomSpec,
    source: Point3,
    mics: &[Point3],
    fs: u32,
    opts: RirOptions,
) -> Result<Rir> {
    if fs == 0 {
        return Err(Error::Domain("sample rate must be positive".into()));
    }
    if !room.contains(&source) {
        return Err(Error::Domain(format!("source {source:?} outside the room")));
    }
    if let Some(m) = mics.iter().find(|m| !room.contains(m)) {
        return Err(Error::Domain(format!("microphone {m:?} outside the room")));
    }
    let fs_f = fs as f64;
    let absorption = opts.absorption.unwrap_or_else(|| lattice_absorption(room, fs));
    if !(0.0..=1.0).contains(&absorption) {
        return Err(Error::Domain(format!("absorption {absorption} outside [0, 1]")));
    }
    let beta = (1.0 - absorption).sqrt();
    let max_direct = mics
        .iter()
        .map(|m| dist(&source, m))
        .fold(0.0, f64::max);
    let direct_samples = (max_direct * fs_f / SPEED_OF_SOUND).round() as usize + 1;
    let len = opts
        .length
        .unwrap_or_else(|| (room.t60 * fs_f).ceil() as usize + direct_samples)
        .max(direct_samples);
    let min_dim = room.dims().into_iter().fold(f64::INFINITY, f64::min);
    let max_order = opts.max_order.unwrap_or_else(|| {
        (len as f64 * SPEED_OF_SOUND / fs_f / min_dim).ceil() as usize + 1
    }) as u32;
    let taps = mics
        .iter()
        .map(|m| rir_single(room, &source, m, fs_f, beta, max_order, len))
        .collect();
    Ok(Rir {
        taps,
        sample_rate: fs,
    })
}

pub(crate) fn dist(a: &Point3, b: &Point3) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

//! Helpers shared by the integration targets.
#![allow(dead_code)]

use candle_core::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(candle_core::DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

/// Relative error `||g - g_fd|| / max(||g||, ||g_fd||)` between backpropagated and central
/// finite-difference gradients of `loss` over up to `coords` randomly chosen entries of
/// every variable in `vars`. `loss` must rebuild its graph on every call.
pub fn gradient_error(vars: &[&Var], loss: &dyn Fn() -> Tensor, coords: usize, seed: u64) -> f64 {
    let grads = loss().backward().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for var in vars {
        let g = grads
            .get(var.as_tensor())
            .map(|g| g.flatten_all().unwrap().to_vec1::<f64>().unwrap())
            .unwrap_or_else(|| vec![0.0; var.elem_count()]);
        let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let picks: Vec<usize> = if base.len() <= coords {
            (0..base.len()).collect()
        } else {
            (0..coords).map(|_| rng.random_range(0..base.len())).collect()
        };
        for i in picks {
            let h = 1e-6 * base[i].abs().max(1.0);
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, var.shape(), var.device()).unwrap()).unwrap();
                scalar(&loss())
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            var.set(&Tensor::from_vec(base.clone(), var.shape(), var.device()).unwrap()).unwrap();
            analytic.push(g[i]);
            numeric.push(fd);
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn random_var(shape: &[usize], scale: f64, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Var::from_tensor(&Tensor::from_vec(v, shape, &candle_core::Device::Cpu).unwrap()).unwrap()
}

pub fn random_signal(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

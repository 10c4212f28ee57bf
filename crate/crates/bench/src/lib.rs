//! Benchmarks live under `benches/`. Run them with `cargo bench -p steer-tse-bench`.

pub use steer_tse;

/// Deterministic pseudo-noise for benchmark inputs.
pub fn test_signal(len: usize) -> Vec<f64> {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

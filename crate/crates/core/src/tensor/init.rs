//! Parameter initialization.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Xavier-uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)), where
/// fan_in = rows and fan_out = cols.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Tensor {
    init_scaled(rows, cols, 1.0, rng).expect("k=1 is positive")
}

/// Xavier-uniform with its variance divided by k, so the bound shrinks by
/// sqrt(k). Larger k gives smaller initial attention weights.
pub fn init_scaled(rows: usize, cols: usize, k: f64, rng: &mut ChaCha20Rng) -> Result<Tensor> {
    if k <= 0.0 {
        return Err(Error::Config(format!("init scale k must be positive, got {k}")));
    }
    let a = (6.0 / (rows + cols) as f64).sqrt() / k.sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random::<f64>() * 2.0 * a - a)
        .collect();
    Ok(Tensor::param(rows, cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngPool;

    fn variance(v: &[f64]) -> f64 {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn k1_matches_base_variance() {
        let pool = RngPool::new(99);
        let t = init_scaled(1000, 1000, 1.0, &mut pool.stream("init")).unwrap();
        let expected = 2.0 / (1000.0 + 1000.0);
        let got = variance(&t.value());
        assert!((got / expected - 1.0).abs() < 0.05, "got {got}, expected {expected}");
    }

    #[test]
    fn k4_quarters_the_variance() {
        let pool = RngPool::new(99);
        let base = init_scaled(1000, 1000, 1.0, &mut pool.stream("a")).unwrap();
        let scaled = init_scaled(1000, 1000, 4.0, &mut pool.stream("b")).unwrap();
        let ratio = variance(&scaled.value()) / variance(&base.value());
        assert!((ratio - 0.25).abs() < 0.25 * 0.05, "ratio {ratio}");
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let a = init_scaled(4, 4, 32.0, &mut RngPool::new(7).stream("w")).unwrap();
        let b = init_scaled(4, 4, 32.0, &mut RngPool::new(7).stream("w")).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn nonpositive_k_rejected() {
        let pool = RngPool::new(1);
        assert!(init_scaled(2, 2, 0.0, &mut pool.stream("w")).is_err());
        assert!(init_scaled(2, 2, -3.0, &mut pool.stream("w")).is_err());
    }
}

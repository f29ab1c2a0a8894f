//! Sample statistics, Gaussian helpers and the ordered Monte Carlo driver.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleStats {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl SampleStats {
    /// Two-pass estimate; the summation order is the slice order.
    pub fn from_slice(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return invalid(format!("need at least 2 samples, got {}", xs.len()));
        }
        let n = xs.len() as f64;
        let mean = pairwise_sum(xs) / n;
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1.0);
        Ok(Self {
            mean,
            stderr: (var / n).sqrt(),
            n: xs.len(),
        })
    }

    pub fn std_dev(&self) -> f64 {
        self.stderr * (self.n as f64).sqrt()
    }
}

/// Fixed-shape pairwise summation; the result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Runs `f` for streams `0..n_paths` and returns the outputs in stream order.
///
/// Scheduling is left to rayon; the returned order is not, which is what keeps
/// every downstream reduction independent of the thread count.
pub fn map_paths<T, F>(n_paths: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..n_paths as u64).into_par_iter().map(f).collect()
}

/// Splits per-path tuples into columns.
pub fn columns<const K: usize>(rows: &[[f64; K]]) -> [Vec<f64>; K] {
    std::array::from_fn(|k| rows.iter().map(|r| r[k]).collect())
}

/// Kolmogorov-Smirnov statistic of `xs` against the standard normal.
pub fn ks_statistic_normal(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            let lo = f - i as f64 / n;
            let hi = (i + 1) as f64 / n - f;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((normal_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-16);
    }

    #[test]
    fn stats_of_small_sample() {
        let s = SampleStats::from_slice(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        let var = (2.25 + 0.25 + 0.25 + 2.25) / 3.0;
        assert!((s.stderr - (var / 4.0f64).sqrt()).abs() < 1e-15);
        assert!(SampleStats::from_slice(&[1.0]).is_err());
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }

    #[test]
    fn map_paths_is_thread_count_independent() {
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| map_paths(1000, |i| Ok((i as f64).sin())).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(pairwise_sum(&a).to_bits(), pairwise_sum(&b).to_bits());
    }
}

//! Uniform time grids and reproducible Brownian increments.
//!
//! Every path draws from its own ChaCha8 stream selected by `stream_id`, so
//! the increments of path `i` depend only on `(master_seed, i)` and never on
//! how paths are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return invalid(format!("t_end must be positive and finite, got {t_end}"));
        }
        if n_steps == 0 {
            return invalid("n_steps must be at least 1");
        }
        Ok(Self {
            t_end,
            n_steps,
            dt: t_end / n_steps as f64,
        })
    }

    /// Grid whose step is as close as possible to `dt` while landing on `t_end`.
    pub fn with_step(t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return invalid(format!("dt must be positive, got {dt}"));
        }
        let n = (t_end / dt).round().max(1.0) as usize;
        Self::new(t_end, n)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    /// Node time `t_i`; the last node is `t_end` exactly.
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.n_steps {
            self.t_end
        } else {
            i as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.time(i)).collect()
    }
}

pub fn make_grid(t_end: f64, n_steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(t_end, n_steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Independent generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    grid: TimeGrid,
    increments: Vec<f64>,
}

impl NoisePath {
    pub fn from_increments(grid: TimeGrid, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.n_steps() {
            return invalid(format!(
                "expected {} increments, got {}",
                grid.n_steps(),
                increments.len()
            ));
        }
        Ok(Self { grid, increments })
    }

    /// All-zero driver, useful for deterministic checks.
    pub fn zero(grid: TimeGrid) -> Self {
        Self {
            grid,
            increments: vec![0.0; grid.n_steps()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Brownian motion at the grid nodes, starting from zero.
    pub fn brownian(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.n_nodes());
        let mut b = 0.0;
        out.push(b);
        for &db in &self.increments {
            b += db;
            out.push(b);
        }
        out
    }
}

pub fn sample_noise(seed: SeedSpec, grid: TimeGrid) -> NoisePath {
    let mut rng = seed.rng();
    let scale = grid.dt().sqrt();
    let increments = (0..grid.n_steps())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    NoisePath { grid, increments }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_nodes() {
        let g = make_grid(1.0, 4).unwrap();
        assert_eq!(g.times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(1.0, 1).unwrap();
        assert_eq!(g.times(), vec![0.0, 1.0]);
        let g = make_grid(0.5, 1000).unwrap();
        assert!((g.dt() - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn last_node_is_exact() {
        let g = make_grid(0.3, 7).unwrap();
        assert_eq!(g.time(7), 0.3);
        let times = g.times();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(make_grid(0.0, 4).is_err());
        assert!(make_grid(-1.0, 4).is_err());
        assert!(make_grid(1.0, 0).is_err());
        assert!(make_grid(f64::NAN, 3).is_err());
    }

    #[test]
    fn noise_is_deterministic_per_stream() {
        let g = make_grid(1.0, 64).unwrap();
        let a = sample_noise(SeedSpec::new(1, 0), g);
        let b = sample_noise(SeedSpec::new(1, 0), g);
        assert_eq!(a, b);
        let c = sample_noise(SeedSpec::new(1, 1), g);
        assert_ne!(a.increments(), c.increments());
        assert_eq!(a.increments().len(), 64);
    }

    #[test]
    fn increment_variance_matches_dt() {
        let g = make_grid(1.0, 1000).unwrap();
        let mut draws = Vec::with_capacity(1_000_000);
        for s in 0..1000 {
            draws.extend_from_slice(sample_noise(SeedSpec::new(7, s), g).increments());
        }
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // Var of the sample variance of Gaussians is 2 sigma^4 / (n - 1).
        let se = (2.0 * 1e-6 / (n - 1.0)).sqrt();
        assert!((var - 1e-3).abs() < 5.0 * se, "var {var}, se {se}");
        assert!(mean.abs() < 5.0 * (1e-3 / n).sqrt());
    }
}

//! Tangent and Malliavin derivative processes along penalized paths.
//!
//! Both solve the same linear SDE, only the start differs (1 at time 0 for
//! the tangent, `sigma(X_theta)` at `theta` for `D_theta X`). Its solution is
//! the stochastic exponential
//!
//! ```text
//! E_t = exp( sum_i [b'(x_i) + h'(x_i) / eps - sigma'(x_i)^2 / 2] dt + sum_i sigma'(x_i) dB_i )
//! ```
//!
//! which is accumulated in log space, so values stay positive however stiff
//! the penalty derivative is.

use serde::Serialize;

use crate::drift::{lipschitz_estimate, mollified_drift, DriftFunction};
use crate::error::{invalid, Result};
use crate::grid_rng::{sample_noise, NoisePath, SeedSpec, TimeGrid};
use crate::sde::{simulate_penalized, CoefficientSet, PenalizationParams, Penalty, ReflectedPath};
use crate::stats::{map_paths, SampleStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SensitivityKind {
    Tangent,
    Malliavin { theta: usize },
}

/// Derivative process on nodes `start..=n_steps`; `values[k]` sits at node
/// `start + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityPath {
    pub grid: TimeGrid,
    pub kind: SensitivityKind,
    pub start: usize,
    pub values: Vec<f64>,
}

impl SensitivityPath {
    pub fn at(&self, node: usize) -> Option<f64> {
        node.checked_sub(self.start).and_then(|k| self.values.get(k).copied())
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("sensitivity paths are never empty")
    }
}

/// How `b'` enters the linearization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DriftSlope {
    /// `b'(x_i)` along the path.
    Pathwise,
    /// A fixed slope everywhere, e.g. the drift's Lipschitz constant.
    Constant(f64),
}

/// Terms of the linear SDE to keep. The default is the full equation; the
/// other settings exist for control experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Linearization {
    pub include_penalty: bool,
    pub drift_slope: DriftSlope,
}

impl Default for Linearization {
    fn default() -> Self {
        Self {
            include_penalty: true,
            drift_slope: DriftSlope::Pathwise,
        }
    }
}

fn check_inputs(
    path: &ReflectedPath,
    coeffs: &CoefficientSet,
    params: &PenalizationParams,
    noise: &NoisePath,
    lin: &Linearization,
) -> Result<()> {
    if lin.drift_slope == DriftSlope::Pathwise && !coeffs.has_drift_derivative() {
        return invalid("sensitivities need a Lipschitz or smooth drift; mollify it first");
    }
    if lin.include_penalty && matches!(params.penalty, Penalty::Sharp) {
        return invalid("sensitivities need a mollified penalty (finite mollifier index)");
    }
    if path.grid != *noise.grid() || path.x.len() != noise.grid().n_nodes() {
        return invalid("path and noise live on different grids");
    }
    Ok(())
}

/// `log E` at every node, `E_0 = 1`.
pub fn log_exponential(
    path: &ReflectedPath,
    coeffs: &CoefficientSet,
    params: &PenalizationParams,
    noise: &NoisePath,
    lin: &Linearization,
) -> Result<Vec<f64>> {
    check_inputs(path, coeffs, params, noise, lin)?;
    let dt = noise.grid().dt();
    let inv_eps = 1.0 / params.epsilon;
    let mut out = Vec::with_capacity(path.x.len());
    let mut acc = 0.0;
    out.push(acc);
    for (&x, &db) in path.x.iter().zip(noise.increments()) {
        let slope = match lin.drift_slope {
            DriftSlope::Pathwise => coeffs.drift_derivative(x),
            DriftSlope::Constant(c) => c,
        };
        let penalty = match (&params.penalty, lin.include_penalty) {
            (Penalty::Mollified(h), true) => inv_eps * h.derivative(x),
            _ => 0.0,
        };
        let ds = coeffs.sigma.derivative(x);
        acc += (slope + penalty - 0.5 * ds * ds) * dt + ds * db;
        out.push(acc);
    }
    Ok(out)
}

pub fn propagate_sensitivity(
    path: &ReflectedPath,
    coeffs: &CoefficientSet,
    params: &PenalizationParams,
    noise: &NoisePath,
    kind: SensitivityKind,
) -> Result<SensitivityPath> {
    propagate_with(path, coeffs, params, noise, kind, &Linearization::default())
}

pub fn propagate_with(
    path: &ReflectedPath,
    coeffs: &CoefficientSet,
    params: &PenalizationParams,
    noise: &NoisePath,
    kind: SensitivityKind,
    lin: &Linearization,
) -> Result<SensitivityPath> {
    let theta = match kind {
        SensitivityKind::Tangent => 0,
        SensitivityKind::Malliavin { theta } => theta,
    };
    if theta > path.grid.n_steps() {
        return invalid(format!("theta index {theta} is outside the grid"));
    }
    let log_e = log_exponential(path, coeffs, params, noise, lin)?;
    Ok(from_log(path, coeffs, &log_e, kind, theta))
}

fn from_log(
    path: &ReflectedPath,
    coeffs: &CoefficientSet,
    log_e: &[f64],
    kind: SensitivityKind,
    theta: usize,
) -> SensitivityPath {
    let (start_value, base) = match kind {
        SensitivityKind::Tangent => (1.0, 0.0),
        SensitivityKind::Malliavin { .. } => (coeffs.sigma.value(path.x[theta]), log_e[theta]),
    };
    let values = log_e[theta..]
        .iter()
        .enumerate()
        .map(|(k, l)| if k == 0 { start_value } else { start_value * (l - base).exp() })
        .collect();
    SensitivityPath {
        grid: path.grid,
        kind,
        start: theta,
        values,
    }
}

/// `D_theta X` for every requested `theta`, sharing one pass over the path:
/// `D_theta X_t = sigma(X_theta) E_t / E_theta`.
pub fn malliavin_grid(
    path: &ReflectedPath,
    coeffs: &CoefficientSet,
    params: &PenalizationParams,
    noise: &NoisePath,
    thetas: &[usize],
) -> Result<Vec<SensitivityPath>> {
    if thetas.is_empty() {
        return invalid("no theta indices requested");
    }
    if let Some(&bad) = thetas.iter().find(|&&t| t > path.grid.n_steps()) {
        return invalid(format!("theta index {bad} is outside the grid"));
    }
    let log_e = log_exponential(path, coeffs, params, noise, &Linearization::default())?;
    Ok(thetas
        .iter()
        .map(|&theta| from_log(path, coeffs, &log_e, SensitivityKind::Malliavin { theta }, theta))
        .collect())
}

/// Settings shared by every row of a second-moment sweep.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub x0: f64,
    pub grid: TimeGrid,
    pub params: PenalizationParams,
    /// Cutoff index `n` of `psi_n` used for every mollified drift.
    pub cutoff_index: u32,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Range `[0, lipschitz_range]` scanned for the drift's Lipschitz estimate.
    pub lipschitz_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub j: u32,
    pub lipschitz_estimate: f64,
    pub second_moment: f64,
    pub stderr: f64,
    /// `ln` of `second_moment`, finite even when the moment overflows.
    pub log_second_moment: f64,
}

/// Mean of `exp(log_samples)` in a shifted form: `(ln mean, mean, stderr)`.
fn exp_moment(log_samples: &[f64]) -> Result<(f64, f64, f64)> {
    let shift = log_samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let scaled: Vec<f64> = log_samples.iter().map(|l| (l - shift).exp()).collect();
    let stats = SampleStats::from_slice(&scaled)?;
    let scale = shift.exp();
    Ok((shift + stats.mean.ln(), stats.mean * scale, stats.stderr * scale))
}

/// `E[(d_x X_t)^2]` for the drifts `mollified_drift(base, j, n)`, one row per
/// mollification level `j`.
pub fn second_moment_sweep(
    base: &DriftFunction,
    levels: &[u32],
    coeffs: &CoefficientSet,
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    sweep_with(base, levels, coeffs, settings, |_| Linearization::default())
}

/// Sweep with a per-level linearization; the closure receives the level's
/// Lipschitz estimate.
pub fn sweep_with(
    base: &DriftFunction,
    levels: &[u32],
    coeffs: &CoefficientSet,
    settings: &SweepSettings,
    linearization: impl Fn(f64) -> Linearization,
) -> Result<Vec<SweepRow>> {
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("mollification levels must be increasing");
    }
    if settings.n_paths < 2 {
        return invalid("need at least 2 paths");
    }
    levels
        .iter()
        .map(|&j| {
            let drift = mollified_drift(base, j, settings.cutoff_index)?;
            let lip = lipschitz_estimate(&drift, 0.0, settings.lipschitz_range, 200_001);
            let lin = linearization(lip);
            let level_coeffs = coeffs.with_drift(drift, format!("mollified:{j}"));
            let log_squares = map_paths(settings.n_paths, |stream| {
                let noise = sample_noise(SeedSpec::new(settings.master_seed, stream), settings.grid);
                let path = simulate_penalized(settings.x0, &level_coeffs, &settings.params, &noise)?;
                let log_e = log_exponential(&path, &level_coeffs, &settings.params, &noise, &lin)?;
                Ok(2.0 * log_e.last().copied().unwrap_or(0.0))
            })?;
            let (log_second_moment, second_moment, stderr) = exp_moment(&log_squares)?;
            Ok(SweepRow {
                j,
                lipschitz_estimate: lip,
                second_moment,
                stderr,
                log_second_moment,
            })
        })
        .collect()
}

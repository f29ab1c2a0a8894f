//! Path simulation for the reflected SDE `dX = b(X) dt + sigma(X) dB + dL`.
//!
//! Two schemes share one Euler predictor `p = x + b(x) dt + sigma(x) dB`:
//!
//! * penalized: the inward push `eps^-1 h(x)` is applied implicitly, so the
//!   corrector solves `y = p + (dt / eps) h(y)`. With the sharp penalty
//!   `h = (.)^-` this is `y = p / (1 + dt / eps)` for `p < 0`; the mollified
//!   penalty is solved by bisection, the root being unique since `h` is
//!   nonincreasing.
//! * exact reflection: `y = max(p, 0)`, the discrete Skorohod map.
//!
//! The local-time proxy accumulates the corrector's push in both cases.

use serde::Serialize;

use crate::drift::{mollify_negative_part, DriftFunction, NegativePartMollifier, Regularity};
use crate::error::{invalid, Error, Result};
use crate::grid_rng::{sample_noise, NoisePath, SeedSpec, TimeGrid};
use crate::stats::{columns, map_paths, SampleStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Sigma {
    Constant(f64),
    /// `a + b tanh(y)`: smooth, bounded, and at least `a - |b|`.
    AffineClamped { a: f64, b: f64 },
}

impl Sigma {
    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        match *self {
            Sigma::Constant(s) => s,
            Sigma::AffineClamped { a, b } => a + b * y.tanh(),
        }
    }

    #[inline]
    pub fn derivative(&self, y: f64) -> f64 {
        match *self {
            Sigma::Constant(_) => 0.0,
            Sigma::AffineClamped { b, .. } => {
                let c = y.cosh();
                b / (c * c)
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            Sigma::Constant(s) => s.abs(),
            Sigma::AffineClamped { a, b } => a.abs() + b.abs(),
        }
    }

    pub fn derivative_sup(&self) -> f64 {
        match *self {
            Sigma::Constant(_) => 0.0,
            Sigma::AffineClamped { b, .. } => b.abs(),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Sigma::Constant(s) => Some(s),
            Sigma::AffineClamped { .. } => None,
        }
    }
}

/// Drift, diffusion and ellipticity floor, with the preset labels used for
/// provenance.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub drift: DriftFunction,
    pub sigma: Sigma,
    pub delta: f64,
    pub drift_label: String,
    pub sigma_label: String,
}

impl CoefficientSet {
    pub fn new(drift: DriftFunction, sigma: Sigma, delta: f64) -> Result<Self> {
        let set = Self {
            drift,
            sigma,
            delta,
            drift_label: "custom".into(),
            sigma_label: "custom".into(),
        };
        set.validate()?;
        Ok(set)
    }

    /// Drift and sigma presets, e.g. `step:1,1` and `constant:1`.
    ///
    /// For `affine-clamped:a,b,delta` the floor is the preset's `delta`; for
    /// `constant:s` it is `|s|`.
    pub fn from_presets(drift: &str, sigma: &str) -> Result<Self> {
        let (sig, delta) = parse_sigma(sigma)?;
        let mut set = Self::new(DriftFunction::from_preset(drift)?, sig, delta)?;
        set.drift_label = drift.to_string();
        set.sigma_label = sigma.to_string();
        Ok(set)
    }

    pub fn with_drift(&self, drift: DriftFunction, label: impl Into<String>) -> Self {
        Self {
            drift,
            sigma: self.sigma,
            delta: self.delta,
            drift_label: label.into(),
            sigma_label: self.sigma_label.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return invalid(format!("ellipticity floor must be positive, got {}", self.delta));
        }
        let (sup, dsup) = (self.sigma.sup(), self.sigma.derivative_sup());
        for i in 0..10_000 {
            let y = -10.0 + 20.0 * i as f64 / 9_999.0;
            let s = self.sigma.value(y);
            if s.abs() < self.delta * (1.0 - 1e-12) {
                return invalid(format!("|sigma({y})| = {} is below delta {}", s.abs(), self.delta));
            }
            if s.abs() > sup * (1.0 + 1e-12) || self.sigma.derivative(y).abs() > dsup * (1.0 + 1e-12) {
                return invalid(format!("sigma exceeds its declared bounds at {y}"));
            }
        }
        self.drift.check_sup_bound(10_000)
    }

    /// `b'(y)`: exact when available, otherwise a forward difference quotient
    /// with step `1e-6` (Lipschitz drifts are differentiable a.e.).
    #[inline]
    pub fn drift_derivative(&self, y: f64) -> f64 {
        match self.drift.derivative(y) {
            Some(d) => d,
            None => (self.drift.value(y + DRIFT_FD_STEP) - self.drift.value(y)) / DRIFT_FD_STEP,
        }
    }

    pub fn has_drift_derivative(&self) -> bool {
        !matches!(self.drift.regularity(), Regularity::Measurable)
    }
}

pub const DRIFT_FD_STEP: f64 = 1e-6;

pub fn parse_sigma(preset: &str) -> Result<(Sigma, f64)> {
    let bad = || Error::InvalidArgument(format!("unrecognized sigma preset {preset:?}"));
    let (name, args) = preset.split_once(':').ok_or_else(bad)?;
    let nums: Vec<f64> = args
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match (name.trim(), nums.as_slice()) {
        ("constant", [s]) if *s != 0.0 => Ok((Sigma::Constant(*s), s.abs())),
        ("affine-clamped", [a, b, delta]) => {
            if !(*delta > 0.0) || a - b.abs() < *delta {
                return invalid(format!(
                    "affine-clamped sigma needs a - |b| >= delta > 0, got {preset:?}"
                ));
            }
            Ok((Sigma::AffineClamped { a: *a, b: *b }, *delta))
        }
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Penalty {
    /// Exact negative part `(y)^-`.
    Sharp,
    Mollified(NegativePartMollifier),
}

impl Penalty {
    pub fn from_index(index: Option<u32>) -> Result<Self> {
        match index {
            None => Ok(Penalty::Sharp),
            Some(j) => Ok(Penalty::Mollified(mollify_negative_part(j)?)),
        }
    }

    pub fn index(&self) -> Option<u32> {
        match self {
            Penalty::Sharp => None,
            Penalty::Mollified(h) => Some(h.index()),
        }
    }

    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        match self {
            Penalty::Sharp => (-y).max(0.0),
            Penalty::Mollified(h) => h.value(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenalizationParams {
    pub epsilon: f64,
    pub penalty: Penalty,
}

impl PenalizationParams {
    pub fn new(epsilon: f64, mollifier_index: Option<u32>) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return invalid(format!("epsilon must be positive, got {epsilon}"));
        }
        Ok(Self {
            epsilon,
            penalty: Penalty::from_index(mollifier_index)?,
        })
    }

    pub fn sharp(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, None)
    }

    pub fn mollifier_index(&self) -> Option<u32> {
        self.penalty.index()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Scheme {
    Penalized(PenalizationParams),
    ExactReflection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeTag {
    Penalized,
    ExactReflection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPath {
    pub grid: TimeGrid,
    pub x: Vec<f64>,
    pub local_time: Vec<f64>,
    pub scheme: SchemeTag,
}

impl ReflectedPath {
    pub fn terminal(&self) -> f64 {
        *self.x.last().expect("paths have at least two nodes")
    }

    pub fn terminal_local_time(&self) -> f64 {
        *self.local_time.last().expect("paths have at least two nodes")
    }
}

/// Soft lower bound for penalized paths:
/// `-(|b| eps + 1/n + 10 sigma_sup s sqrt(2 ln n_steps))`.
///
/// Below the wall the sharp corrector is the AR(1) recursion
/// `y' = (y + sigma dB) / (1 + a)`, `a = dt / eps`, whose stationary spread
/// per unit sigma is `s = sqrt(dt / ((1 + a)^2 - 1))`: about `eps / sqrt(dt)`
/// for `eps << dt` and `sqrt(eps / 2)` for `eps >> dt`.
pub fn penalized_lower_bound(coeffs: &CoefficientSet, params: &PenalizationParams, grid: &TimeGrid) -> f64 {
    let window = params.mollifier_index().map_or(0.0, |n| 1.0 / n as f64);
    let n_steps = grid.n_steps().max(2) as f64;
    let a = grid.dt() / params.epsilon;
    let spread = (grid.dt() / ((1.0 + a) * (1.0 + a) - 1.0)).sqrt();
    let overshoot = 10.0 * coeffs.sigma.sup() * spread * (2.0 * n_steps.ln()).sqrt();
    -(coeffs.drift.sup_bound() * params.epsilon + window + overshoot)
}

fn check_start(x0: f64) -> Result<()> {
    if !(x0 >= 0.0) || !x0.is_finite() {
        return invalid(format!("x0 must be finite and nonnegative, got {x0}"));
    }
    Ok(())
}

const BISECTION_ITERATIONS: usize = 30;

/// Solves `y = p + a h(y)` for the mollified penalty; returns `(y, a h(y))`.
#[inline]
fn mollified_corrector(p: f64, a: f64, h: &NegativePartMollifier) -> Result<(f64, f64)> {
    let w = h.half_width();
    if p >= w {
        return Ok((p, 0.0));
    }
    // Below the window h is exactly the negative part.
    let linear = p / (1.0 + a);
    if linear <= -w {
        return Ok((linear, linear - p));
    }
    let residual = |y: f64| y - a * h.value(y) - p;
    // Root lies in [p, p + a(|p| + 1/n)] and, having missed both linear
    // branches, inside the window (-1/n, 1/n).
    let mut lo = p.max(-w);
    let mut hi = (p + a * (p.abs() + w)).min(w);
    if !(residual(lo) <= 0.0 && residual(hi) >= 0.0) {
        return Err(Error::Internal(format!(
            "penalty corrector bracket [{lo}, {hi}] does not contain the root for p = {p}"
        )));
    }
    for _ in 0..BISECTION_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if residual(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    let y = 0.5 * (lo + hi);
    Ok((y, a * h.value(y)))
}

pub fn simulate_penalized(
    x0: f64,
    coeffs: &CoefficientSet,
    params: &PenalizationParams,
    noise: &NoisePath,
) -> Result<ReflectedPath> {
    check_start(x0)?;
    let grid = *noise.grid();
    let dt = grid.dt();
    let a = dt / params.epsilon;
    let shrink = 1.0 / (1.0 + a);
    let mut x = Vec::with_capacity(grid.n_nodes());
    let mut local_time = Vec::with_capacity(grid.n_nodes());
    let (mut xi, mut li) = (x0, 0.0);
    x.push(xi);
    local_time.push(li);
    for &db in noise.increments() {
        let p = xi + coeffs.drift.value(xi) * dt + coeffs.sigma.value(xi) * db;
        let (y, push) = match &params.penalty {
            Penalty::Sharp if p >= 0.0 => (p, 0.0),
            Penalty::Sharp => {
                let y = p * shrink;
                (y, y - p)
            }
            Penalty::Mollified(h) => mollified_corrector(p, a, h)?,
        };
        xi = y;
        li += push;
        x.push(xi);
        local_time.push(li);
    }
    Ok(ReflectedPath {
        grid,
        x,
        local_time,
        scheme: SchemeTag::Penalized,
    })
}

pub fn simulate_exact_reflection(x0: f64, coeffs: &CoefficientSet, noise: &NoisePath) -> Result<ReflectedPath> {
    check_start(x0)?;
    let grid = *noise.grid();
    let dt = grid.dt();
    let mut x = Vec::with_capacity(grid.n_nodes());
    let mut local_time = Vec::with_capacity(grid.n_nodes());
    let (mut xi, mut li) = (x0, 0.0);
    x.push(xi);
    local_time.push(li);
    for &db in noise.increments() {
        let p = xi + coeffs.drift.value(xi) * dt + coeffs.sigma.value(xi) * db;
        xi = p.max(0.0);
        li += (-p).max(0.0);
        x.push(xi);
        local_time.push(li);
    }
    Ok(ReflectedPath {
        grid,
        x,
        local_time,
        scheme: SchemeTag::ExactReflection,
    })
}

pub fn simulate(x0: f64, coeffs: &CoefficientSet, scheme: &Scheme, noise: &NoisePath) -> Result<ReflectedPath> {
    match scheme {
        Scheme::Penalized(p) => simulate_penalized(x0, coeffs, p, noise),
        Scheme::ExactReflection => simulate_exact_reflection(x0, coeffs, noise),
    }
}

/// Scheme and seed parameters echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub dt: f64,
    pub epsilon: Option<f64>,
    pub mollifier_index: Option<u32>,
    pub drift_preset: String,
    pub sigma_preset: String,
    pub x0: f64,
    pub t: f64,
}

impl Provenance {
    pub fn new(master_seed: u64, grid: &TimeGrid, scheme: &Scheme, coeffs: &CoefficientSet, x0: f64) -> Self {
        let (epsilon, mollifier_index) = match scheme {
            Scheme::Penalized(p) => (Some(p.epsilon), p.mollifier_index()),
            Scheme::ExactReflection => (None, None),
        };
        Self {
            master_seed,
            dt: grid.dt(),
            epsilon,
            mollifier_index,
            drift_preset: coeffs.drift_label.clone(),
            sigma_preset: coeffs.sigma_label.clone(),
            x0,
            t: grid.t_end(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRow {
    pub t: f64,
    pub x: SampleStats,
    pub x_squared: SampleStats,
    pub local_time: SampleStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    pub n_paths: usize,
    pub provenance: Provenance,
}

impl MomentReport {
    pub fn terminal(&self) -> &MomentRow {
        self.rows.last().expect("report has at least one row")
    }
}

/// Sample moments of `X_t`, `X_t^2` and `L_t` at every `report_every`-th node
/// (and always at `t_end`). Path `i` consumes stream `i`.
pub fn batch_moments(
    x0: f64,
    coeffs: &CoefficientSet,
    scheme: &Scheme,
    grid: TimeGrid,
    n_paths: usize,
    master_seed: u64,
    report_every: usize,
) -> Result<MomentReport> {
    if n_paths < 2 {
        return invalid(format!("need at least 2 paths, got {n_paths}"));
    }
    check_start(x0)?;
    let step = report_every.max(1);
    let mut nodes: Vec<usize> = (step..grid.n_steps()).step_by(step).collect();
    nodes.push(grid.n_steps());
    let per_path = map_paths(n_paths, |stream| {
        let noise = sample_noise(SeedSpec::new(master_seed, stream), grid);
        let path = simulate(x0, coeffs, scheme, &noise)?;
        Ok(nodes
            .iter()
            .map(|&i| [path.x[i], path.x[i] * path.x[i], path.local_time[i]])
            .collect::<Vec<_>>())
    })?;
    let rows = nodes
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let samples: Vec<[f64; 3]> = per_path.iter().map(|p| p[k]).collect();
            let [x, x2, l] = columns(&samples);
            Ok(MomentRow {
                t: grid.time(i),
                x: SampleStats::from_slice(&x)?,
                x_squared: SampleStats::from_slice(&x2)?,
                local_time: SampleStats::from_slice(&l)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MomentReport {
        rows,
        n_paths,
        provenance: Provenance::new(master_seed, &grid, scheme, coeffs, x0),
    })
}

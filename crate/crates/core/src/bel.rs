//! Monte Carlo estimators of `d/dx E[u0(X_t(x))]`.
//!
//! * `bel`: `E[u0(X_t) W]` with the Bismut-Elworthy-Li weight
//!   `W = t^-1 sum_i T(t_i) / sigma(x_i) dB_i`, a left-point Ito sum over the
//!   tangent `T` driven by the same increments as the path. It never touches
//!   `u0'`.
//! * `bel_cv`: same, with `u0(x0)` subtracted; valid because `E[W] = 0`.
//! * `pathwise`: `E[u0'(X_t) T(t)]`.
//! * `fd_payoff`: common-random-number central difference in `x0`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid_rng::{sample_noise, NoisePath, SeedSpec, TimeGrid};
use crate::payoff::Payoff;
use crate::sde::{simulate_penalized, CoefficientSet, PenalizationParams, Provenance, Scheme};
use crate::sensitivity::{log_exponential, Linearization};
use crate::stats::{map_paths, SampleStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bel,
    BelCv,
    Pathwise,
    FdPayoff,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorProvenance {
    #[serde(flatten)]
    pub scheme: Provenance,
    pub payoff: String,
    /// Difference step, `fd_payoff` only.
    pub h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub method: Method,
    pub provenance: EstimatorProvenance,
}

impl EstimatorReport {
    fn from_samples(samples: &[f64], method: Method, provenance: EstimatorProvenance) -> Result<Self> {
        let stats = SampleStats::from_slice(samples)?;
        Ok(Self {
            estimate: stats.mean,
            stderr: stats.stderr,
            n_paths: stats.n,
            method,
            provenance,
        })
    }
}

/// Coefficients, scheme and Monte Carlo sizing shared by the estimators.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub coeffs: CoefficientSet,
    pub params: PenalizationParams,
    pub dt: f64,
    pub n_paths: usize,
    pub master_seed: u64,
}

impl SimulationSetup {
    fn grid(&self, t: f64) -> Result<TimeGrid> {
        if !(t > 0.0) {
            return invalid(format!("horizon t must be positive, got {t}"));
        }
        TimeGrid::with_step(t, self.dt)
    }

    fn provenance(&self, grid: &TimeGrid, x0: f64, payoff: &Payoff, h: Option<f64>) -> EstimatorProvenance {
        EstimatorProvenance {
            scheme: Provenance::new(self.master_seed, grid, &Scheme::Penalized(self.params), &self.coeffs, x0),
            payoff: payoff.label.clone(),
            h,
        }
    }

    fn check(&self, x0: f64) -> Result<()> {
        if self.n_paths < 2 {
            return invalid(format!("need at least 2 paths, got {}", self.n_paths));
        }
        if !(x0 >= 0.0) {
            return invalid(format!("x0 must be nonnegative, got {x0}"));
        }
        Ok(())
    }
}

/// Terminal state, terminal tangent and BEL weight of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub terminal: f64,
    pub tangent: f64,
    pub weight: f64,
}

pub fn path_sample(x0: f64, setup: &SimulationSetup, noise: &NoisePath) -> Result<PathSample> {
    let path = simulate_penalized(x0, &setup.coeffs, &setup.params, noise)?;
    let log_e = log_exponential(&path, &setup.coeffs, &setup.params, noise, &Linearization::default())?;
    let ito: f64 = path
        .x
        .iter()
        .zip(&log_e)
        .zip(noise.increments())
        .map(|((&x, &l), &db)| l.exp() / setup.coeffs.sigma.value(x) * db)
        .sum();
    Ok(PathSample {
        terminal: path.terminal(),
        tangent: log_e.last().copied().unwrap_or(0.0).exp(),
        weight: ito / noise.grid().t_end(),
    })
}

fn path_samples(x0: f64, t: f64, setup: &SimulationSetup) -> Result<(TimeGrid, Vec<PathSample>)> {
    setup.check(x0)?;
    let grid = setup.grid(t)?;
    let samples = map_paths(setup.n_paths, |stream| {
        let noise = sample_noise(SeedSpec::new(setup.master_seed, stream), grid);
        path_sample(x0, setup, &noise)
    })?;
    Ok((grid, samples))
}

pub fn estimate_bel(
    payoff: &Payoff,
    x0: f64,
    t: f64,
    setup: &SimulationSetup,
    control_variate: bool,
) -> Result<EstimatorReport> {
    let (grid, samples) = path_samples(x0, t, setup)?;
    let offset = if control_variate { payoff.value(x0) } else { 0.0 };
    let values: Vec<f64> = samples
        .iter()
        .map(|s| (payoff.value(s.terminal) - offset) * s.weight)
        .collect();
    let method = if control_variate { Method::BelCv } else { Method::Bel };
    EstimatorReport::from_samples(&values, method, setup.provenance(&grid, x0, payoff, None))
}

/// BEL, BEL with control variate and (when `u0'` exists) pathwise estimates
/// from one shared set of paths, plus the statistics of the weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSuite {
    pub bel: EstimatorReport,
    pub bel_cv: EstimatorReport,
    pub pathwise: Option<EstimatorReport>,
    pub weight: SampleStats,
}

pub fn estimator_suite(payoff: &Payoff, x0: f64, t: f64, setup: &SimulationSetup) -> Result<EstimatorSuite> {
    let (grid, samples) = path_samples(x0, t, setup)?;
    let prov = setup.provenance(&grid, x0, payoff, None);
    let u_x0 = payoff.value(x0);
    let bel: Vec<f64> = samples.iter().map(|s| payoff.value(s.terminal) * s.weight).collect();
    let cv: Vec<f64> = samples
        .iter()
        .map(|s| (payoff.value(s.terminal) - u_x0) * s.weight)
        .collect();
    let w: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let pathwise = match payoff.derivative(0.0) {
        Some(_) => {
            let v: Vec<f64> = samples
                .iter()
                .map(|s| payoff.derivative(s.terminal).unwrap_or(f64::NAN) * s.tangent)
                .collect();
            Some(EstimatorReport::from_samples(&v, Method::Pathwise, prov.clone())?)
        }
        None => None,
    };
    Ok(EstimatorSuite {
        bel: EstimatorReport::from_samples(&bel, Method::Bel, prov.clone())?,
        bel_cv: EstimatorReport::from_samples(&cv, Method::BelCv, prov)?,
        pathwise,
        weight: SampleStats::from_slice(&w)?,
    })
}

/// Sample statistics of the BEL weight itself; its mean is zero.
pub fn weight_stats(x0: f64, t: f64, setup: &SimulationSetup) -> Result<SampleStats> {
    let (_, samples) = path_samples(x0, t, setup)?;
    let w: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    SampleStats::from_slice(&w)
}

pub fn estimate_pathwise(payoff: &Payoff, x0: f64, t: f64, setup: &SimulationSetup) -> Result<EstimatorReport> {
    if payoff.derivative(0.0).is_none() {
        return invalid(format!("payoff {} has no derivative", payoff.label));
    }
    let (grid, samples) = path_samples(x0, t, setup)?;
    let values: Vec<f64> = samples
        .iter()
        .map(|s| payoff.derivative(s.terminal).unwrap_or(f64::NAN) * s.tangent)
        .collect();
    EstimatorReport::from_samples(&values, Method::Pathwise, setup.provenance(&grid, x0, payoff, None))
}

/// Central difference `(u(x0 + h) - u(x0 - h)) / 2h` on common noise, or the
/// forward difference `(u(x0 + h) - u(x0)) / h` when `x0 < h`.
pub fn estimate_fd_payoff(
    payoff: &Payoff,
    x0: f64,
    t: f64,
    setup: &SimulationSetup,
    h: f64,
) -> Result<EstimatorReport> {
    if !(h > 0.0) {
        return invalid(format!("difference step must be positive, got {h}"));
    }
    setup.check(x0)?;
    let grid = setup.grid(t)?;
    let (lo, width) = if x0 >= h { (x0 - h, 2.0 * h) } else { (x0, h) };
    let values = map_paths(setup.n_paths, |stream| {
        let noise = sample_noise(SeedSpec::new(setup.master_seed, stream), grid);
        let up = simulate_penalized(x0 + h, &setup.coeffs, &setup.params, &noise)?;
        let down = simulate_penalized(lo, &setup.coeffs, &setup.params, &noise)?;
        Ok((payoff.value(up.terminal()) - payoff.value(down.terminal())) / width)
    })?;
    EstimatorReport::from_samples(&values, Method::FdPayoff, setup.provenance(&grid, x0, payoff, Some(h)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub method: Method,
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Per-path variance of the first report over this one's.
    pub relative_efficiency: f64,
}

/// Side-by-side comparison of estimators of the same target.
pub fn variance_report(reports: &[EstimatorReport]) -> Result<Vec<VarianceRow>> {
    let first = match reports {
        [first, _, ..] => first,
        _ => return invalid("need at least two reports to compare"),
    };
    let core = |r: &EstimatorReport| {
        let p = &r.provenance;
        (
            p.payoff.clone(),
            p.scheme.x0.to_bits(),
            p.scheme.t.to_bits(),
            p.scheme.drift_preset.clone(),
            p.scheme.sigma_preset.clone(),
        )
    };
    let target = core(first);
    if let Some(other) = reports.iter().find(|r| core(r) != target) {
        return Err(Error::InvalidArgument(format!(
            "reports target different quantities: {:?} vs {:?}",
            target,
            core(other)
        )));
    }
    let per_path_var = |r: &EstimatorReport| r.stderr * r.stderr * r.n_paths as f64;
    let base = per_path_var(first);
    Ok(reports
        .iter()
        .map(|r| VarianceRow {
            method: r.method,
            estimate: r.estimate,
            stderr: r.stderr,
            n_paths: r.n_paths,
            relative_efficiency: base / per_path_var(r),
        })
        .collect())
}

//! Pre-registered studies. Each run is a pure function of its config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::bel::{estimate_fd_payoff, estimator_suite, EstimatorReport, EstimatorSuite, SimulationSetup};
use crate::config::{
    derive_seed, BelTriangulationConfig, ExperimentConfig, PenalizationConfig, UniformBoundConfig,
};
use crate::drift::{mollified_drift, DriftFunction};
use crate::error::{invalid, Error, Result};
use crate::grid_rng::{sample_noise, SeedSpec, TimeGrid};
use crate::payoff::Payoff;
use crate::pde::{
    images_derivative, pde_derivative, solve_kolmogorov, sup_error_vs_images, PdeSolution, SpaceGrid,
};
use crate::sde::{batch_moments, simulate_penalized, CoefficientSet, MomentReport, PenalizationParams, Scheme};
use crate::sensitivity::{log_exponential, second_moment_sweep, sweep_with, DriftSlope, Linearization, SweepRow, SweepSettings};
use crate::skorohod::{
    lipschitz_gap, penalization_gap, reflect_explicit, DrivingFunction, EXPLICIT_CONTACT_TOLERANCE,
};
use crate::stats::{map_paths, normal_cdf, SampleStats};
use crate::tolerances as tol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOutcome {
    /// Acceptance criterion number this check belongs to.
    pub criterion: u8,
    pub id: String,
    pub status: Status,
    pub detail: String,
}

fn outcome(criterion: u8, id: &str, pass: bool, detail: String) -> CriterionOutcome {
    CriterionOutcome {
        criterion,
        id: id.into(),
        status: if pass { Status::Pass } else { Status::Fail },
        detail,
    }
}

/// CSV payload with a header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Shortest round-trip decimal, exponent form outside `[1e-4, 1e15)`;
/// locale-free.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub tables: BTreeMap<String, Table>,
    pub summary: BTreeMap<String, f64>,
    pub criteria: Vec<CriterionOutcome>,
}

impl ExperimentResult {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            config: config.clone(),
            config_hash: config.content_hash()?,
            tables: BTreeMap::new(),
            summary: BTreeMap::new(),
            criteria: Vec::new(),
        })
    }

    /// No registered check failed (insufficient data is not a failure).
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.status != Status::Fail)
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            name: &'a str,
            config_hash: &'a str,
            config: serde_json::Value,
            passed: bool,
            criteria: &'a [CriterionOutcome],
            summary: &'a BTreeMap<String, f64>,
            tables: Vec<String>,
        }
        let doc = Doc {
            name: self.config.name(),
            config_hash: &self.config_hash,
            config: self.config.to_json()?,
            passed: self.passed(),
            criteria: &self.criteria,
            summary: &self.summary,
            tables: self.tables.keys().map(|k| format!("{k}.csv")).collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Internal(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// `config.toml`, `summary.json` and one CSV per table.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), self.config.echo()?)?;
        fs::write(dir.join("summary.json"), self.summary_json()?)?;
        for (name, table) in &self.tables {
            fs::write(dir.join(format!("{name}.csv")), table.to_csv())?;
        }
        Ok(())
    }

    /// One line per check.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for c in &self.criteria {
            let tag = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::InsufficientData => "SKIP",
            };
            let _ = writeln!(out, "{tag} [{}] {}: {}", c.criterion, c.id, c.detail);
        }
        out
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    match config {
        ExperimentConfig::Penalization(c) => run_penalization_study(config, c),
        ExperimentConfig::UniformBound(c) => run_uniform_bound_study(config, c),
        ExperimentConfig::BelTriangulation(c) => run_bel_triangulation(config, c),
    }
}

fn sigma_t(t: f64) -> Result<()> {
    if !(t > 0.0) {
        return invalid(format!("horizon must be positive, got {t}"));
    }
    Ok(())
}

fn penalization_params(epsilon: f64, index: u32) -> Result<PenalizationParams> {
    PenalizationParams::new(epsilon, (index > 0).then_some(index))
}

// ---------------------------------------------------------------------------
// Penalization study.

struct SkorohodTrial {
    positivity: f64,
    monotone: bool,
    identity: f64,
    complementarity: f64,
    active: bool,
    gaps: Vec<f64>,
    /// `max_eps (f_eps)^- - (gdot eps + 10 dt)`; nonpositive when the bound holds.
    negative_part_excess: f64,
    penalized_complementarity: f64,
    lipschitz_ratio: f64,
    explicit_lipschitz_ratio: f64,
}

fn skorohod_trial(c: &PenalizationConfig, grid: TimeGrid, seed: u64, i: u64) -> Result<SkorohodTrial> {
    let mut rng = SeedSpec::new(seed, i).rng();
    let g = DrivingFunction::random_fourier(grid, &mut rng);
    let g2 = DrivingFunction::random_fourier(grid, &mut rng);
    let x0 = c.skorohod_x0;
    let exact = reflect_explicit(x0, &g)?;
    let positivity = exact.f.iter().copied().fold(f64::INFINITY, f64::min);
    let monotone = exact.phi[0] == 0.0 && exact.phi.windows(2).all(|w| w[1] >= w[0]);
    let identity = exact
        .f
        .iter()
        .zip(&exact.phi)
        .zip(g.values())
        .map(|((f, p), gv)| (f - (x0 + p + gv)).abs() / (1.0 + x0.abs() + p.abs() + gv.abs()))
        .fold(0.0, f64::max);
    let complementarity = exact.complementarity_residual(EXPLICIT_CONTACT_TOLERANCE);
    let rows = penalization_gap(x0, &g, &c.epsilons)?;
    let gdot = g.gdot_sup().unwrap_or(f64::INFINITY);
    let dt = grid.dt();
    let negative_part_excess = rows
        .iter()
        .map(|r| r.sup_negative_part - (gdot * r.epsilon + tol::NEGATIVE_PART_DT_FACTOR * dt))
        .fold(f64::NEG_INFINITY, f64::max);
    let penalized_complementarity = rows.iter().map(|r| r.complementarity_residual).fold(0.0, f64::max);
    let (lhs, rhs) = lipschitz_gap(x0, &g, &g2, c.lipschitz_epsilon)?;
    let e2 = reflect_explicit(x0, &g2)?;
    let explicit_gap = exact.f.iter().zip(&e2.f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let driver_gap = 0.5 * rhs;
    Ok(SkorohodTrial {
        positivity,
        monotone,
        identity,
        complementarity,
        active: exact.phi.last().copied().unwrap_or(0.0) > 0.0,
        gaps: rows.iter().map(|r| r.sup_gap).collect(),
        negative_part_excess,
        penalized_complementarity,
        lipschitz_ratio: if driver_gap > 0.0 { lhs / driver_gap } else { 0.0 },
        explicit_lipschitz_ratio: if driver_gap > 0.0 { explicit_gap / driver_gap } else { 0.0 },
    })
}

fn gap_ratios_ok(gaps: &[f64]) -> bool {
    let (lo, hi) = tol::GAP_RATIO_RANGE;
    gaps.windows(2).all(|w| {
        let r = w[1] / w[0];
        r >= lo && r <= hi
    })
}

fn moments_table(table: &mut Table, scheme: &str, report: &MomentReport) {
    for r in &report.rows {
        table.push(vec![
            scheme.into(),
            num(r.t),
            num(r.x.mean),
            num(r.x.stderr),
            num(r.x_squared.mean),
            num(r.x_squared.stderr),
            num(r.local_time.mean),
            num(r.local_time.stderr),
        ]);
    }
}

pub fn run_penalization_study(config: &ExperimentConfig, c: &PenalizationConfig) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::new(config)?;
    if c.skorohod_trials == 0 || c.lipschitz_pairs == 0 {
        return invalid("trial counts must be positive");
    }
    let grid = TimeGrid::with_step(1.0, c.skorohod_dt)?;
    let seed = derive_seed(c.seed, "skorohod");
    let n_trials = c.skorohod_trials.max(c.lipschitz_pairs);
    let trials = map_paths(n_trials, |i| skorohod_trial(c, grid, seed, i))?;
    let drivers = &trials[..c.skorohod_trials];
    let pairs = &trials[..c.lipschitz_pairs];

    let mut gaps = Table::new(&["trial", "epsilon", "sup_gap"]);
    for (i, t) in drivers.iter().enumerate() {
        for (eps, gap) in c.epsilons.iter().zip(&t.gaps) {
            gaps.push(vec![i.to_string(), num(*eps), num(*gap)]);
        }
    }
    out.tables.insert("skorohod_gaps".into(), gaps);

    let min_f = drivers.iter().map(|t| t.positivity).fold(f64::INFINITY, f64::min);
    let monotone = drivers.iter().all(|t| t.monotone);
    let identity = drivers.iter().map(|t| t.identity).fold(0.0, f64::max);
    let compl = drivers.iter().map(|t| t.complementarity).fold(0.0, f64::max);
    out.summary.insert("explicit_min_f".into(), min_f);
    out.summary.insert("explicit_max_identity_residual".into(), identity);
    out.summary.insert("explicit_max_complementarity".into(), compl);
    out.criteria.push(outcome(
        1,
        "explicit-invariants",
        min_f >= -tol::POSITIVITY_TOL && monotone && identity <= tol::IDENTITY_REL_TOL && compl <= tol::COMPLEMENTARITY_FLAT_TOL,
        format!(
            "{} drivers: min f {min_f:e}, phi monotone {monotone}, identity {identity:e}, complementarity {compl:e}",
            drivers.len()
        ),
    ));

    let active: Vec<&SkorohodTrial> = drivers.iter().filter(|t| t.active).collect();
    out.summary.insert("active_drivers".into(), active.len() as f64);
    if c.epsilons.len() < 2 || active.is_empty() {
        out.criteria.push(CriterionOutcome {
            criterion: 1,
            id: "gap-linear-decay".into(),
            status: Status::InsufficientData,
            detail: format!("{} epsilons, {} drivers touching the wall", c.epsilons.len(), active.len()),
        });
    } else {
        let good = active.iter().filter(|t| gap_ratios_ok(&t.gaps)).count();
        let frac = good as f64 / active.len() as f64;
        out.summary.insert("gap_ratio_pass_fraction".into(), frac);
        let mut ratios = Table::new(&["epsilon", "median_sup_gap", "median_ratio_to_previous"]);
        for k in 0..c.epsilons.len() {
            let mut g: Vec<f64> = active.iter().map(|t| t.gaps[k]).collect();
            let mut r: Vec<f64> = if k == 0 {
                vec![f64::NAN]
            } else {
                active.iter().map(|t| t.gaps[k] / t.gaps[k - 1]).collect()
            };
            ratios.push(vec![num(c.epsilons[k]), num(median(&mut g)), num(median(&mut r))]);
        }
        out.tables.insert("gap_decay".into(), ratios);
        // Diagnostic only: which epsilon pair is responsible for misses.
        let (lo, hi) = tol::GAP_RATIO_RANGE;
        for k in 1..c.epsilons.len() {
            let hits = active
                .iter()
                .filter(|t| (lo..=hi).contains(&(t.gaps[k] / t.gaps[k - 1])))
                .count();
            out.summary
                .insert(format!("gap_ratio_pass_fraction_pair_{k}"), hits as f64 / active.len() as f64);
        }
        out.criteria.push(outcome(
            1,
            "gap-linear-decay",
            frac >= tol::GAP_RATIO_PASS_FRACTION,
            format!(
                "{good}/{} drivers touching the wall have every successive gap ratio in {:?} ({} never touch)",
                active.len(),
                tol::GAP_RATIO_RANGE,
                drivers.len() - active.len()
            ),
        ));
    }
    let excess = drivers.iter().map(|t| t.negative_part_excess).fold(f64::NEG_INFINITY, f64::max);
    let pen_compl = drivers.iter().map(|t| t.penalized_complementarity).fold(0.0, f64::max);
    out.summary.insert("negative_part_max_excess".into(), excess);
    out.summary.insert("penalized_max_complementarity".into(), pen_compl);
    out.criteria.push(outcome(
        1,
        "negative-part-bound",
        excess <= 0.0,
        format!("max over drivers and epsilons of (f_eps)^- - (gdot eps + 10 dt) = {excess:e}"),
    ));

    let ratio = pairs.iter().map(|t| t.lipschitz_ratio).fold(0.0, f64::max);
    let explicit_ratio = pairs.iter().map(|t| t.explicit_lipschitz_ratio).fold(0.0, f64::max);
    out.summary.insert("lipschitz_max_ratio".into(), ratio);
    out.summary.insert("lipschitz_max_ratio_explicit".into(), explicit_ratio);
    out.criteria.push(outcome(
        2,
        "lipschitz-2",
        ratio <= tol::LIPSCHITZ_RATIO_MAX && explicit_ratio <= tol::LIPSCHITZ_RATIO_MAX,
        format!(
            "{} pairs: max |f1-f2|/|g1-g2| = {ratio:.6} penalized, {explicit_ratio:.6} explicit (limit {})",
            pairs.len(),
            tol::LIPSCHITZ_RATIO_MAX
        ),
    ));

    sigma_t(c.moment_t)?;
    let coeffs = CoefficientSet::from_presets("zero", "constant:1")?;
    let mgrid = TimeGrid::with_step(c.moment_t, c.moment_dt)?;
    let mseed = derive_seed(c.seed, "moments");
    let schemes = [
        ("exact", Scheme::ExactReflection),
        ("penalized", Scheme::Penalized(penalization_params(c.moment_epsilon, c.moment_mollifier_index)?)),
    ];
    let mut table = Table::new(&["scheme", "t", "mean_x", "stderr_x", "mean_x2", "stderr_x2", "mean_l", "stderr_l"]);
    // Reflected Brownian motion from x0: E X_t, E X_t^2 = x0^2 + t, E L_t.
    let s = c.moment_t.sqrt();
    let z = c.moment_x0 / s;
    let mean_target = c.moment_x0 * (2.0 * normal_cdf(z) - 1.0) + 2.0 * s * crate::stats::normal_pdf(z);
    let second_target = c.moment_x0 * c.moment_x0 + c.moment_t;
    let local_target = mean_target - c.moment_x0;
    for (label, scheme) in &schemes {
        let report = batch_moments(c.moment_x0, &coeffs, scheme, mgrid, c.moment_paths, mseed, c.moment_report_every)?;
        moments_table(&mut table, label, &report);
        let r = report.terminal();
        for (key, v) in [("x", r.x), ("x2", r.x_squared), ("l", r.local_time)] {
            out.summary.insert(format!("{label}_mean_{key}"), v.mean);
            out.summary.insert(format!("{label}_stderr_{key}"), v.stderr);
        }
        let ok = tol::within(r.x.mean, mean_target, r.x.stderr, tol::MEAN_SLACK)
            && tol::within(r.x_squared.mean, second_target, r.x_squared.stderr, tol::SECOND_MOMENT_SLACK)
            && tol::within(r.local_time.mean, local_target, r.local_time.stderr, tol::LOCAL_TIME_SLACK);
        out.criteria.push(outcome(
            3,
            &format!("moments-{label}"),
            ok,
            format!(
                "E X = {:.5}±{:.5} (target {mean_target:.5}), E X^2 = {:.5}±{:.5} (target {second_target:.5}), E L = {:.5}±{:.5} (target {local_target:.5})",
                r.x.mean, r.x.stderr, r.x_squared.mean, r.x_squared.stderr, r.local_time.mean, r.local_time.stderr
            ),
        ));
    }
    out.tables.insert("moments".into(), table);
    Ok(out)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

// ---------------------------------------------------------------------------
// Uniform second-moment bound.

fn sweep_table(table: &mut Table, variant: &str, rows: &[SweepRow]) {
    for r in rows {
        table.push(vec![
            variant.into(),
            r.j.to_string(),
            num(r.lipschitz_estimate),
            num(r.second_moment),
            num(r.stderr),
            num(r.log_second_moment),
        ]);
    }
}

pub fn run_uniform_bound_study(config: &ExperimentConfig, c: &UniformBoundConfig) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::new(config)?;
    sigma_t(c.t)?;
    let grid = TimeGrid::with_step(c.t, c.dt)?;
    let params = penalization_params(c.epsilon, c.mollifier_index)?;

    // Driftless tangent: E[d_x X_t] = 2 Phi(x0 / sigma sqrt t) - 1.
    let bm = CoefficientSet::from_presets("zero", &c.sigma)?;
    let Some(sigma) = bm.sigma.constant_value() else {
        return invalid("the tangent check needs a constant sigma");
    };
    let tseed = derive_seed(c.seed, "tangent");
    let tangents = map_paths(c.tangent_paths, |i| {
        let noise = sample_noise(SeedSpec::new(tseed, i), grid);
        let path = simulate_penalized(c.x0, &bm, &params, &noise)?;
        let log_e = log_exponential(&path, &bm, &params, &noise, &Linearization::default())?;
        Ok(log_e.last().copied().unwrap_or(0.0).exp())
    })?;
    let ts = SampleStats::from_slice(&tangents)?;
    let target = 2.0 * normal_cdf(c.x0 / (sigma.abs() * c.t.sqrt())) - 1.0;
    out.summary.insert("tangent_mean".into(), ts.mean);
    out.summary.insert("tangent_stderr".into(), ts.stderr);
    out.summary.insert("tangent_target".into(), target);
    out.criteria.push(outcome(
        4,
        "tangent-expectation",
        tol::within(ts.mean, target, ts.stderr, tol::TANGENT_SLACK),
        format!("E[d_x X_t] = {:.5}±{:.5}, target {target:.5}", ts.mean, ts.stderr),
    ));

    let base = DriftFunction::from_preset(&c.drift)?;
    let coeffs = CoefficientSet::from_presets(&c.drift, &c.sigma)?;
    let settings = SweepSettings {
        x0: c.x0,
        grid,
        params,
        cutoff_index: c.cutoff_index,
        n_paths: c.n_paths,
        master_seed: derive_seed(c.seed, "sweep"),
        lipschitz_range: c.lipschitz_range,
    };
    let rows = second_moment_sweep(&base, &c.levels, &coeffs, &settings)?;
    let mut table = Table::new(&["variant", "j", "lipschitz_estimate", "second_moment", "stderr", "log_second_moment"]);
    sweep_table(&mut table, "penalized", &rows);
    if rows.len() < 2 {
        out.criteria.push(CriterionOutcome {
            criterion: 5,
            id: "uniform-bound".into(),
            status: Status::InsufficientData,
            detail: format!("{} mollification levels", rows.len()),
        });
    } else {
        let hi = rows.iter().map(|r| r.second_moment).fold(f64::NEG_INFINITY, f64::max);
        let lo = rows.iter().map(|r| r.second_moment).fold(f64::INFINITY, f64::min);
        out.summary.insert("uniform_max_over_min".into(), hi / lo);
        out.criteria.push(outcome(
            5,
            "uniform-bound",
            hi / lo <= tol::UNIFORM_RATIO_MAX,
            format!(
                "E[(d_x X_t)^2] over j = {:?}: max/min = {:.4} (limit {})",
                c.levels,
                hi / lo,
                tol::UNIFORM_RATIO_MAX
            ),
        ));
    }
    if c.adversarial {
        // Penalty removed, drift slope replaced by the (positive) Lipschitz majorant.
        let adv = sweep_with(&base, &c.levels, &coeffs, &settings, |lip| Linearization {
            include_penalty: false,
            drift_slope: DriftSlope::Constant(lip),
        })?;
        sweep_table(&mut table, "adversarial", &adv);
        if let (Some(first), Some(last)) = (adv.first(), adv.last()) {
            let log_growth = last.log_second_moment - first.log_second_moment;
            out.summary.insert("adversarial_log_growth".into(), log_growth);
            out.criteria.push(outcome(
                5,
                "adversarial-control",
                adv.len() >= 2 && log_growth > tol::ADVERSARIAL_GROWTH_MIN.ln(),
                format!(
                    "without the penalty term the second moment grows by exp({log_growth:.3}) from j = {} to j = {} (need > {}x)",
                    first.j,
                    last.j,
                    tol::ADVERSARIAL_GROWTH_MIN
                ),
            ));
        }
    }
    out.tables.insert("sweep".into(), table);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Estimator triangulation.

fn estimate_row(table: &mut Table, case: &str, x0: f64, r: &EstimatorReport, target: f64) {
    let method = serde_json::to_value(r.method)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    table.push(vec![case.into(), method, num(x0), num(r.estimate), num(r.stderr), r.n_paths.to_string(), num(target)]);
}

fn deterministic_row(table: &mut Table, case: &str, method: &str, x0: f64, v: f64, target: f64) {
    table.push(vec![case.into(), method.into(), num(x0), num(v), "0".into(), "0".into(), num(target)]);
}

fn null_checks(out: &mut ExperimentResult, nulls: &mut Table, case: &str, suite: &EstimatorSuite, c: f64) {
    let w = suite.weight;
    let (cm, cs) = (c * w.mean, c.abs() * w.stderr);
    nulls.push(vec![case.into(), num(w.mean), num(w.stderr), num(cm), num(cs)]);
    out.criteria.push(outcome(
        8,
        &format!("null-{case}"),
        w.mean.abs() <= tol::Z * w.stderr && cm.abs() <= tol::Z * cs,
        format!("E[W] = {:.5}±{:.5}, constant-payoff BEL = {cm:.5}±{cs:.5}", w.mean, w.stderr),
    ));
}

fn pde_for(payoff: &Payoff, coeffs: &CoefficientSet, t: f64, x_hi: f64, dx: f64, dt: f64) -> Result<PdeSolution> {
    let grid = SpaceGrid::with_step(SpaceGrid::default_x_max(x_hi, t, coeffs.sigma.sup()), dx)?;
    let steps = (t / dt).round().max(1.0) as usize;
    solve_kolmogorov(payoff, coeffs, t, grid, steps)
}

pub fn run_bel_triangulation(config: &ExperimentConfig, c: &BelTriangulationConfig) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::new(config)?;
    sigma_t(c.t)?;
    let payoff = Payoff::from_preset(&c.payoff)?;
    let null_payoff = Payoff::from_preset(&c.null_payoff)?;
    let Some(null_c) = null_payoff.constant_value() else {
        return invalid(format!("null-payoff must be a constant, got {:?}", c.null_payoff));
    };
    let params = penalization_params(c.epsilon, c.mollifier_index)?;
    let setup = |coeffs: CoefficientSet, label: &str| SimulationSetup {
        coeffs,
        params,
        dt: c.dt,
        n_paths: c.n_paths,
        master_seed: derive_seed(c.seed, label),
    };
    let mut estimates = Table::new(&["case", "method", "x0", "estimate", "stderr", "n_paths", "target"]);
    let mut nulls = Table::new(&["case", "weight_mean", "weight_stderr", "constant_bel", "constant_stderr"]);

    // Driftless: E[min(X_t, cap)] for reflected Brownian motion has slope
    // 2 Phi(x / sigma sqrt t) - 1 once the cap is many sigma sqrt t away.
    let bm = CoefficientSet::from_presets("zero", "constant:1")?;
    let target = 2.0 * normal_cdf(c.x0 / c.t.sqrt()) - 1.0;
    let flat = setup(bm.clone(), "driftless");
    let suite = estimator_suite(&payoff, c.x0, c.t, &flat)?;
    let fd = estimate_fd_payoff(&payoff, c.x0, c.t, &flat, c.fd_h)?;
    let pde = pde_for(&payoff, &bm, c.t, c.x0, c.pde_dx, c.pde_dt)?;
    let pde_d = pde_derivative(&pde, pde.times.len() - 1, c.x0)?;
    let img_d = images_derivative(&payoff, 1.0, c.t, c.x0)?;
    let mut mc = vec![&suite.bel, &suite.bel_cv, &fd];
    if let Some(pw) = &suite.pathwise {
        mc.push(pw);
    }
    let mut ok = true;
    let mut detail = String::new();
    for r in &mc {
        estimate_row(&mut estimates, "driftless", c.x0, r, target);
        ok &= tol::within(r.estimate, target, r.stderr, tol::TRIANGULATION_SLACK);
        let _ = write!(detail, "{:?} {:.5}±{:.5}, ", r.method, r.estimate, r.stderr);
    }
    for (m, v) in [("pde", pde_d), ("images", img_d)] {
        deterministic_row(&mut estimates, "driftless", m, c.x0, v, target);
        ok &= tol::within(v, target, 0.0, tol::TRIANGULATION_SLACK);
        let _ = write!(detail, "{m} {v:.5}, ");
    }
    out.summary.insert("driftless_target".into(), target);
    out.criteria.push(outcome(6, "driftless-triangulation", ok, format!("{detail}target {target:.5}")));
    null_checks(&mut out, &mut nulls, "driftless", &suite, null_c);

    let at_wall = estimator_suite(&payoff, 0.0, c.t, &setup(bm.clone(), "driftless-wall"))?;
    estimate_row(&mut estimates, "driftless-wall", 0.0, &at_wall.bel, 0.0);
    out.criteria.push(outcome(
        6,
        "bel-at-wall",
        tol::within(at_wall.bel.estimate, 0.0, at_wall.bel.stderr, tol::TRIANGULATION_SLACK),
        format!("BEL at x0 = 0: {:.5}±{:.5}, target 0", at_wall.bel.estimate, at_wall.bel.stderr),
    ));
    null_checks(&mut out, &mut nulls, "driftless-wall", &at_wall, null_c);

    // Discontinuous drift: Monte Carlo on the mollified step, PDE on the sharp one.
    let sharp = CoefficientSet::from_presets(&c.step_drift, "constant:1")?;
    let smooth = mollified_drift(&sharp.drift, c.step_mollification, c.step_cutoff)?;
    let label = format!("mollified:{}:{},{}", c.step_drift, c.step_mollification, c.step_cutoff);
    let step = setup(sharp.with_drift(smooth, label), "step");
    let suite = estimator_suite(&payoff, c.x0, c.t, &step)?;
    let fd = estimate_fd_payoff(&payoff, c.x0, c.t, &step, c.fd_h)?;
    let pde = pde_for(&payoff, &sharp, c.t, c.x0, c.pde_dx, c.pde_dt)?;
    let pde_d = pde_derivative(&pde, pde.times.len() - 1, c.x0)?;
    for r in [&suite.bel, &suite.bel_cv, &fd] {
        estimate_row(&mut estimates, "step", c.x0, r, tol::STEP_REFERENCE);
    }
    if let Some(pw) = &suite.pathwise {
        estimate_row(&mut estimates, "step", c.x0, pw, tol::STEP_REFERENCE);
    }
    deterministic_row(&mut estimates, "step", "pde", c.x0, pde_d, tol::STEP_REFERENCE);
    let trio = [("bel", suite.bel.estimate), ("fd_payoff", fd.estimate), ("pde", pde_d)];
    let spread = trio
        .iter()
        .flat_map(|a| trio.iter().map(move |b| (a.1 - b.1).abs()))
        .fold(0.0, f64::max);
    out.summary.insert("step_pairwise_spread".into(), spread);
    out.summary.insert("step_pde_derivative".into(), pde_d);
    out.criteria.push(outcome(
        7,
        "step-pairwise",
        spread <= tol::STEP_PAIRWISE_MAX,
        format!(
            "bel {:.5}, fd_payoff {:.5}, pde {:.5}: max pairwise gap {spread:.5} (limit {})",
            suite.bel.estimate,
            fd.estimate,
            pde_d,
            tol::STEP_PAIRWISE_MAX
        ),
    ));
    let is_reference_case = c.step_drift == "step:1,1" && c.payoff == "linear-cap:10" && c.x0 == 1.0 && c.t == 1.0;
    if is_reference_case {
        out.criteria.push(outcome(
            7,
            "step-reference",
            (pde_d - tol::STEP_REFERENCE).abs() <= tol::STEP_REFERENCE_TOL,
            format!("pde {pde_d:.6} vs frozen reference {}", tol::STEP_REFERENCE),
        ));
    } else {
        out.criteria.push(CriterionOutcome {
            criterion: 7,
            id: "step-reference".into(),
            status: Status::InsufficientData,
            detail: "the frozen reference only covers step:1,1, linear-cap:10, x0 = 1, t = 1".into(),
        });
    }
    null_checks(&mut out, &mut nulls, "step", &suite, null_c);

    let varying = setup(CoefficientSet::from_presets("zero", &c.null_sigma)?, "null-sigma");
    let suite = estimator_suite(&null_payoff, c.x0, c.t, &varying)?;
    null_checks(&mut out, &mut nulls, "varying-sigma", &suite, null_c);

    // PDE against the image formula, then one parabolic refinement.
    let ip = Payoff::from_preset(&c.images_payoff)?;
    let coarse = pde_for(&ip, &bm, c.t, c.images_x_hi, c.pde_dx, c.pde_dt)?;
    let fine = pde_for(&ip, &bm, c.t, c.images_x_hi, 0.5 * c.pde_dx, 0.25 * c.pde_dt)?;
    let e1 = sup_error_vs_images(&coarse, &ip, 1.0, c.images_x_hi)?;
    let e2 = sup_error_vs_images(&fine, &ip, 1.0, c.images_x_hi)?;
    let mut refinement = Table::new(&["dx", "dt", "sup_error"]);
    refinement.push(vec![num(coarse.metadata.dx), num(coarse.metadata.dt), num(e1)]);
    refinement.push(vec![num(fine.metadata.dx), num(fine.metadata.dt), num(e2)]);
    out.tables.insert("pde_refinement".into(), refinement);
    let ratio = e1 / e2;
    let (lo, hi) = tol::PDE_REFINEMENT_RANGE;
    out.summary.insert("pde_sup_error".into(), e1);
    out.summary.insert("pde_refinement_ratio".into(), ratio);
    out.criteria.push(outcome(
        9,
        "pde-vs-images",
        e1 <= tol::PDE_SUP_ERROR_MAX && (lo..=hi).contains(&ratio),
        format!("sup error {e1:.3e} at dx = {}, {e2:.3e} refined, ratio {ratio:.3}", coarse.metadata.dx),
    ));
    let one = Payoff::from_preset("constant:1")?;
    let rough = CoefficientSet::from_presets(&c.step_drift, &c.null_sigma)?;
    let flat_sol = pde_for(&one, &rough, c.t, c.x0, c.pde_dx, c.pde_dt)?;
    let drift_err = flat_sol.u.iter().flatten().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    out.summary.insert("pde_constant_error".into(), drift_err);
    out.criteria.push(outcome(
        9,
        "pde-constants",
        drift_err <= tol::CONSTANT_PRESERVATION_TOL,
        format!("u0 = 1 under {} / {}: max |u - 1| = {drift_err:e}", c.step_drift, c.null_sigma),
    ));

    let mut profile = Table::new(&["x", "u", "du_dx"]);
    let k = pde.times.len() - 1;
    let row = pde.terminal();
    for (j, x) in pde.grid.nodes().into_iter().enumerate() {
        profile.push(vec![num(x), num(row[j]), num(pde_derivative(&pde, k, x)?)]);
    }
    out.tables.insert("step_pde_profile".into(), profile);
    out.tables.insert("estimates".into(), estimates);
    out.tables.insert("nulls".into(), nulls);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BEL_TRIANGULATION, PENALIZATION, UNIFORM_BOUND};

    fn small(name: &str, keys: &str) -> ExperimentConfig {
        let overrides: toml::Table = keys.parse().unwrap();
        ExperimentConfig::load(name, None, overrides).unwrap()
    }

    #[test]
    fn single_epsilon_marks_insufficient_data() {
        let cfg = small(
            PENALIZATION,
            "epsilons = [0.05]\nskorohod-trials = 20\nlipschitz-pairs = 20\nskorohod-dt = 1e-3\nmoment-paths = 200",
        );
        let r = run_experiment(&cfg).unwrap();
        let gap = r.criteria.iter().find(|c| c.id == "gap-linear-decay").unwrap();
        assert_eq!(gap.status, Status::InsufficientData);
    }

    #[test]
    fn zero_drift_sweep_is_flat() {
        let cfg = small(UNIFORM_BOUND, "drift = \"zero\"\nn-paths = 200\ntangent-paths = 200\nlevels = [4, 64]\nadversarial = false");
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.summary["uniform_max_over_min"], 1.0);
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = small(BEL_TRIANGULATION, "n-paths = 300\npde-dx = 0.05\npde-dt = 0.01");
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.summary_json().unwrap(), b.summary_json().unwrap());
        assert_eq!(a.tables, b.tables);
        assert!(a.tables["estimates"].to_csv().starts_with("case,method,x0,"));
    }

    #[test]
    fn csv_rendering() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![num(0.1), num(1e-20)]);
        t.push(vec![num(-2.5e20), num(f64::NAN)]);
        assert_eq!(t.to_csv(), "a,b\n0.1,1e-20\n-2.5e20,NaN\n");
    }
}

//! Deterministic Skorohod problem on the half-line.
//!
//! Given a driver `g` with `g(0) = 0` and a start `x0 >= 0`, the reflected
//! function is `f = x0 + phi + g` where `phi` is the smallest nondecreasing
//! regulator keeping `f` nonnegative. Besides the explicit running-maximum map
//! this module integrates the penalized ODE
//! `f_eps = x0 + eps^-1 * int (f_eps)^- ds + g` with an implicit per-step
//! penalty, which stays stable for `eps` far below the grid step.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::grid_rng::TimeGrid;

/// Driver sampled at the grid nodes, interpreted piecewise-linearly in between.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingFunction {
    grid: TimeGrid,
    values: Vec<f64>,
    gdot_sup: Option<f64>,
}

impl DrivingFunction {
    pub fn from_values(grid: TimeGrid, values: Vec<f64>, gdot_sup: Option<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return invalid(format!(
                "driver has {} values for {} nodes",
                values.len(),
                grid.n_nodes()
            ));
        }
        if values[0] != 0.0 {
            return invalid(format!("driver must start at 0, got {}", values[0]));
        }
        if let Some(s) = gdot_sup {
            if !(s >= 0.0) {
                return invalid(format!("gdot_sup must be nonnegative, got {s}"));
            }
        }
        Ok(Self {
            grid,
            values,
            gdot_sup,
        })
    }

    pub fn from_fn(grid: TimeGrid, g: impl Fn(f64) -> f64, gdot_sup: Option<f64>) -> Result<Self> {
        let values = grid.times().into_iter().map(g).collect();
        Self::from_values(grid, values, gdot_sup)
    }

    /// `g(t) = sum_k a_k sin(k pi t)`, `k = 1..=coeffs.len()`.
    pub fn fourier(grid: TimeGrid, coeffs: &[f64]) -> Self {
        let pi = std::f64::consts::PI;
        let values = grid
            .times()
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                if i == 0 {
                    0.0
                } else {
                    coeffs
                        .iter()
                        .enumerate()
                        .map(|(k, a)| a * ((k + 1) as f64 * pi * t).sin())
                        .sum()
                }
            })
            .collect();
        let gdot_sup = coeffs
            .iter()
            .enumerate()
            .map(|(k, a)| a.abs() * (k + 1) as f64 * pi)
            .sum();
        Self {
            grid,
            values,
            gdot_sup: Some(gdot_sup),
        }
    }

    /// Random member of the C^1 test corpus: five sine modes with
    /// coefficients uniform in [-1, 1].
    pub fn random_fourier<R: Rng + ?Sized>(grid: TimeGrid, rng: &mut R) -> Self {
        let coeffs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self::fourier(grid, &coeffs)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gdot_sup(&self) -> Option<f64> {
        self.gdot_sup
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkorohodSolution {
    pub x0: f64,
    pub f: Vec<f64>,
    pub phi: Vec<f64>,
}

impl SkorohodSolution {
    /// `sum_i 1{f(t_{i+1}) > tol_contact} * (phi(t_{i+1}) - phi(t_i))`.
    ///
    /// The indicator is taken at the right end of each step: with a
    /// piecewise-linear driver the contact happens inside the step and the
    /// regulator increment belongs to the contact point.
    pub fn complementarity_residual(&self, tol_contact: f64) -> f64 {
        complementarity(&self.f, &self.phi, tol_contact)
    }
}

pub(crate) fn complementarity(f: &[f64], phi: &[f64], tol_contact: f64) -> f64 {
    f.iter()
        .skip(1)
        .zip(phi.windows(2))
        .filter(|(fi, _)| **fi > tol_contact)
        .map(|(_, w)| w[1] - w[0])
        .sum()
}

fn check_x0(x0: f64) -> Result<()> {
    if !(x0 >= 0.0) || !x0.is_finite() {
        return invalid(format!("x0 must be finite and nonnegative, got {x0}"));
    }
    Ok(())
}

/// `phi(t) = max(0, max_{s <= t} -(x0 + g(s)))`, `f = x0 + phi + g`.
pub fn reflect_explicit(x0: f64, g: &DrivingFunction) -> Result<SkorohodSolution> {
    check_x0(x0)?;
    let mut phi = Vec::with_capacity(g.values.len());
    let mut running = 0.0f64;
    for &gv in &g.values {
        running = running.max(-(x0 + gv));
        phi.push(running);
    }
    let f = phi.iter().zip(&g.values).map(|(p, gv)| x0 + p + gv).collect();
    Ok(SkorohodSolution { x0, f, phi })
}

/// Penalized path and its regulator `eps^-1 * int (f_eps)^-` (trapezoidal).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenalizedSolution {
    pub epsilon: f64,
    pub f_eps: Vec<f64>,
    pub phi_eps: Vec<f64>,
}

impl PenalizedSolution {
    pub fn sup_negative_part(&self) -> f64 {
        self.f_eps.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max)
    }
}

pub fn solve_penalized_ode(x0: f64, g: &DrivingFunction, epsilon: f64) -> Result<PenalizedSolution> {
    check_x0(x0)?;
    if !(epsilon > 0.0) {
        return invalid(format!("epsilon must be positive, got {epsilon}"));
    }
    let dt = g.grid.dt();
    let shrink = 1.0 / (1.0 + dt / epsilon);
    let n = g.values.len();
    let mut f_eps = Vec::with_capacity(n);
    let mut phi_eps = Vec::with_capacity(n);
    let mut f = x0;
    let mut phi = 0.0;
    f_eps.push(f);
    phi_eps.push(phi);
    for w in g.values.windows(2) {
        let p = f + (w[1] - w[0]);
        let next = if p >= 0.0 { p } else { p * shrink };
        phi += 0.5 * dt * ((-f).max(0.0) + (-next).max(0.0)) / epsilon;
        f = next;
        f_eps.push(f);
        phi_eps.push(phi);
    }
    Ok(PenalizedSolution {
        epsilon,
        f_eps,
        phi_eps,
    })
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRow {
    pub epsilon: f64,
    pub sup_gap: f64,
    pub sup_negative_part: f64,
    pub complementarity_residual: f64,
}

/// Contact tolerance for penalized output: the penalized regulator only grows
/// while `f_eps < 0`, which stays within O(eps) of the wall.
pub fn penalized_contact_tolerance(epsilon: f64, dt: f64) -> f64 {
    10.0 * epsilon + 10.0 * dt
}

/// Contact tolerance for the explicit map.
pub const EXPLICIT_CONTACT_TOLERANCE: f64 = 1e-8;

/// Sup-norm gap between the penalized solutions and the explicit reflection,
/// one row per `epsilon` (which must be strictly decreasing).
pub fn penalization_gap(x0: f64, g: &DrivingFunction, epsilons: &[f64]) -> Result<Vec<GapRow>> {
    if epsilons.is_empty() {
        return invalid("epsilon list is empty");
    }
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return invalid("epsilon list must be strictly decreasing");
    }
    let exact = reflect_explicit(x0, g)?;
    let dt = g.grid.dt();
    epsilons
        .iter()
        .map(|&eps| {
            let pen = solve_penalized_ode(x0, g, eps)?;
            Ok(GapRow {
                epsilon: eps,
                sup_gap: sup_distance(&pen.f_eps, &exact.f),
                sup_negative_part: pen.sup_negative_part(),
                complementarity_residual: complementarity(
                    &pen.f_eps,
                    &pen.phi_eps,
                    penalized_contact_tolerance(eps, dt),
                ),
            })
        })
        .collect()
}

/// `(lhs, rhs) = (|f1_eps - f2_eps|_inf, 2 |g1 - g2|_inf)`.
pub fn lipschitz_gap(
    x0: f64,
    g1: &DrivingFunction,
    g2: &DrivingFunction,
    epsilon: f64,
) -> Result<(f64, f64)> {
    if g1.grid != g2.grid {
        return invalid("drivers live on different grids");
    }
    let f1 = solve_penalized_ode(x0, g1, epsilon)?;
    let f2 = solve_penalized_ode(x0, g2, epsilon)?;
    Ok((
        sup_distance(&f1.f_eps, &f2.f_eps),
        2.0 * sup_distance(&g1.values, &g2.values),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_rng::make_grid;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(grid: TimeGrid, slope: f64) -> DrivingFunction {
        DrivingFunction::from_fn(grid, |t| slope * t, Some(slope.abs())).unwrap()
    }

    #[test]
    fn explicit_examples() {
        let grid = make_grid(1.0, 100).unwrap();
        let zero = line(grid, 0.0);
        let s = reflect_explicit(1.0, &zero).unwrap();
        assert!(s.f.iter().all(|&v| v == 1.0));
        assert!(s.phi.iter().all(|&v| v == 0.0));

        let down = line(grid, -1.0);
        let s = reflect_explicit(0.0, &down).unwrap();
        for (i, t) in grid.times().into_iter().enumerate() {
            assert!((s.phi[i] - t).abs() < 1e-15);
            assert!(s.f[i].abs() < 1e-15);
        }

        let s = reflect_explicit(0.5, &down).unwrap();
        for (i, t) in grid.times().into_iter().enumerate() {
            assert!((s.phi[i] - (t - 0.5).max(0.0)).abs() < 1e-15);
            assert!((s.f[i] - (0.5 - t).max(0.0)).abs() < 1e-15);
        }
        assert!(reflect_explicit(-0.1, &down).is_err());
    }

    #[test]
    fn driver_must_start_at_zero() {
        let grid = make_grid(1.0, 4).unwrap();
        assert!(DrivingFunction::from_values(grid, vec![0.1, 0.0, 0.0, 0.0, 0.0], None).is_err());
        assert!(DrivingFunction::from_values(grid, vec![0.0; 3], None).is_err());
    }

    #[test]
    fn penalized_matches_closed_form() {
        // f' = eps^-1 f^- - 1 from f(0) = 0 solves to -eps (1 - exp(-t / eps)).
        let grid = make_grid(1.0, 10_000).unwrap();
        let eps = 1e-2;
        let pen = solve_penalized_ode(0.0, &line(grid, -1.0), eps).unwrap();
        let err = grid
            .times()
            .iter()
            .zip(&pen.f_eps)
            .map(|(t, f)| (f + eps * (1.0 - (-t / eps).exp())).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "sup error {err}");
        assert!(pen.sup_negative_part() <= eps + 1e-4);
    }

    #[test]
    fn penalized_inactive_away_from_wall() {
        let grid = make_grid(1.0, 50).unwrap();
        let pen = solve_penalized_ode(1.0, &line(grid, 0.0), 0.3).unwrap();
        assert!(pen.f_eps.iter().all(|&v| v == 1.0));
        assert!(pen.phi_eps.iter().all(|&v| v == 0.0));
        assert!(solve_penalized_ode(1.0, &line(grid, 0.0), 0.0).is_err());
    }

    #[test]
    fn gap_is_linear_in_epsilon_for_a_ramp() {
        let grid = make_grid(1.0, 10_000).unwrap();
        let rows = penalization_gap(0.0, &line(grid, -1.0), &[0.1, 0.05, 0.025]).unwrap();
        for r in &rows {
            let closed = r.epsilon * (1.0 - (-1.0 / r.epsilon).exp());
            assert!((r.sup_gap - closed).abs() < 2e-3, "{r:?}");
        }
        assert!(penalization_gap(0.0, &line(grid, -1.0), &[]).is_err());
        assert!(penalization_gap(0.0, &line(grid, -1.0), &[0.1, 0.2]).is_err());
    }

    #[test]
    fn no_gap_without_reflection() {
        let grid = make_grid(1.0, 1000).unwrap();
        let g = DrivingFunction::from_fn(grid, |t| t * t, Some(2.0)).unwrap();
        for row in penalization_gap(0.3, &g, &[0.1, 0.01]).unwrap() {
            assert!(row.sup_gap <= 1e-12);
        }
    }

    #[test]
    fn lipschitz_examples() {
        let grid = make_grid(1.0, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g1 = DrivingFunction::random_fourier(grid, &mut rng);
        let (lhs, _) = lipschitz_gap(0.0, &g1, &g1, 0.01).unwrap();
        assert_eq!(lhs, 0.0);

        let c = 0.2;
        let shifted: Vec<f64> = g1
            .values()
            .iter()
            .zip(grid.times())
            .map(|(v, t)| v + c * (t / 0.05).min(1.0))
            .collect();
        let g2 = DrivingFunction::from_values(grid, shifted, None).unwrap();
        let (lhs, rhs) = lipschitz_gap(0.0, &g1, &g2, 0.01).unwrap();
        assert!(lhs <= 2.0 * c + 1e-12 && (rhs - 2.0 * c).abs() < 1e-12);

        let other = make_grid(1.0, 999).unwrap();
        let g3 = DrivingFunction::random_fourier(other, &mut rng);
        assert!(lipschitz_gap(0.0, &g1, &g3, 0.01).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn explicit_invariants(coeffs in prop::collection::vec(-1.0f64..1.0, 5), x0 in 0.0f64..1.0) {
            let grid = make_grid(1.0, 500).unwrap();
            let g = DrivingFunction::fourier(grid, &coeffs);
            let s = reflect_explicit(x0, &g).unwrap();
            prop_assert!(s.f.iter().all(|&v| v >= -1e-12));
            prop_assert_eq!(s.phi[0], 0.0);
            prop_assert!(s.phi.windows(2).all(|w| w[1] >= w[0]));
            for i in 0..s.f.len() {
                prop_assert_eq!(s.f[i], x0 + s.phi[i] + g.values()[i]);
            }
            prop_assert!(s.complementarity_residual(EXPLICIT_CONTACT_TOLERANCE) <= 1e-12);

            // Reflecting an already nonnegative function with a zero driver
            // leaves it untouched.
            let again = reflect_explicit(s.f[0], &DrivingFunction::from_values(
                grid, s.f.iter().map(|v| v - s.f[0]).collect(), None).unwrap()).unwrap();
            prop_assert!(again.phi.iter().all(|&p| p <= 1e-12));

            let higher = reflect_explicit(x0 + 0.25, &g).unwrap();
            prop_assert!(s.f.iter().zip(&higher.f).all(|(a, b)| *a <= b + 1e-12));
        }

        #[test]
        fn penalized_family_is_ordered(coeffs in prop::collection::vec(-1.0f64..1.0, 5)) {
            let grid = make_grid(1.0, 500).unwrap();
            let g = DrivingFunction::fourier(grid, &coeffs);
            let coarse = solve_penalized_ode(0.0, &g, 0.1).unwrap();
            let fine = solve_penalized_ode(0.0, &g, 0.01).unwrap();
            let exact = reflect_explicit(0.0, &g).unwrap();
            for i in 0..exact.f.len() {
                prop_assert!(fine.f_eps[i] >= coarse.f_eps[i]);
                prop_assert!(exact.f[i] >= fine.f_eps[i] - 1e-12);
            }
        }
    }
}

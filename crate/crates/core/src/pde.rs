//! Finite-difference oracle for `u_t = b u_x + sigma^2/2 u_xx`, `u_x(t, 0) = 0`,
//! plus the closed-form image solution for `b = 0`, constant `sigma`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::payoff::Payoff;
use crate::quadrature::integrate_piecewise;
use crate::sde::CoefficientSet;
use crate::stats::normal_pdf;

/// Corridor slack for the discrete maximum principle.
pub const CORRIDOR_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceGrid {
    pub x_max: f64,
    pub n_cells: usize,
}

impl SpaceGrid {
    pub fn new(x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_max > 0.0 && x_max.is_finite()) || n_cells < 2 {
            return invalid(format!("bad space grid: x_max = {x_max}, n_cells = {n_cells}"));
        }
        Ok(Self { x_max, n_cells })
    }

    /// Cell count rounded so that `dx` is as close as possible to the request.
    pub fn with_step(x_max: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return invalid(format!("dx must be positive, got {dx}"));
        }
        Self::new(x_max, (x_max / dx).round().max(2.0) as usize)
    }

    /// `x0 + 8 sigma_sup sqrt(t)`.
    pub fn default_x_max(x0: f64, t: f64, sigma_sup: f64) -> f64 {
        x0 + 8.0 * sigma_sup * t.sqrt()
    }

    pub fn dx(&self) -> f64 {
        self.x_max / self.n_cells as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.n_cells {
            self.x_max
        } else {
            j as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|j| self.node(j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeMetadata {
    pub dx: f64,
    pub dt: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub n_time_steps: usize,
    pub max_cell_peclet: f64,
    /// Set when `|b| dx / sigma^2 > 2` somewhere.
    pub peclet_warning: bool,
    /// Worst excursion outside `[min u0, max u0]`, zero if none.
    pub corridor_violation: f64,
    /// Node indices carrying a drift jump; `u_xx` is discontinuous there.
    pub drift_jump_nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    pub grid: SpaceGrid,
    pub times: Vec<f64>,
    /// `u[k][j] = u(times[k], x_j)`.
    pub u: Vec<Vec<f64>>,
    pub metadata: PdeMetadata,
}

impl PdeSolution {
    pub fn terminal(&self) -> &[f64] {
        self.u.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Linear interpolation of `u(times[k], .)` at `x`.
    pub fn value_at(&self, k: usize, x: f64) -> Result<f64> {
        let row = self.row(k)?;
        let j = self.locate(x)?;
        if j == self.grid.n_cells {
            return Ok(row[j]);
        }
        let w = (x - self.grid.node(j)) / self.grid.dx();
        Ok((1.0 - w) * row[j] + w * row[j + 1])
    }

    fn row(&self, k: usize) -> Result<&[f64]> {
        self.u
            .get(k)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument(format!("time index {k} out of range 0..{}", self.u.len())))
    }

    fn locate(&self, x: f64) -> Result<usize> {
        if !(0.0..=self.grid.x_max).contains(&x) {
            return invalid(format!("x = {x} outside [0, {}]", self.grid.x_max));
        }
        Ok(((x / self.grid.dx()).floor() as usize).min(self.grid.n_cells))
    }
}

/// Tridiagonal system `lo[j] u[j-1] + di[j] u[j] + up[j] u[j+1] = rhs[j]`.
fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = di.len();
    scratch[0] = up[0] / di[0];
    rhs[0] /= di[0];
    for j in 1..n {
        let m = di[j] - lo[j] * scratch[j - 1];
        scratch[j] = up[j] / m;
        rhs[j] = (rhs[j] - lo[j] * rhs[j - 1]) / m;
    }
    for j in (0..n - 1).rev() {
        rhs[j] -= scratch[j] * rhs[j + 1];
    }
}

/// Drift at a node: the mean of the one-sided limits, which differs from the
/// point value only when a jump sits exactly on the node.
fn node_drift(coeffs: &CoefficientSet, x: f64, dx: f64) -> (f64, bool) {
    let eta = 1e-9 * dx;
    if x == 0.0 {
        return (coeffs.drift.value(x), false);
    }
    let (l, r) = (coeffs.drift.value(x - eta), coeffs.drift.value(x + eta));
    (0.5 * (l + r), l != r)
}

/// Generator `A` with mirrored ghost nodes at both ends.
struct Operator {
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
}

impl Operator {
    fn new(coeffs: &CoefficientSet, grid: &SpaceGrid) -> (Self, f64, Vec<usize>) {
        let n = grid.n_nodes();
        let dx = grid.dx();
        let (mut lo, mut di, mut up) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut peclet: f64 = 0.0;
        let mut jumps = Vec::new();
        for j in 0..n {
            let x = grid.node(j);
            let (b, jump) = node_drift(coeffs, x, dx);
            if jump && j > 1 && j + 2 < n {
                jumps.push(j);
            }
            let s2 = coeffs.sigma.value(x).powi(2);
            peclet = peclet.max(b.abs() * dx / s2);
            let diff = 0.5 * s2 / (dx * dx);
            let adv = 0.5 * b / dx;
            di[j] = -2.0 * diff;
            if j == 0 {
                up[j] = 2.0 * diff;
            } else if j == n - 1 {
                lo[j] = 2.0 * diff;
            } else {
                lo[j] = diff - adv;
                up[j] = diff + adv;
            }
        }
        (Self { lo, di, up }, peclet, jumps)
    }

    /// `out = u + w A u`.
    fn apply(&self, w: f64, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        for j in 0..n {
            let mut acc = self.di[j] * u[j];
            if j > 0 {
                acc += self.lo[j] * u[j - 1];
            }
            if j + 1 < n {
                acc += self.up[j] * u[j + 1];
            }
            out[j] = u[j] + w * acc;
        }
    }

    /// Solve `(I - w A) v = rhs` in place.
    fn solve(&self, w: f64, rhs: &mut [f64], scratch: &mut [f64]) {
        let lo: Vec<f64> = self.lo.iter().map(|a| -w * a).collect();
        let up: Vec<f64> = self.up.iter().map(|a| -w * a).collect();
        let di: Vec<f64> = self.di.iter().map(|a| 1.0 - w * a).collect();
        thomas(&lo, &di, &up, rhs, scratch);
    }
}

/// Crank-Nicolson in time. The first step is split into two backward-Euler
/// half steps (Rannacher start) so that kinks in `u0` are damped instead of
/// ringing.
pub fn solve_kolmogorov(
    payoff: &Payoff,
    coeffs: &CoefficientSet,
    t_end: f64,
    grid: SpaceGrid,
    n_time_steps: usize,
) -> Result<PdeSolution> {
    if !(t_end > 0.0) || n_time_steps == 0 {
        return invalid(format!("need t_end > 0 and n_time_steps >= 1, got {t_end}, {n_time_steps}"));
    }
    coeffs.validate()?;
    let dt = t_end / n_time_steps as f64;
    let (op, peclet, drift_jump_nodes) = Operator::new(coeffs, &grid);
    let n = grid.n_nodes();
    let u0: Vec<f64> = grid.nodes().iter().map(|&x| payoff.value(x)).collect();
    if u0.iter().any(|v| !v.is_finite()) {
        return invalid(format!("payoff {} is not finite on the grid", payoff.label));
    }
    let lo_bound = u0.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_bound = u0.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut scratch = vec![0.0; n];
    let mut u = vec![u0];
    let mut current = u[0].clone();
    for _ in 0..2 {
        op.solve(0.5 * dt, &mut current, &mut scratch);
    }
    u.push(current.clone());
    let mut rhs = vec![0.0; n];
    for _ in 1..n_time_steps {
        op.apply(0.5 * dt, &current, &mut rhs);
        op.solve(0.5 * dt, &mut rhs, &mut scratch);
        std::mem::swap(&mut current, &mut rhs);
        u.push(current.clone());
    }

    let corridor_violation = u
        .iter()
        .flatten()
        .map(|&v| (lo_bound - v).max(v - hi_bound).max(0.0))
        .fold(0.0, f64::max);
    Ok(PdeSolution {
        grid,
        times: (0..=n_time_steps)
            .map(|k| if k == n_time_steps { t_end } else { k as f64 * dt })
            .collect(),
        u,
        metadata: PdeMetadata {
            dx: grid.dx(),
            dt,
            x_max: grid.x_max,
            n_cells: grid.n_cells,
            n_time_steps,
            max_cell_peclet: peclet,
            peclet_warning: peclet > 2.0,
            corridor_violation,
            drift_jump_nodes,
        },
    })
}

/// `d/dx u(times[k], x)`: second-order one-sided at `x = 0`, centered at
/// interior nodes, linearly interpolated between nodes. At a drift jump the
/// centered stencil straddles the kink in `u_x`, so the two one-sided
/// stencils are averaged instead.
pub fn pde_derivative(solution: &PdeSolution, k: usize, x: f64) -> Result<f64> {
    let row = solution.row(k)?;
    let j = solution.locate(x)?;
    let g = &solution.grid;
    let dx = g.dx();
    let at = |j: usize| -> f64 {
        let forward = |j: usize| (-3.0 * row[j] + 4.0 * row[j + 1] - row[j + 2]) / (2.0 * dx);
        let backward = |j: usize| (3.0 * row[j] - 4.0 * row[j - 1] + row[j - 2]) / (2.0 * dx);
        if j == 0 {
            forward(0)
        } else if j == g.n_cells {
            backward(j)
        } else if solution.metadata.drift_jump_nodes.binary_search(&j).is_ok() {
            0.5 * (forward(j) + backward(j))
        } else {
            (row[j + 1] - row[j - 1]) / (2.0 * dx)
        }
    };
    if j == g.n_cells {
        return Ok(at(j));
    }
    let w = (x - g.node(j)) / dx;
    if w == 0.0 {
        return Ok(at(j));
    }
    Ok((1.0 - w) * at(j) + w * at(j + 1))
}

const IMAGES_TOL: f64 = 1e-12;

/// `int_0^inf u0(y) [G(y - x) + G(y + x)] dy`, `G` the `N(0, sigma^2 t)`
/// density.
pub fn images_solution(payoff: &Payoff, sigma: f64, t: f64, x: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(t > 0.0) || !(x >= 0.0) {
        return invalid(format!("images_solution needs sigma, t > 0 and x >= 0; got {sigma}, {t}, {x}"));
    }
    let s = sigma * t.sqrt();
    let kernel = |y: f64| (normal_pdf((y - x) / s) + normal_pdf((y + x) / s)) / s;
    let upper = x + 14.0 * s;
    let mut points = vec![0.0, upper];
    points.extend((-6..=6).map(|k| x + k as f64 * s).filter(|p| *p > 0.0 && *p < upper));
    points.extend(payoff.breakpoints().into_iter().filter(|p| *p > 0.0 && *p < upper));
    points.sort_by(f64::total_cmp);
    points.dedup();
    Ok(integrate_piecewise(|y| payoff.value(y) * kernel(y), &points, IMAGES_TOL))
}

/// Same, for a coefficient set; rejects anything but `b = 0`, constant sigma.
pub fn images_for(payoff: &Payoff, coeffs: &CoefficientSet, t: f64, x: f64) -> Result<f64> {
    let Some(sigma) = coeffs.sigma.constant_value() else {
        return invalid("method of images needs a constant sigma");
    };
    if coeffs.drift.sup_bound() != 0.0 {
        return invalid("method of images needs zero drift");
    }
    images_solution(payoff, sigma, t, x)
}

/// Central difference of [`images_solution`]; one-sided when `x < h`.
pub fn images_derivative(payoff: &Payoff, sigma: f64, t: f64, x: f64) -> Result<f64> {
    let h = 1e-4;
    if x >= h {
        Ok((images_solution(payoff, sigma, t, x + h)? - images_solution(payoff, sigma, t, x - h)?) / (2.0 * h))
    } else {
        Ok((images_solution(payoff, sigma, t, x + h)? - images_solution(payoff, sigma, t, x)?) / h)
    }
}

/// Sup-norm distance on `[0, x_hi]` between a PDE solution at its final time
/// and the image formula.
pub fn sup_error_vs_images(solution: &PdeSolution, payoff: &Payoff, sigma: f64, x_hi: f64) -> Result<f64> {
    let t = *solution.times.last().unwrap_or(&0.0);
    let row = solution.terminal();
    let mut worst: f64 = 0.0;
    for (j, &u) in row.iter().enumerate() {
        let x = solution.grid.node(j);
        if x > x_hi {
            break;
        }
        worst = worst.max((u - images_solution(payoff, sigma, t, x)?).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::normal_cdf;

    fn bm() -> CoefficientSet {
        CoefficientSet::from_presets("zero", "constant:1").unwrap()
    }

    fn solve(payoff: &str, coeffs: &CoefficientSet, x_max: f64, dx: f64, dt: f64) -> PdeSolution {
        let grid = SpaceGrid::with_step(x_max, dx).unwrap();
        solve_kolmogorov(&Payoff::from_preset(payoff).unwrap(), coeffs, 1.0, grid, (1.0 / dt).round() as usize)
            .unwrap()
    }

    #[test]
    fn thomas_matches_dense_solve() {
        let lo = [0.0, -1.0, -1.0];
        let di = [4.0, 4.0, 4.0];
        let up = [-1.0, -1.0, 0.0];
        let x = [1.0, 2.0, 3.0];
        let mut rhs = [4.0 - 2.0, -1.0 + 8.0 - 3.0, -2.0 + 12.0];
        let mut scratch = [0.0; 3];
        thomas(&lo, &di, &up, &mut rhs, &mut scratch);
        for (a, b) in rhs.iter().zip(x) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_are_preserved() {
        let coeffs = CoefficientSet::from_presets("step:1,1", "affine-clamped:1,0.5,0.5").unwrap();
        let sol = solve("constant:3", &coeffs, 6.0, 0.05, 0.01);
        let worst = sol.u.iter().flatten().map(|v| (v - 3.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-13, "{worst}");
    }

    #[test]
    fn images_closed_forms() {
        let one = Payoff::from_preset("constant:1").unwrap();
        assert!((images_solution(&one, 1.3, 0.7, 0.4).unwrap() - 1.0).abs() < 1e-10);
        let cap = Payoff::from_preset("linear-cap:10").unwrap();
        let r = images_solution(&cap, 1.0, 1.0, 0.0).unwrap();
        assert!((r - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-9);
        let d = images_derivative(&cap, 1.0, 1.0, 1.0).unwrap();
        assert!((d - (2.0 * normal_cdf(1.0) - 1.0)).abs() < 1e-6, "{d}");
        let drifted = CoefficientSet::from_presets("constant:1", "constant:1").unwrap();
        assert!(images_for(&cap, &drifted, 1.0, 1.0).is_err());
        let varying = CoefficientSet::from_presets("zero", "affine-clamped:1,0.5,0.5").unwrap();
        assert!(images_for(&cap, &varying, 1.0, 1.0).is_err());
    }

    #[test]
    fn driftless_reflected_brownian_motion() {
        let sol = solve("linear-cap:10", &bm(), 9.0, 1e-2, 1e-3);
        let u0 = sol.value_at(sol.times.len() - 1, 0.0).unwrap();
        assert!((u0 - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-3, "{u0}");
        let k = sol.times.len() - 1;
        assert!(pde_derivative(&sol, k, 0.0).unwrap().abs() < 1e-3);
        let d = pde_derivative(&sol, k, 1.0).unwrap();
        assert!((d - 0.68269).abs() < 2e-3, "{d}");
        assert!(pde_derivative(&sol, k, -0.1).is_err());
        assert!(pde_derivative(&sol, k, 9.5).is_err());
        assert!(!sol.metadata.peclet_warning);
        assert!(sol.metadata.corridor_violation <= CORRIDOR_SLACK);
    }

    #[test]
    fn exponential_payoff_matches_images_with_second_order_refinement() {
        let p = Payoff::from_preset("exp-decay:1").unwrap();
        let coarse = solve("exp-decay:1", &bm(), 12.0, 1e-2, 1e-3);
        let fine = solve("exp-decay:1", &bm(), 12.0, 5e-3, 2.5e-4);
        let e1 = sup_error_vs_images(&coarse, &p, 1.0, 4.0).unwrap();
        let e2 = sup_error_vs_images(&fine, &p, 1.0, 4.0).unwrap();
        assert!(e1 < 1e-3, "{e1}");
        let ratio = e1 / e2;
        assert!((3.0..=5.0).contains(&ratio), "{e1} {e2} {ratio}");
    }

    #[test]
    fn comparison_principle() {
        let coeffs = CoefficientSet::from_presets("step:1,1", "constant:1").unwrap();
        let a = solve("linear-cap:2", &coeffs, 8.0, 1e-2, 1e-3);
        let b = solve("linear-cap:3", &coeffs, 8.0, 1e-2, 1e-3);
        for (ra, rb) in a.u.iter().zip(&b.u) {
            for (x, y) in ra.iter().zip(rb) {
                assert!(*x <= *y + 1e-12);
            }
        }
    }

    #[test]
    fn mollified_step_is_close_to_sharp_step() {
        use crate::drift::{mollified_drift, DriftFunction};
        let sharp = CoefficientSet::from_presets("step:1,1", "constant:1").unwrap();
        let base = sol_terminal(&sharp);
        for j in [16, 256] {
            let m = mollified_drift(&DriftFunction::step(1.0, 1.0), j, 20).unwrap();
            let soft = sol_terminal(&sharp.with_drift(m, format!("mollified-step:{j}")));
            let gap = base.iter().zip(&soft).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap <= 1e-2, "j = {j}: {gap}");
        }
    }

    fn sol_terminal(coeffs: &CoefficientSet) -> Vec<f64> {
        solve("linear-cap:10", coeffs, 9.0, 1e-2, 1e-3).terminal().to_vec()
    }

    #[test]
    fn step_drift_converges_at_second_order_through_the_jump() {
        let coeffs = CoefficientSet::from_presets("step:1,1", "constant:1").unwrap();
        let d: Vec<f64> = [(2e-2, 2e-3), (1e-2, 1e-3), (5e-3, 2.5e-4)]
            .iter()
            .map(|&(dx, dt)| {
                let sol = solve("linear-cap:10", &coeffs, 9.0, dx, dt);
                pde_derivative(&sol, sol.times.len() - 1, 1.0).unwrap()
            })
            .collect();
        let ratio = (d[0] - d[1]) / (d[1] - d[2]);
        assert!((3.0..=5.5).contains(&ratio), "{d:?} {ratio}");
        assert!((d[2] - 0.1038169).abs() < 5e-5, "{d:?}");
    }

    #[test]
    fn peclet_warning_triggers() {
        let coeffs = CoefficientSet::from_presets("constant:5", "constant:1").unwrap();
        let sol = solve("linear-cap:10", &coeffs, 9.0, 0.5, 0.01);
        assert!(sol.metadata.peclet_warning);
    }

    #[test]
    fn grid_validation() {
        assert!(SpaceGrid::new(0.0, 10).is_err());
        assert!(SpaceGrid::with_step(1.0, 0.0).is_err());
        let g = SpaceGrid::with_step(9.0, 0.01).unwrap();
        assert_eq!(g.n_cells, 900);
        assert_eq!(g.node(900), 9.0);
    }
}

//! Bounded drifts and their regularization ladders.
//!
//! The smoothing primitive is the polynomial bump `rho(z) = 35/32 (1 - z^2)^3`
//! on (-1, 1). Its CDF and first moment have closed forms, so the mollified
//! negative part `h_j`, the boundary cutoff `psi_n` and the mollification of
//! piecewise-constant drifts are evaluated exactly, without quadrature.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::quadrature::gauss_legendre_16;

pub const BUMP_NORMALIZER: f64 = 35.0 / 32.0;

/// `rho(z)`, a probability density supported in (-1, 1).
pub fn bump(z: f64) -> f64 {
    if z.abs() >= 1.0 {
        0.0
    } else {
        let w = 1.0 - z * z;
        BUMP_NORMALIZER * w * w * w
    }
}

pub fn bump_derivative(z: f64) -> f64 {
    if z.abs() >= 1.0 {
        0.0
    } else {
        let w = 1.0 - z * z;
        -6.0 * BUMP_NORMALIZER * z * w * w
    }
}

pub fn bump_cdf(z: f64) -> f64 {
    if z <= -1.0 {
        0.0
    } else if z >= 1.0 {
        1.0
    } else {
        let z2 = z * z;
        // z - z^3 + 3 z^5 / 5 - z^7 / 7 in Horner form.
        let p = z * (1.0 + z2 * (-1.0 + z2 * (0.6 - z2 / 7.0)));
        0.5 + BUMP_NORMALIZER * p
    }
}

/// `int_{-1}^z u rho(u) du`.
fn bump_first_moment(z: f64) -> f64 {
    if z.abs() >= 1.0 {
        0.0
    } else {
        let w = 1.0 - z * z;
        -BUMP_NORMALIZER * w * w * w * w / 8.0
    }
}

/// `rho_j(z) = j rho(j z)`, supported in (-1/j, 1/j).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MollifierSpec {
    index: u32,
}

impl MollifierSpec {
    pub fn new(index: u32) -> Result<Self> {
        if index == 0 {
            return invalid("mollifier index must be at least 1");
        }
        Ok(Self { index })
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn density(&self, z: f64) -> f64 {
        let j = self.index as f64;
        j * bump(j * z)
    }

    pub fn half_width(&self) -> f64 {
        1.0 / self.index as f64
    }
}

/// `h_j(y) = int rho_j(y - z) (z)^- dz`: equals `-y` below `-1/j`, zero above
/// `1/j`, and is nonincreasing everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NegativePartMollifier {
    spec: MollifierSpec,
}

impl NegativePartMollifier {
    pub fn index(&self) -> u32 {
        self.spec.index
    }

    pub fn half_width(&self) -> f64 {
        self.spec.half_width()
    }

    pub fn value(&self, y: f64) -> f64 {
        let j = self.spec.index as f64;
        let s = j * y;
        if s <= -1.0 {
            -y
        } else if s >= 1.0 {
            0.0
        } else {
            // Cancellation near s = 1 can dip a few ulps below zero.
            ((-bump_first_moment(s) - s * (1.0 - bump_cdf(s))) / j).max(0.0)
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        -(1.0 - bump_cdf(self.spec.index as f64 * y))
    }
}

pub fn mollify_negative_part(j: u32) -> Result<NegativePartMollifier> {
    Ok(NegativePartMollifier {
        spec: MollifierSpec::new(j)?,
    })
}

/// Smooth step: 0 for `y <= 0`, 1 for `y >= 1`, built from the bump CDF.
pub fn smooth_step(y: f64) -> f64 {
    bump_cdf(2.0 * y - 1.0)
}

fn smooth_step_derivative(y: f64) -> f64 {
    2.0 * bump(2.0 * y - 1.0)
}

/// `psi_n(y) = psi(n y) * (1 - psi(y / n - n))`: zero for `y <= 0` and for
/// `y >= n^2 + n`, one on `[1/n, n^2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryCutoff {
    n: u32,
}

impl BoundaryCutoff {
    pub fn index(&self) -> u32 {
        self.n
    }

    pub fn value(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let n = self.n as f64;
        smooth_step(n * y) * (1.0 - smooth_step(y / n - n))
    }

    pub fn derivative(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let n = self.n as f64;
        let inner = smooth_step(n * y);
        let outer = 1.0 - smooth_step(y / n - n);
        n * smooth_step_derivative(n * y) * outer - inner * smooth_step_derivative(y / n - n) / n
    }

    /// Interval on which the cutoff equals one.
    pub fn plateau(&self) -> (f64, f64) {
        let n = self.n as f64;
        (1.0 / n, n * n)
    }
}

pub fn boundary_cutoff(n: u32) -> Result<BoundaryCutoff> {
    if n == 0 {
        return invalid("cutoff index must be at least 1");
    }
    Ok(BoundaryCutoff { n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Regularity {
    Measurable,
    Lipschitz(f64),
    Smooth,
}

/// `values[0]` on `(-inf, breaks[0])`, `values[k]` on `[breaks[k-1], breaks[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return invalid("piecewise-constant drift needs one more value than breakpoints");
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("breakpoints must be strictly increasing");
        }
        if breaks.iter().chain(&values).any(|v| !v.is_finite()) {
            return invalid("piecewise-constant drift must be finite");
        }
        Ok(Self { breaks, values })
    }

    pub fn value(&self, y: f64) -> f64 {
        self.values[self.breaks.partition_point(|&a| a <= y)]
    }

    fn sup_bound(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breaks
            .iter()
            .zip(self.values.windows(2))
            .map(|(&a, w)| (a, w[1] - w[0]))
    }

    /// `int rho_j(y - z) b(z) dz` in closed form.
    fn convolve(&self, j: f64, y: f64) -> f64 {
        self.values[0]
            + self
                .jumps()
                .map(|(a, jump)| jump * bump_cdf(j * (y - a)))
                .sum::<f64>()
    }

    fn convolve_derivative(&self, j: f64, y: f64) -> f64 {
        self.jumps()
            .map(|(a, jump)| jump * j * bump(j * (y - a)))
            .sum()
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Drift given by closures, for tests and ad hoc experiments.
#[derive(Clone)]
pub struct CustomDrift {
    pub value: ScalarFn,
    pub derivative: Option<ScalarFn>,
    pub sup_bound: f64,
    pub regularity: Regularity,
}

impl fmt::Debug for CustomDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDrift")
            .field("sup_bound", &self.sup_bound)
            .field("regularity", &self.regularity)
            .finish_non_exhaustive()
    }
}

/// `b_j(y) = psi_n(y) * int rho_j(y - z) b(z) dz`.
#[derive(Debug, Clone)]
pub struct MollifiedDrift {
    base: DriftFunction,
    mollifier: MollifierSpec,
    cutoff: BoundaryCutoff,
}

impl MollifiedDrift {
    fn convolve(&self, y: f64) -> f64 {
        let j = self.mollifier.index as f64;
        match &self.base {
            DriftFunction::PiecewiseConstant(pc) => pc.convolve(j, y),
            base => gauss_legendre_16()
                .map(|(u, w)| w * bump(u) * base.value(y - u / j))
                .sum(),
        }
    }

    fn convolve_derivative(&self, y: f64) -> f64 {
        let j = self.mollifier.index as f64;
        match &self.base {
            DriftFunction::PiecewiseConstant(pc) => pc.convolve_derivative(j, y),
            DriftFunction::Sine { amplitude } => gauss_legendre_16()
                .map(|(u, w)| w * bump(u) * amplitude * (y - u / j).cos())
                .sum(),
            base => {
                j * gauss_legendre_16()
                    .map(|(u, w)| w * bump_derivative(u) * base.value(y - u / j))
                    .sum::<f64>()
            }
        }
    }

    fn lipschitz_bound(&self) -> f64 {
        let n = self.cutoff.n as f64;
        let j = self.mollifier.index as f64;
        let sup = self.base.sup_bound();
        let c = BUMP_NORMALIZER;
        let conv_slope = match &self.base {
            DriftFunction::PiecewiseConstant(pc) => {
                c * j * pc.jumps().map(|(_, d)| d.abs()).sum::<f64>()
            }
            base => match base.regularity() {
                Regularity::Lipschitz(l) => l.min(2.0 * c * j * sup),
                _ => 2.0 * c * j * sup,
            },
        };
        2.0 * c * n * sup + conv_slope
    }
}

/// Pointwise minimum `b_{n,k} = min(b_1, ..., b_k)`.
#[derive(Debug, Clone)]
pub struct MinLadder {
    rungs: Vec<DriftFunction>,
}

impl MinLadder {
    pub fn rungs(&self) -> &[DriftFunction] {
        &self.rungs
    }
}

#[derive(Debug, Clone)]
pub enum DriftFunction {
    PiecewiseConstant(PiecewiseConstant),
    /// `amplitude * sin(y)`.
    Sine { amplitude: f64 },
    Mollified(Arc<MollifiedDrift>),
    MinLadder(Arc<MinLadder>),
    Custom(CustomDrift),
}

impl DriftFunction {
    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::PiecewiseConstant(PiecewiseConstant {
            breaks: vec![],
            values: vec![c],
        })
    }

    /// `c` below `threshold`, `-c` from `threshold` on.
    pub fn step(c: f64, threshold: f64) -> Self {
        Self::PiecewiseConstant(PiecewiseConstant {
            breaks: vec![threshold],
            values: vec![c, -c],
        })
    }

    /// Parses one of `zero`, `constant:c`, `step:c,threshold`,
    /// `sin:amplitude`, `custom-table:file`.
    pub fn from_preset(preset: &str) -> Result<Self> {
        let (name, args) = preset.split_once(':').unwrap_or((preset, ""));
        let nums = || parse_numbers(preset, args);
        match name.trim() {
            "zero" if args.is_empty() => Ok(Self::zero()),
            "constant" => match nums()?.as_slice() {
                [c] => Ok(Self::constant(*c)),
                _ => Err(bad_preset(preset)),
            },
            "step" => match nums()?.as_slice() {
                [c, th] => Ok(Self::step(*c, *th)),
                _ => Err(bad_preset(preset)),
            },
            "sin" => match nums()?.as_slice() {
                [a] => Ok(Self::Sine { amplitude: *a }),
                _ => Err(bad_preset(preset)),
            },
            "custom-table" if !args.is_empty() => Self::from_table_file(Path::new(args)),
            _ => Err(bad_preset(preset)),
        }
    }

    /// Piecewise-constant drift from a CSV of `breakpoint,value` rows: each
    /// value holds from its breakpoint to the next one, and the first value
    /// also covers everything to its left. A non-numeric first line is
    /// treated as a header.
    pub fn from_table_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_table(&text)
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            match parsed {
                Ok(v) if v.len() == 2 => rows.push((v[0], v[1])),
                Err(_) if lineno == 0 => continue,
                _ => return invalid(format!("drift table line {}: {line:?}", lineno + 1)),
            }
        }
        if rows.is_empty() {
            return invalid("drift table has no rows");
        }
        if rows.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return invalid("drift table breakpoints must be strictly increasing");
        }
        let breaks = rows.iter().skip(1).map(|r| r.0).collect();
        let values = rows.iter().map(|r| r.1).collect();
        Ok(Self::PiecewiseConstant(PiecewiseConstant::new(breaks, values)?))
    }

    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        match self {
            Self::PiecewiseConstant(pc) => pc.value(y),
            Self::Sine { amplitude } => amplitude * y.sin(),
            Self::Mollified(m) => {
                let psi = m.cutoff.value(y);
                if psi == 0.0 {
                    0.0
                } else {
                    psi * m.convolve(y)
                }
            }
            Self::MinLadder(l) => l
                .rungs
                .iter()
                .map(|r| r.value(y))
                .fold(f64::INFINITY, f64::min),
            Self::Custom(c) => (c.value)(y),
        }
    }

    /// Exact derivative where the representation provides one.
    ///
    /// Piecewise-constant drifts report zero, their derivative away from the
    /// breakpoints. Ladders return `None`; callers fall back to a difference
    /// quotient.
    #[inline]
    pub fn derivative(&self, y: f64) -> Option<f64> {
        match self {
            Self::PiecewiseConstant(_) => Some(0.0),
            Self::Sine { amplitude } => Some(amplitude * y.cos()),
            Self::Mollified(m) => {
                if y <= 0.0 {
                    return Some(0.0);
                }
                let psi = m.cutoff.value(y);
                let dpsi = m.cutoff.derivative(y);
                let mut d = psi * m.convolve_derivative(y);
                if dpsi != 0.0 {
                    d += dpsi * m.convolve(y);
                }
                Some(d)
            }
            Self::MinLadder(_) => None,
            Self::Custom(c) => c.derivative.as_ref().map(|d| d(y)),
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            Self::PiecewiseConstant(pc) => pc.sup_bound(),
            Self::Sine { amplitude } => amplitude.abs(),
            Self::Mollified(m) => m.base.sup_bound(),
            Self::MinLadder(l) => l.rungs.iter().map(|r| r.sup_bound()).fold(0.0, f64::max),
            Self::Custom(c) => c.sup_bound,
        }
    }

    pub fn regularity(&self) -> Regularity {
        match self {
            Self::PiecewiseConstant(pc) if pc.breaks.is_empty() => Regularity::Smooth,
            Self::PiecewiseConstant(_) => Regularity::Measurable,
            Self::Sine { .. } => Regularity::Smooth,
            Self::Mollified(m) => Regularity::Lipschitz(m.lipschitz_bound()),
            Self::MinLadder(l) => Regularity::Lipschitz(
                l.rungs
                    .iter()
                    .map(|r| match r.regularity() {
                        Regularity::Lipschitz(v) => v,
                        _ => f64::INFINITY,
                    })
                    .fold(0.0, f64::max),
            ),
            Self::Custom(c) => c.regularity,
        }
    }

    /// Checks `|b(y)| <= sup_bound` on `n` uniform points of `[-10, 10]`.
    pub fn check_sup_bound(&self, n: usize) -> Result<()> {
        let sup = self.sup_bound();
        for i in 0..n {
            let y = -10.0 + 20.0 * i as f64 / (n - 1).max(1) as f64;
            let v = self.value(y);
            if !(v.abs() <= sup * (1.0 + 1e-12) + 1e-15) {
                return invalid(format!("|b({y})| = {} exceeds sup bound {sup}", v.abs()));
            }
        }
        Ok(())
    }
}

fn parse_numbers(preset: &str, args: &str) -> Result<Vec<f64>> {
    args.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad_preset(preset)))
        .collect()
}

fn bad_preset(preset: &str) -> Error {
    Error::InvalidArgument(format!("unrecognized drift preset {preset:?}"))
}

pub fn mollified_drift(b: &DriftFunction, j: u32, n: u32) -> Result<DriftFunction> {
    Ok(DriftFunction::Mollified(Arc::new(MollifiedDrift {
        base: b.clone(),
        mollifier: MollifierSpec::new(j)?,
        cutoff: boundary_cutoff(n)?,
    })))
}

pub fn min_ladder(b: &DriftFunction, n: u32, k: u32) -> Result<DriftFunction> {
    if k == 0 {
        return invalid("ladder depth k must be at least 1");
    }
    min_ladder_range(b, n, 1, k)
}

/// Minimum of the mollified drifts with indices `j_lo..=j_hi`, all sharing
/// the cutoff index `n`. Starting the range at a large `j_lo` gives the tail
/// minima that approach `b` at its continuity points.
pub fn min_ladder_range(b: &DriftFunction, n: u32, j_lo: u32, j_hi: u32) -> Result<DriftFunction> {
    if j_lo == 0 || j_hi < j_lo {
        return invalid(format!("invalid ladder index range {j_lo}..={j_hi}"));
    }
    let rungs = (j_lo..=j_hi)
        .map(|j| mollified_drift(b, j, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftFunction::MinLadder(Arc::new(MinLadder { rungs })))
}

/// Largest difference quotient of `b` over `n_points` uniform nodes of `[lo, hi]`.
pub fn lipschitz_estimate(b: &DriftFunction, lo: f64, hi: f64, n_points: usize) -> f64 {
    let h = (hi - lo) / (n_points - 1).max(1) as f64;
    let mut prev = b.value(lo);
    let mut best = 0.0f64;
    for i in 1..n_points {
        let cur = b.value(lo + i as f64 * h);
        best = best.max((cur - prev).abs() / h);
        prev = cur;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_adaptive, integrate_piecewise};

    #[test]
    fn bump_is_a_density() {
        let mass = integrate_adaptive(bump, -1.0, 1.0, 1e-14);
        assert!((mass - 1.0).abs() < 1e-12);
        for j in [1u32, 7, 100] {
            let spec = MollifierSpec::new(j).unwrap();
            let w = spec.half_width();
            let m = integrate_adaptive(|z| spec.density(z), -w, w, 1e-12);
            assert!((m - 1.0).abs() < 1e-6, "j = {j}");
            assert_eq!(spec.density(w), 0.0);
            assert_eq!(spec.density(-w * 1.0001), 0.0);
        }
        assert!(MollifierSpec::new(0).is_err());
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for z in [-0.9, -0.3, 0.0, 0.4, 0.95] {
            let cdf = integrate_adaptive(bump, -1.0, z, 1e-14);
            assert!((bump_cdf(z) - cdf).abs() < 1e-13);
            let m1 = integrate_adaptive(|u| u * bump(u), -1.0, z, 1e-14);
            assert!((bump_first_moment(z) - m1).abs() < 1e-13);
            let d = (bump(z + 1e-6) - bump(z - 1e-6)) / 2e-6;
            assert!((bump_derivative(z) - d).abs() < 1e-6);
        }
    }

    #[test]
    fn negative_part_mollifier_outside_window() {
        for j in [1, 3, 50] {
            let h = mollify_negative_part(j).unwrap();
            assert_eq!(h.value(-5.0), 5.0);
            assert_eq!(h.value(5.0), 0.0);
            assert_eq!(h.derivative(-5.0), -1.0);
            assert_eq!(h.derivative(5.0), 0.0);
        }
    }

    #[test]
    fn negative_part_mollifier_against_quadrature() {
        for j in [1u32, 4, 32] {
            let h = mollify_negative_part(j).unwrap();
            let spec = MollifierSpec::new(j).unwrap();
            let w = spec.half_width();
            for y in [0.0, -0.5 * w, 0.3 * w, 0.99 * w] {
                // h(y) = int rho_j(v) (y - v)^- dv, kink at v = y.
                let q = integrate_piecewise(
                    |v| spec.density(v) * (v - y).max(0.0),
                    &[-w, y, w],
                    1e-13,
                );
                assert!((h.value(y) - q).abs() < 1e-8, "j = {j}, y = {y}");
            }
            let h0 = h.value(0.0);
            assert!(h0 > 0.0 && h0 <= 1.0 / j as f64);
            assert!((h0 - 35.0 / 256.0 / j as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_part_mollifier_is_nonincreasing() {
        let h = mollify_negative_part(10).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..2001 {
            let y = -0.2 + 0.4 * i as f64 / 2000.0;
            assert!(h.derivative(y) <= 0.0);
            let v = h.value(y);
            assert!(v <= prev);
            prev = v;
            let fd = (h.value(y + 1e-7) - h.value(y - 1e-7)) / 2e-7;
            assert!((fd - h.derivative(y)).abs() < 1e-6);
        }
    }

    #[test]
    fn cutoff_shape() {
        for n in [1u32, 2, 5, 10] {
            let psi = boundary_cutoff(n).unwrap();
            let nf = n as f64;
            assert_eq!(psi.value(0.0), 0.0);
            assert_eq!(psi.value(-3.0), 0.0);
            for k in 0..=100 {
                let y = 1.0 / nf + (nf * nf - 1.0 / nf) * k as f64 / 100.0;
                assert_eq!(psi.value(y), 1.0, "n = {n}, y = {y}");
            }
            assert_eq!(psi.value(nf * nf + 2.0 * nf), 0.0);
            assert_eq!(psi.value(nf * nf + nf), 0.0);
            assert!(psi.value(0.5 / nf) > 0.0 && psi.value(0.5 / nf) < 1.0);
        }
        assert!(boundary_cutoff(0).is_err());
    }

    #[test]
    fn cutoff_derivative_matches_difference_quotient() {
        let psi = boundary_cutoff(3).unwrap();
        for y in [0.05, 0.2, 0.3, 9.5, 10.7, 11.9] {
            let fd = (psi.value(y + 1e-7) - psi.value(y - 1e-7)) / 2e-7;
            assert!((fd - psi.derivative(y)).abs() < 1e-5, "y = {y}");
        }
    }

    #[test]
    fn mollified_constant_follows_cutoff() {
        let b = DriftFunction::constant(0.7);
        let bj = mollified_drift(&b, 8, 4).unwrap();
        let psi = boundary_cutoff(4).unwrap();
        for y in [0.0, 0.1, 0.25, 1.0, 16.0, 18.0, 25.0] {
            assert!((bj.value(y) - 0.7 * psi.value(y)).abs() < 1e-15);
        }
        assert_eq!(bj.value(0.0), 0.0);
    }

    #[test]
    fn mollified_step_at_jump() {
        let b = DriftFunction::PiecewiseConstant(
            PiecewiseConstant::new(vec![1.0], vec![1.0, 0.0]).unwrap(),
        );
        for j in [10u32, 100, 1000] {
            let bj = mollified_drift(&b, j, 2).unwrap();
            // Oracle: int rho_j(1 - z) 1{z < 1} dz by quadrature.
            let w = 1.0 / j as f64;
            let spec = MollifierSpec::new(j).unwrap();
            let q = integrate_adaptive(|z| spec.density(1.0 - z), 1.0 - w, 1.0, 1e-13);
            assert!((bj.value(1.0) - q).abs() < 1e-10);
            assert!((bj.value(1.0) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn mollified_values_vanish_at_zero_and_respect_sup() {
        let presets = ["zero", "constant:-2", "step:1,1", "sin:0.5"];
        for p in presets {
            let b = DriftFunction::from_preset(p).unwrap();
            for (j, n) in [(1, 1), (4, 3), (64, 10)] {
                let bj = mollified_drift(&b, j, n).unwrap();
                assert_eq!(bj.value(0.0), 0.0);
                assert!(bj.sup_bound() <= b.sup_bound());
                bj.check_sup_bound(10_000).unwrap();
            }
        }
    }

    #[test]
    fn mollified_derivatives_match_difference_quotients() {
        for p in ["step:1,1", "sin:0.8"] {
            let b = DriftFunction::from_preset(p).unwrap();
            let bj = mollified_drift(&b, 16, 5).unwrap();
            for y in [0.1, 0.15, 0.5, 0.97, 1.0, 1.04, 3.0] {
                let fd = (bj.value(y + 1e-7) - bj.value(y - 1e-7)) / 2e-7;
                let d = bj.derivative(y).unwrap();
                assert!((fd - d).abs() < 1e-5 * (1.0 + d.abs()), "{p} at {y}: {fd} vs {d}");
            }
        }
    }

    #[test]
    fn ladder_properties() {
        let b = DriftFunction::from_preset("step:1,1").unwrap();
        let l1 = min_ladder(&b, 4, 1).unwrap();
        let b1 = mollified_drift(&b, 1, 4).unwrap();
        let l2 = min_ladder(&b, 4, 2).unwrap();
        let l3 = min_ladder(&b, 4, 3).unwrap();
        for i in 0..1000 {
            let y = -2.0 + 24.0 * i as f64 / 999.0;
            assert_eq!(l1.value(y), b1.value(y));
            assert!(l3.value(y) <= l2.value(y) && l2.value(y) <= l1.value(y));
            assert!(l3.value(y).abs() <= b.sup_bound());
        }
        assert_eq!(l3.value(0.0), 0.0);
        assert!(min_ladder(&b, 4, 0).is_err());
        assert!(matches!(l3.regularity(), Regularity::Lipschitz(_)));
        assert!(l3.derivative(0.5).is_none());

        let one = min_ladder(&DriftFunction::constant(1.0), 3, 4).unwrap();
        for y in [1.0 / 3.0, 1.0, 5.0, 9.0] {
            assert_eq!(one.value(y), 1.0);
        }
    }

    #[test]
    fn ladder_approaches_piecewise_constant_drift() {
        // Tail minimum over j >= 1000: every rung smooths over at most 1e-3.
        let b = DriftFunction::from_preset("step:1,1").unwrap();
        let l = min_ladder_range(&b, 10, 1000, 1008).unwrap();
        for y in [0.2, 0.5, 0.9, 0.998, 1.002, 1.1, 2.0, 50.0] {
            assert!((l.value(y) - b.value(y)).abs() < 1e-2, "y = {y}");
        }
    }

    #[test]
    fn presets_parse() {
        assert_eq!(DriftFunction::from_preset("zero").unwrap().value(3.0), 0.0);
        let s = DriftFunction::from_preset("step:2,0.5").unwrap();
        assert_eq!(s.value(0.2), 2.0);
        assert_eq!(s.value(0.5), -2.0);
        assert!(matches!(s.regularity(), Regularity::Measurable));
        assert!(DriftFunction::from_preset("step:1").is_err());
        assert!(DriftFunction::from_preset("bogus").is_err());
        assert!(DriftFunction::from_preset("sin:x").is_err());
        let t = DriftFunction::from_table("breakpoint,value\n0,1\n1,-1\n2,0.5\n").unwrap();
        assert_eq!(t.value(-4.0), 1.0);
        assert_eq!(t.value(1.5), -1.0);
        assert_eq!(t.value(2.0), 0.5);
        assert!(DriftFunction::from_table("0,1\n0,2\n").is_err());
    }

    #[test]
    fn lipschitz_estimate_grows_with_index() {
        let b = DriftFunction::from_preset("step:1,1").unwrap();
        let l4 = lipschitz_estimate(&mollified_drift(&b, 4, 10).unwrap(), 0.2, 3.0, 20_001);
        let l64 = lipschitz_estimate(&mollified_drift(&b, 64, 10).unwrap(), 0.2, 3.0, 20_001);
        // Peak slope of the mollified jump is 2 * j * rho(0).
        assert!((l4 - 8.0 * BUMP_NORMALIZER).abs() < 0.05);
        assert!((l64 / l4 - 16.0).abs() < 0.2);
    }
}

//! Every pass/fail threshold used by the experiments, in one place.

use std::f64::consts::PI;

// Skorohod map.
pub const POSITIVITY_TOL: f64 = 1e-12;
pub const COMPLEMENTARITY_FLAT_TOL: f64 = 1e-12;
/// Relative slack on `f = x0 + phi + g`.
pub const IDENTITY_REL_TOL: f64 = 4.0 * f64::EPSILON;
pub const GAP_RATIO_RANGE: (f64, f64) = (0.3, 0.7);
pub const GAP_RATIO_PASS_FRACTION: f64 = 0.9;
/// `(f_eps)^- <= gdot_sup eps + NEGATIVE_PART_DT_FACTOR dt`.
pub const NEGATIVE_PART_DT_FACTOR: f64 = 10.0;
pub const LIPSCHITZ_RATIO_MAX: f64 = 2.0 + 1e-2;

// Monte Carlo bands: |estimate - target| <= Z * stderr + slack.
pub const Z: f64 = 3.0;
pub const MEAN_SLACK: f64 = 0.02;
pub const SECOND_MOMENT_SLACK: f64 = 0.03;
pub const LOCAL_TIME_SLACK: f64 = 0.03;
pub const TANGENT_SLACK: f64 = 0.02;
pub const TRIANGULATION_SLACK: f64 = 0.02;

// Uniform second-moment bound.
pub const UNIFORM_RATIO_MAX: f64 = 2.0;
pub const ADVERSARIAL_GROWTH_MIN: f64 = 4.0;

// Discontinuous drift.
pub const STEP_PAIRWISE_MAX: f64 = 0.05;
pub const STEP_REFERENCE_TOL: f64 = 5e-3;
/// `d/dx E[min(X_1(x), 10)]` at `x = 1` for `b = 1{y < 1} - 1{y > 1}`,
/// `sigma = 1`: Crank-Nicolson at dx = 2.5e-3, dt = 2.5e-4, x_max = 9.
/// Successive differences over dx = 2e-2 .. 1.25e-3 shrank by 4.25, 4.1, 4.1.
pub const STEP_REFERENCE: f64 = 0.1038169;

// PDE oracle.
pub const PDE_SUP_ERROR_MAX: f64 = 1e-3;
pub const PDE_REFINEMENT_RANGE: (f64, f64) = (3.0, 5.0);
pub const CONSTANT_PRESERVATION_TOL: f64 = 1e-12;

/// `E|B_1|`.
pub fn sqrt_two_over_pi() -> f64 {
    (2.0 / PI).sqrt()
}

pub fn within(estimate: f64, target: f64, stderr: f64, slack: f64) -> bool {
    (estimate - target).abs() <= Z * stderr + slack
}

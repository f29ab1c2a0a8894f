//! Per-subcommand keys. Each has a default; files and flags share spellings.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct SkorohodKeys {
    pub seed: u64,
    pub x0: f64,
    pub dt: f64,
    pub epsilons: Vec<f64>,
    /// `random` or `fourier:a1,a2,...` (coefficients of `sin(k pi t)`).
    pub driver: String,
}

impl Default for SkorohodKeys {
    fn default() -> Self {
        Self {
            seed: 42,
            x0: 0.0,
            dt: 1e-4,
            epsilons: vec![0.1, 0.05, 0.025, 0.0125],
            driver: "random".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct SimulateKeys {
    pub seed: u64,
    pub x0: f64,
    pub t: f64,
    pub dt: f64,
    /// `penalized` or `exact`.
    pub scheme: String,
    pub epsilon: f64,
    /// 0 selects the sharp penalty.
    pub mollifier_index: u32,
    pub drift: String,
    /// Mollify the drift at this level (0 keeps it as given).
    pub drift_mollification: u32,
    pub drift_cutoff: u32,
    pub sigma: String,
    pub n_paths: usize,
    pub report_every: usize,
}

impl Default for SimulateKeys {
    fn default() -> Self {
        Self {
            seed: 42,
            x0: 0.0,
            t: 1.0,
            dt: 1e-3,
            scheme: "penalized".into(),
            epsilon: 1e-3,
            mollifier_index: 0,
            drift: "zero".into(),
            drift_mollification: 0,
            drift_cutoff: 100,
            sigma: "constant:1".into(),
            n_paths: 10_000,
            report_every: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct SweepKeys {
    pub seed: u64,
    pub x0: f64,
    pub t: f64,
    pub dt: f64,
    pub epsilon: f64,
    pub mollifier_index: u32,
    pub drift: String,
    pub sigma: String,
    pub levels: Vec<u32>,
    pub cutoff_index: u32,
    pub lipschitz_range: f64,
    pub n_paths: usize,
}

impl Default for SweepKeys {
    fn default() -> Self {
        Self {
            seed: 42,
            x0: 1.0,
            t: 1.0,
            dt: 1e-3,
            epsilon: 1e-3,
            mollifier_index: 1000,
            drift: "step:1,1".into(),
            sigma: "constant:1".into(),
            levels: vec![4, 16, 64, 256],
            cutoff_index: 10,
            lipschitz_range: 4.0,
            n_paths: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct GreeksKeys {
    pub seed: u64,
    /// `bel`, `bel-cv`, `pathwise`, `fd` or `all`.
    pub method: String,
    pub payoff: String,
    pub x0: f64,
    pub t: f64,
    pub dt: f64,
    pub epsilon: f64,
    pub mollifier_index: u32,
    pub drift: String,
    pub drift_mollification: u32,
    pub drift_cutoff: u32,
    pub sigma: String,
    pub n_paths: usize,
    /// Difference step of `fd`.
    pub h: f64,
}

impl Default for GreeksKeys {
    fn default() -> Self {
        Self {
            seed: 42,
            method: "bel".into(),
            payoff: "linear-cap:10".into(),
            x0: 1.0,
            t: 1.0,
            dt: 1e-3,
            epsilon: 1e-3,
            mollifier_index: 1000,
            drift: "zero".into(),
            drift_mollification: 0,
            drift_cutoff: 100,
            sigma: "constant:1".into(),
            n_paths: 10_000,
            h: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct PdeKeys {
    pub dx: f64,
    pub dt: f64,
    /// Defaults to `max(x) + 8 sigma_sup sqrt(t)`.
    pub x_max: Option<f64>,
    pub t: f64,
    pub payoff: String,
    pub drift: String,
    pub sigma: String,
    /// Derivative query points.
    pub x: Vec<f64>,
}

impl Default for PdeKeys {
    fn default() -> Self {
        Self {
            dx: 1e-2,
            dt: 1e-3,
            x_max: None,
            t: 1.0,
            payoff: "linear-cap:10".into(),
            drift: "zero".into(),
            sigma: "constant:1".into(),
            x: vec![1.0],
        }
    }
}

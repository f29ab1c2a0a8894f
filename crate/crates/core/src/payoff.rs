//! Terminal payoffs `u0` on the half-line.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::drift::Regularity;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PayoffKind {
    Constant(f64),
    /// `min(y, cap)`.
    LinearCap(f64),
    /// `y`; unbounded, for identities only.
    Linear,
    /// `exp(-rate y)`.
    ExpDecay(f64),
    /// `min(y, cap) + amplitude sin(frequency y)`.
    WiggleCap { cap: f64, amplitude: f64, frequency: f64 },
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Payoff {
    pub label: String,
    repr: Repr,
}

#[derive(Clone)]
enum Repr {
    Preset(PayoffKind),
    Custom {
        value: ScalarFn,
        derivative: Option<ScalarFn>,
        sup_bound: f64,
        regularity: Regularity,
        breakpoints: Vec<f64>,
    },
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Payoff").field("label", &self.label).finish_non_exhaustive()
    }
}

impl Payoff {
    pub fn new(kind: PayoffKind) -> Self {
        let label = match kind {
            PayoffKind::Constant(c) => format!("constant:{c}"),
            PayoffKind::LinearCap(m) => format!("linear-cap:{m}"),
            PayoffKind::Linear => "linear".into(),
            PayoffKind::ExpDecay(r) => format!("exp-decay:{r}"),
            PayoffKind::WiggleCap { cap, amplitude, frequency } => {
                format!("wiggle-cap:{cap},{amplitude},{frequency}")
            }
        };
        Self {
            label,
            repr: Repr::Preset(kind),
        }
    }

    pub fn custom(
        label: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: Option<ScalarFn>,
        sup_bound: f64,
        regularity: Regularity,
    ) -> Self {
        Self {
            label: label.into(),
            repr: Repr::Custom {
                value: Arc::new(value),
                derivative,
                sup_bound,
                regularity,
                breakpoints: vec![],
            },
        }
    }

    /// `constant:c`, `linear-cap:M`, `linear`, `exp-decay:r`,
    /// `wiggle-cap:M,amplitude,frequency`.
    pub fn from_preset(preset: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized payoff preset {preset:?}"));
        let (name, args) = preset.split_once(':').unwrap_or((preset, ""));
        let nums: Vec<f64> = if args.is_empty() {
            vec![]
        } else {
            args.split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?
        };
        let kind = match (name.trim(), nums.as_slice()) {
            ("constant", [c]) => PayoffKind::Constant(*c),
            ("linear-cap", [m]) if *m > 0.0 => PayoffKind::LinearCap(*m),
            ("linear", []) => PayoffKind::Linear,
            ("exp-decay", [r]) if *r >= 0.0 => PayoffKind::ExpDecay(*r),
            ("wiggle-cap", [m, a, f]) if *m > 0.0 => PayoffKind::WiggleCap {
                cap: *m,
                amplitude: *a,
                frequency: *f,
            },
            _ => return Err(bad()),
        };
        let mut payoff = Self::new(kind);
        payoff.label = preset.to_string();
        Ok(payoff)
    }

    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        match &self.repr {
            Repr::Preset(kind) => match *kind {
                PayoffKind::Constant(c) => c,
                PayoffKind::LinearCap(m) => y.min(m),
                PayoffKind::Linear => y,
                PayoffKind::ExpDecay(r) => (-r * y).exp(),
                PayoffKind::WiggleCap { cap, amplitude, frequency } => {
                    y.min(cap) + amplitude * (frequency * y).sin()
                }
            },
            Repr::Custom { value, .. } => value(y),
        }
    }

    pub fn derivative(&self, y: f64) -> Option<f64> {
        match &self.repr {
            Repr::Preset(kind) => Some(match *kind {
                PayoffKind::Constant(_) => 0.0,
                PayoffKind::LinearCap(m) => {
                    if y < m {
                        1.0
                    } else {
                        0.0
                    }
                }
                PayoffKind::Linear => 1.0,
                PayoffKind::ExpDecay(r) => -r * (-r * y).exp(),
                PayoffKind::WiggleCap { cap, amplitude, frequency } => {
                    (if y < cap { 1.0 } else { 0.0 }) + amplitude * frequency * (frequency * y).cos()
                }
            }),
            Repr::Custom { derivative, .. } => derivative.as_ref().map(|d| d(y)),
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match &self.repr {
            Repr::Preset(kind) => match *kind {
                PayoffKind::Constant(c) => c.abs(),
                PayoffKind::LinearCap(m) => m,
                PayoffKind::Linear => f64::INFINITY,
                PayoffKind::ExpDecay(_) => 1.0,
                PayoffKind::WiggleCap { cap, amplitude, .. } => cap + amplitude.abs(),
            },
            Repr::Custom { sup_bound, .. } => *sup_bound,
        }
    }

    pub fn regularity(&self) -> Regularity {
        match &self.repr {
            Repr::Preset(PayoffKind::LinearCap(_) | PayoffKind::WiggleCap { .. }) => {
                Regularity::Lipschitz(1.0)
            }
            Repr::Preset(_) => Regularity::Smooth,
            Repr::Custom { regularity, .. } => *regularity,
        }
    }

    /// Kinks of `u0`, used to split quadrature intervals.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Preset(PayoffKind::LinearCap(m)) => vec![*m],
            Repr::Preset(PayoffKind::WiggleCap { cap, .. }) => vec![*cap],
            Repr::Preset(_) => vec![],
            Repr::Custom { breakpoints, .. } => breakpoints.clone(),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match &self.repr {
            Repr::Preset(PayoffKind::Constant(c)) => Some(*c),
            _ => None,
        }
    }

    pub fn check_sup_bound(&self, n: usize) -> Result<()> {
        let sup = self.sup_bound();
        for i in 0..n {
            let y = 20.0 * i as f64 / (n - 1).max(1) as f64;
            if self.value(y).abs() > sup * (1.0 + 1e-12) {
                return invalid(format!("|u0({y})| exceeds sup bound {sup}"));
            }
        }
        Ok(())
    }
}

//! Flat key-value experiment configs.
//!
//! Keys are kebab-case so that command-line flags and file keys share one
//! spelling. Every key has a default; an unknown key is an error that names it.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PENALIZATION: &str = "penalization";
pub const UNIFORM_BOUND: &str = "uniform-bound";
pub const BEL_TRIANGULATION: &str = "bel-triangulation";
pub const EXPERIMENT_NAMES: [&str; 3] = [PENALIZATION, UNIFORM_BOUND, BEL_TRIANGULATION];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct PenalizationConfig {
    pub seed: u64,
    pub skorohod_trials: usize,
    pub skorohod_dt: f64,
    pub skorohod_x0: f64,
    pub epsilons: Vec<f64>,
    pub lipschitz_pairs: usize,
    pub lipschitz_epsilon: f64,
    pub moment_paths: usize,
    pub moment_dt: f64,
    pub moment_t: f64,
    pub moment_x0: f64,
    pub moment_epsilon: f64,
    /// 0 selects the sharp penalty.
    pub moment_mollifier_index: u32,
    pub moment_report_every: usize,
}

impl Default for PenalizationConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            skorohod_trials: 1000,
            skorohod_dt: 1e-4,
            skorohod_x0: 0.0,
            epsilons: vec![0.1, 0.05, 0.025, 0.0125],
            lipschitz_pairs: 1000,
            lipschitz_epsilon: 0.01,
            moment_paths: 100_000,
            moment_dt: 1e-3,
            moment_t: 1.0,
            moment_x0: 0.0,
            moment_epsilon: 1e-4,
            moment_mollifier_index: 0,
            moment_report_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct UniformBoundConfig {
    pub seed: u64,
    pub x0: f64,
    pub t: f64,
    pub dt: f64,
    pub epsilon: f64,
    pub mollifier_index: u32,
    pub sigma: String,
    pub tangent_paths: usize,
    pub drift: String,
    pub levels: Vec<u32>,
    pub cutoff_index: u32,
    pub lipschitz_range: f64,
    pub n_paths: usize,
    pub adversarial: bool,
}

impl Default for UniformBoundConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            x0: 1.0,
            t: 1.0,
            dt: 1e-3,
            epsilon: 1e-3,
            mollifier_index: 1000,
            sigma: "constant:1".into(),
            tangent_paths: 100_000,
            drift: "step:1,1".into(),
            levels: vec![4, 16, 64, 256],
            cutoff_index: 10,
            lipschitz_range: 4.0,
            n_paths: 100_000,
            adversarial: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct BelTriangulationConfig {
    pub seed: u64,
    pub x0: f64,
    pub t: f64,
    pub dt: f64,
    pub epsilon: f64,
    pub mollifier_index: u32,
    pub n_paths: usize,
    pub payoff: String,
    pub fd_h: f64,
    pub step_drift: String,
    /// Mollification level of the step drift on the simulation side.
    pub step_mollification: u32,
    pub step_cutoff: u32,
    pub null_sigma: String,
    pub null_payoff: String,
    pub pde_dx: f64,
    pub pde_dt: f64,
    pub images_payoff: String,
    pub images_x_hi: f64,
}

impl Default for BelTriangulationConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            x0: 1.0,
            t: 1.0,
            dt: 1e-3,
            epsilon: 1e-3,
            mollifier_index: 1000,
            n_paths: 100_000,
            payoff: "linear-cap:10".into(),
            fd_h: 1e-3,
            step_drift: "step:1,1".into(),
            step_mollification: 32,
            step_cutoff: 100,
            null_sigma: "affine-clamped:1,0.5,0.5".into(),
            null_payoff: "constant:1".into(),
            pde_dx: 1e-2,
            pde_dt: 1e-3,
            images_payoff: "exp-decay:1".into(),
            images_x_hi: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentConfig {
    Penalization(PenalizationConfig),
    UniformBound(UniformBoundConfig),
    BelTriangulation(BelTriangulationConfig),
}

impl ExperimentConfig {
    pub fn default_for(name: &str) -> Result<Self> {
        Self::load(name, None, toml::Table::new())
    }

    /// File keys first, then `overrides` on top. A `name` key in the file, if
    /// present, must agree with `name`.
    pub fn load(name: &str, file: Option<&str>, overrides: toml::Table) -> Result<Self> {
        let mut table = normalize_keys(parse_table(file)?)?;
        if let Some(v) = table.remove("name") {
            if v.as_str() != Some(name) {
                return Err(Error::Config(format!("config is for experiment {v}, not {name:?}")));
            }
        }
        table.extend(normalize_keys(overrides)?);
        Ok(match name {
            PENALIZATION => Self::Penalization(from_table(table)?),
            UNIFORM_BOUND => Self::UniformBound(from_table(table)?),
            BEL_TRIANGULATION => Self::BelTriangulation(from_table(table)?),
            other => {
                return Err(Error::Config(format!(
                    "unknown experiment {other:?}; expected one of {}",
                    EXPERIMENT_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Penalization(_) => PENALIZATION,
            Self::UniformBound(_) => UNIFORM_BOUND,
            Self::BelTriangulation(_) => BEL_TRIANGULATION,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Penalization(c) => c.seed,
            Self::UniformBound(c) => c.seed,
            Self::BelTriangulation(c) => c.seed,
        }
    }

    /// Effective config as a TOML document, `name` first.
    pub fn echo(&self) -> Result<String> {
        let body = match self {
            Self::Penalization(c) => to_toml(c),
            Self::UniformBound(c) => to_toml(c),
            Self::BelTriangulation(c) => to_toml(c),
        }?;
        Ok(format!("name = {:?}\n{body}", self.name()))
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        let v = match self {
            Self::Penalization(c) => serde_json::to_value(c),
            Self::UniformBound(c) => serde_json::to_value(c),
            Self::BelTriangulation(c) => serde_json::to_value(c),
        };
        v.map_err(|e| Error::Internal(e.to_string()))
    }

    /// Hex SHA-256 of [`Self::echo`].
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(self.echo()?.as_bytes()))
    }
}

pub fn parse_table(file: Option<&str>) -> Result<toml::Table> {
    match file {
        None => Ok(toml::Table::new()),
        Some(text) => text
            .parse::<toml::Table>()
            .map_err(|e| Error::Config(format!("malformed config: {e}"))),
    }
}

/// Rewrite `snake_case` keys as `kebab-case`; a key given in both spellings
/// is an error.
pub fn normalize_keys(table: toml::Table) -> Result<toml::Table> {
    let mut flat = toml::Table::new();
    for (k, v) in table {
        let key = k.replace('_', "-");
        if flat.insert(key.clone(), v).is_some() {
            return Err(Error::Config(format!("key {key:?} given twice")));
        }
    }
    Ok(flat)
}

/// Deserialize a flat key table; serde names the offending key on failure.
pub fn from_table<T: DeserializeOwned>(table: toml::Table) -> Result<T> {
    T::deserialize(toml::Value::Table(normalize_keys(table)?))
        .map_err(|e| Error::Config(e.to_string().trim().to_string()))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Internal(e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent master seed for a named sub-study.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_echo() {
        for name in EXPERIMENT_NAMES {
            let c = ExperimentConfig::default_for(name).unwrap();
            let again = ExperimentConfig::load(name, Some(&c.echo().unwrap()), toml::Table::new()).unwrap();
            assert_eq!(c, again);
            assert_eq!(c.content_hash().unwrap().len(), 64);
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::load(BEL_TRIANGULATION, Some("n-path = 10\n"), toml::Table::new()).unwrap_err();
        assert!(err.to_string().contains("n-path"), "{err}");
        let err = ExperimentConfig::load("nope", None, toml::Table::new()).unwrap_err();
        assert!(err.to_string().contains("nope"));
        assert!(ExperimentConfig::load(PENALIZATION, Some("name = \"uniform-bound\""), toml::Table::new()).is_err());
    }

    #[test]
    fn snake_case_keys_are_accepted() {
        let c = ExperimentConfig::load(BEL_TRIANGULATION, Some("n_paths = 10\n"), toml::Table::new()).unwrap();
        let ExperimentConfig::BelTriangulation(b) = c else { panic!() };
        assert_eq!(b.n_paths, 10);
        assert!(ExperimentConfig::load(BEL_TRIANGULATION, Some("n_paths = 10\nn-paths = 11\n"), toml::Table::new()).is_err());
    }

    #[test]
    fn overrides_win_over_file() {
        let mut o = toml::Table::new();
        o.insert("seed".into(), toml::Value::Integer(7));
        let c = ExperimentConfig::load(UNIFORM_BOUND, Some("seed = 3\nx0 = 2.0\n"), o).unwrap();
        let ExperimentConfig::UniformBound(u) = &c else { panic!() };
        assert_eq!((u.seed, u.x0), (7, 2.0));
        assert_ne!(
            c.content_hash().unwrap(),
            ExperimentConfig::default_for(UNIFORM_BOUND).unwrap().content_hash().unwrap()
        );
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
    }
}

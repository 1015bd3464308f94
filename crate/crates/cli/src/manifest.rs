//! Experiment manifests: flat TOML with the system and learner parameters at
//! top level and optional `[dataset]`, `[sweep]` and `[sensitivity]` tables.

use std::path::{Path, PathBuf};

use fogplan::cost::{kappa_convention, SystemConfig};
use fogplan::dsvrg::LearnerConfig;
use fogplan::sweep::{Axis, DEFAULT_ALPHAS};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Kappa {
    Value(f64),
    Rule(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Epsilons {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Named(String),
    Gammas(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    #[serde(default = "default_pos")]
    pub class_pos: u8,
    #[serde(default = "default_neg")]
    pub class_neg: u8,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_grid")]
    pub grid: Grid,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub include_capped: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    pub axis: String,
    pub values: Vec<f64>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Repeats the whole table once per listed `n0`.
    #[serde(default)]
    pub outer_n0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub profile: String,
    pub m0: usize,
    pub n0: f64,
    #[serde(default = "default_d")]
    pub d: f64,
    pub omega: Option<f64>,
    pub kappa: Kappa,
    pub epsilon: Epsilons,
    #[serde(default = "default_theta")]
    pub theta: f64,
    pub mu: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub tau: Option<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub bias: bool,
    pub out: Option<PathBuf>,
    pub dataset: Option<DatasetSection>,
    pub sweep: Option<SweepSection>,
    pub sensitivity: Option<SensitivitySection>,
}

fn default_pos() -> u8 {
    3
}
fn default_neg() -> u8 {
    7
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_grid() -> Grid {
    Grid::Named("all".into())
}
fn default_replications() -> usize {
    10
}
fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}
fn default_d() -> f64 {
    54.0
}
fn default_theta() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    1.0
}
fn default_lambda() -> f64 {
    1e-4
}
fn default_eta() -> f64 {
    0.5
}
fn default_max_rounds() -> usize {
    500
}
fn default_true() -> bool {
    true
}

/// A parsed manifest together with its verbatim text and location.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub text: String,
    pub dir: PathBuf,
}

impl LoadedManifest {
    pub fn read(path: &Path) -> Result<LoadedManifest, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::MissingInput(format!("cannot read manifest {}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        LoadedManifest::parse(text, dir)
    }

    pub fn parse(text: String, dir: PathBuf) -> Result<LoadedManifest, CliError> {
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("manifest: {e}")))?;
        manifest.validate()?;
        Ok(LoadedManifest { manifest, text, dir })
    }

    /// Dataset path, resolved against the manifest's directory when relative.
    pub fn dataset_path(&self) -> Option<PathBuf> {
        self.manifest.dataset.as_ref().map(|ds| {
            if ds.path.is_absolute() {
                ds.path.clone()
            } else {
                self.dir.join(&ds.path)
            }
        })
    }
}

impl Manifest {
    pub fn epsilons(&self) -> Vec<f64> {
        match &self.epsilon {
            Epsilons::One(e) => vec![*e],
            Epsilons::Many(v) => v.clone(),
        }
    }

    pub fn omega(&self) -> f64 {
        self.omega.unwrap_or(self.d + if self.bias { 1.0 } else { 0.0 })
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or_else(|| self.omega())
    }

    pub fn kappa(&self) -> Result<f64, CliError> {
        match &self.kappa {
            Kappa::Value(k) => Ok(*k),
            Kappa::Rule(r) if r == "sqrt_nd" => Ok(kappa_convention(self.m0 as f64 * self.n0, self.d)),
            Kappa::Rule(r) => Err(CliError::Validation(format!(
                "key `kappa`: expected a number or \"sqrt_nd\", got {r:?}"
            ))),
        }
    }

    pub fn system(&self, epsilon: f64) -> Result<SystemConfig, CliError> {
        let cfg = SystemConfig {
            m0: self.m0,
            n0: self.n0,
            d: self.d,
            omega: self.omega(),
            kappa: self.kappa()?,
            epsilon,
            theta: self.theta,
            mu: self.mu,
            alpha: self.alpha,
            tau: self.tau(),
        };
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn learner(&self) -> Result<LearnerConfig, CliError> {
        let eps_min = self.epsilons().into_iter().fold(f64::INFINITY, f64::min);
        let omega = self.omega();
        if omega.fract() != 0.0 {
            return Err(CliError::Validation(format!("key `omega`: model size must be an integer, got {omega}")));
        }
        let cfg = LearnerConfig {
            lambda: self.lambda,
            eta: self.eta,
            epsilon: eps_min,
            max_rounds: self.max_rounds,
            tau: self.tau(),
            omega: omega as usize,
        };
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn axis(&self) -> Result<Option<Axis>, CliError> {
        self.sensitivity
            .as_ref()
            .map(|s| s.axis.parse().map_err(|e| CliError::Validation(format!("key `sensitivity.axis`: {e}"))))
            .transpose()
    }

    /// Collection-point counts of the sweep grid, in increasing gamma.
    pub fn m1_levels(&self) -> Result<Vec<usize>, CliError> {
        let sweep = self.sweep.as_ref().ok_or_else(|| CliError::Validation("manifest has no [sweep] table".into()))?;
        let mut levels = match &sweep.grid {
            Grid::Named(name) if name == "all" => (1..=self.m0).rev().collect(),
            Grid::Named(name) => {
                return Err(CliError::Validation(format!(
                    "key `sweep.grid`: expected \"all\" or a list of gamma values, got {name:?}"
                )))
            }
            Grid::Gammas(gammas) => {
                let mut out = Vec::with_capacity(gammas.len());
                for &g in gammas {
                    if !(g >= 1.0 && g <= self.m0 as f64) {
                        return Err(CliError::Validation(format!(
                            "key `sweep.grid`: gamma {g} outside [1, {}]",
                            self.m0
                        )));
                    }
                    out.push(fogplan::data::cps_for_gamma(self.m0, g));
                }
                out
            }
        };
        levels.sort_unstable_by(|a, b| b.cmp(a));
        levels.dedup();
        Ok(levels)
    }

    fn validate(&self) -> Result<(), CliError> {
        let invalid = |m: String| Err(CliError::Validation(m));
        if self.profile.trim().is_empty() {
            return invalid("key `profile`: must not be empty".into());
        }
        let eps = self.epsilons();
        if eps.is_empty() {
            return invalid("key `epsilon`: at least one value is required".into());
        }
        for e in eps {
            self.system(e)?;
        }
        self.learner()?;
        if let Some(ds) = &self.dataset {
            if !(ds.train_fraction > 0.0 && ds.train_fraction < 1.0) {
                return invalid(format!("key `dataset.train_fraction`: must lie in (0, 1), got {}", ds.train_fraction));
            }
            for (k, c) in [("class_pos", ds.class_pos), ("class_neg", ds.class_neg)] {
                if !(1..=7).contains(&c) {
                    return invalid(format!("key `dataset.{k}`: class {c} outside 1..=7"));
                }
            }
            if ds.class_pos == ds.class_neg {
                return invalid("keys `dataset.class_pos` and `dataset.class_neg` must differ".into());
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.replications == 0 {
                return invalid("key `sweep.replications`: must be at least 1".into());
            }
            self.m1_levels()?;
        }
        if let Some(s) = &self.sensitivity {
            self.axis()?;
            if s.values.is_empty() {
                return invalid("key `sensitivity.values`: at least one value is required".into());
            }
        }
        Ok(())
    }
}

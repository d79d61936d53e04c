//! Run configuration: documented defaults, overridden by a TOML file,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SynthConfig, DEFAULT_SEVERITY_WEIGHTS};
use crate::loss::LossConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::tweedie::{IntervalMethod, SeriesConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding `edges.csv`, `crashes.csv` and `features.csv`.
    pub dir: PathBuf,
    /// Weights of minor, serious and fatal crashes.
    pub severity_weights: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            severity_weights: DEFAULT_SEVERITY_WEIGHTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    MonteCarlo,
    CdfBisection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub lower_q: f64,
    pub upper_q: f64,
    pub interval_method: IntervalKind,
    /// Draws per cell for Monte Carlo intervals.
    pub mc_samples: usize,
    /// A cell is predicted zero when `P0` exceeds this.
    pub zero_threshold: f64,
    /// Share of roads flagged high-risk for the hit rate.
    pub hit_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            lower_q: 0.05,
            upper_q: 0.95,
            interval_method: IntervalKind::MonteCarlo,
            mc_samples: 2000,
            zero_threshold: 0.5,
            hit_fraction: 0.2,
        }
    }
}

impl EvalConfig {
    /// Interval method for one cell; Monte Carlo seeds are per cell.
    pub fn method(&self, cell_seed: u64) -> IntervalMethod {
        match self.interval_method {
            IntervalKind::MonteCarlo => IntervalMethod::MonteCarlo {
                samples: self.mc_samples,
                seed: cell_seed,
            },
            IntervalKind::CdfBisection => IntervalMethod::CdfBisection,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.lower_q > 0.0 && self.lower_q < self.upper_q && self.upper_q < 1.0) {
            return Err("eval: need 0 < lower_q < upper_q < 1".into());
        }
        if self.mc_samples == 0 {
            return Err("eval: mc_samples must be positive".into());
        }
        if !(self.zero_threshold > 0.0 && self.zero_threshold < 1.0) {
            return Err("eval: zero_threshold must lie in (0, 1)".into());
        }
        if !(self.hit_fraction > 0.0 && self.hit_fraction <= 1.0) {
            return Err("eval: hit_fraction must lie in (0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub series: SeriesConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            series: SeriesConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` (if given), applies `overrides` and validates.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(e) = overrides.epochs {
            cfg.train.epochs = e;
            cfg.train.patience = cfg.train.patience.min(e);
        }
        if let Some(d) = &overrides.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(d) = &overrides.data_dir {
            cfg.data.dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            self.synth.validate(),
            self.model.validate(),
            self.loss.validate(),
            self.train.validate(),
            self.eval.validate(),
        ];
        for c in checks {
            c.map_err(Error::Config)?;
        }
        if self.data.severity_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("data: severity weights must be >= 0".into()));
        }
        if !(self.series.relative_term_tolerance > 0.0) || self.series.max_terms == 0 {
            return Err(Error::Config(
                "series: relative_term_tolerance must be > 0 and max_terms >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }

    /// SHA-256 of the resolved TOML, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

//! Experiment configuration with layered overrides.
//!
//! Precedence, lowest to highest: per-experiment defaults, a flat
//! `key=value` config file, `STATICBASIS_*` environment variables, then
//! command-line flags. Every layer goes through [`ExperimentConfig::apply`],
//! so keys are spelled the same everywhere (`d_model` and `d-model` both work).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use serde::Serialize;
use thiserror::Error;

use crate::ff::{is_prime, MERSENNE_31};

pub const ENV_PREFIX: &str = "STATICBASIS_";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("{path}:{line}: expected key=value")]
    Syntax { path: String, line: usize },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    DiscoverKTlg,
    DiscoverKSoter,
    Threshold,
    AttackTlg,
    AttackSoter,
    SubsetSweep,
    KSweep,
    DimSweep,
    CostTable,
    RankProb,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::DiscoverKTlg => "discover-k-tlg",
            Experiment::DiscoverKSoter => "discover-k-soter",
            Experiment::Threshold => "threshold",
            Experiment::AttackTlg => "attack-tlg",
            Experiment::AttackSoter => "attack-soter",
            Experiment::SubsetSweep => "subset-sweep",
            Experiment::KSweep => "k-sweep",
            Experiment::DimSweep => "dim-sweep",
            Experiment::CostTable => "cost-table",
            Experiment::RankProb => "rank-prob",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Attacked dimension: `d_ffn` for TLG, activation width for Soter.
    pub d: usize,
    pub d_model: usize,
    pub k: usize,
    /// Subset size; `None` means all `K` basis vectors.
    pub t: Option<usize>,
    pub delta: usize,
    pub batch_size: usize,
    pub trials: usize,
    pub seed: u64,
    pub modulus: u64,
    pub window: usize,
    pub bypass_batches: usize,
    pub out: PathBuf,
    pub full_scale: bool,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            d: 64,
            d_model: 32,
            k: 10,
            t: None,
            delta: 2,
            batch_size: 4,
            trials: 100,
            seed: 1,
            modulus: MERSENNE_31,
            window: 20,
            bypass_batches: 100,
            out: PathBuf::from("results"),
            full_scale: false,
        };
        match experiment {
            Experiment::DiscoverKSoter => Self {
                d: 256,
                window: 5,
                ..base
            },
            Experiment::Threshold => Self {
                d: 128,
                d_model: 64,
                k: 8,
                ..base
            },
            Experiment::AttackTlg => Self { k: 8, ..base },
            Experiment::AttackSoter => Self { delta: 1, ..base },
            Experiment::SubsetSweep => Self {
                d: 256,
                trials: 50,
                ..base
            },
            // One genuine entry per batch keeps a two-set plan valid across
            // both sweeps (K = 32 at d = 128, and d = 64 at K = 10).
            Experiment::KSweep => Self {
                d: 128,
                d_model: 64,
                batch_size: 1,
                trials: 20,
                ..base
            },
            Experiment::DimSweep => Self {
                batch_size: 1,
                trials: 10,
                ..base
            },
            Experiment::CostTable => Self { trials: 1, ..base },
            Experiment::RankProb => Self {
                modulus: 2,
                k: 2,
                trials: 0,
                ..base
            },
            _ => base,
        }
    }

    /// Shapes of the single-layer run reported for a full-size model.
    pub fn full_scale_shape(&mut self) {
        self.d = 14336;
        self.d_model = 4096;
        self.k = 10;
        self.delta = 0;
        self.trials = 1;
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        let norm = key.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "d" => self.d = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "t" => {
                let v = value.trim();
                self.t = if v.is_empty() || v == "all" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "delta" => self.delta = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "modulus" | "p" => self.modulus = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "bypass_batches" => self.bypass_batches = parse(key, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "full_scale" => self.full_scale = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
            })?;
            self.apply(k, v)?;
        }
        Ok(())
    }

    /// Applies every `STATICBASIS_<KEY>` pair from `vars`.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(
        &mut self,
        vars: I,
    ) -> Result<(), ConfigError> {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|s| (s.to_string(), v)))
            .collect();
        pairs.sort();
        for (k, v) in pairs {
            self.apply(&k, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |s: String| Err(ConfigError::Invalid(s));
        if !is_prime(self.modulus) || self.modulus >= 1 << 63 {
            return bad(format!(
                "modulus {} is not a prime below 2^63",
                self.modulus
            ));
        }
        if self.trials == 0 && self.experiment != Experiment::RankProb {
            return bad("trials must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if let Some(t) = self.t {
            if t == 0 || t > self.k {
                return bad(format!("t = {t} outside 1..={}", self.k));
            }
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        let needs_dims = !matches!(
            self.experiment,
            Experiment::CostTable | Experiment::RankProb
        );
        if needs_dims && (self.d < 2 || self.k > self.d) {
            return bad(format!(
                "need 2 <= d and k <= d, got d = {}, k = {}",
                self.d, self.k
            ));
        }
        let tlg = matches!(
            self.experiment,
            Experiment::DiscoverKTlg | Experiment::Threshold | Experiment::AttackTlg
        );
        if tlg && (self.d_model < 2 || self.k > self.d_model) {
            return bad(format!("need k <= d_model, got d_model = {}", self.d_model));
        }
        Ok(())
    }

    pub fn csv_path(&self) -> PathBuf {
        self.out
            .join(format!("{}_{}.csv", self.experiment, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_env_and_flags_layer_in_order() {
        let mut c = ExperimentConfig::defaults(Experiment::Threshold);
        assert_eq!((c.d, c.k), (128, 8));
        c.apply_text("# comment\nd = 32\nk=4\ndelta=1 # trailing\n", "cfg")
            .unwrap();
        assert_eq!((c.d, c.k, c.delta), (32, 4, 1));
        c.apply_env([
            ("STATICBASIS_K".to_string(), "6".to_string()),
            ("OTHER_D".to_string(), "9".to_string()),
        ])
        .unwrap();
        assert_eq!((c.d, c.k), (32, 6));
        c.apply("d-model", "16").unwrap();
        assert_eq!(c.d_model, 16);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = ExperimentConfig::defaults(Experiment::AttackTlg);
        assert_eq!(
            c.apply("nope", "1"),
            Err(ConfigError::UnknownKey("nope".into()))
        );
        assert!(matches!(
            c.apply("k", "x"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            c.apply_text("d 3", "f"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        c.apply("modulus", "15").unwrap();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::defaults(Experiment::AttackTlg);
        c.apply("t", "11").unwrap();
        assert!(c.validate().is_err());
        c.apply("t", "all").unwrap();
        assert_eq!(c.t, None);
    }

    #[test]
    fn names_match_cli_values() {
        for e in Experiment::value_variants() {
            assert_eq!(e.to_possible_value().unwrap().get_name(), e.name());
        }
    }

    #[test]
    fn names_and_paths() {
        let c = ExperimentConfig::defaults(Experiment::DiscoverKTlg);
        assert_eq!(c.csv_path(), PathBuf::from("results/discover-k-tlg_1.csv"));
        assert_eq!(Experiment::RankProb.name(), "rank-prob");
    }
}

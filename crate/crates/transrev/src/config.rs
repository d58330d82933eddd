//! TOML run configuration.
//!
//! ```toml
//! [hyperparameters]      # every key optional
//! k = 16
//! lambda = 0.5
//! mu = 1e-4
//! learning_rate = 0.01
//! batch_size = 64
//! max_epochs = 500
//! validate_every = 10
//! seed = 0
//! drop_last = false
//!
//! [grid]                 # every key optional; missing lists use the defaults
//! learning_rates = [0.001, 0.005, 0.01, 0.05, 0.1]
//! mus = [1e-5, 5e-5, 1e-4, 5e-4, 1e-3]
//! lambdas = [0.1, 0.25, 0.5, 1.0]
//! ```
//!
//! Resolution order is defaults, then the file, then command-line flags.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use transrev_core::{GridSpec, Hyperparameters};

use crate::error::{Error, Result};

/// A partial set of hyperparameters; `None` leaves the lower layer alone.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparameterOverlay {
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub validate_every: Option<usize>,
    pub seed: Option<u64>,
    pub drop_last: Option<bool>,
}

impl HyperparameterOverlay {
    pub fn apply(&self, hp: &mut Hyperparameters) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { hp.$f = v; })*};
        }
        set!(
            k,
            lambda,
            mu,
            learning_rate,
            batch_size,
            max_epochs,
            validate_every,
            seed,
            drop_last
        );
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOverlay {
    pub learning_rates: Option<Vec<f64>>,
    pub mus: Option<Vec<f64>>,
    pub lambdas: Option<Vec<f64>>,
}

impl GridOverlay {
    pub fn apply(&self, grid: &mut GridSpec) {
        if let Some(v) = &self.learning_rates {
            grid.learning_rates = v.clone();
        }
        if let Some(v) = &self.mus {
            grid.mus = v.clone();
        }
        if let Some(v) = &self.lambdas {
            grid.lambdas = v.clone();
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub hyperparameters: HyperparameterOverlay,
    #[serde(default)]
    pub grid: GridOverlay,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Merges defaults, an optional config file and flag overrides.
pub fn resolve(
    file: Option<&ConfigFile>,
    flags: &HyperparameterOverlay,
) -> (Hyperparameters, GridSpec) {
    let mut hp = Hyperparameters::default();
    let mut grid = GridSpec::default();
    if let Some(f) = file {
        f.hyperparameters.apply(&mut hp);
        f.grid.apply(&mut grid);
    }
    flags.apply(&mut hp);
    (hp, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_defaults_file_flags() {
        let file = ConfigFile::parse(
            "[hyperparameters]\nk = 8\nmu = 0.001\n[grid]\nlambdas = [1.0]\n",
            Path::new("c.toml"),
        )
        .unwrap();
        let flags = HyperparameterOverlay {
            mu: Some(0.5),
            ..Default::default()
        };
        let (hp, grid) = resolve(Some(&file), &flags);
        assert_eq!(hp.k, 8);
        assert_eq!(hp.mu, 0.5);
        assert_eq!(hp.batch_size, Hyperparameters::default().batch_size);
        assert_eq!(grid.lambdas, vec![1.0]);
        assert_eq!(grid.mus, GridSpec::default().mus);
    }

    #[test]
    fn empty_and_bad_files() {
        assert_eq!(
            ConfigFile::parse("", Path::new("c")).unwrap(),
            ConfigFile::default()
        );
        assert!(ConfigFile::parse("[hyperparameters]\nkk = 3\n", Path::new("c")).is_err());
        assert!(ConfigFile::parse("[hyperparameters]\nk = \"x\"\n", Path::new("c")).is_err());
    }
}

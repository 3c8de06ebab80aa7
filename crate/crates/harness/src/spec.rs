//! Experiment specification files (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use chfl_core::data::{ColumnRef, Delimiter, SyntheticSpec};
use chfl_core::federation::{FederationConfig, Method};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MU_GRID: [f64; 5] = [0.0, 0.1, 0.3, 0.5, 1.0];

/// Where the samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetRef {
    /// Generated data. Each feature split draws a fresh dataset around its
    /// own common/unique partition; `clients` and `common_ratio` are taken
    /// from the experiment.
    Synthetic {
        samples: usize,
        features: usize,
        classes: usize,
        #[serde(default = "one")]
        common_signal: f64,
        #[serde(default = "one")]
        unique_signal: f64,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        feature_correlation: f64,
        #[serde(default)]
        teacher_hidden: usize,
    },
    /// A delimited text file, resolved relative to the spec file and then
    /// to `$CHFL_DATA_DIR`.
    Csv {
        path: PathBuf,
        label_column: ColumnRef,
        #[serde(default)]
        has_header: bool,
        #[serde(default)]
        delimiter: Delimiter,
        #[serde(default)]
        drop_columns: Vec<ColumnRef>,
        /// Keep a seeded random subset of this many rows.
        #[serde(default)]
        max_rows: Option<usize>,
    },
}

fn one() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.1
}

impl DatasetRef {
    pub fn synthetic_spec(&self, clients: usize, common_ratio: f64) -> Option<SyntheticSpec> {
        match *self {
            DatasetRef::Synthetic {
                samples,
                features,
                classes,
                common_signal,
                unique_signal,
                noise,
                feature_correlation,
                teacher_hidden,
            } => Some(SyntheticSpec {
                samples,
                features,
                classes,
                clients,
                common_ratio,
                common_signal,
                unique_signal,
                noise,
                feature_correlation,
                teacher_hidden,
            }),
            DatasetRef::Csv { .. } => None,
        }
    }
}

/// How CHFL's `μ` is picked from the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    /// Every client keeps the `μ` with its best validation accuracy.
    #[default]
    PerClient,
    /// One `μ` for all clients, by mean validation accuracy.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Dataset label used in records and tables.
    pub name: String,
    pub dataset: DatasetRef,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_ratio")]
    pub common_ratio: f64,
    #[serde(default = "default_splits")]
    pub n_feature_splits: usize,
    #[serde(default = "default_repeats")]
    pub n_repeats: usize,
    #[serde(default = "default_mu_grid")]
    pub mu_grid: Vec<f64>,
    #[serde(default)]
    pub mu_mode: MuMode,
    /// Root of every random stream in the experiment.
    #[serde(default)]
    pub seed: u64,
    /// Run independent (split, repeat) jobs on the rayon pool.
    #[serde(default)]
    pub parallel_jobs: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Keep every client's final two-column model for the CHFL methods.
    #[serde(default)]
    pub save_checkpoints: bool,
    #[serde(default)]
    pub federation: FederationConfig,
    /// Directory of the spec file, for resolving relative dataset paths.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Common, Method::Local, Method::ChflMu0, Method::Chfl]
}

fn default_ratio() -> f64 {
    0.3
}

fn default_splits() -> usize {
    3
}

fn default_repeats() -> usize {
    5
}

fn default_mu_grid() -> Vec<f64> {
    DEFAULT_MU_GRID.to_vec()
}

impl ExperimentSpec {
    /// A spec with protocol defaults around `dataset`.
    pub fn new(name: impl Into<String>, dataset: DatasetRef) -> Self {
        Self {
            name: name.into(),
            dataset,
            methods: default_methods(),
            common_ratio: default_ratio(),
            n_feature_splits: default_splits(),
            n_repeats: default_repeats(),
            mu_grid: default_mu_grid(),
            mu_mode: MuMode::default(),
            seed: 0,
            parallel_jobs: false,
            output: None,
            save_checkpoints: false,
            federation: FederationConfig::default(),
            base_dir: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).context("parsing experiment spec")?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut spec =
            Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?;
        spec.base_dir = path.parent().map(Path::to_path_buf);
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_feature_splits >= 1,
            "n_feature_splits must be at least 1"
        );
        ensure!(self.n_repeats >= 1, "n_repeats must be at least 1");
        ensure!(!self.methods.is_empty(), "no methods requested");
        ensure!(
            self.common_ratio > 0.0 && self.common_ratio < 1.0,
            "common_ratio must lie in (0, 1), got {}",
            self.common_ratio
        );
        if let Some(mu) = self.mu_grid.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            bail!("mu_grid entries must lie in [0, 1], got {mu}");
        }
        if self.methods.contains(&Method::Chfl) {
            ensure!(
                self.mu_grid.iter().any(|&m| m > 0.0),
                "method chfl needs a positive value in mu_grid"
            );
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        ensure!(seen.len() == self.methods.len(), "methods listed twice");
        if let DatasetRef::Synthetic {
            samples,
            features,
            classes,
            ..
        } = self.dataset
        {
            ensure!(
                samples > 0 && features > 0,
                "synthetic dataset needs samples and features"
            );
            ensure!(
                classes == self.federation.class_count,
                "synthetic classes ({classes}) differ from federation.class_count ({})",
                self.federation.class_count
            );
        }
        let mut fed = self.federation.clone();
        fed.mu = 0.0;
        fed.validate()?;
        Ok(())
    }

    /// Positive `μ` candidates for the `chfl` method.
    pub fn positive_mus(&self) -> Vec<f64> {
        let mut mus: Vec<f64> = self.mu_grid.iter().copied().filter(|&m| m > 0.0).collect();
        mus.sort_by(f64::total_cmp);
        mus.dedup();
        mus
    }

    /// Resolves a dataset path: absolute, next to the spec file, or under
    /// `$CHFL_DATA_DIR`, in that order.
    pub fn resolve_path(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            return path.to_path_buf();
        }
        if let Some(base) = &self.base_dir {
            let p = base.join(path);
            if p.exists() {
                return p;
            }
        }
        if let Some(dir) = std::env::var_os("CHFL_DATA_DIR") {
            let p = Path::new(&dir).join(path);
            if p.exists() {
                return p;
            }
        }
        path.to_path_buf()
    }
}

//! JSON experiment configs and their resolution against command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use ensdiv::datasets::{
    load_csv, synthetic_binary, synthetic_classification, Dataset, LabelColumn,
};
use ensdiv::decorate_baseline::{DecorateConfig, MlpFactory};
use ensdiv::diverse_train::TrainingConfig;
use ensdiv::tree_ensemble::{DEFAULT_DEPTH_GRID, DEFAULT_FEATURE_GRID};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_label() -> LabelColumn {
    LabelColumn::Name("class".into())
}

fn yes() -> bool {
    true
}

/// Where the rows come from. CSV paths are resolved against the directory
/// of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Csv {
        path: PathBuf,
        #[serde(default = "default_label")]
        label_column: LabelColumn,
        #[serde(default = "yes")]
        header: bool,
    },
    SyntheticBinary {
        n: usize,
        alpha: f64,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    SyntheticClassification {
        n: usize,
        n_features: usize,
        informative: usize,
        n_classes: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSpec {
    fn resolve(&mut self, base: &Path) -> Result<(), CliError> {
        if let DatasetSpec::Csv { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "dataset.path: {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn load(&self) -> Result<Dataset, CliError> {
        let ds = match self {
            DatasetSpec::Csv {
                path,
                label_column,
                header,
            } => load_csv(path, label_column, *header),
            DatasetSpec::SyntheticBinary {
                n,
                alpha,
                separation,
                seed,
            } => synthetic_binary(*n, *alpha, *separation, *seed),
            DatasetSpec::SyntheticClassification {
                n,
                n_features,
                informative,
                n_classes,
                separation,
                seed,
            } => synthetic_classification(
                *n,
                *n_features,
                *informative,
                *n_classes,
                *separation,
                *seed,
            ),
        };
        ds.map_err(|e| CliError::Config(format!("dataset: {e}")))
    }
}

fn scoped(section: &str, e: ensdiv::Error) -> CliError {
    match e {
        ensdiv::Error::Config(m) => CliError::Config(format!("{section}.{m}")),
        other => CliError::Config(format!("{section}: {other}")),
    }
}

fn default_folds() -> usize {
    10
}

/// Config for `train` and `decorate`. The top-level `seed` drives the fold
/// split and is copied into the training and DECORATE seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    /// One run per value; falls back to `training.lambda` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub decorate: DecorateConfig,
    /// Base learner for DECORATE; defaults to the training architecture
    /// with the matched epoch budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_learner: Option<MlpFactory>,
}

/// Flags that override config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub combiner: Option<ensdiv::diverse_train::Combiner>,
    pub no_scaling: bool,
}

impl ExperimentConfig {
    pub fn resolve(mut self, base: &Path, o: &Overrides) -> Result<Self, CliError> {
        self.dataset.resolve(base)?;
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        self.training.seed = self.seed;
        self.decorate.seed = self.seed;
        if let Some(grid) = &o.lambda_grid {
            self.lambda_grid = Some(grid.clone());
        }
        if let Some(c) = o.combiner {
            self.training.combiner = c;
        }
        if o.no_scaling {
            self.training.standardize = false;
        }
        if self.base_learner.is_none() {
            self.base_learner = Some(MlpFactory::matching(&self.training));
        }
        if self.folds < 2 {
            return Err(CliError::Config(format!(
                "folds: must be >= 2, got {}",
                self.folds
            )));
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() {
                return Err(CliError::Config("lambda_grid: must not be empty".into()));
            }
        }
        self.training
            .validate()
            .map_err(|e| scoped("training", e))?;
        self.decorate
            .validate()
            .map_err(|e| scoped("decorate", e))?;
        Ok(self)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.lambda_grid
            .clone()
            .unwrap_or_else(|| vec![self.training.lambda])
    }
}

fn default_rf_dataset() -> DatasetSpec {
    DatasetSpec::SyntheticClassification {
        n: 1500,
        n_features: 30,
        informative: 10,
        n_classes: 10,
        separation: 1.0,
        seed: 0,
    }
}

fn default_holdout() -> usize {
    3
}

/// Config for `rf-study`: forests are trained on all but one of
/// `holdout_folds` folds and scored on the held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfStudyConfig {
    #[serde(default = "default_rf_dataset")]
    pub dataset: DatasetSpec,
    #[serde(default = "default_holdout")]
    pub holdout_folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "feature_grid")]
    pub feature_grid: Vec<usize>,
    #[serde(default = "depth_grid")]
    pub depth_grid: Vec<usize>,
}

fn feature_grid() -> Vec<usize> {
    DEFAULT_FEATURE_GRID.to_vec()
}

fn depth_grid() -> Vec<usize> {
    DEFAULT_DEPTH_GRID.to_vec()
}

impl Default for RfStudyConfig {
    fn default() -> Self {
        Self {
            dataset: default_rf_dataset(),
            holdout_folds: default_holdout(),
            seed: 0,
            feature_grid: feature_grid(),
            depth_grid: depth_grid(),
        }
    }
}

impl RfStudyConfig {
    pub fn resolve(mut self, base: &Path, o: &Overrides) -> Result<Self, CliError> {
        self.dataset.resolve(base)?;
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if self.holdout_folds < 2 {
            return Err(CliError::Config(format!(
                "holdout_folds: must be >= 2, got {}",
                self.holdout_folds
            )));
        }
        if self.depth_grid.contains(&0) {
            return Err(CliError::Config(
                "depth_grid: depths must be positive".into(),
            ));
        }
        Ok(self)
    }
}

/// Reads a JSON config; returns it with the directory that relative paths
/// are resolved against.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<(T, PathBuf), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("--config {}: {e}", path.display())))?;
    let config = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"dataset": {"kind": "synthetic_binary", "n": 40, "alpha": 0.5, "separation": 3.0}}"#,
        )
        .unwrap();
        assert_eq!(c.folds, 10);
        assert_eq!(c.training.ensemble_size, 15);
        assert_eq!(c.lambdas(), vec![0.9]);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r: serde_json::Result<ExperimentConfig> = serde_json::from_str(
            r#"{"dataset": {"kind": "synthetic_binary", "n": 40, "alpha": 0.5, "separation": 3.0},
                "training": {"lamda": 0.5}}"#,
        );
        assert!(r.unwrap_err().to_string().contains("lamda"));
    }

    #[test]
    fn overrides_apply_and_validation_names_fields() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"dataset": {"kind": "synthetic_binary", "n": 40, "alpha": 0.5, "separation": 3.0},
                "seed": 3}"#,
        )
        .unwrap();
        let o = Overrides {
            seed: Some(9),
            lambda_grid: Some(vec![0.1, 0.5]),
            no_scaling: true,
            ..Overrides::default()
        };
        let r = c.clone().resolve(Path::new("."), &o).unwrap();
        assert_eq!((r.seed, r.training.seed, r.decorate.seed), (9, 9, 9));
        assert_eq!(r.lambdas(), vec![0.1, 0.5]);
        assert!(!r.training.standardize);

        let mut bad = c;
        bad.training.learning_rate = -1.0;
        match bad.resolve(Path::new("."), &Overrides::default()) {
            Err(CliError::Config(m)) => assert!(m.contains("training.learning_rate"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_csv_is_a_config_error() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"dataset": {"kind": "csv", "path": "nope.csv"}}"#).unwrap();
        assert!(matches!(
            c.resolve(Path::new("/nonexistent"), &Overrides::default()),
            Err(CliError::Config(_))
        ));
    }
}

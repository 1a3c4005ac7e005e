//! A trained model bundle: everything an interactive session needs, saved as
//! one deterministic JSON file plus a human-readable rule listing.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{fit_discretization, stratified_split, DataError, Dataset, EmpiricalConditional, FeatureKind, Split};
use crate::estimator::{fit_value_net, EstimatorConfig, EstimatorError, TrainReport, ValueNet};
use crate::model::{fit_model, GlobalModel, ModelConfig, ModelKind};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("cannot read or write {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("malformed bundle {path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("bundle version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("inconsistent bundle: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub n_samples: usize,
    pub feature_names: Vec<String>,
    pub feature_kinds: Vec<FeatureKind>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub model: ModelConfig,
    pub bins: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub alpha: f64,
    /// Train a value network alongside the model.
    pub estimator: Option<EstimatorConfig>,
}

impl BundleConfig {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        BundleConfig {
            model: ModelConfig::new(kind, seed),
            bins: 5,
            seed,
            test_fraction: 0.2,
            alpha: EmpiricalConditional::DEFAULT_ALPHA,
            estimator: None,
        }
    }
}

/// Observed training range of a feature, used to bound user input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub dataset: DatasetMeta,
    pub config: BundleConfig,
    pub split: Split,
    pub model: GlobalModel,
    pub conditional: EmpiricalConditional,
    pub prior: Vec<f64>,
    pub value_net: Option<ValueNet>,
    pub feature_ranges: Vec<FeatureRange>,
}

/// What training produced besides the bundle itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub test_accuracy: f64,
    pub estimator_report: Option<TrainReport>,
    pub warnings: Vec<String>,
}

/// Splits `ds`, fits the model, the empirical conditional and optionally a
/// value network on the training part.
pub fn train_bundle(ds: &Dataset, name: &str, cfg: &BundleConfig) -> Result<TrainOutcome, BundleError> {
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(BundleError::Invalid("test_fraction must lie in [0, 1)".into()));
    }
    let split = stratified_split(ds, cfg.test_fraction, cfg.seed);
    let train = ds.subset(&split.train);
    let test = ds.subset(&split.test);
    let model = fit_model(&train, &cfg.model)?;
    let scheme = fit_discretization(&train, cfg.bins)?;
    let warnings = scheme.warnings();
    let conditional = EmpiricalConditional::fit(&train, scheme, cfg.alpha);
    let (value_net, estimator_report) = match &cfg.estimator {
        Some(ecfg) => {
            let (net, report) = fit_value_net(&train, &model, ecfg)?;
            (Some(net), Some(report))
        }
        None => (None, None),
    };
    let feature_ranges = (0..train.n_features())
        .map(|j| {
            let col = train.column(j);
            FeatureRange {
                min: col.iter().cloned().fold(f64::INFINITY, f64::min),
                max: col.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    let test_accuracy = crate::bench::global_accuracy(&model, &test);
    let bundle = ModelBundle {
        version: BUNDLE_VERSION,
        dataset: DatasetMeta {
            name: name.to_string(),
            n_samples: ds.n_samples(),
            feature_names: ds.feature_names.clone(),
            feature_kinds: ds.feature_kinds.clone(),
            class_names: ds.class_names.clone(),
        },
        config: cfg.clone(),
        split,
        model,
        conditional,
        prior: train.class_prior(),
        value_net,
        feature_ranges,
    };
    bundle.validate()?;
    Ok(TrainOutcome { bundle, test_accuracy, estimator_report, warnings })
}

/// `<dir>/<stem>.rules.txt` next to `<dir>/<stem>.json`.
pub fn rules_path(bundle_path: &Path) -> PathBuf {
    let stem = bundle_path.file_stem().and_then(|s| s.to_str()).unwrap_or("bundle");
    bundle_path.with_file_name(format!("{stem}.rules.txt"))
}

impl ModelBundle {
    pub fn n_features(&self) -> usize {
        self.dataset.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.dataset.feature_names.iter().position(|f| f == name)
    }

    /// Cross-checks widths of every component.
    pub fn validate(&self) -> Result<(), BundleError> {
        if self.version != BUNDLE_VERSION {
            return Err(BundleError::Version { found: self.version, expected: BUNDLE_VERSION });
        }
        let m = self.n_features();
        let c = self.dataset.class_names.len();
        let bad = |what: String| Err(BundleError::Invalid(what));
        if self.dataset.feature_kinds.len() != m {
            return bad(format!("{} feature kinds for {m} features", self.dataset.feature_kinds.len()));
        }
        if self.model.n_features() != m || self.model.n_classes() != c {
            return bad(format!(
                "model expects {} features and {} classes, dataset has {m} and {c}",
                self.model.n_features(),
                self.model.n_classes()
            ));
        }
        self.model
            .rule_base()
            .validate()
            .map_err(|e| BundleError::Invalid(format!("rule base: {e}")))?;
        if self.conditional.n_features() != m {
            return bad(format!("conditional covers {} features, expected {m}", self.conditional.n_features()));
        }
        if self.prior.len() != c {
            return bad(format!("prior has {} classes, expected {c}", self.prior.len()));
        }
        if self.feature_ranges.len() != m {
            return bad(format!("{} feature ranges for {m} features", self.feature_ranges.len()));
        }
        if self.model.imputation().len() != m {
            return bad(format!("{} imputation values for {m} features", self.model.imputation().len()));
        }
        if let Some(net) = &self.value_net {
            if net.n_features != m || net.n_classes != c {
                return bad(format!(
                    "value network is {}x{}, expected {m}x{c}",
                    net.n_features, net.n_classes
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle values are finite") + "\n"
    }

    /// Writes the bundle and its rule listing.
    pub fn save(&self, path: &Path) -> Result<PathBuf, BundleError> {
        let io_err = |p: &Path| {
            let path = p.display().to_string();
            move |source| BundleError::Io { path, source }
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, self.to_json()).map_err(io_err(path))?;
        let rules = rules_path(path);
        fs::write(&rules, self.model.rule_base().to_string()).map_err(io_err(&rules))?;
        Ok(rules)
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        let shown = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| BundleError::Io { path: shown.clone(), source })?;
        let bundle: ModelBundle =
            serde_json::from_str(&text).map_err(|source| BundleError::Json { path: shown, source })?;
        bundle.validate()?;
        Ok(bundle)
    }
}

//! Dataset ingestion, quantile discretization and empirical conditionals.
//!
//! The acquisition policy needs `p(x_i | x_S)` for every candidate feature.
//! Instead of a generative model we discretize each feature into quantile
//! bins and count training rows whose observed bins match the query exactly,
//! with Laplace smoothing and a marginal fallback when nothing matches.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while loading or validating tabular data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV at row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("unknown label column '{0}'")]
    UnknownLabelColumn(String),
    #[error("non-numeric value '{value}' in numeric column '{column}' at row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("missing value in column '{column}' at row {row}")]
    MissingCell { row: usize, column: String },
    #[error("row {row} has {found} cells, expected {expected}")]
    Ragged {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("dataset has no feature columns")]
    NoFeatures,
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// How a column was interpreted at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    /// Integer-encoded in order of first appearance; `levels[code]` is the original text.
    Categorical { levels: Vec<String> },
}

impl FeatureKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureKind::Categorical { .. })
    }
}

/// A labelled, fully observed tabular dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub feature_kinds: Vec<FeatureKind>,
    /// Row-major `N x M` matrix.
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset of numeric features, checking shape invariants.
    pub fn new(
        feature_names: Vec<String>,
        samples: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let kinds = vec![FeatureKind::Numeric; feature_names.len()];
        Self::with_kinds(feature_names, kinds, samples, labels, class_names)
    }

    pub fn with_kinds(
        feature_names: Vec<String>,
        feature_kinds: Vec<FeatureKind>,
        samples: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let ds = Dataset {
            feature_names,
            feature_kinds,
            samples,
            labels,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let m = self.feature_names.len();
        if m == 0 {
            return Err(DataError::NoFeatures);
        }
        if self.samples.is_empty() {
            return Err(DataError::Empty);
        }
        if self.feature_kinds.len() != m {
            return Err(DataError::Invalid("feature kinds do not match feature count".into()));
        }
        if self.labels.len() != self.samples.len() {
            return Err(DataError::Invalid(format!(
                "{} labels for {} samples",
                self.labels.len(),
                self.samples.len()
            )));
        }
        if self.class_names.is_empty() {
            return Err(DataError::Invalid("no classes".into()));
        }
        for (row, x) in self.samples.iter().enumerate() {
            if x.len() != m {
                return Err(DataError::Ragged {
                    row,
                    found: x.len(),
                    expected: m,
                });
            }
            if let Some(j) = x.iter().position(|v| !v.is_finite()) {
                return Err(DataError::Invalid(format!(
                    "non-finite value in column '{}' at row {row}",
                    self.feature_names[j]
                )));
            }
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.class_names.len()) {
            return Err(DataError::Invalid(format!(
                "label {y} out of range for {} classes",
                self.class_names.len()
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Column `j` as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|x| x[j]).collect()
    }

    /// Class frequencies, normalized.
    pub fn class_prior(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_classes()];
        for &y in &self.labels {
            counts[y] += 1.0;
        }
        let n = self.labels.len() as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        counts
    }

    /// A new dataset containing the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            feature_kinds: self.feature_kinds.clone(),
            samples: rows.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Row indices of a stratified train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: within each class, a seeded shuffle puts
/// `round(n_c * test_fraction)` rows into the test set.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..ds.n_classes() {
        let mut rows: Vec<usize> = (0..ds.n_samples()).filter(|&i| ds.labels[i] == c).collect();
        rows.shuffle(&mut rng);
        let n_test = ((rows.len() as f64) * test_fraction).round() as usize;
        let n_test = n_test.min(rows.len().saturating_sub(1));
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Split { train, test }
}

/// Loads a comma-separated file with a header row.
///
/// Columns whose first cell parses as a number are numeric; any later
/// non-numeric cell is an error. Other columns are categorical and are
/// integer-encoded in order of first appearance, as are the labels.
/// Empty cells (and `?`/`NA`) are rejected.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    if !path.exists() {
        return Err(DataError::FileNotFound(shown));
    }
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_csv(&text, label_column)
}

/// Parses CSV text; see [`load_csv`].
pub fn parse_csv(text: &str, label_column: Option<&str>) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Csv {
            row: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = match label_column {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::UnknownLabelColumn(name.to_string()))?,
        None => header.len().checked_sub(1).ok_or(DataError::NoFeatures)?,
    };
    let width = header.len();
    let feature_cols: Vec<usize> = (0..width).filter(|&j| j != label_idx).collect();
    if feature_cols.is_empty() {
        return Err(DataError::NoFeatures);
    }

    let mut raw: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Row numbers are 1-based data rows (the header is row 0).
        let row = i + 1;
        let record = record.map_err(|e| DataError::Csv {
            row,
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(DataError::Ragged {
                row,
                found: record.len(),
                expected: width,
            });
        }
        let cells: Vec<String> = record.iter().map(str::to_string).collect();
        for (j, cell) in cells.iter().enumerate() {
            if is_missing(cell) {
                return Err(DataError::MissingCell {
                    row,
                    column: header[j].clone(),
                });
            }
        }
        raw.push(cells);
    }
    if raw.is_empty() {
        return Err(DataError::Empty);
    }

    let mut samples = vec![Vec::with_capacity(feature_cols.len()); raw.len()];
    let mut kinds = Vec::with_capacity(feature_cols.len());
    for &j in &feature_cols {
        let numeric = raw[0][j].parse::<f64>().is_ok_and(f64::is_finite);
        if numeric {
            for (i, cells) in raw.iter().enumerate() {
                let v = cells[j]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DataError::NonNumeric {
                        row: i + 1,
                        column: header[j].clone(),
                        value: cells[j].clone(),
                    })?;
                samples[i].push(v);
            }
            kinds.push(FeatureKind::Numeric);
        } else {
            let mut encoder = Encoder::default();
            for (i, cells) in raw.iter().enumerate() {
                samples[i].push(encoder.encode(&cells[j]) as f64);
            }
            kinds.push(FeatureKind::Categorical {
                levels: encoder.levels,
            });
        }
    }

    let mut label_encoder = Encoder::default();
    let labels = raw.iter().map(|cells| label_encoder.encode(&cells[label_idx])).collect();

    Dataset::with_kinds(
        feature_cols.iter().map(|&j| header[j].clone()).collect(),
        kinds,
        samples,
        labels,
        label_encoder.levels,
    )
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "?" | "NA" | "NaN" | "nan")
}

#[derive(Default)]
struct Encoder {
    index: HashMap<String, usize>,
    levels: Vec<String>,
}

impl Encoder {
    fn encode(&mut self, value: &str) -> usize {
        if let Some(&code) = self.index.get(value) {
            return code;
        }
        let code = self.levels.len();
        self.index.insert(value.to_string(), code);
        self.levels.push(value.to_string());
        code
    }
}

/// Arithmetic mean of every feature column.
pub fn training_means(ds: &Dataset) -> Vec<f64> {
    let n = ds.n_samples() as f64;
    let mut sums = vec![0.0; ds.n_features()];
    for x in &ds.samples {
        for (s, v) in sums.iter_mut().zip(x) {
            *s += v;
        }
    }
    sums.into_iter().map(|s| s / n).collect()
}

/// Per-feature fill values for unobserved entries: the mean for numeric
/// features, the most frequent code (lowest code on ties) for categorical ones.
pub fn imputation_values(ds: &Dataset) -> Vec<f64> {
    let means = training_means(ds);
    (0..ds.n_features())
        .map(|j| {
            if ds.feature_kinds[j].is_categorical() {
                mode(&ds.column(j))
            } else {
                means[j]
            }
        })
        .collect()
}

fn mode(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (sorted[0], 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > best.1 {
            best = (sorted[i], j - i);
        }
        i = j;
    }
    best.0
}

/// Nearest-rank quantile of an ascending slice: `sorted[ceil(q * n) - 1]`.
pub(crate) fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// A sample with a per-feature observed mask. Unobserved entries hold
/// arbitrary values and must never be read without imputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialObservation {
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl PartialObservation {
    /// Nothing observed yet.
    pub fn empty(n_features: usize) -> Self {
        PartialObservation {
            values: vec![0.0; n_features],
            observed: vec![false; n_features],
        }
    }

    /// Every feature observed.
    pub fn full(values: &[f64]) -> Self {
        PartialObservation {
            values: values.to_vec(),
            observed: vec![true; values.len()],
        }
    }

    /// Observes `sample[i]` for every `i` in `features`.
    pub fn from_sample(sample: &[f64], features: &[usize]) -> Self {
        let mut obs = Self::empty(sample.len());
        for &i in features {
            obs.observe(i, sample[i]);
        }
        obs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn observe(&mut self, feature: usize, value: f64) {
        self.values[feature] = value;
        self.observed[feature] = true;
    }

    /// Copy with one more feature observed.
    pub fn with(&self, feature: usize, value: f64) -> Self {
        let mut next = self.clone();
        next.observe(feature, value);
        next
    }

    pub fn is_observed(&self, feature: usize) -> bool {
        self.observed[feature]
    }

    /// The observed value, or `None` if the feature is in the unobserved set.
    pub fn get(&self, feature: usize) -> Option<f64> {
        self.observed[feature].then(|| self.values[feature])
    }

    pub fn mask(&self) -> &[bool] {
        &self.observed
    }

    /// Observed indices in ascending order (the set `S`).
    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.observed[i]).collect()
    }

    /// Unobserved indices in ascending order (the complement of `S`).
    pub fn unobserved_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.observed[i]).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    /// Full vector with unobserved entries replaced by `fill`.
    pub fn impute(&self, fill: &[f64]) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.observed)
            .zip(fill)
            .map(|((&v, &o), &f)| if o { v } else { f })
            .collect()
    }
}

impl fmt::Display for PartialObservation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.len() {
            if i > 0 {
                write!(f, ", ")?;
            }
            match self.get(i) {
                Some(v) => write!(f, "{v}")?,
                None => write!(f, "?")?,
            }
        }
        write!(f, "]")
    }
}

/// Per-feature quantile cut points.
///
/// A value `v` falls into bin `b` = number of edges strictly below `v`, so
/// bin `b` covers `(edges[b-1], edges[b]]` and the top bin is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationScheme {
    pub edges: Vec<Vec<f64>>,
    pub bins_per_feature: usize,
    /// Features that collapsed to a single bin.
    pub constant_features: Vec<usize>,
}

impl DiscretizationScheme {
    pub fn n_bins(&self, feature: usize) -> usize {
        self.edges[feature].len() + 1
    }

    pub fn bin(&self, feature: usize, value: f64) -> usize {
        self.edges[feature].partition_point(|&e| e < value)
    }

    pub fn n_features(&self) -> usize {
        self.edges.len()
    }

    /// Warnings produced while fitting.
    pub fn warnings(&self) -> Vec<String> {
        self.constant_features
            .iter()
            .map(|j| format!("feature {j} is constant; using a single bin"))
            .collect()
    }
}

/// Nearest-rank quantile edges at `k / bins` for `k = 1..bins`, with
/// duplicates collapsed. An edge at the column maximum is moved down to the
/// largest smaller value so that every non-constant column gets two bins.
pub fn fit_discretization(ds: &Dataset, bins: usize) -> Result<DiscretizationScheme, DataError> {
    if bins < 2 {
        return Err(DataError::Invalid(format!("bins must be at least 2, got {bins}")));
    }
    let mut edges = Vec::with_capacity(ds.n_features());
    let mut constant_features = Vec::new();
    for j in 0..ds.n_features() {
        let mut col = ds.column(j);
        col.sort_by(f64::total_cmp);
        let max = col[col.len() - 1];
        let below_max = col.iter().rev().find(|&&v| v < max).copied();
        let mut e: Vec<f64> = (1..bins)
            .filter_map(|k| {
                let q = nearest_rank(&col, k as f64 / bins as f64);
                if q < max { Some(q) } else { below_max }
            })
            .collect();
        e.dedup();
        if col[0] == max {
            constant_features.push(j);
        }
        edges.push(e);
    }
    Ok(DiscretizationScheme {
        edges,
        bins_per_feature: bins,
        constant_features,
    })
}

/// Exact-match empirical estimate of `p(bin of x_i | bins of x_S)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConditional {
    pub scheme: DiscretizationScheme,
    /// Bin of every training sample for every feature (row-major).
    pub assignments: Vec<Vec<usize>>,
    /// Laplace smoothing constant.
    pub alpha: f64,
    /// Value substituted for feature `i` when it lands in bin `b`.
    pub representatives: Vec<Vec<f64>>,
    /// Raw training rows, aligned with `assignments`.
    pub samples: Vec<Vec<f64>>,
}

impl EmpiricalConditional {
    pub const DEFAULT_ALPHA: f64 = 1.0;

    /// Tallies bin assignments of the training data.
    ///
    /// Representatives are the mean of the training values in each bin (the
    /// most frequent value for categorical features); empty bins fall back to
    /// the bin midpoint.
    pub fn fit(ds: &Dataset, scheme: DiscretizationScheme, alpha: f64) -> Self {
        let assignments: Vec<Vec<usize>> = ds
            .samples
            .iter()
            .map(|x| x.iter().enumerate().map(|(j, &v)| scheme.bin(j, v)).collect())
            .collect();
        let representatives = (0..ds.n_features())
            .map(|j| {
                (0..scheme.n_bins(j))
                    .map(|b| {
                        let members: Vec<f64> = ds
                            .samples
                            .iter()
                            .zip(&assignments)
                            .filter(|(_, a)| a[j] == b)
                            .map(|(x, _)| x[j])
                            .collect();
                        if members.is_empty() {
                            bin_midpoint(&scheme.edges[j], b)
                        } else if ds.feature_kinds[j].is_categorical() {
                            mode(&members)
                        } else {
                            members.iter().sum::<f64>() / members.len() as f64
                        }
                    })
                    .collect()
            })
            .collect();
        EmpiricalConditional {
            scheme,
            assignments,
            alpha,
            representatives,
            samples: ds.samples.clone(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.scheme.n_features()
    }

    /// Smoothed distribution over the bins of feature `i` among training rows
    /// whose observed-feature bins all match `obs`. Falls back to the smoothed
    /// marginal when no row matches.
    pub fn conditional_distribution(
        &self,
        obs: &PartialObservation,
        i: usize,
    ) -> Result<Vec<f64>, DataError> {
        if obs.len() != self.n_features() {
            return Err(DataError::Invalid(format!(
                "observation has {} features, conditional has {}",
                obs.len(),
                self.n_features()
            )));
        }
        if obs.is_observed(i) {
            return Err(DataError::Invalid(format!("feature {i} is already observed")));
        }
        let query: Vec<(usize, usize)> = obs
            .observed_indices()
            .into_iter()
            .map(|j| (j, self.scheme.bin(j, obs.get(j).unwrap_or_default())))
            .collect();
        let n_bins = self.scheme.n_bins(i);
        let mut counts = vec![0.0; n_bins];
        let mut matched = 0usize;
        for a in &self.assignments {
            if query.iter().all(|&(j, b)| a[j] == b) {
                counts[a[i]] += 1.0;
                matched += 1;
            }
        }
        if matched == 0 {
            return Ok(self.marginal(i));
        }
        Ok(smooth(&counts, self.alpha))
    }

    /// Training rows whose bins match `obs` on every observed feature; all
    /// rows when none match.
    pub fn matching_rows(&self, obs: &PartialObservation) -> Vec<usize> {
        let query: Vec<(usize, usize)> = obs
            .observed_indices()
            .into_iter()
            .map(|j| (j, self.scheme.bin(j, obs.get(j).unwrap_or_default())))
            .collect();
        let rows: Vec<usize> = (0..self.assignments.len())
            .filter(|&r| query.iter().all(|&(j, b)| self.assignments[r][j] == b))
            .collect();
        if rows.is_empty() {
            (0..self.assignments.len()).collect()
        } else {
            rows
        }
    }

    /// Smoothed marginal over the bins of feature `i`.
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        let mut counts = vec![0.0; self.scheme.n_bins(i)];
        for a in &self.assignments {
            counts[a[i]] += 1.0;
        }
        smooth(&counts, self.alpha)
    }
}

fn smooth(counts: &[f64], alpha: f64) -> Vec<f64> {
    let total: f64 = counts.iter().sum::<f64>() + alpha * counts.len() as f64;
    counts.iter().map(|c| (c + alpha) / total).collect()
}

fn bin_midpoint(edges: &[f64], b: usize) -> f64 {
    match (b.checked_sub(1).and_then(|k| edges.get(k)), edges.get(b)) {
        (Some(&lo), Some(&hi)) => 0.5 * (lo + hi),
        (None, Some(&hi)) => hi,
        (Some(&lo), None) => lo,
        (None, None) => 0.0,
    }
}

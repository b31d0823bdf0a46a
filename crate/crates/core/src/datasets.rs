//! Tabular datasets: CSV loading, one-hot labels, k-fold splitting,
//! standardization and synthetic generators.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    /// Category codes stored as reals `0.0, 1.0, ...`.
    Nominal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub feature_kinds: Vec<FeatureKind>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// All-numeric dataset with generated names.
    pub fn new(name: &str, x: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let q = x.ncols();
        let ds = Self {
            name: name.to_string(),
            x,
            labels,
            n_classes,
            feature_kinds: vec![FeatureKind::Numeric; q],
            feature_names: (0..q).map(|j| format!("x{j}")).collect(),
            class_names: (0..n_classes).map(|k| k.to_string()).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n < 2 {
            return Err(Error::DatasetTooSmall(n));
        }
        if self.x.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for {n} labels",
                self.x.nrows()
            )));
        }
        if self.feature_kinds.len() != self.x.ncols() || self.feature_names.len() != self.x.ncols()
        {
            return Err(Error::ShapeMismatch("feature metadata width".into()));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::OutOfRangeLabel {
                label,
                classes: self.n_classes,
            });
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order; class metadata is kept.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x: self.x.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            feature_kinds: self.feature_kinds.clone(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f == "?"
}

/// Loads a comma-separated file. Rows containing a missing value (`?` or an
/// empty field) are dropped. Label values and nominal feature values are
/// coded in order of first appearance among the kept rows. A feature column
/// is nominal when its first non-missing value is not a number.
pub fn load_csv(path: &Path, label: &LabelColumn, header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let headers: Option<Vec<String>> = if header {
        let h = reader
            .headers()
            .map_err(|e| Error::Io(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        Some(h)
    } else {
        None
    };

    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // 1-based file line numbers, counting the header.
        let line = i + 1 + header as usize;
        let record = record.map_err(|e| Error::Parse {
            row: line,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        rows.push((line, record));
    }
    let width = match (&headers, rows.first()) {
        (Some(h), _) => h.len(),
        (None, Some((_, r))) => r.len(),
        (None, None) => 0,
    };
    let label_idx = match label {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => return Err(Error::MissingLabelColumn(i.to_string())),
        LabelColumn::Name(name) => headers
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::MissingLabelColumn(name.clone()))?,
    };

    let mut kept = Vec::with_capacity(rows.len());
    let mut dropped = 0usize;
    for (line, record) in &rows {
        if record.len() != width {
            return Err(Error::Parse {
                row: *line,
                column: record.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        if record.iter().any(is_missing) {
            dropped += 1;
        } else {
            kept.push((*line, record));
        }
    }
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} rows with missing values",
            path.display()
        );
    }
    if kept.len() < 2 {
        return Err(Error::DatasetTooSmall(kept.len()));
    }

    let feature_cols: Vec<usize> = (0..width).filter(|&j| j != label_idx).collect();
    let kinds: Vec<FeatureKind> = feature_cols
        .iter()
        .map(|&j| match kept[0].1[j].parse::<f64>() {
            Ok(_) => FeatureKind::Numeric,
            Err(_) => FeatureKind::Nominal,
        })
        .collect();

    let mut codes: Vec<HashMap<String, usize>> = vec![HashMap::new(); feature_cols.len()];
    let mut class_codes: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut x = Matrix::zeros((kept.len(), feature_cols.len()));
    let mut labels = Vec::with_capacity(kept.len());
    for (r, (line, record)) in kept.iter().enumerate() {
        for (c, &j) in feature_cols.iter().enumerate() {
            let field = &record[j];
            x[(r, c)] = match kinds[c] {
                FeatureKind::Numeric => field.parse::<f64>().map_err(|e| Error::Parse {
                    row: *line,
                    column: j + 1,
                    message: format!("{field:?}: {e}"),
                })?,
                FeatureKind::Nominal => {
                    let next = codes[c].len();
                    *codes[c].entry(field.to_string()).or_insert(next) as f64
                }
            };
        }
        let value = record[label_idx].to_string();
        let code = *class_codes.entry(value.clone()).or_insert_with(|| {
            class_names.push(value);
            class_names.len() - 1
        });
        labels.push(code);
    }

    let feature_names = match &headers {
        Some(h) => feature_cols.iter().map(|&j| h[j].clone()).collect(),
        None => feature_cols.iter().map(|&j| format!("x{j}")).collect(),
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ds = Dataset {
        name,
        x,
        labels,
        n_classes: class_names.len(),
        feature_kinds: kinds,
        feature_names,
        class_names,
    };
    ds.validate()?;
    Ok(ds)
}

/// `n x m` indicator matrix with a single 1 per row.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Matrix> {
    let mut y = Matrix::zeros((labels.len(), n_classes));
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::OutOfRangeLabel {
                label: l,
                classes: n_classes,
            });
        }
        y[(i, l)] = 1.0;
    }
    Ok(y)
}

/// Row-wise argmax; ties go to the lowest column.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Splits `0..n` into `k` disjoint folds whose sizes differ by at most one.
///
/// With `stratify` labels, each class is shuffled separately and dealt
/// round-robin, so per-fold class counts also differ by at most one.
/// Indices inside each fold are sorted.
pub fn kfold_split(
    n: usize,
    k: usize,
    seed: u64,
    stratify: Option<&[usize]>,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = match stratify {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        }
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: labels.len(),
                });
            }
            let classes = labels.iter().max().map_or(0, |&m| m + 1);
            let mut by_class = vec![Vec::new(); classes];
            for (i, &l) in labels.iter().enumerate() {
                by_class[l].push(i);
            }
            by_class
                .into_iter()
                .flat_map(|mut c| {
                    c.shuffle(&mut rng);
                    c
                })
                .collect()
        }
    };
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (j, i) in order.into_iter().enumerate() {
        folds[j % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Training indices (all other folds, sorted) and test indices for fold `i`.
pub fn train_test_indices(folds: &[Vec<usize>], i: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    train.sort_unstable();
    (train, folds[i].clone())
}

/// Per-column affine scaling to zero mean and unit variance. Constant
/// columns get unit scale so they map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::EmptyData);
        }
        let mean = x.mean_axis(Axis(0)).ok_or(Error::EmptyData)?;
        let std = x.std_axis(Axis(0), 0.0);
        Ok(Self {
            mean: mean.to_vec(),
            std: std
                .iter()
                .map(|&s| if s > 1e-12 { s } else { 1.0 })
                .collect(),
        })
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} columns, standardizer fitted on {}",
                x.ncols(),
                self.mean.len()
            )));
        }
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

/// Two unit-variance Gaussian blobs in the plane whose centres are
/// `separation` apart along the first axis. Exactly `round(alpha n)` rows
/// are labelled 1; rows are shuffled.
pub fn synthetic_binary(n: usize, alpha: f64, separation: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::DatasetTooSmall(n));
    }
    let positives = (alpha * n as f64).round() as usize;
    if !(alpha > 0.0 && alpha < 1.0) || positives == 0 || positives == n {
        return Err(Error::DegenerateAlpha(alpha));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| (i < positives) as usize).collect();
    labels.shuffle(&mut rng);
    let mut x = Matrix::zeros((n, 2));
    for (i, &l) in labels.iter().enumerate() {
        let shift = if l == 1 { 0.5 } else { -0.5 } * separation;
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x[(i, 0)] = a + shift;
        x[(i, 1)] = b;
    }
    let mut ds = Dataset::new("synthetic-binary", x, labels, 2)?;
    ds.class_names = vec!["0".into(), "1".into()];
    Ok(ds)
}

/// Multi-class Gaussian data: class centroids are drawn with spread
/// `separation` in the first `informative` dimensions, and the remaining
/// dimensions are pure noise. Classes are balanced up to one row.
pub fn synthetic_classification(
    n: usize,
    n_features: usize,
    informative: usize,
    n_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::DatasetTooSmall(n));
    }
    if n_classes < 2 || informative == 0 || informative > n_features {
        return Err(Error::Config(format!(
            "need n_classes >= 2 and 1 <= informative ({informative}) <= n_features ({n_features})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = Normal::new(0.0, separation).map_err(|e| Error::Config(e.to_string()))?;
    let centroids: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..informative).map(|_| spread.sample(&mut rng)).collect())
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);
    let mut x = Matrix::zeros((n, n_features));
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..n_features {
            let noise: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = noise
                + if j < informative {
                    centroids[l][j]
                } else {
                    0.0
                };
        }
    }
    Dataset::new("synthetic-classification", x, labels, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_small_csv() {
        let f = write_temp("a,b,cls\n1,2,yes\n3,?,no\n5,6,no\n7,8,yes\n");
        let ds = load_csv(f.path(), &LabelColumn::Name("cls".into()), true).unwrap();
        assert_eq!(ds.n_samples(), 3);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.class_names, vec!["yes", "no"]);
        assert_eq!(ds.x.row(1).to_vec(), vec![5.0, 6.0]);
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        let again = load_csv(f.path(), &LabelColumn::Index(2), true).unwrap();
        assert_eq!(again.x, ds.x);
    }

    #[test]
    fn load_errors() {
        let f = write_temp("a,cls\n1,x\n");
        assert_eq!(
            load_csv(f.path(), &LabelColumn::Name("cls".into()), true),
            Err(Error::DatasetTooSmall(1))
        );
        let f = write_temp("a,cls\n1,x\n2,y\n");
        assert!(matches!(
            load_csv(f.path(), &LabelColumn::Name("label".into()), true),
            Err(Error::MissingLabelColumn(_))
        ));
        let f = write_temp("a,cls\n1,x\nbad,y\n");
        assert_eq!(
            load_csv(f.path(), &LabelColumn::Index(1), true).unwrap_err(),
            Error::Parse {
                row: 3,
                column: 1,
                message: "\"bad\": invalid float literal".into()
            }
        );
    }

    #[test]
    fn nominal_features_and_no_header() {
        let f = write_temp("red,1.5,a\nblue,2.5,b\nred,0.5,a\n");
        let ds = load_csv(f.path(), &LabelColumn::Index(2), false).unwrap();
        assert_eq!(
            ds.feature_kinds,
            vec![FeatureKind::Nominal, FeatureKind::Numeric]
        );
        assert_eq!(ds.x.column(0).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn one_hot_examples() {
        let y = one_hot(&[0, 2, 1], 3).unwrap();
        assert_eq!(
            y,
            ndarray::array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
        );
        assert_eq!(argmax_rows(&y), vec![0, 2, 1]);
        assert_eq!(y.sum_axis(Axis(0)).to_vec(), vec![1.0, 1.0, 1.0]);
        assert_eq!(
            one_hot(&[0, 3], 3),
            Err(Error::OutOfRangeLabel {
                label: 3,
                classes: 3
            })
        );
    }

    #[test]
    fn kfold_partitions() {
        let folds = kfold_split(150, 10, 1, None).unwrap();
        assert!(folds.iter().all(|f| f.len() == 15));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..150).collect::<Vec<_>>());
        assert_eq!(folds, kfold_split(150, 10, 1, None).unwrap());
        let loo = kfold_split(7, 7, 3, None).unwrap();
        assert!(loo.iter().all(|f| f.len() == 1));
        assert_eq!(
            kfold_split(3, 4, 0, None),
            Err(Error::KTooLarge { k: 4, n: 3 })
        );
        let (train, test) = train_test_indices(&folds, 0);
        assert_eq!(train.len() + test.len(), 150);
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let labels: Vec<usize> = (0..103).map(|i| if i < 70 { 0 } else { 1 }).collect();
        let folds = kfold_split(103, 10, 5, Some(&labels)).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for class in 0..2 {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
                .collect();
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let x = ndarray::array![[1.0, 9.0], [3.0, 9.0]];
        let s = Standardizer::fit(&x).unwrap();
        let z = s.transform(&x).unwrap();
        assert_eq!(z, ndarray::array![[-1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn synthetic_binary_counts() {
        let ds = synthetic_binary(100, 0.5, 2.0, 0).unwrap();
        assert_eq!(ds.class_counts(), vec![50, 50]);
        let ds = synthetic_binary(10, 0.33, 2.0, 0).unwrap();
        assert_eq!(ds.class_counts()[1], 3);
        assert_eq!(
            synthetic_binary(10, 0.0, 1.0, 0),
            Err(Error::DegenerateAlpha(0.0))
        );
        assert!(matches!(
            synthetic_binary(10, 0.01, 1.0, 0),
            Err(Error::DegenerateAlpha(_))
        ));
    }

    #[test]
    fn synthetic_classification_shape() {
        let ds = synthetic_classification(200, 30, 10, 4, 1.5, 2).unwrap();
        assert_eq!(ds.x.dim(), (200, 30));
        assert_eq!(ds.class_counts(), vec![50; 4]);
    }
}

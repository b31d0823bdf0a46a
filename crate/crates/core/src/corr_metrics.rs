//! Pearson correlations between label vectors and the truth/learner
//! correlation matrix.
//!
//! Index 0 of a [`CorrelationMatrix`] is always the ground truth; indices
//! `1..=N` are the learners. Correlations here are strict: a constant vector
//! is an error, never a silent zero.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for the eigenvalue test in [`is_valid_correlation_matrix`].
pub const PSD_TOLERANCE: f64 = 1e-9;

/// A prediction or ground-truth vector over `n >= 2` instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector(Vec<f64>);

impl LabelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooShort(values.len()));
        }
        Ok(Self(values))
    }

    /// Builds a hard-label vector; every entry must be exactly 0 or 1.
    pub fn hard(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::OutOfRange {
                name: "hard label",
                value: *bad,
                lower: 0.0,
                upper: 1.0,
            });
        }
        Self::new(values)
    }

    pub fn from_labels(labels: &[usize], positive: usize) -> Result<Self> {
        Self::new(
            labels
                .iter()
                .map(|&l| if l == positive { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for LabelVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Population (n-normalized) mean and centered second moment.
fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Pearson product-moment correlation of two equal-length vectors.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooShort(x.len()));
    }
    let (mx, vx) = moments(x);
    let (my, vy) = moments(y);
    // Relative test so that large-magnitude constant vectors are still caught.
    let scale_x = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let scale_y = y.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if vx <= 1e-28 * scale_x * scale_x || vy <= 1e-28 * scale_y * scale_y {
        return Err(Error::ConstantVector);
    }
    let n = x.len() as f64;
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / n;
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// Symmetric `(N+1) x (N+1)` correlation matrix of truth plus `N` learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CorrelationMatrix {
    entries: DMatrix<f64>,
}

impl CorrelationMatrix {
    /// Wraps a square matrix given as rows. Symmetry and definiteness are
    /// checked separately by [`is_valid_correlation_matrix`].
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::NotSquare);
        }
        Ok(Self {
            entries: DMatrix::from_fn(dim, dim, |i, j| rows[i][j]),
        })
    }

    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.nrows() != entries.ncols() {
            return Err(Error::NotSquare);
        }
        Ok(Self { entries })
    }

    /// Matrix with every truth-learner entry `r_tl` and every learner-learner
    /// entry `r_ll`, as drawn in the three-learner illustrations.
    pub fn equicorrelated(n_learners: usize, r_tl: f64, r_ll: f64) -> Self {
        let dim = n_learners + 1;
        let entries = DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                1.0
            } else if i == 0 || j == 0 {
                r_tl
            } else {
                r_ll
            }
        });
        Self { entries }
    }

    /// Number of learners `N` (dimension minus the truth row).
    pub fn n_learners(&self) -> usize {
        self.entries.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.entries[(i, j)]).collect())
            .collect()
    }

    /// Smallest eigenvalue of the (symmetrized) matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.entries + self.entries.transpose()) * 0.5;
        SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

impl TryFrom<Vec<Vec<f64>>> for CorrelationMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<CorrelationMatrix> for Vec<Vec<f64>> {
    fn from(m: CorrelationMatrix) -> Self {
        m.to_rows()
    }
}

/// Ensemble size plus the averaged truth-learner and learner-learner
/// correlations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub n_learners: usize,
    pub r_tl_ave: f64,
    pub r_ll_ave: f64,
}

/// Pairwise correlations of the truth and every learner.
pub fn build_correlation_matrix<V: AsRef<[f64]>>(
    truth: &[f64],
    learners: &[V],
) -> Result<CorrelationMatrix> {
    let mut vectors: Vec<&[f64]> = Vec::with_capacity(learners.len() + 1);
    vectors.push(truth);
    vectors.extend(learners.iter().map(|l| l.as_ref()));
    let dim = vectors.len();
    let mut entries = DMatrix::identity(dim, dim);
    for i in 0..dim {
        for j in (i + 1)..dim {
            let r = pearson(vectors[i], vectors[j])?;
            entries[(i, j)] = r;
            entries[(j, i)] = r;
        }
    }
    // A single learner still needs its own variance checked.
    if dim == 1 {
        pearson(truth, truth)?;
    }
    Ok(CorrelationMatrix { entries })
}

/// Averages row 0 (truth-learner) and the strict upper learner block.
pub fn summarize(matrix: &CorrelationMatrix) -> Result<CorrelationSummary> {
    let n = matrix.n_learners();
    if n < 2 {
        return Err(Error::TooFewLearners(n));
    }
    let r_tl_ave = (1..=n).map(|i| matrix.get(0, i)).sum::<f64>() / n as f64;
    let mut ll = 0.0;
    for i in 1..=n {
        for j in (i + 1)..=n {
            ll += matrix.get(i, j);
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(CorrelationSummary {
        n_learners: n,
        r_tl_ave,
        r_ll_ave: ll / pairs,
    })
}

/// True iff the matrix is a legitimate correlation matrix: unit diagonal,
/// entries in `[-1, 1]`, and minimum eigenvalue `>= -tol`.
pub fn is_valid_correlation_matrix(matrix: &CorrelationMatrix, tol: f64) -> Result<bool> {
    let m = matrix.matrix();
    let dim = matrix.dim();
    for i in 0..dim {
        for j in (i + 1)..dim {
            let diff = (m[(i, j)] - m[(j, i)]).abs();
            if diff > 1e-12_f64.max(tol) {
                return Err(Error::NotSymmetric {
                    row: i,
                    col: j,
                    diff,
                });
            }
        }
    }
    let entries_ok = (0..dim).all(|i| {
        (m[(i, i)] - 1.0).abs() <= tol.max(1e-12)
            && (0..dim).all(|j| m[(i, j)].abs() <= 1.0 + tol.max(1e-12))
    });
    Ok(entries_ok && matrix.min_eigenvalue() >= -tol)
}

/// Truth-vs-learner summary straight from prediction vectors.
pub fn summarize_predictions<V: AsRef<[f64]>>(
    truth: &[f64],
    learners: &[V],
) -> Result<CorrelationSummary> {
    summarize(&build_correlation_matrix(truth, learners)?)
}

/// Summary over the learners whose vectors are not constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub summary: CorrelationSummary,
    /// Learner indices left out because their prediction vector was constant.
    pub excluded: Vec<usize>,
}

/// Class labels as a correlation vector: the class-1 indicator when there
/// are two classes, otherwise the row-major flattened one-hot matrix.
pub fn encode_labels(labels: &[usize], n_classes: usize) -> Vec<f64> {
    if n_classes == 2 {
        return labels.iter().map(|&l| (l == 1) as u8 as f64).collect();
    }
    let mut out = vec![0.0; labels.len() * n_classes];
    for (i, &l) in labels.iter().enumerate() {
        out[i * n_classes + l] = 1.0;
    }
    out
}

/// Like [`summarize_predictions`], but constant learners are dropped with a
/// warning instead of failing the whole summary.
pub fn summarize_nonconstant<V: AsRef<[f64]>>(
    truth: &[f64],
    learners: &[V],
) -> Result<LabelSummary> {
    let mut kept = Vec::with_capacity(learners.len());
    let mut excluded = Vec::new();
    for (i, l) in learners.iter().enumerate() {
        let l = l.as_ref();
        if l.len() != truth.len() {
            return Err(Error::LengthMismatch {
                left: truth.len(),
                right: l.len(),
            });
        }
        if l.iter().all(|v| *v == l[0]) {
            excluded.push(i);
        } else {
            kept.push(l);
        }
    }
    if !excluded.is_empty() {
        log::warn!(
            "excluded {} constant learner(s) from the summary",
            excluded.len()
        );
    }
    Ok(LabelSummary {
        summary: summarize_predictions(truth, &kept)?,
        excluded,
    })
}

/// Hard-label summary of class predictions, encoded with [`encode_labels`].
pub fn class_label_summary(
    truth: &[usize],
    predictions: &[Vec<usize>],
    n_classes: usize,
) -> Result<LabelSummary> {
    let t = encode_labels(truth, n_classes);
    let ls: Vec<Vec<f64>> = predictions
        .iter()
        .map(|p| encode_labels(p, n_classes))
        .collect();
    summarize_nonconstant(&t, &ls)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    pearson(&ranks(x), &ranks(y))
}

//! CART classification trees and small forests for diversity studies.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corr_metrics::{class_label_summary, spearman, CorrelationSummary};
use crate::datasets::Matrix;
use crate::derive_seed;
use crate::diverse_train::{error_rate, majority_vote};
use crate::error::{Error, Result};
use crate::theory_bounds::optimality_gap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        class: usize,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
    n_classes: usize,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    n_classes: usize,
    max_depth: Option<usize>,
    features: Vec<usize>,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &r in rows {
            c[self.y[r]] += 1;
        }
        c
    }

    /// Lowest weighted Gini split; ties keep the earliest feature and the
    /// smallest threshold.
    fn best_split(&self, rows: &[usize], counts: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        for &f in &self.features {
            sorted.sort_by(|&a, &b| self.x[(a, f)].total_cmp(&self.x[(b, f)]));
            let mut left = vec![0usize; self.n_classes];
            let mut right = counts.to_vec();
            for p in 0..n - 1 {
                let label = self.y[sorted[p]];
                left[label] += 1;
                right[label] -= 1;
                let (a, b) = (self.x[(sorted[p], f)], self.x[(sorted[p + 1], f)]);
                if a == b {
                    continue;
                }
                let nl = p + 1;
                let score = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl))
                    / n as f64;
                if best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, f, 0.5 * (a + b)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            class: majority(&counts),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let capped = self.max_depth.is_some_and(|d| depth >= d);
        if pure || capped || rows.len() < 2 {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows, &counts) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| self.x[(i, feature)] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Greedy CART on the given rows. Splitting stops at pure nodes, at
/// `max_depth`, below two rows, or when no feature separates the rows.
/// Only columns in `feature_subset` (all when `None`) are considered.
pub fn train_tree(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    max_depth: Option<usize>,
    feature_subset: Option<&[usize]>,
) -> Result<DecisionTree> {
    if y.is_empty() || x.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    if x.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows for {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::OutOfRangeLabel {
            label,
            classes: n_classes,
        });
    }
    let features = match feature_subset {
        Some(f) => {
            if let Some(&bad) = f.iter().find(|&&j| j >= x.ncols()) {
                return Err(Error::TooManyFeatures {
                    requested: bad + 1,
                    available: x.ncols(),
                });
            }
            f.to_vec()
        }
        None => (0..x.ncols()).collect(),
    };
    let mut b = Builder {
        x,
        y,
        n_classes,
        max_depth,
        features,
        nodes: Vec::new(),
    };
    b.grow((0..y.len()).collect(), 0);
    Ok(DecisionTree {
        nodes: b.nodes,
        n_classes,
    })
}

impl DecisionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { class } => return *class,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        x.rows()
            .into_iter()
            .map(|r| self.predict_row(&r.to_vec()))
            .collect()
    }

    /// Longest root-to-leaf edge count.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Features used by split nodes.
    pub fn split_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum ForestVariant {
    /// Bootstrap resamples, all features, unlimited depth.
    Original,
    /// Each tree sees a fixed random subset of this many features.
    Feature(usize),
    /// Trees are capped at this depth.
    Depth(usize),
}

impl std::fmt::Display for ForestVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ForestVariant::Original => write!(f, "original"),
            ForestVariant::Feature(m) => write!(f, "feature m={m}"),
            ForestVariant::Depth(d) => write!(f, "depth d={d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub variant: ForestVariant,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestConfig {
    pub fn new(variant: ForestVariant, seed: u64) -> Self {
        Self {
            n_trees: 5,
            variant,
            bootstrap: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    /// Feature subset of each tree (all features unless the variant
    /// restricts them).
    pub feature_sets: Vec<Vec<usize>>,
    pub n_classes: usize,
}

impl Forest {
    pub fn tree_predictions(&self, x: &Matrix) -> Vec<Vec<usize>> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }

    /// Plurality vote with lowest-class tie-break.
    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        majority_vote(&self.tree_predictions(x), self.n_classes)
    }
}

/// Trains `n_trees` trees independently; tree `t` uses the stream
/// `derive_seed(seed, t)` for its resample and feature subset.
pub fn train_forest(
    config: &ForestConfig,
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
) -> Result<Forest> {
    if config.n_trees == 0 {
        return Err(Error::Config("n_trees: must be >= 1".into()));
    }
    if config.variant == ForestVariant::Original && !config.bootstrap {
        return Err(Error::Config(
            "bootstrap: the original variant always resamples".into(),
        ));
    }
    let q = x.ncols();
    let (subset_size, max_depth) = match config.variant {
        ForestVariant::Original => (None, None),
        ForestVariant::Feature(m) => {
            if m == 0 || m > q {
                return Err(Error::TooManyFeatures {
                    requested: m,
                    available: q,
                });
            }
            (Some(m), None)
        }
        ForestVariant::Depth(d) => (None, Some(d)),
    };
    if y.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = y.len();
    let fitted: Vec<(DecisionTree, Vec<usize>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, t as u64));
            let features: Vec<usize> = match subset_size {
                Some(m) => {
                    let mut f = sample(&mut rng, q, m).into_vec();
                    f.sort_unstable();
                    f
                }
                None => (0..q).collect(),
            };
            let tree = if config.bootstrap {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let xb = x.select(ndarray::Axis(0), &rows);
                let yb: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
                train_tree(&xb, &yb, n_classes, max_depth, Some(&features))?
            } else {
                train_tree(x, y, n_classes, max_depth, Some(&features))?
            };
            Ok((tree, features))
        })
        .collect::<Result<_>>()?;
    let (trees, feature_sets) = fitted.into_iter().unzip();
    Ok(Forest {
        trees,
        feature_sets,
        n_classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestReport {
    pub summary: CorrelationSummary,
    /// Trees left out of the summary because their predictions were constant.
    pub excluded: Vec<usize>,
    pub majority_accuracy: f64,
    pub tree_accuracies: Vec<f64>,
}

/// Correlation summary of per-tree hard predictions against `y` plus the
/// forest's majority-vote accuracy.
pub fn forest_diversity_report(forest: &Forest, x: &Matrix, y: &[usize]) -> Result<ForestReport> {
    let preds = forest.tree_predictions(x);
    let labelled = class_label_summary(y, &preds, forest.n_classes)?;
    let vote = majority_vote(&preds, forest.n_classes);
    Ok(ForestReport {
        summary: labelled.summary,
        excluded: labelled.excluded,
        majority_accuracy: 1.0 - error_rate(&vote, y),
        tree_accuracies: preds.iter().map(|p| 1.0 - error_rate(p, y)).collect(),
    })
}

/// One forest in the variant study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub label: String,
    /// Trees left after dropping constant predictors.
    pub n_learners: usize,
    pub r_ll_ave: f64,
    pub r_tl_ave: f64,
    pub majority_accuracy: f64,
    pub optimality_gap: f64,
}

impl StudyRow {
    pub fn summary(&self) -> CorrelationSummary {
        CorrelationSummary {
            n_learners: self.n_learners,
            r_tl_ave: self.r_tl_ave,
            r_ll_ave: self.r_ll_ave,
        }
    }
}

pub const DEFAULT_FEATURE_GRID: [usize; 5] = [1, 3, 5, 7, 20];
pub const DEFAULT_DEPTH_GRID: [usize; 5] = [3, 5, 7, 9, 11];

/// Trains the original forest plus one forest per feature-subset size and
/// per depth cap on `(x_train, y_train)`, and reports each on
/// `(x_eval, y_eval)`.
#[allow(clippy::too_many_arguments)]
pub fn rf_study(
    x_train: &Matrix,
    y_train: &[usize],
    x_eval: &Matrix,
    y_eval: &[usize],
    n_classes: usize,
    feature_grid: &[usize],
    depth_grid: &[usize],
    seed: u64,
) -> Result<Vec<StudyRow>> {
    let variants = std::iter::once(ForestVariant::Original)
        .chain(feature_grid.iter().map(|&m| ForestVariant::Feature(m)))
        .chain(depth_grid.iter().map(|&d| ForestVariant::Depth(d)));
    variants
        .enumerate()
        .map(|(i, variant)| {
            let config = ForestConfig::new(variant, derive_seed(seed, i as u64));
            let forest = train_forest(&config, x_train, y_train, n_classes)?;
            let report = forest_diversity_report(&forest, x_eval, y_eval)?;
            Ok(StudyRow {
                label: variant.to_string(),
                n_learners: report.summary.n_learners,
                r_ll_ave: report.summary.r_ll_ave,
                r_tl_ave: report.summary.r_tl_ave,
                majority_accuracy: report.majority_accuracy,
                optimality_gap: optimality_gap(&report.summary)?,
            })
        })
        .collect()
}

/// Rank correlation between optimality gap and majority accuracy.
pub fn gap_accuracy_spearman(rows: &[StudyRow]) -> Result<f64> {
    let gaps: Vec<f64> = rows.iter().map(|r| r.optimality_gap).collect();
    let acc: Vec<f64> = rows.iter().map(|r| r.majority_accuracy).collect();
    spearman(&gaps, &acc)
}

pub fn write_study_csv<W: std::io::Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

//! Correlation-loss training of MLP ensembles.
//!
//! The loss is `-(r_TL - lambda * r_LL)` where both terms are plain sums of
//! column-wise Pearson correlations: `r_TL` over every (class, member) pair
//! and `r_LL` over every (class, member pair). The analysis layer reports
//! averages instead, so a given `lambda` here is not comparable with a
//! weight on averaged correlations: the sums scale by `N m` and
//! `m N (N - 1) / 2` respectively.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corr_metrics::{
    class_label_summary, encode_labels, summarize_nonconstant, CorrelationSummary,
};
use crate::datasets::{
    argmax_rows, kfold_split, one_hot, train_test_indices, Dataset, Matrix, Standardizer,
};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::neural::{Graph, MlpNetwork, NodeId};

/// How member outputs become one ensemble label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    /// Argmax of the row-wise mean of member softmax outputs.
    #[default]
    Avg,
    /// Plurality of member argmax labels; ties go to the lowest class.
    Vote,
}

impl std::str::FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Combiner::Avg),
            "vote" => Ok(Combiner::Vote),
            other => Err(Error::Config(format!(
                "combiner must be avg or vote, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub ensemble_size: usize,
    pub lambda: f64,
    /// Correlation-loss epochs.
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Cross-entropy epochs run on each member before the correlation loss.
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub combiner: Combiner,
    pub standardize: bool,
    pub stratify: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 15,
            lambda: 0.9,
            epochs: 10,
            learning_rate: 0.05,
            seed: 0,
            hidden: vec![16],
            pretrain_epochs: 0,
            pretrain_learning_rate: 0.5,
            combiner: Combiner::Avg,
            standardize: true,
            stratify: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.ensemble_size < 2 {
            return bad(
                "ensemble_size",
                format!("must be >= 2, got {}", self.ensemble_size),
            );
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda", format!("must be > 0, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(
                "learning_rate",
                format!("must be > 0, got {}", self.learning_rate),
            );
        }
        if !(self.pretrain_learning_rate > 0.0 && self.pretrain_learning_rate.is_finite()) {
            return bad(
                "pretrain_learning_rate",
                format!("must be > 0, got {}", self.pretrain_learning_rate),
            );
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "layer widths must be positive".into());
        }
        Ok(())
    }

    fn layer_sizes(&self, inputs: usize, classes: usize) -> Vec<usize> {
        let mut sizes = vec![inputs];
        sizes.extend(&self.hidden);
        sizes.push(classes);
        sizes
    }
}

/// Loss node plus its two correlation sums.
#[derive(Debug, Clone)]
pub struct CorrelationLoss {
    pub loss: NodeId,
    pub r_tl: NodeId,
    pub r_ll: NodeId,
    /// Truth columns skipped because they were constant.
    pub skipped_columns: Vec<usize>,
}

/// Builds `-(r_TL - lambda r_LL)` on the graph from member softmax outputs
/// and the one-hot truth `y`. Constant truth columns (classes absent from
/// `y`) are left out of `r_TL` with a warning.
pub fn correlation_loss(
    g: &mut Graph,
    outputs: &[NodeId],
    y: NodeId,
    lambda: f64,
) -> Result<CorrelationLoss> {
    if outputs.is_empty() {
        return Err(Error::TooFewLearners(0));
    }
    let shape = g.value(y).dim();
    for &o in outputs {
        if g.value(o).dim() != shape {
            return Err(Error::ShapeMismatch(format!(
                "output {:?} vs truth {:?}",
                g.value(o).dim(),
                shape
            )));
        }
    }
    let m = shape.1;
    let mut skipped = Vec::new();
    let mut truth_cols = Vec::with_capacity(m);
    for k in 0..m {
        let col = g.value(y).column(k);
        if col.iter().all(|&v| v == col[0]) {
            skipped.push(k);
            truth_cols.push(None);
        } else {
            truth_cols.push(Some(g.column(y, k)?));
        }
    }
    if skipped.len() == m {
        return Err(Error::ConstantTruthColumn(0));
    }
    if !skipped.is_empty() {
        log::warn!("truth columns {skipped:?} are constant and left out of r_TL");
    }
    let cols: Vec<Vec<NodeId>> = outputs
        .iter()
        .map(|&o| (0..m).map(|k| g.column(o, k)).collect::<Result<_>>())
        .collect::<Result<_>>()?;

    let mut tl_terms = Vec::with_capacity(m * outputs.len());
    let mut ll_terms = Vec::new();
    for k in 0..m {
        for (i, member) in cols.iter().enumerate() {
            if let Some(t) = truth_cols[k] {
                tl_terms.push(g.pearson(t, member[k])?);
            }
            for other in &cols[i + 1..] {
                ll_terms.push(g.pearson(member[k], other[k])?);
            }
        }
    }
    let r_tl = g.sum_scalars(&tl_terms)?;
    let r_ll = g.sum_scalars(&ll_terms)?;
    let neg_tl = g.scale(r_tl, -1.0);
    let weighted_ll = g.scale(r_ll, lambda);
    let loss = g.add(neg_tl, weighted_ll)?;
    Ok(CorrelationLoss {
        loss,
        r_tl,
        r_ll,
        skipped_columns: skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<MlpNetwork>,
    pub combiner: Combiner,
}

impl EnsembleModel {
    /// Row-wise mean of member softmax outputs.
    pub fn average_probabilities(&self, x: &Matrix) -> Result<Matrix> {
        let first = self.members.first().ok_or(Error::TooFewLearners(0))?;
        let mut acc = first.forward_softmax(x)?;
        for m in &self.members[1..] {
            acc += &m.forward_softmax(x)?;
        }
        acc /= self.members.len() as f64;
        Ok(acc)
    }

    pub fn member_predictions(&self, x: &Matrix) -> Result<Vec<Vec<usize>>> {
        self.members
            .iter()
            .map(|m| m.forward_softmax(x).map(|p| argmax_rows(&p)))
            .collect()
    }

    pub fn n_classes(&self) -> usize {
        self.members.first().map_or(0, |m| m.output_width())
    }
}

/// Ensemble labels under the model's combiner.
pub fn predict(ensemble: &EnsembleModel, x: &Matrix) -> Result<Vec<usize>> {
    match ensemble.combiner {
        Combiner::Avg => Ok(argmax_rows(&ensemble.average_probabilities(x)?)),
        Combiner::Vote => {
            let preds = ensemble.member_predictions(x)?;
            Ok(majority_vote(&preds, ensemble.n_classes()))
        }
    }
}

/// Plurality vote per row over member label vectors; ties go to the lowest
/// class index.
pub fn majority_vote(predictions: &[Vec<usize>], n_classes: usize) -> Vec<usize> {
    let n = predictions.first().map_or(0, Vec::len);
    let mut counts = vec![0usize; n_classes];
    (0..n)
        .map(|i| {
            counts.fill(0);
            for p in predictions {
                counts[p[i]] += 1;
            }
            let mut best = 0;
            for (k, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn error_rate(predicted: &[usize], truth: &[usize]) -> f64 {
    let wrong = predicted.iter().zip(truth).filter(|(a, b)| a != b).count();
    wrong as f64 / truth.len().max(1) as f64
}

/// Full-batch cross-entropy SGD on one network.
pub fn fit_cross_entropy(
    net: &mut MlpNetwork,
    x: &Matrix,
    labels: &[usize],
    epochs: usize,
    learning_rate: f64,
) -> Result<()> {
    for _ in 0..epochs {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let bound = net.bind(&mut g);
        let logits = net.forward_logits(&mut g, &bound, xn)?;
        let loss = g.cross_entropy(logits, labels)?;
        let grads = g.backward(loss)?;
        net.zero_grad();
        net.accumulate_grads(&bound, &grads);
        net.sgd_step(learning_rate);
    }
    Ok(())
}

/// State of the ensemble after `epoch` correlation-loss steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    /// Loss terms; absent for ensembles not trained with the correlation loss.
    pub loss: Option<f64>,
    pub r_tl_sum: Option<f64>,
    pub r_ll_sum: Option<f64>,
    /// Hard-label summary on the training rows.
    pub hard: Option<CorrelationSummary>,
    /// Summary of the softmax outputs on the training rows.
    pub soft: Option<CorrelationSummary>,
}

#[derive(Debug, Clone)]
pub struct TrainedEnsemble {
    pub model: EnsembleModel,
    pub trace: Vec<TraceRow>,
}

/// Correlation vector for soft outputs: class-1 probability for two
/// classes, the flattened probability matrix otherwise.
fn encode_probabilities(p: &Matrix) -> Vec<f64> {
    if p.ncols() == 2 {
        p.column(1).to_vec()
    } else {
        p.iter().copied().collect()
    }
}

pub(crate) fn hard_summary(
    labels: &[usize],
    predictions: &[Vec<usize>],
    n_classes: usize,
) -> Option<CorrelationSummary> {
    class_label_summary(labels, predictions, n_classes)
        .ok()
        .map(|s| s.summary)
}

fn trace_row(
    g: &Graph,
    outputs: &[NodeId],
    parts: &CorrelationLoss,
    labels: &[usize],
    n_classes: usize,
    epoch: usize,
) -> TraceRow {
    let preds: Vec<Vec<usize>> = outputs.iter().map(|&o| argmax_rows(g.value(o))).collect();
    let truth = encode_labels(labels, n_classes);
    let soft: Vec<Vec<f64>> = outputs
        .iter()
        .map(|&o| encode_probabilities(g.value(o)))
        .collect();
    TraceRow {
        epoch,
        loss: Some(g.scalar(parts.loss)),
        r_tl_sum: Some(g.scalar(parts.r_tl)),
        r_ll_sum: Some(g.scalar(parts.r_ll)),
        hard: hard_summary(labels, &preds, n_classes),
        soft: summarize_nonconstant(&truth, &soft).ok().map(|s| s.summary),
    }
}

/// Trains an ensemble on `(x, labels)`.
///
/// Without `initial` members, fresh networks are seeded per member index and,
/// if `pretrain_epochs > 0`, fitted with cross-entropy first. Then each of
/// `epochs` iterations runs zero-grad, forward of all members, loss,
/// backward and one SGD step. The trace has `epochs + 1` rows: the state
/// before training and after every step.
pub fn train_ensemble(
    config: &TrainingConfig,
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    initial: Option<Vec<MlpNetwork>>,
) -> Result<TrainedEnsemble> {
    config.validate()?;
    if x.nrows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows for {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::EmptyTraining(x.nrows()));
    }
    let y = one_hot(labels, n_classes)?;
    let sizes = config.layer_sizes(x.ncols(), n_classes);
    let mut members = match initial {
        Some(members) => {
            if members.len() != config.ensemble_size {
                return Err(Error::Config(format!(
                    "ensemble_size is {} but {} initial members were given",
                    config.ensemble_size,
                    members.len()
                )));
            }
            if let Some(bad) = members
                .iter()
                .find(|m| m.input_width() != x.ncols() || m.output_width() != n_classes)
            {
                return Err(Error::ShapeMismatch(format!(
                    "initial member is {:?}, data needs {} inputs and {n_classes} outputs",
                    bad.layer_sizes(),
                    x.ncols()
                )));
            }
            members
        }
        None => {
            let mut members = Vec::with_capacity(config.ensemble_size);
            for i in 0..config.ensemble_size {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i as u64));
                let mut net = MlpNetwork::new(&sizes, &mut rng)?;
                fit_cross_entropy(
                    &mut net,
                    x,
                    labels,
                    config.pretrain_epochs,
                    config.pretrain_learning_rate,
                )?;
                members.push(net);
            }
            members
        }
    };

    let mut trace = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..=config.epochs {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let yn = g.constant(y.clone());
        let mut bound = Vec::with_capacity(members.len());
        let mut outputs = Vec::with_capacity(members.len());
        for m in &members {
            let b = m.bind(&mut g);
            outputs.push(m.forward_softmax_node(&mut g, &b, xn)?);
            bound.push(b);
        }
        let parts = correlation_loss(&mut g, &outputs, yn, config.lambda)?;
        trace.push(trace_row(&g, &outputs, &parts, labels, n_classes, epoch));
        if epoch == config.epochs {
            break;
        }
        let grads = g.backward(parts.loss)?;
        for (m, b) in members.iter_mut().zip(&bound) {
            m.zero_grad();
            m.accumulate_grads(b, &grads);
            m.sgd_step(config.learning_rate);
        }
    }
    Ok(TrainedEnsemble {
        model: EnsembleModel {
            members,
            combiner: config.combiner,
        },
        trace,
    })
}

/// Outcome of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub error: f64,
    pub member_errors: Vec<f64>,
    pub ensemble_size: usize,
    /// Hard-label summary of the final ensemble on the training rows.
    pub train_summary: Option<CorrelationSummary>,
    /// Hard-label summary of the final ensemble on the test rows.
    pub test_summary: Option<CorrelationSummary>,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: String,
    pub dataset: String,
    pub config: serde_json::Value,
    pub folds: usize,
    pub seed: u64,
    pub fold_errors: Vec<f64>,
    pub mean_error: f64,
    pub fold_results: Vec<FoldResult>,
    /// Seconds since the Unix epoch; set by the caller, ignored when
    /// comparing runs.
    #[serde(default)]
    pub created_unix: u64,
}

impl ExperimentResult {
    pub fn new(
        method: &str,
        dataset: &str,
        config: serde_json::Value,
        seed: u64,
        fold_results: Vec<FoldResult>,
    ) -> Self {
        let fold_errors: Vec<f64> = fold_results.iter().map(|f| f.error).collect();
        let mean_error = fold_errors.iter().sum::<f64>() / fold_errors.len().max(1) as f64;
        Self {
            method: method.to_string(),
            dataset: dataset.to_string(),
            config,
            folds: fold_results.len(),
            seed,
            fold_errors,
            mean_error,
            fold_results,
            created_unix: 0,
        }
    }

    /// Mean over folds of the final training-set hard summaries. Folds
    /// without a summary (fewer than two non-constant members) are skipped.
    pub fn mean_train_summary(&self) -> Option<CorrelationSummary> {
        mean_summary(
            self.fold_results
                .iter()
                .filter_map(|f| f.train_summary.as_ref()),
        )
    }

    pub fn mean_test_summary(&self) -> Option<CorrelationSummary> {
        mean_summary(
            self.fold_results
                .iter()
                .filter_map(|f| f.test_summary.as_ref()),
        )
    }
}

/// Component-wise mean; `n_learners` is the rounded mean learner count.
fn mean_summary<'a>(
    items: impl Iterator<Item = &'a CorrelationSummary>,
) -> Option<CorrelationSummary> {
    let items: Vec<&CorrelationSummary> = items.collect();
    if items.is_empty() {
        return None;
    }
    let k = items.len() as f64;
    Some(CorrelationSummary {
        n_learners: (items.iter().map(|s| s.n_learners as f64).sum::<f64>() / k).round() as usize,
        r_tl_ave: items.iter().map(|s| s.r_tl_ave).sum::<f64>() / k,
        r_ll_ave: items.iter().map(|s| s.r_ll_ave).sum::<f64>() / k,
    })
}

/// Training and test rows of one fold, standardized with training
/// statistics when asked.
pub struct FoldData {
    pub fold: usize,
    pub x_train: Matrix,
    pub y_train: Vec<usize>,
    pub x_test: Matrix,
    pub y_test: Vec<usize>,
}

/// Splits `dataset` into `k` folds and runs `fit` on each, in parallel.
/// Results come back in fold order.
pub fn cross_validate<F>(
    dataset: &Dataset,
    k: usize,
    seed: u64,
    stratify: bool,
    standardize: bool,
    fit: F,
) -> Result<Vec<FoldResult>>
where
    F: Fn(&FoldData) -> Result<FoldResult> + Sync,
{
    if k < 2 {
        return Err(Error::Config(format!("folds must be at least 2, got {k}")));
    }
    let strat = stratify.then_some(dataset.labels.as_slice());
    let folds = kfold_split(dataset.n_samples(), k, seed, strat)?;
    (0..k)
        .into_par_iter()
        .map(|i| {
            let (train_idx, test_idx) = train_test_indices(&folds, i);
            let train = dataset.subset(&train_idx);
            let test = dataset.subset(&test_idx);
            let (x_train, x_test) = if standardize {
                let s = Standardizer::fit(&train.x)?;
                (s.transform(&train.x)?, s.transform(&test.x)?)
            } else {
                (train.x, test.x)
            };
            fit(&FoldData {
                fold: i,
                x_train,
                y_train: train.labels,
                x_test,
                y_test: test.labels,
            })
        })
        .collect()
}

/// Scores a trained ensemble on one fold.
pub fn score_fold(
    data: &FoldData,
    model: &EnsembleModel,
    trace: Vec<TraceRow>,
) -> Result<FoldResult> {
    let m = model.n_classes();
    let predicted = predict(model, &data.x_test)?;
    let test_preds = model.member_predictions(&data.x_test)?;
    let train_preds = model.member_predictions(&data.x_train)?;
    Ok(FoldResult {
        fold: data.fold,
        n_train: data.y_train.len(),
        n_test: data.y_test.len(),
        error: error_rate(&predicted, &data.y_test),
        member_errors: test_preds
            .iter()
            .map(|p| error_rate(p, &data.y_test))
            .collect(),
        ensemble_size: model.members.len(),
        train_summary: hard_summary(&data.y_train, &train_preds, m),
        test_summary: hard_summary(&data.y_test, &test_preds, m),
        trace,
    })
}

/// `k`-fold cross-validated error of correlation-loss ensembles. Fold `i`
/// trains with seed `derive_seed(config.seed, i)`; `seed` drives the split.
pub fn evaluate_cv(
    config: &TrainingConfig,
    dataset: &Dataset,
    k: usize,
    seed: u64,
) -> Result<ExperimentResult> {
    config.validate()?;
    let folds = cross_validate(
        dataset,
        k,
        seed,
        config.stratify,
        config.standardize,
        |data| {
            let fold_config = TrainingConfig {
                seed: derive_seed(config.seed, data.fold as u64),
                ..config.clone()
            };
            let trained = train_ensemble(
                &fold_config,
                &data.x_train,
                &data.y_train,
                dataset.n_classes,
                None,
            )?;
            score_fold(data, &trained.model, trained.trace)
        },
    )?;
    let echo = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
    Ok(ExperimentResult::new(
        "correlation-loss",
        &dataset.name,
        echo,
        seed,
        folds,
    ))
}

/// One CSV row per fold and trace epoch.
pub fn write_trace_csv<W: std::io::Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "fold",
        "epoch",
        "loss",
        "r_tl_sum",
        "r_ll_sum",
        "hard_r_tl_ave",
        "hard_r_ll_ave",
        "soft_r_tl_ave",
        "soft_r_ll_ave",
    ])
    .map_err(|e| Error::Io(e.to_string()))?;
    let opt = |s: &Option<CorrelationSummary>, tl: bool| {
        s.as_ref()
            .map(|s| if tl { s.r_tl_ave } else { s.r_ll_ave }.to_string())
            .unwrap_or_default()
    };
    let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for f in &result.fold_results {
        for r in &f.trace {
            w.write_record([
                f.fold.to_string(),
                r.epoch.to_string(),
                num(r.loss),
                num(r.r_tl_sum),
                num(r.r_ll_sum),
                opt(&r.hard, true),
                opt(&r.hard, false),
                opt(&r.soft, true),
                opt(&r.soft, false),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr_metrics::pearson;
    use crate::datasets::synthetic_binary;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    fn random_softmax(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Matrix {
        let logits = Matrix::from_shape_fn((n, m), |_| rng.random_range(-2.0..2.0));
        crate::neural::softmax_rows(&logits)
    }

    #[test]
    fn perfect_outputs_hit_the_maximum() {
        let y = one_hot(&[0, 1, 2, 1, 0, 2], 3).unwrap();
        let (n_members, lambda) = (4, 0.5);
        let mut g = Graph::new();
        let yn = g.constant(y.clone());
        let outs: Vec<NodeId> = (0..n_members).map(|_| g.constant(y.clone())).collect();
        let parts = correlation_loss(&mut g, &outs, yn, lambda).unwrap();
        let (n, m) = (n_members as f64, 3.0);
        assert_abs_diff_eq!(g.scalar(parts.r_tl), n * m, epsilon = 1e-9);
        assert_abs_diff_eq!(
            g.scalar(parts.r_ll),
            m * n * (n - 1.0) / 2.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            g.scalar(parts.loss),
            -(n * m - lambda * m * n * (n - 1.0) / 2.0),
            epsilon = 1e-9
        );
    }

    #[test]
    fn two_identical_members_two_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let o = random_softmax(&mut rng, 10, 2);
        let y = one_hot(&[0, 1, 0, 1, 1, 0, 0, 1, 0, 1], 2).unwrap();
        let mut g = Graph::new();
        let yn = g.constant(y);
        let a = g.constant(o.clone());
        let b = g.constant(o);
        let parts = correlation_loss(&mut g, &[a, b], yn, 1.0).unwrap();
        assert_abs_diff_eq!(g.scalar(parts.r_ll), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn loss_terms_match_strict_pearson() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let y = one_hot(&labels, 3).unwrap();
        let outs: Vec<Matrix> = (0..3).map(|_| random_softmax(&mut rng, 30, 3)).collect();
        let mut g = Graph::new();
        let yn = g.constant(y.clone());
        let ids: Vec<NodeId> = outs.iter().map(|o| g.constant(o.clone())).collect();
        let parts = correlation_loss(&mut g, &ids, yn, 0.7).unwrap();
        let col = |m: &Matrix, k: usize| m.column(k).to_vec();
        let mut tl = 0.0;
        let mut ll = 0.0;
        for k in 0..3 {
            for (i, o) in outs.iter().enumerate() {
                tl += pearson(&col(&y, k), &col(o, k)).unwrap();
                for p in &outs[i + 1..] {
                    ll += pearson(&col(o, k), &col(p, k)).unwrap();
                }
            }
        }
        assert_abs_diff_eq!(g.scalar(parts.r_tl), tl, epsilon = 1e-9);
        assert_abs_diff_eq!(g.scalar(parts.r_ll), ll, epsilon = 1e-9);
        assert_abs_diff_eq!(g.scalar(parts.loss), -tl + 0.7 * ll, epsilon = 1e-9);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<usize> = (0..12).map(|i| (i * 7) % 3).collect();
        let y = one_hot(&labels, 3).unwrap();
        let logits: Vec<Matrix> = (0..3)
            .map(|_| Matrix::from_shape_fn((12, 3), |_| rng.random_range(-1.5..1.5)))
            .collect();
        let eval = |ls: &[Matrix]| {
            let mut g = Graph::new();
            let yn = g.constant(y.clone());
            let vars: Vec<NodeId> = ls.iter().map(|l| g.variable(l.clone())).collect();
            let outs: Vec<NodeId> = vars.iter().map(|&v| g.softmax_rows(v)).collect();
            let parts = correlation_loss(&mut g, &outs, yn, 0.9).unwrap();
            (g, vars, parts)
        };
        let (g, vars, parts) = eval(&logits);
        let grads = g.backward(parts.loss).unwrap();
        let h = 1e-6;
        for (member, &v) in vars.iter().enumerate() {
            let analytic = grads.get(v).unwrap();
            for idx in [(0, 0), (5, 1), (11, 2)] {
                let mut plus = logits.clone();
                plus[member][idx] += h;
                let mut minus = logits.clone();
                minus[member][idx] -= h;
                let (gp, _, pp) = eval(&plus);
                let (gm, _, pm) = eval(&minus);
                let numeric = (gp.scalar(pp.loss) - gm.scalar(pm.loss)) / (2.0 * h);
                let a = analytic[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-5, "member {member} {idx:?}: {a} vs {numeric}");
            }
        }
    }

    #[test]
    fn absent_class_is_skipped_not_fatal() {
        let y = one_hot(&[0, 1, 0, 1], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let yn = g.constant(y);
        let outs: Vec<NodeId> = (0..2)
            .map(|_| {
                let o = random_softmax(&mut rng, 4, 3);
                g.constant(o)
            })
            .collect();
        let parts = correlation_loss(&mut g, &outs, yn, 0.5).unwrap();
        assert_eq!(parts.skipped_columns, vec![2]);
        let mut g = Graph::new();
        let yn = g.constant(Matrix::ones((4, 2)));
        let o = g.constant(Matrix::ones((4, 2)));
        assert!(matches!(
            correlation_loss(&mut g, &[o], yn, 0.5),
            Err(Error::ConstantTruthColumn(_))
        ));
    }

    #[test]
    fn combiners() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpNetwork::new(&[2, 4, 3], &mut rng).unwrap();
        let x = Matrix::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0));
        let single = argmax_rows(&net.forward_softmax(&x).unwrap());
        for combiner in [Combiner::Avg, Combiner::Vote] {
            let model = EnsembleModel {
                members: vec![net.clone(); 3],
                combiner,
            };
            assert_eq!(predict(&model, &x).unwrap(), single);
        }
        assert_eq!(
            majority_vote(&[vec![0, 1], vec![1, 2], vec![2, 2]], 3),
            vec![0, 2]
        );
        assert_eq!(argmax_rows(&array![[0.2, 0.8]]), vec![1]);
        assert_eq!("vote".parse::<Combiner>().unwrap(), Combiner::Vote);
        assert!("median".parse::<Combiner>().is_err());
    }

    #[test]
    fn zero_epochs_leaves_members_alone() {
        let ds = synthetic_binary(40, 0.5, 3.0, 1).unwrap();
        let config = TrainingConfig {
            ensemble_size: 3,
            epochs: 0,
            ..TrainingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
        let first = MlpNetwork::new(&[2, 16, 2], &mut rng).unwrap();
        let trained = train_ensemble(&config, &ds.x, &ds.labels, 2, None).unwrap();
        assert_eq!(trained.model.members[0], first);
        assert_eq!(trained.trace.len(), 1);
        let again = train_ensemble(
            &TrainingConfig {
                epochs: 0,
                ..config.clone()
            },
            &ds.x,
            &ds.labels,
            2,
            Some(trained.model.members.clone()),
        )
        .unwrap();
        assert_eq!(again.model, trained.model);
    }

    #[test]
    fn training_is_reproducible_and_feasible() {
        let ds = synthetic_binary(60, 0.4, 2.0, 7).unwrap();
        let config = TrainingConfig {
            ensemble_size: 3,
            epochs: 15,
            learning_rate: 0.5,
            ..TrainingConfig::default()
        };
        let a = train_ensemble(&config, &ds.x, &ds.labels, 2, None).unwrap();
        let b = train_ensemble(&config, &ds.x, &ds.labels, 2, None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 16);
        for row in &a.trace {
            if let Some(s) = &row.hard {
                assert!(crate::theory_bounds::is_feasible(s, 1e-9));
            }
        }
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = TrainingConfig {
            lambda: 0.0,
            ..TrainingConfig::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("lambda"));
        let bad = TrainingConfig {
            ensemble_size: 1,
            ..TrainingConfig::default()
        };
        assert!(bad
            .validate()
            .unwrap_err()
            .to_string()
            .contains("ensemble_size"));
    }
}

//! DECORATE: ensembles grown from members trained on the data plus
//! artificial rows labelled against the current ensemble.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::{argmax_rows, Dataset, FeatureKind, Matrix};
use crate::derive_seed;
use crate::diverse_train::{
    cross_validate, error_rate, fit_cross_entropy, hard_summary, score_fold, Combiner,
    EnsembleModel, ExperimentResult, TraceRow, TrainingConfig,
};
use crate::error::{Error, Result};
use crate::neural::MlpNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecorateConfig {
    pub target_size: usize,
    /// Artificial rows per iteration as a fraction of the training size.
    pub r_ratio: f64,
    pub max_iterations: usize,
    /// Floor applied to ensemble probabilities before inversion.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for DecorateConfig {
    fn default() -> Self {
        Self {
            target_size: 15,
            r_ratio: 1.0,
            max_iterations: 50,
            epsilon: 1e-3,
            seed: 0,
        }
    }
}

impl DecorateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 {
            return Err(Error::Config("target_size: must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.r_ratio) {
            return Err(Error::Config(format!(
                "r_ratio: must lie in [0, 1], got {}",
                self.r_ratio
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon: must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// `floor(r_ratio * n)` rows drawn column by column from the training
/// distribution: Gaussian with the sample mean and standard deviation for
/// numeric columns, Laplace-smoothed category frequencies for nominal ones.
pub fn generate_artificial<R: Rng + ?Sized>(
    x: &Matrix,
    kinds: &[FeatureKind],
    r_ratio: f64,
    rng: &mut R,
) -> Result<Matrix> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::EmptyTraining(n));
    }
    if kinds.len() != x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature kinds for {} columns",
            kinds.len(),
            x.ncols()
        )));
    }
    let rows = (r_ratio * n as f64).floor() as usize;
    let mut out = Matrix::zeros((rows, x.ncols()));
    for (j, kind) in kinds.iter().enumerate() {
        let col = x.column(j);
        match kind {
            FeatureKind::Numeric => {
                let mean = col.sum() / n as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                let normal =
                    Normal::new(mean, var.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
                for i in 0..rows {
                    out[(i, j)] = normal.sample(rng);
                }
            }
            FeatureKind::Nominal => {
                let mut values: Vec<f64> = col.to_vec();
                values.sort_by(f64::total_cmp);
                values.dedup();
                let counts: Vec<f64> = values
                    .iter()
                    .map(|v| col.iter().filter(|c| *c == v).count() as f64 + 1.0)
                    .collect();
                let total: f64 = counts.iter().sum();
                for i in 0..rows {
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = values.len() - 1;
                    for (k, c) in counts.iter().enumerate() {
                        if u < *c {
                            pick = k;
                            break;
                        }
                        u -= c;
                    }
                    out[(i, j)] = values[pick];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse-probability sampling weights, normalized to sum to one.
pub fn inverse_weights(probs: &[f64], epsilon: f64) -> Vec<f64> {
    let w: Vec<f64> = probs.iter().map(|&p| 1.0 / p.max(epsilon)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Draws a label with probability inversely proportional to `probs`.
pub fn inverse_label<R: Rng + ?Sized>(probs: &[f64], epsilon: f64, rng: &mut R) -> usize {
    let w = inverse_weights(probs, epsilon);
    let mut u: f64 = rng.random();
    for (k, p) in w.iter().enumerate() {
        if u < *p {
            return k;
        }
        u -= p;
    }
    w.len() - 1
}

/// Trains one base learner on `(x, labels)` with the given seed.
pub trait BaseLearnerFactory: Sync {
    fn fit(&self, x: &Matrix, labels: &[usize], n_classes: usize, seed: u64) -> Result<MlpNetwork>;
}

/// Cross-entropy MLP learner: `hidden` layers, `epochs` full-batch SGD steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFactory {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl MlpFactory {
    /// Same architecture as the correlation-loss members, with their total
    /// per-member epoch budget spent on cross-entropy.
    pub fn matching(config: &TrainingConfig) -> Self {
        Self {
            hidden: config.hidden.clone(),
            epochs: config.pretrain_epochs + config.epochs,
            learning_rate: config.pretrain_learning_rate,
        }
    }
}

impl BaseLearnerFactory for MlpFactory {
    fn fit(&self, x: &Matrix, labels: &[usize], n_classes: usize, seed: u64) -> Result<MlpNetwork> {
        let mut sizes = vec![x.ncols()];
        sizes.extend(&self.hidden);
        sizes.push(n_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = MlpNetwork::new(&sizes, &mut rng)?;
        fit_cross_entropy(&mut net, x, labels, self.epochs, self.learning_rate)?;
        Ok(net)
    }
}

#[derive(Debug, Clone)]
pub struct DecorateOutcome {
    pub model: EnsembleModel,
    /// Ensemble training accuracy after the initial member and after every
    /// accepted candidate.
    pub accuracy_trace: Vec<f64>,
    pub iterations: usize,
    /// Hard-label training summary at every accepted size of two or more.
    pub trace: Vec<TraceRow>,
}

fn training_accuracy(model: &EnsembleModel, x: &Matrix, labels: &[usize]) -> Result<f64> {
    let p = argmax_rows(&model.average_probabilities(x)?);
    Ok(1.0 - error_rate(&p, labels))
}

/// Grows an ensemble until it holds `target_size` members or
/// `max_iterations` candidates have been tried. A candidate is kept unless
/// it lowers the ensemble's training accuracy.
pub fn decorate_train(
    config: &DecorateConfig,
    factory: &dyn BaseLearnerFactory,
    x: &Matrix,
    labels: &[usize],
    kinds: &[FeatureKind],
    n_classes: usize,
) -> Result<DecorateOutcome> {
    config.validate()?;
    let fail = |e: Error| Error::FactoryFailure(e.to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let first = factory
        .fit(x, labels, n_classes, derive_seed(config.seed, 0))
        .map_err(fail)?;
    let mut model = EnsembleModel {
        members: vec![first],
        combiner: Combiner::Avg,
    };
    let mut accuracy = training_accuracy(&model, x, labels)?;
    let mut accuracy_trace = vec![accuracy];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while model.members.len() < config.target_size && iterations < config.max_iterations {
        iterations += 1;
        let artificial = generate_artificial(x, kinds, config.r_ratio, &mut rng)?;
        let mut union_x = x.clone();
        let mut union_y = labels.to_vec();
        if artificial.nrows() > 0 {
            let probs = model.average_probabilities(&artificial)?;
            for row in probs.rows() {
                union_y.push(inverse_label(&row.to_vec(), config.epsilon, &mut rng));
            }
            union_x = ndarray::concatenate(ndarray::Axis(0), &[x.view(), artificial.view()])
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        }
        let candidate = factory
            .fit(
                &union_x,
                &union_y,
                n_classes,
                derive_seed(config.seed, iterations as u64),
            )
            .map_err(fail)?;
        model.members.push(candidate);
        let new_accuracy = training_accuracy(&model, x, labels)?;
        if new_accuracy < accuracy {
            model.members.pop();
            continue;
        }
        accuracy = new_accuracy;
        accuracy_trace.push(accuracy);
        let preds = model.member_predictions(x)?;
        trace.push(TraceRow {
            epoch: iterations,
            loss: None,
            r_tl_sum: None,
            r_ll_sum: None,
            hard: hard_summary(labels, &preds, n_classes),
            soft: None,
        });
    }
    Ok(DecorateOutcome {
        model,
        accuracy_trace,
        iterations,
        trace,
    })
}

/// `k`-fold cross-validated DECORATE with the same splitting and scaling as
/// the correlation-loss runs, so fold `i` sees identical rows.
pub fn evaluate_decorate_cv(
    config: &DecorateConfig,
    factory: &MlpFactory,
    dataset: &Dataset,
    k: usize,
    seed: u64,
    stratify: bool,
    standardize: bool,
) -> Result<ExperimentResult> {
    config.validate()?;
    let folds = cross_validate(dataset, k, seed, stratify, standardize, |data| {
        let fold_config = DecorateConfig {
            seed: derive_seed(config.seed, data.fold as u64),
            ..config.clone()
        };
        let out = decorate_train(
            &fold_config,
            factory,
            &data.x_train,
            &data.y_train,
            &dataset.feature_kinds,
            dataset.n_classes,
        )?;
        score_fold(data, &out.model, out.trace)
    })?;
    let echo = serde_json::json!({
        "decorate": config,
        "base_learner": factory,
        "stratify": stratify,
        "standardize": standardize,
    });
    Ok(ExperimentResult::new(
        "decorate",
        &dataset.name,
        echo,
        seed,
        folds,
    ))
}

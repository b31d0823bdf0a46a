//! Randomized checks of the correlation bounds and the accuracy formula.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corr_metrics::{
    build_correlation_matrix, is_valid_correlation_matrix, pearson, summarize, CorrelationMatrix,
    PSD_TOLERANCE,
};
use crate::derive_seed;
use crate::error::Result;
use crate::theory_bounds::{feasibility_slack, FEASIBILITY_TOLERANCE};
use crate::vote_theory::{accuracy_to_correlation, BinaryAccuracyProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub instances: usize,
    pub violations: usize,
    /// Smallest observed slack; negative values beyond the tolerance are
    /// violations.
    pub min_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySuiteReport {
    pub pairs: usize,
    pub violations: usize,
    pub max_abs_error: f64,
    /// Sample correlation between accuracy and truth-learner correlation.
    pub p_r_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub samples: usize,
    pub seed: u64,
    pub bound_suite: SuiteReport,
    pub cauchy_schwarz_suite: SuiteReport,
    pub accuracy_suite: AccuracySuiteReport,
    pub passed: bool,
}

fn unit_gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Gram matrix of `n_learners + 1` random unit vectors. The ambient
/// dimension is drawn from `1..=n_learners + 2`, so low-rank matrices with
/// entries at `+-1` show up regularly.
pub fn random_gram_matrix<R: Rng + ?Sized>(n_learners: usize, rng: &mut R) -> CorrelationMatrix {
    let dim = rng.random_range(1..=n_learners + 2);
    let vs: Vec<Vec<f64>> = (0..=n_learners).map(|_| unit_gaussian(dim, rng)).collect();
    let rows: Vec<Vec<f64>> = vs
        .iter()
        .enumerate()
        .map(|(i, a)| {
            vs.iter()
                .enumerate()
                .map(|(j, b)| {
                    if i == j {
                        1.0
                    } else {
                        a.iter()
                            .zip(b)
                            .map(|(x, y)| x * y)
                            .sum::<f64>()
                            .clamp(-1.0, 1.0)
                    }
                })
                .collect()
        })
        .collect();
    CorrelationMatrix::from_rows(&rows).expect("Gram matrix is square and symmetric")
}

/// Random Gram matrices with `N` in `2..=10`: each must be a valid
/// correlation matrix and its summary must respect both bounds.
pub fn bound_suite(samples: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for _ in 0..samples {
        let n = rng.random_range(2..=10);
        let m = random_gram_matrix(n, &mut rng);
        let psd_slack = m.min_eigenvalue();
        let slack = feasibility_slack(&summarize(&m)?)?.min(psd_slack);
        min_slack = min_slack.min(slack);
        if !is_valid_correlation_matrix(&m, PSD_TOLERANCE)? || slack < -FEASIBILITY_TOLERANCE {
            violations += 1;
        }
    }
    Ok(SuiteReport {
        instances: samples,
        violations,
        min_slack,
    })
}

/// `(sum_i corr(L_i, T))^2 <= N + N (N - 1) r_ll_ave` on random data
/// vectors built from a few shared latent factors.
pub fn cauchy_schwarz_suite(samples: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    let len = 30;
    for _ in 0..samples {
        let n = rng.random_range(2..=10);
        let factors = rng.random_range(1..=3);
        let latent: Vec<Vec<f64>> = (0..factors)
            .map(|_| (0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let w: Vec<f64> = (0..factors).map(|_| rng.random_range(-2.0..2.0)).collect();
            let noise = rng.random_range(0.0..1.0);
            (0..len)
                .map(|i| {
                    let e: f64 = StandardNormal.sample(rng);
                    w.iter().zip(&latent).map(|(a, l)| a * l[i]).sum::<f64>() + noise * e
                })
                .collect()
        };
        let truth = draw(&mut rng);
        let learners: Vec<Vec<f64>> = (0..n).map(|_| draw(&mut rng)).collect();
        let s = summarize(&build_correlation_matrix(&truth, &learners)?)?;
        let nf = n as f64;
        let lhs = (nf * s.r_tl_ave).powi(2);
        let rhs = nf + nf * (nf - 1.0) * s.r_ll_ave;
        let slack = rhs - lhs;
        min_slack = min_slack.min(slack);
        if slack < -FEASIBILITY_TOLERANCE {
            violations += 1;
        }
    }
    Ok(SuiteReport {
        instances: samples,
        violations,
        min_slack,
    })
}

/// Random hard-label pairs: the truth has a class-1 rate drawn from
/// `[0.1, 0.9]`, and each learner label copies the truth with a
/// per-pair agreement rate drawn from `[0, 1]`. Pairs with a constant
/// vector are redrawn.
pub fn random_label_pair<R: Rng + ?Sized>(len: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    loop {
        let alpha = rng.random_range(0.1..0.9);
        let agree = rng.random_range(0.0..1.0);
        let t: Vec<f64> = (0..len)
            .map(|_| (rng.random::<f64>() < alpha) as u8 as f64)
            .collect();
        let l: Vec<f64> = t
            .iter()
            .map(|&v| {
                if rng.random::<f64>() < agree {
                    v
                } else {
                    1.0 - v
                }
            })
            .collect();
        let varies = |x: &[f64]| x.iter().any(|&v| v != x[0]);
        if varies(&t) && varies(&l) {
            return (t, l);
        }
    }
}

/// Closed-form correlation from `(p, alpha, beta)` against direct Pearson.
pub fn accuracy_suite(pairs: usize, len: usize, seed: u64) -> Result<AccuracySuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut max_abs_error: f64 = 0.0;
    let mut ps = Vec::with_capacity(pairs);
    let mut rs = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let (t, l) = random_label_pair(len, &mut rng);
        let direct = pearson(&t, &l)?;
        let profile = BinaryAccuracyProfile::from_labels(&t, &l);
        let err = match profile.and_then(|p| accuracy_to_correlation(&p).map(|r| (p, r))) {
            Ok((p, r)) => {
                ps.push(p.p);
                rs.push(direct);
                (r - direct).abs()
            }
            // Zero accuracy leaves beta undefined; only possible at r = -1.
            Err(_) if (direct + 1.0).abs() < 1e-12 => 0.0,
            Err(_) => f64::INFINITY,
        };
        max_abs_error = max_abs_error.max(err);
        if err > 1e-10 {
            violations += 1;
        }
    }
    Ok(AccuracySuiteReport {
        pairs,
        violations,
        max_abs_error,
        p_r_correlation: pearson(&ps, &rs)?,
    })
}

/// Runs all three suites from one seed.
pub fn verify_theorems(samples: usize, seed: u64) -> Result<VerificationReport> {
    let bound = bound_suite(samples, derive_seed(seed, 0))?;
    let cs = cauchy_schwarz_suite(samples, derive_seed(seed, 1))?;
    let acc = accuracy_suite(2000, 100, derive_seed(seed, 2))?;
    let passed = bound.violations == 0
        && cs.violations == 0
        && acc.violations == 0
        && acc.p_r_correlation > 0.9;
    Ok(VerificationReport {
        samples,
        seed,
        bound_suite: bound,
        cauchy_schwarz_suite: cs,
        accuracy_suite: acc,
        passed,
    })
}

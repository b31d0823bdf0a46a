//! Accuracy/correlation relations for binary learners and the majority-vote
//! accuracy of homogeneous ensembles.
//!
//! The closed-form majority probability adds a second-order correlation
//! correction to the independent-voter binomial tail. Because the correction
//! is only approximate, [`MajorityProbability`] keeps the raw value and a
//! clamped companion side by side. [`simulate_correlated_votes`] is a
//! Monte-Carlo cross-check based on a Gaussian copula with equicorrelated
//! latent variables.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::binomial;
use statrs::function::gamma::ln_gamma;

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::theory_bounds::{rll_bounds, rtl_bound, FEASIBILITY_TOLERANCE};

/// Accuracy `p`, class-1 share of the truth `alpha`, and the class-1 share of
/// correct predictions `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryAccuracyProfile {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl BinaryAccuracyProfile {
    pub fn new(p: f64, alpha: f64, beta: f64) -> Result<Self> {
        check_open_unit("alpha", alpha)?;
        check_closed_unit("p", p)?;
        check_closed_unit("beta", beta)?;
        Ok(Self { p, alpha, beta })
    }

    /// Measures the profile of a hard-label learner against hard-label truth.
    pub fn from_labels(truth: &[f64], learner: &[f64]) -> Result<Self> {
        if truth.len() != learner.len() {
            return Err(Error::LengthMismatch {
                left: truth.len(),
                right: learner.len(),
            });
        }
        if truth.is_empty() {
            return Err(Error::EmptyData);
        }
        let n = truth.len() as f64;
        let mut ones = 0usize;
        let mut correct = 0usize;
        let mut both_one = 0usize;
        for (&t, &l) in truth.iter().zip(learner) {
            let (t, l) = (t >= 0.5, l >= 0.5);
            ones += t as usize;
            correct += (t == l) as usize;
            both_one += (t && l) as usize;
        }
        if correct == 0 {
            return Err(Error::DegenerateProfile(0.0));
        }
        let alpha = ones as f64 / n;
        if ones == 0 || ones == truth.len() {
            return Err(Error::DegenerateAlpha(alpha));
        }
        Self::new(correct as f64 / n, alpha, both_one as f64 / correct as f64)
    }
}

fn check_open_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value: v,
            lower: 0.0,
            upper: 1.0,
        })
    }
}

fn check_closed_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value: v,
            lower: 0.0,
            upper: 1.0,
        })
    }
}

fn check_correlation(name: &'static str, v: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value: v,
            lower: -1.0,
            upper: 1.0,
        })
    }
}

/// Exact truth-learner Pearson correlation implied by an accuracy profile.
pub fn accuracy_to_correlation(profile: &BinaryAccuracyProfile) -> Result<f64> {
    let BinaryAccuracyProfile { p, alpha, beta } = *profile;
    // P(L = 1) = beta p + (1 - alpha) - (p - beta p)
    let q = 2.0 * beta * p - p + 1.0 - alpha;
    let radicand = alpha * (1.0 - alpha) * q * (-2.0 * beta * p + p + alpha);
    if radicand <= 0.0 {
        return Err(Error::DegenerateProfile(radicand));
    }
    Ok((beta * p - alpha * q) / radicand.sqrt())
}

/// Accuracy of a learner that is equally good on both classes.
pub fn correlation_to_accuracy_linear(r: f64, alpha: f64) -> Result<f64> {
    check_correlation("r", r)?;
    check_open_unit("alpha", alpha)?;
    Ok(2.0 * alpha * (1.0 - alpha) * (1.0 + r))
}

/// First-order expansion of the accuracy around `beta = 1/2`.
pub fn correlation_to_accuracy_taylor(r: f64, alpha: f64, beta: f64) -> Result<f64> {
    let linear = correlation_to_accuracy_linear(r, alpha)?;
    check_open_unit("beta", beta)?;
    let a2 = alpha * alpha;
    let a3 = a2 * alpha;
    let coefficient =
        alpha - 2.0 * a2 + 2.0 * a3 + 2.0 * alpha * r - 6.0 * a2 * r + 4.0 * a3 * r + alpha * r * r
            - 3.0 * a2 * r * r
            + 2.0 * a3 * r * r;
    Ok(linear - 4.0 * coefficient * (beta - 0.5))
}

/// Closed-form majority probability; `raw` may leave `[0, 1]` for extreme
/// correlations, `clamped` never does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MajorityProbability {
    pub raw: f64,
    pub clamped: f64,
}

impl MajorityProbability {
    fn new(raw: f64) -> Self {
        Self {
            raw,
            clamped: raw.clamp(0.0, 1.0),
        }
    }

    pub fn in_unit_interval(&self) -> bool {
        self.raw == self.clamped
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `P(X >= (n+1)/2)` for `X ~ Binomial(n, p)`.
pub fn binomial_majority_tail(n: usize, p: f64) -> Result<f64> {
    if n.is_multiple_of(2) {
        return Err(Error::EvenJury(n));
    }
    let half = n.div_ceil(2);
    Ok((half..=n)
        .map(|i| binomial(n as u64, i as u64) * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32))
        .sum())
}

fn correlation_correction(n: usize, p: f64, c: f64) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let k = (n as f64 + 1.0) / 2.0;
    let half_power = ((n - 1) / 2) as i32;
    let shape = (p * (1.0 - p)).powi(half_power);
    0.5 * c * (n as f64 - 1.0) * (0.5 - p) * shape * (-ln_beta(k, k)).exp()
}

/// Probability that a homogeneous jury of odd size `n`, each member correct
/// with probability `p` and pairwise vote correlation `c`, decides correctly.
pub fn jury_majority_probability(n: usize, p: f64, c: f64) -> Result<MajorityProbability> {
    if n.is_multiple_of(2) {
        return Err(Error::EvenJury(n));
    }
    check_closed_unit("p", p)?;
    check_correlation("c", c)?;
    let raw = binomial_majority_tail(n, p)? + correlation_correction(n, p, c);
    Ok(MajorityProbability::new(raw))
}

/// Ensemble of `n` learners sharing one truth-learner and one pairwise
/// learner-learner correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousEnsembleSpec {
    pub n: usize,
    pub r_tl: f64,
    pub r_ll: f64,
    pub alpha: f64,
}

impl HomogeneousEnsembleSpec {
    /// Learner accuracy under the equal-class-accuracy assumption.
    pub fn implied_accuracy(&self) -> Result<f64> {
        correlation_to_accuracy_linear(self.r_tl, self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.is_multiple_of(2) {
            return Err(Error::EvenJury(self.n));
        }
        check_correlation("r_tl", self.r_tl)
            .and_then(|_| check_correlation("r_ll", self.r_ll))
            .and_then(|_| check_open_unit("alpha", self.alpha))
            .map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
        if self.n >= 3 {
            let ll = rll_bounds(self.n)?;
            if !ll.contains(self.r_ll, FEASIBILITY_TOLERANCE) {
                return Err(Error::InfeasibleSpec(format!(
                    "r_ll = {} below {} for n = {}",
                    self.r_ll, ll.lower, self.n
                )));
            }
            let tl = rtl_bound(self.n, self.r_ll.max(ll.lower))?;
            if !tl.contains(self.r_tl, FEASIBILITY_TOLERANCE) {
                return Err(Error::InfeasibleSpec(format!(
                    "|r_tl| = {} exceeds {} at r_ll = {}",
                    self.r_tl.abs(),
                    tl.upper,
                    self.r_ll
                )));
            }
        }
        let p = self.implied_accuracy()?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InfeasibleSpec(format!("implied accuracy {p}")));
        }
        Ok(())
    }
}

/// Majority-vote accuracy of a homogeneous ensemble (general `alpha`).
pub fn ensemble_majority_accuracy(spec: &HomogeneousEnsembleSpec) -> Result<MajorityProbability> {
    spec.validate()?;
    let p = spec.implied_accuracy()?;
    let raw = binomial_majority_tail(spec.n, p)? + correlation_correction(spec.n, p, spec.r_ll);
    Ok(MajorityProbability::new(raw))
}

/// The balanced-class (`alpha = 1/2`) simplification.
pub fn ensemble_majority_accuracy_balanced(
    n: usize,
    r_tl: f64,
    r_ll: f64,
) -> Result<MajorityProbability> {
    HomogeneousEnsembleSpec {
        n,
        r_tl,
        r_ll,
        alpha: 0.5,
    }
    .validate()?;
    let q = 0.5 * (1.0 + r_tl);
    let mut raw = binomial_majority_tail(n, q)?;
    if n > 1 {
        let k = (n as f64 + 1.0) / 2.0;
        let shape = (q * (1.0 - q)).powi(((n - 1) / 2) as i32);
        raw -= 0.25 * r_tl * r_ll * (n as f64 - 1.0) * (-ln_beta(k, k)).exp() * shape;
    }
    Ok(MajorityProbability::new(raw))
}

/// One row of a majority-vote curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteCurvePoint {
    pub r_ll: f64,
    pub r_tl: f64,
    pub accuracy_raw: f64,
    pub accuracy_clamped: f64,
    /// Whether `(r_tl, r_ll)` respects the correlation bounds.
    pub feasible: bool,
}

/// Balanced majority accuracy for each `r_ll` level over `grid` values of
/// `r_tl` in `[0, 1]`. Points outside the feasible region are still
/// evaluated (the formula is a polynomial) and flagged.
pub fn vote_curves(n: usize, r_ll_levels: &[f64], grid: usize) -> Result<Vec<VoteCurvePoint>> {
    if n.is_multiple_of(2) {
        return Err(Error::EvenJury(n));
    }
    if grid < 2 {
        return Err(Error::Config(format!(
            "grid must be at least 2, got {grid}"
        )));
    }
    let mut out = Vec::with_capacity(r_ll_levels.len() * grid);
    for &r_ll in r_ll_levels {
        for i in 0..grid {
            let r_tl = i as f64 / (grid - 1) as f64;
            let spec = HomogeneousEnsembleSpec {
                n,
                r_tl,
                r_ll,
                alpha: 0.5,
            };
            let feasible = spec.validate().is_ok();
            let q = 0.5 * (1.0 + r_tl);
            let raw = binomial_majority_tail(n, q)? + correlation_correction(n, q, r_ll);
            out.push(VoteCurvePoint {
                r_ll,
                r_tl,
                accuracy_raw: raw,
                accuracy_clamped: raw.clamp(0.0, 1.0),
                feasible,
            });
        }
    }
    Ok(out)
}

pub fn write_vote_curves_csv<W: std::io::Write>(points: &[VoteCurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Gaussian-copula vote simulation
// ---------------------------------------------------------------------------

const QUADRATURE_PANELS: usize = 400;
const SIMULATION_CHUNK: usize = 1 << 15;

/// Pairwise Pearson correlation of two binary votes `1{Z_i <= t}` whose
/// latent normals have correlation `rho`, with `P(vote) = p`.
///
/// Uses `Phi2(t, t; rho) - p^2 = integral_0^rho phi2(t, t; r) dr`, integrated
/// in `r = sin(theta)` so the endpoint singularity at `r = 1` disappears.
pub fn latent_to_vote_correlation(p: f64, rho: f64) -> f64 {
    let t = Normal::standard().inverse_cdf(p);
    let upper = rho.clamp(-1.0, 1.0).asin();
    let f = |theta: f64| (-t * t / (1.0 + theta.sin())).exp();
    // Composite Simpson on [0, upper].
    let h = upper / QUADRATURE_PANELS as f64;
    let mut acc = f(0.0) + f(upper);
    for i in 1..QUADRATURE_PANELS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(h * i as f64);
    }
    let integral = acc * h / 3.0 / (2.0 * std::f64::consts::PI);
    integral / (p * (1.0 - p))
}

/// Latent correlation whose induced vote correlation equals `c`.
pub fn calibrate_latent_correlation(n: usize, p: f64, c: f64) -> Result<f64> {
    let lower = if n >= 2 {
        -1.0 / (n as f64 - 1.0)
    } else {
        -1.0
    };
    let c_lower = latent_to_vote_correlation(p, lower);
    let unachievable = || Error::UnachievableCorrelation {
        target: c,
        lower: c_lower,
        upper: 1.0,
    };
    if c < c_lower - 1e-12 || c > 1.0 {
        return Err(unachievable());
    }
    let (mut lo, mut hi) = (lower, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if latent_to_vote_correlation(p, mid) < c {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let rho = 0.5 * (lo + hi);
    if (latent_to_vote_correlation(p, rho) - c).abs() > 1e-3 {
        return Err(unachievable());
    }
    Ok(rho)
}

/// Samples `trials` juries of `n` exchangeable correlated votes, each
/// correct with probability `p` and pairwise correlation `c`; returns the
/// fraction decided correctly by simple majority.
///
/// Trials are split into fixed-size chunks with seeds derived from `seed`,
/// so the result does not depend on the worker count.
pub fn simulate_correlated_votes(
    n: usize,
    p: f64,
    c: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if n.is_multiple_of(2) {
        return Err(Error::EvenJury(n));
    }
    check_open_unit("p", p)?;
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let rho = if n == 1 {
        0.0
    } else {
        calibrate_latent_correlation(n, p, c)?
    };
    let threshold = Normal::standard().inverse_cdf(p);
    // Z_i = a (E_i - mean E) + b mean E has unit variance and correlation rho.
    let a = (1.0 - rho).max(0.0).sqrt();
    let b = (1.0 + (n as f64 - 1.0) * rho).max(0.0).sqrt();
    let chunks = trials.div_ceil(SIMULATION_CHUNK);
    let correct: usize = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, chunk as u64));
            let count = SIMULATION_CHUNK.min(trials - chunk * SIMULATION_CHUNK);
            let mut e = vec![0.0f64; n];
            let mut wins = 0usize;
            for _ in 0..count {
                for v in e.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let mean = e.iter().sum::<f64>() / n as f64;
                let votes = e
                    .iter()
                    .filter(|&&ei| a * (ei - mean) + b * mean <= threshold)
                    .count();
                if 2 * votes > n {
                    wins += 1;
                }
            }
            wins
        })
        .sum();
    Ok(correct as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn accuracy_to_correlation_examples() {
        let r = |p, a, b| accuracy_to_correlation(&BinaryAccuracyProfile::new(p, a, b).unwrap());
        assert_abs_diff_eq!(r(1.0, 0.5, 0.5).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r(0.5, 0.5, 0.5).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r(0.75, 0.5, 0.5).unwrap(), 0.5, epsilon = 1e-15);
        // Learner that always predicts 1: P(L=1) = 1, no variance.
        assert!(matches!(r(0.5, 0.5, 1.0), Err(Error::DegenerateProfile(_))));
        assert!(BinaryAccuracyProfile::new(0.5, 0.0, 0.5).is_err());
    }

    #[test]
    fn linear_and_taylor_examples() {
        assert_abs_diff_eq!(correlation_to_accuracy_linear(0.0, 0.5).unwrap(), 0.5);
        assert_abs_diff_eq!(correlation_to_accuracy_linear(1.0, 0.5).unwrap(), 1.0);
        assert_abs_diff_eq!(
            correlation_to_accuracy_linear(0.5, 0.3).unwrap(),
            0.63,
            epsilon = 1e-15
        );
        for (r, a) in [(0.3, 0.2), (-0.4, 0.7), (0.9, 0.5)] {
            assert_eq!(
                correlation_to_accuracy_taylor(r, a, 0.5).unwrap(),
                correlation_to_accuracy_linear(r, a).unwrap()
            );
        }
        assert_abs_diff_eq!(
            correlation_to_accuracy_taylor(0.5, 0.5, 0.6).unwrap(),
            0.65,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(correlation_to_accuracy_taylor(0.0, 0.5, 0.5).unwrap(), 0.5);
        assert!(correlation_to_accuracy_linear(1.5, 0.5).is_err());
    }

    #[test]
    fn jury_examples() {
        assert_abs_diff_eq!(
            jury_majority_probability(3, 0.6, 0.0).unwrap().raw,
            0.648,
            epsilon = 1e-12
        );
        for c in [-1.0, 0.0, 0.4, 1.0] {
            assert_abs_diff_eq!(
                jury_majority_probability(1, 0.7, c).unwrap().raw,
                0.7,
                epsilon = 1e-15
            );
        }
        assert_abs_diff_eq!(
            jury_majority_probability(3, 0.6, 0.2).unwrap().raw,
            0.6192,
            epsilon = 1e-12
        );
        assert_eq!(
            jury_majority_probability(4, 0.6, 0.0),
            Err(Error::EvenJury(4))
        );
    }

    #[test]
    fn extreme_correlation_is_flagged_not_hidden() {
        let m = jury_majority_probability(3, 0.99, -1.0).unwrap();
        assert!(m.raw > 1.0);
        assert_eq!(m.clamped, 1.0);
        assert!(!m.in_unit_interval());
    }

    #[test]
    fn ensemble_examples() {
        let perfect = HomogeneousEnsembleSpec {
            n: 5,
            r_tl: 1.0,
            r_ll: 1.0,
            alpha: 0.5,
        };
        assert_abs_diff_eq!(
            ensemble_majority_accuracy(&perfect).unwrap().raw,
            1.0,
            epsilon = 1e-15
        );
        let s = HomogeneousEnsembleSpec {
            n: 3,
            r_tl: 0.2,
            r_ll: 0.2,
            alpha: 0.5,
        };
        assert_abs_diff_eq!(
            ensemble_majority_accuracy(&s).unwrap().raw,
            0.6192,
            epsilon = 1e-12
        );
        let coin = HomogeneousEnsembleSpec {
            n: 3,
            r_tl: 0.0,
            r_ll: 0.0,
            alpha: 0.5,
        };
        assert_abs_diff_eq!(
            ensemble_majority_accuracy(&coin).unwrap().raw,
            0.5,
            epsilon = 1e-15
        );
        let infeasible = HomogeneousEnsembleSpec {
            n: 5,
            r_tl: 0.9,
            r_ll: -0.2,
            alpha: 0.5,
        };
        assert!(matches!(
            ensemble_majority_accuracy(&infeasible),
            Err(Error::InfeasibleSpec(_))
        ));
        let even = HomogeneousEnsembleSpec { n: 4, ..coin };
        assert_eq!(ensemble_majority_accuracy(&even), Err(Error::EvenJury(4)));
    }

    #[test]
    fn balanced_examples() {
        assert_abs_diff_eq!(
            ensemble_majority_accuracy_balanced(5, 0.0, 0.0)
                .unwrap()
                .raw,
            0.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            ensemble_majority_accuracy_balanced(3, 0.2, 0.2)
                .unwrap()
                .raw,
            0.6192,
            epsilon = 1e-12
        );
        // r_tl = 0.4 is feasible for r_ll = -0.25 only at r_tl = 0, so compare at the
        // lowest r_ll admitting it: (4 r_ll + 1) / 5 >= 0.16 -> r_ll >= -0.05.
        let diverse = ensemble_majority_accuracy_balanced(5, 0.4, -0.05)
            .unwrap()
            .raw;
        let similar = ensemble_majority_accuracy_balanced(5, 0.4, 0.5)
            .unwrap()
            .raw;
        assert!(diverse > similar);
    }

    #[test]
    fn vote_correlation_mapping_endpoints() {
        assert_abs_diff_eq!(latent_to_vote_correlation(0.6, 0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(latent_to_vote_correlation(0.6, 1.0), 1.0, epsilon = 1e-6);
        // At p = 1/2 the orthant probability is 1/4 + asin(rho) / (2 pi),
        // so the vote correlation is 2 asin(rho) / pi.
        for rho in [-0.5, 0.1, 0.7] {
            let expected = 2.0 * f64::asin(rho) / std::f64::consts::PI;
            assert_abs_diff_eq!(
                latent_to_vote_correlation(0.5, rho),
                expected,
                epsilon = 1e-12
            );
        }
        let rho = calibrate_latent_correlation(5, 0.7, 0.3).unwrap();
        assert_abs_diff_eq!(latent_to_vote_correlation(0.7, rho), 0.3, epsilon = 1e-9);
        assert!(matches!(
            calibrate_latent_correlation(5, 0.7, -0.5),
            Err(Error::UnachievableCorrelation { .. })
        ));
    }

    #[test]
    fn simulation_is_deterministic_and_sane() {
        let a = simulate_correlated_votes(3, 0.6, 0.0, 100_000, 1).unwrap();
        let b = simulate_correlated_votes(3, 0.6, 0.0, 100_000, 1).unwrap();
        assert_eq!(a, b);
        assert!((a - 0.648).abs() < 0.01);
        let single = simulate_correlated_votes(1, 0.7, 0.0, 100_000, 2).unwrap();
        assert!((single - 0.7).abs() < 0.01);
        assert_eq!(
            simulate_correlated_votes(2, 0.7, 0.0, 10, 2),
            Err(Error::EvenJury(2))
        );
    }

    #[test]
    fn vote_curve_rows() {
        let pts = vote_curves(5, &[-0.25, 0.0, 0.5], 11).unwrap();
        assert_eq!(pts.len(), 33);
        assert!(pts.iter().all(|p| p.accuracy_raw.is_finite()));
        assert!(pts[0].feasible);
        assert!(!pts[1].feasible);
        let mut buf = Vec::new();
        write_vote_curves_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("r_ll,r_tl,accuracy_raw,accuracy_clamped,feasible\n"));
    }
}

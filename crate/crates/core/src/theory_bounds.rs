//! Closed-form bounds on averaged correlations and distance to the upper
//! boundary.
//!
//! For `N` learners the averaged learner-learner correlation lies in
//! `[-1/(N-1), 1]`, and the averaged truth-learner correlation is bounded in
//! magnitude by `sqrt(((N-1) r_ll + 1) / N)`.

use serde::{Deserialize, Serialize};

use crate::corr_metrics::CorrelationSummary;
use crate::error::{Error, Result};

/// Slack allowed when checking a measured summary against the bounds.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
}

impl BoundPair {
    pub fn contains(&self, value: f64, tol: f64) -> bool {
        value >= self.lower - tol && value <= self.upper + tol
    }
}

/// Range of the averaged learner-learner correlation.
pub fn rll_bounds(n_learners: usize) -> Result<BoundPair> {
    if n_learners < 2 {
        return Err(Error::TooFewLearners(n_learners));
    }
    Ok(BoundPair {
        lower: -1.0 / (n_learners as f64 - 1.0),
        upper: 1.0,
    })
}

/// Symmetric range of the averaged truth-learner correlation given `r_ll_ave`.
pub fn rtl_bound(n_learners: usize, r_ll_ave: f64) -> Result<BoundPair> {
    let ll = rll_bounds(n_learners)?;
    if !ll.contains(r_ll_ave, FEASIBILITY_TOLERANCE) {
        return Err(Error::OutOfRange {
            name: "r_ll_ave",
            value: r_ll_ave,
            lower: ll.lower,
            upper: ll.upper,
        });
    }
    let n = n_learners as f64;
    // Clamp away rounding at the endpoints; the radicand is >= 0 inside the range.
    let radicand = (((n - 1.0) * r_ll_ave + 1.0) / n).clamp(0.0, 1.0);
    let b = radicand.sqrt();
    Ok(BoundPair {
        lower: 0.0 - b,
        upper: b,
    })
}

/// Signed slack of a summary against both bounds; negative means violated.
pub fn feasibility_slack(summary: &CorrelationSummary) -> Result<f64> {
    let ll = rll_bounds(summary.n_learners)?;
    let ll_slack = (summary.r_ll_ave - ll.lower).min(ll.upper - summary.r_ll_ave);
    let n = summary.n_learners as f64;
    let radicand = ((n - 1.0) * summary.r_ll_ave.max(ll.lower) + 1.0) / n;
    let tl_slack = radicand.max(0.0).sqrt() - summary.r_tl_ave.abs();
    Ok(ll_slack.min(tl_slack))
}

pub fn is_feasible(summary: &CorrelationSummary, tol: f64) -> bool {
    feasibility_slack(summary)
        .map(|s| s >= -tol)
        .unwrap_or(false)
}

/// Vertical distance from the summary point down from the upper boundary
/// curve; zero means the ensemble sits on the boundary.
pub fn optimality_gap(summary: &CorrelationSummary) -> Result<f64> {
    let infeasible = || Error::InfeasibleSummary {
        n: summary.n_learners,
        r_tl: summary.r_tl_ave,
        r_ll: summary.r_ll_ave,
    };
    if !is_feasible(summary, FEASIBILITY_TOLERANCE) {
        return Err(infeasible());
    }
    let upper = rtl_bound(summary.n_learners, summary.r_ll_ave)
        .map_err(|_| infeasible())?
        .upper;
    Ok((upper - summary.r_tl_ave).max(0.0))
}

/// One sample of the boundary curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub r_ll: f64,
    pub r_tl_upper: f64,
    pub r_tl_lower: f64,
}

/// Samples `grid_points` values of `r_ll` uniformly over its feasible range.
pub fn boundary_curve(n_learners: usize, grid_points: usize) -> Result<Vec<BoundaryPoint>> {
    let ll = rll_bounds(n_learners)?;
    if grid_points < 2 {
        return Err(Error::Config(format!(
            "grid_points must be at least 2, got {grid_points}"
        )));
    }
    let step = (ll.upper - ll.lower) / (grid_points - 1) as f64;
    (0..grid_points)
        .map(|i| {
            let r_ll = if i + 1 == grid_points {
                ll.upper
            } else {
                ll.lower + step * i as f64
            };
            let b = rtl_bound(n_learners, r_ll)?;
            Ok(BoundaryPoint {
                r_ll,
                r_tl_upper: b.upper,
                r_tl_lower: b.lower,
            })
        })
        .collect()
}

/// Writes `r_ll,r_tl_upper,r_tl_lower` rows with a header.
pub fn write_boundary_csv<W: std::io::Write>(points: &[BoundaryPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["r_ll", "r_tl_upper", "r_tl_lower"])
        .map_err(|e| Error::Io(e.to_string()))?;
    for p in points {
        w.write_record([
            p.r_ll.to_string(),
            p.r_tl_upper.to_string(),
            p.r_tl_lower.to_string(),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn summary(n: usize, r_tl: f64, r_ll: f64) -> CorrelationSummary {
        CorrelationSummary {
            n_learners: n,
            r_tl_ave: r_tl,
            r_ll_ave: r_ll,
        }
    }

    #[test]
    fn rll_bound_values() {
        assert_eq!(
            rll_bounds(2).unwrap(),
            BoundPair {
                lower: -1.0,
                upper: 1.0
            }
        );
        assert_eq!(rll_bounds(5).unwrap().lower, -0.25);
        assert_abs_diff_eq!(rll_bounds(11).unwrap().lower, -0.1, epsilon = 1e-15);
        assert_eq!(rll_bounds(1), Err(Error::TooFewLearners(1)));
    }

    #[test]
    fn rtl_bound_values() {
        let b = rtl_bound(3, -0.2).unwrap();
        assert_abs_diff_eq!(b.upper, 0.2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(b.upper, 0.4472, epsilon = 1e-4);
        assert!(b.contains(0.3, 0.0));
        for n in 2..20 {
            let full = rtl_bound(n, 1.0).unwrap();
            assert_abs_diff_eq!(full.upper, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(full.lower, -1.0, epsilon = 1e-15);
        }
        let degenerate = rtl_bound(5, -0.25).unwrap();
        assert_eq!(degenerate.upper, 0.0);
        assert!(matches!(rtl_bound(5, -0.3), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn gap_values() {
        let on_curve = summary(3, 0.2f64.sqrt(), -0.2);
        assert_abs_diff_eq!(optimality_gap(&on_curve).unwrap(), 0.0, epsilon = 1e-15);
        let inside = summary(3, 0.3, -0.2);
        assert_abs_diff_eq!(
            optimality_gap(&inside).unwrap(),
            0.2f64.sqrt() - 0.3,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(optimality_gap(&inside).unwrap(), 0.1472, epsilon = 1e-4);
        assert_abs_diff_eq!(
            optimality_gap(&summary(5, 0.0, 0.0)).unwrap(),
            0.2f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(matches!(
            optimality_gap(&summary(3, 1.0, -1.0)),
            Err(Error::InfeasibleSummary { .. })
        ));
    }

    #[test]
    fn curve_endpoints_and_monotone() {
        let c = boundary_curve(5, 101).unwrap();
        assert_eq!(c.len(), 101);
        assert_eq!(
            c[0],
            BoundaryPoint {
                r_ll: -0.25,
                r_tl_upper: 0.0,
                r_tl_lower: 0.0
            }
        );
        let last = c.last().unwrap();
        assert_eq!(
            (last.r_ll, last.r_tl_upper, last.r_tl_lower),
            (1.0, 1.0, -1.0)
        );
        assert!(c.windows(2).all(|w| w[1].r_tl_upper >= w[0].r_tl_upper));
        assert!(c.iter().all(|p| p.r_tl_upper >= 0.0));
        // r_ll = 0 is grid index 20 of 100 steps over [-0.25, 1].
        assert_abs_diff_eq!(c[20].r_ll, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[20].r_tl_upper, 0.2f64.sqrt(), epsilon = 1e-9);
        assert!(boundary_curve(5, 1).is_err());
        assert_eq!(boundary_curve(1, 10), Err(Error::TooFewLearners(1)));
    }

    #[test]
    fn boundary_csv_header() {
        let mut buf = Vec::new();
        write_boundary_csv(&boundary_curve(2, 2).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("r_ll,r_tl_upper,r_tl_lower\n-1,0,"));
    }
}

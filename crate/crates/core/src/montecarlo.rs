//! Finite-cohort simulation of a selection policy.
//!
//! Candidates are drawn i.i.d. from the joint distribution (inverse-CDF over
//! cells, then a Bernoulli label), pushed through the per-stage conditional
//! pass probabilities, and tallied per stage and per revealed-feature prefix.
//! Budgets are measured, never enforced per realization — they are
//! expectation constraints. Replications use a fixed seed with one ChaCha
//! stream per replication, so results are reproducible and independent of
//! execution order.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::metrics;
use crate::model::{JointDistribution, Policy};

/// Outcome counts of one simulated cohort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortResult {
    pub n: usize,
    /// `prefix_counts[stage][prefix]`: candidates with that stage-prefix
    /// surviving through the stage.
    pub prefix_counts: Vec<Vec<usize>>,
    /// Selected candidates with a positive label.
    pub positives: usize,
}

impl CohortResult {
    /// Total survivors of a stage.
    pub fn stage_count(&self, stage: usize) -> usize {
        self.prefix_counts[stage].iter().sum()
    }

    /// Realized budget fraction of a stage.
    pub fn budget_fraction(&self, stage: usize) -> f64 {
        self.stage_count(stage) as f64 / self.n as f64
    }

    pub fn selected(&self) -> usize {
        self.stage_count(self.prefix_counts.len() - 1)
    }

    /// Empirical precision of the final selection; absent when nothing was
    /// selected (an empty ratio would bias convergence statistics).
    pub fn precision(&self) -> Option<f64> {
        let s = self.selected();
        if s > 0 {
            Some(self.positives as f64 / s as f64)
        } else {
            None
        }
    }
}

/// Deterministic RNG for a (seed, replication) pair.
pub fn cohort_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Draws `n` cells by inverse-CDF sampling over the cell masses.
pub fn sample_cohort<R: Rng>(dist: &JointDistribution, n: usize, rng: &mut R) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(dist.cell_count());
    let mut acc = 0.0;
    for &m in dist.mass() {
        acc += m;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            // partition_point: first cell whose cumulative mass exceeds u.
            cdf.partition_point(|&c| c <= u).min(dist.cell_count() - 1)
        })
        .collect()
}

/// Simulates a cohort of `n` candidates through the policy.
pub fn run_policy<R: Rng>(
    dist: &JointDistribution,
    policy: &Policy,
    n: usize,
    rng: &mut R,
) -> CohortResult {
    let plan = policy.plan();
    let k = plan.k();
    let mut prefix_counts: Vec<Vec<usize>> =
        (0..k).map(|i| vec![0usize; 1 << plan.cut(i)]).collect();
    let mut positives = 0usize;
    let cells = sample_cohort(dist, n, rng);
    for cell in cells {
        let label = rng.random::<f64>() < dist.positive()[cell];
        let mut alive = true;
        for stage in 0..k {
            let prefix = plan.prefix(cell, stage);
            if rng.random::<f64>() >= policy.conditional()[stage][prefix] {
                alive = false;
                break;
            }
            prefix_counts[stage][prefix] += 1;
        }
        if alive && label {
            positives += 1;
        }
    }
    CohortResult { n, prefix_counts, positives }
}

/// Mean absolute deviation from the model value at each cohort size, with
/// the fitted log-log slope (Monte Carlo averaging predicts ≈ −1/2).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub mean_abs_error: Vec<f64>,
    pub slope: f64,
}

/// Convergence of the three tracked quantities: per-prefix selected
/// fractions, per-stage budget fractions, and realized precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub sizes: Vec<usize>,
    pub prefix_fractions: ErrorSeries,
    pub budgets: ErrorSeries,
    pub precision: ErrorSeries,
}

pub fn convergence_study(
    dist: &JointDistribution,
    policy: &Policy,
    sizes: &[usize],
    replications: u64,
    seed: u64,
) -> ConvergenceStudy {
    let plan = policy.plan();
    let k = plan.k();
    // Model values: E[n^(i)_p / n] = Σ_{cells with prefix p} mass · cumulative.
    let mut expected_prefix: Vec<Vec<f64>> = (0..k).map(|i| vec![0.0; 1 << plan.cut(i)]).collect();
    for c in 0..dist.cell_count() {
        for stage in 0..k {
            expected_prefix[stage][plan.prefix(c, stage)] +=
                dist.mass()[c] * policy.cumulative_for_cell(c, stage);
        }
    }
    let expected_budget: Vec<f64> =
        (0..k).map(|i| metrics::selection_mass(dist, policy, i)).collect();
    let expected_precision = metrics::utility(dist, policy);

    let mut prefix_err = Vec::with_capacity(sizes.len());
    let mut budget_err = Vec::with_capacity(sizes.len());
    let mut precision_err = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut pe = 0.0;
        let mut be = 0.0;
        let mut ce = 0.0;
        let mut ce_count = 0u64;
        for rep in 0..replications {
            let mut rng = cohort_rng(seed, rep);
            let result = run_policy(dist, policy, n, &mut rng);
            let mut dev = 0.0;
            let mut cnt = 0usize;
            for stage in 0..k {
                for (p, &e) in expected_prefix[stage].iter().enumerate() {
                    dev += math::abs(result.prefix_counts[stage][p] as f64 / n as f64 - e);
                    cnt += 1;
                }
            }
            pe += dev / cnt as f64;
            be += (0..k)
                .map(|i| math::abs(result.budget_fraction(i) - expected_budget[i]))
                .sum::<f64>()
                / k as f64;
            if let Some(p) = result.precision() {
                ce += math::abs(p - expected_precision);
                ce_count += 1;
            }
        }
        prefix_err.push(pe / replications as f64);
        budget_err.push(be / replications as f64);
        precision_err.push(if ce_count > 0 { ce / ce_count as f64 } else { f64::NAN });
    }
    let series = |errors: Vec<f64>| ErrorSeries { slope: loglog_slope(sizes, &errors), mean_abs_error: errors };
    ConvergenceStudy {
        sizes: sizes.to_vec(),
        prefix_fractions: series(prefix_err),
        budgets: series(budget_err),
        precision: series(precision_err),
    }
}

/// Least-squares slope of `ln(y)` on `ln(x)`; NaN when fewer than two usable
/// points remain.
pub fn loglog_slope(xs: &[usize], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|&(_, &y)| y > 0.0 && y.is_finite())
        .map(|(&x, &y)| (math::ln(x as f64), math::ln(y)))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Budgets, FeatureSpace, SensitivePlacement, StagePlan};

    fn instance() -> (JointDistribution, Policy) {
        let space = FeatureSpace::new(vec!["s".into(), "x".into()]).unwrap();
        let dist = JointDistribution::new(
            space,
            vec![0.3, 0.2, 0.25, 0.25],
            vec![0.1, 0.8, 0.3, 0.6],
        )
        .unwrap();
        let plan = StagePlan::new(vec![1, 2], 0, SensitivePlacement::Stage(1)).unwrap();
        let budgets = Budgets::new(vec![0.6, 0.4]).unwrap();
        (dist, Policy::proportional(plan, &budgets))
    }

    #[test]
    fn sampling_matches_masses() {
        let (dist, _) = instance();
        let mut rng = cohort_rng(7, 0);
        let cells = sample_cohort(&dist, 200_000, &mut rng);
        let mut counts = [0usize; 4];
        for c in cells {
            counts[c] += 1;
        }
        for (c, &m) in dist.mass().iter().enumerate() {
            let freq = counts[c] as f64 / 200_000.0;
            assert!((freq - m).abs() < 0.01, "cell {c}: {freq} vs {m}");
        }
    }

    #[test]
    fn cohort_respects_budgets_in_expectation() {
        let (dist, policy) = instance();
        let mut rng = cohort_rng(11, 0);
        let result = run_policy(&dist, &policy, 100_000, &mut rng);
        assert!((result.budget_fraction(0) - 0.6).abs() < 0.01);
        assert!((result.budget_fraction(1) - 0.4).abs() < 0.01);
        let precision = result.precision().unwrap();
        assert!((precision - dist.positive_rate()).abs() < 0.02);
    }

    #[test]
    fn counts_thin_along_prefix_chains() {
        let (dist, policy) = instance();
        let mut rng = cohort_rng(5, 3);
        let result = run_policy(&dist, &policy, 10_000, &mut rng);
        let plan = policy.plan();
        for prefix in 0..result.prefix_counts[1].len() {
            let parent = plan.parent_prefix(prefix, 1);
            // Children of a parent prefix cannot outnumber it combined.
            assert!(result.prefix_counts[1][prefix] <= result.prefix_counts[0][parent]);
        }
        assert!(result.stage_count(1) <= result.stage_count(0));
    }

    #[test]
    fn empty_selection_reports_absent_precision() {
        let (dist, _) = instance();
        let plan = StagePlan::new(vec![1, 2], 0, SensitivePlacement::Stage(1)).unwrap();
        let policy =
            Policy::from_cumulative(plan, vec![vec![0.0, 0.0], vec![0.0; 4]]).unwrap();
        let result = run_policy(&dist, &policy, 100, &mut cohort_rng(1, 0));
        assert_eq!(result.precision(), None);
    }

    #[test]
    fn replications_are_deterministic_and_distinct() {
        let (dist, policy) = instance();
        let a = run_policy(&dist, &policy, 1000, &mut cohort_rng(3, 0));
        let b = run_policy(&dist, &policy, 1000, &mut cohort_rng(3, 0));
        let c = run_policy(&dist, &policy, 1000, &mut cohort_rng(3, 1));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn error_shrinks_with_cohort_size() {
        let (dist, policy) = instance();
        let study = convergence_study(&dist, &policy, &[100, 1000, 10_000, 100_000], 10, 42);
        for series in [&study.prefix_fractions, &study.budgets, &study.precision] {
            assert!(series.mean_abs_error[0] > series.mean_abs_error[3]);
            assert!(series.slope < -0.3 && series.slope > -0.7, "{}", series.slope);
        }
    }

    #[test]
    fn loglog_slope_recovers_exact_power_law() {
        let xs = [10usize, 100, 1000];
        let ys: Vec<f64> = xs.iter().map(|&x| 3.0 * (x as f64).powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }
}

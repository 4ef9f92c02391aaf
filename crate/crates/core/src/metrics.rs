//! Policy evaluation: utility, per-stage selection rates, group-conditional
//! rates and gaps, and the price / violation of local fairness.

use alloc::vec::Vec;

use crate::math;
use crate::model::{cell_bit, Budgets, Criterion, JointDistribution, Policy};

/// Expected fraction of the population surviving stages `1..=stage+1`.
pub fn selection_mass(dist: &JointDistribution, policy: &Policy, stage: usize) -> f64 {
    (0..dist.cell_count())
        .map(|c| dist.mass()[c] * policy.cumulative_for_cell(c, stage))
        .sum()
}

/// Precision of the final selection: `P(y = 1 | selected)`. Zero if the
/// policy selects nothing.
pub fn utility(dist: &JointDistribution, policy: &Policy) -> f64 {
    let last = policy.plan().k() - 1;
    let mut selected = 0.0;
    let mut positives = 0.0;
    for c in 0..dist.cell_count() {
        let t = dist.mass()[c] * policy.cumulative_for_cell(c, last);
        selected += t;
        positives += t * dist.positive()[c];
    }
    if selected > 0.0 {
        positives / selected
    } else {
        0.0
    }
}

/// Group-conditional selection rates at a stage:
/// `P(pass ≤ stage | x_s = a)` for demographic parity, additionally
/// conditioned on `y = 1` for equal opportunity. A weightless group reports
/// rate 0.
pub fn group_rates(
    dist: &JointDistribution,
    policy: &Policy,
    stage: usize,
    criterion: Criterion,
) -> [f64; 2] {
    let sens = policy.plan().sensitive();
    let mut rate = [0.0f64; 2];
    let mut grp = [0.0f64; 2];
    for c in 0..dist.cell_count() {
        let a = cell_bit(c, sens) as usize;
        let w = match criterion {
            Criterion::Dp => dist.mass()[c],
            Criterion::Eo => dist.mass()[c] * dist.positive()[c],
        };
        grp[a] += w;
        rate[a] += w * policy.cumulative_for_cell(c, stage);
    }
    [
        if grp[0] > 0.0 { rate[0] / grp[0] } else { 0.0 },
        if grp[1] > 0.0 { rate[1] / grp[1] } else { 0.0 },
    ]
}

/// Signed gap between the group-conditional selection rates at a stage
/// (group 0 minus group 1). Zero when either group carries no weight.
pub fn fairness_gap(
    dist: &JointDistribution,
    policy: &Policy,
    stage: usize,
    criterion: Criterion,
) -> f64 {
    let sens = policy.plan().sensitive();
    if dist.group_mass(sens, 0, criterion == Criterion::Eo) <= 0.0
        || dist.group_mass(sens, 1, criterion == Criterion::Eo) <= 0.0
    {
        return 0.0;
    }
    let [r0, r1] = group_rates(dist, policy, stage, criterion);
    r0 - r1
}

/// Per-stage summary of a policy against a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    /// `P(y = 1 | selected)` of the final stage.
    pub precision: f64,
    /// Expected surviving mass after each stage.
    pub selection: Vec<f64>,
    /// Group-conditional selection rates per stage, demographic-parity style.
    pub dp_rates: Vec<[f64; 2]>,
    /// Group-conditional rates among positives, equal-opportunity style.
    pub eo_rates: Vec<[f64; 2]>,
    /// Absolute demographic-parity gap per stage.
    pub dp_gaps: Vec<f64>,
    /// Absolute equal-opportunity gap per stage.
    pub eo_gaps: Vec<f64>,
}

pub fn evaluate(dist: &JointDistribution, policy: &Policy) -> PolicyEvaluation {
    let k = policy.plan().k();
    let dp_rates: Vec<[f64; 2]> =
        (0..k).map(|i| group_rates(dist, policy, i, Criterion::Dp)).collect();
    let eo_rates: Vec<[f64; 2]> =
        (0..k).map(|i| group_rates(dist, policy, i, Criterion::Eo)).collect();
    PolicyEvaluation {
        precision: utility(dist, policy),
        selection: (0..k).map(|i| selection_mass(dist, policy, i)).collect(),
        dp_gaps: (0..k)
            .map(|i| math::abs(fairness_gap(dist, policy, i, Criterion::Dp)))
            .collect(),
        eo_gaps: (0..k)
            .map(|i| math::abs(fairness_gap(dist, policy, i, Criterion::Eo)))
            .collect(),
        dp_rates,
        eo_rates,
    }
}

/// Price of local fairness: the ratio of the optimal globally fair utility to
/// the optimal locally fair utility (≥ 1 whenever both exist).
pub fn polf(gf_utility: f64, lf_utility: f64) -> f64 {
    gf_utility / lf_utility
}

/// Upper bound on the price of local fairness:
/// `min(1 / α_k, 1 / P(y = 1))`.
pub fn polf_bound(dist: &JointDistribution, budgets: &Budgets) -> f64 {
    let base = dist.positive_rate();
    let a = 1.0 / budgets.last();
    if base > 0.0 {
        a.min(1.0 / base)
    } else {
        a
    }
}

/// Violation of local fairness of a policy — typically the globally fair
/// optimum: the absolute fairness gap of every intermediate stage, and the
/// scalar summary (the stage-1 gap for two stages, the maximum otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct VolfReport {
    /// Absolute gaps for stages `1..k` (the final stage is excluded — it is
    /// where global fairness holds by construction).
    pub per_stage: Vec<f64>,
    pub scalar: f64,
}

pub fn volf(dist: &JointDistribution, policy: &Policy, criterion: Criterion) -> VolfReport {
    let k = policy.plan().k();
    let per_stage: Vec<f64> = (0..k.saturating_sub(1))
        .map(|i| math::abs(fairness_gap(dist, policy, i, criterion)))
        .collect();
    let scalar = per_stage.iter().copied().fold(0.0, f64::max);
    VolfReport { per_stage, scalar }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FairnessSpec, FeatureSpace, Scope, SensitivePlacement, StagePlan};
    use crate::policy::optimize;

    fn instance() -> (JointDistribution, StagePlan, Budgets) {
        let space = FeatureSpace::new(vec!["s".into(), "x".into()]).unwrap();
        let dist = JointDistribution::new(
            space,
            vec![0.3, 0.2, 0.25, 0.25],
            vec![0.1, 0.8, 0.3, 0.6],
        )
        .unwrap();
        let plan = StagePlan::new(vec![1, 2], 0, SensitivePlacement::Stage(1)).unwrap();
        let budgets = Budgets::new(vec![0.6, 0.4]).unwrap();
        (dist, plan, budgets)
    }

    #[test]
    fn proportional_policy_has_base_rate_utility_and_zero_gaps() {
        let (dist, plan, budgets) = instance();
        let policy = Policy::proportional(plan, &budgets);
        assert!((utility(&dist, &policy) - dist.positive_rate()).abs() < 1e-12);
        let eval = evaluate(&dist, &policy);
        for stage in 0..2 {
            assert!(eval.dp_gaps[stage] < 1e-12);
            assert!(eval.eo_gaps[stage] < 1e-12);
        }
        assert!(volf(&dist, &policy, Criterion::Dp).scalar < 1e-12);
    }

    #[test]
    fn selection_mass_matches_budgets_at_optimum() {
        let (dist, plan, budgets) = instance();
        let opt = optimize(
            &dist,
            &plan,
            &budgets,
            FairnessSpec::new(Criterion::Dp, Scope::Unconstrained),
        )
        .unwrap();
        let eval = evaluate(&dist, &opt.policy);
        assert!(eval.selection[0] <= budgets.alphas()[0] + 1e-9);
        assert!((eval.selection[1] - budgets.last()).abs() < 1e-9);
        // Selection mass is non-increasing stage to stage.
        assert!(eval.selection[1] <= eval.selection[0] + 1e-12);
        // LP utility is normalized by α_k; precision agrees since the final
        // budget row is an equality.
        assert!((eval.precision - opt.utility).abs() < 1e-9);
    }

    #[test]
    fn polf_bound_formula() {
        let (dist, _, budgets) = instance();
        let expect = (1.0 / 0.4f64).min(1.0 / dist.positive_rate());
        assert!((polf_bound(&dist, &budgets) - expect).abs() < 1e-12);
        assert!((polf(0.6, 0.4) - 1.5).abs() < 1e-12);
        assert_eq!(polf(0.5, 0.5), 1.0);
    }

    #[test]
    fn volf_of_gf_optimum_is_stage_one_gap() {
        let (dist, plan, budgets) = instance();
        let gf = optimize(
            &dist,
            &plan,
            &budgets,
            FairnessSpec::new(Criterion::Dp, Scope::Global),
        )
        .unwrap();
        let gap = fairness_gap(&dist, &gf.policy, 0, Criterion::Dp);
        let report = volf(&dist, &gf.policy, Criterion::Dp);
        assert_eq!(report.per_stage.len(), 1);
        assert!((report.scalar - gap.abs()).abs() < 1e-12);
        // Final-stage gap is zero by the global constraint.
        assert!(fairness_gap(&dist, &gf.policy, 1, Criterion::Dp).abs() < 1e-9);
    }

    #[test]
    fn group_rates_marginalize_consistently() {
        let (dist, plan, budgets) = instance();
        let policy = Policy::proportional(plan, &budgets);
        let [r0, r1] = group_rates(&dist, &policy, 1, Criterion::Dp);
        let p0 = dist.group_mass(0, 0, false);
        let p1 = dist.group_mass(0, 1, false);
        let total = r0 * p0 + r1 * p1;
        assert!((total - selection_mass(&dist, &policy, 1)).abs() < 1e-12);
    }
}

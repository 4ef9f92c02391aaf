//! Property tests over random instances: utility orderings, budget
//! feasibility, coupling, and fairness residuals of optimal policies.

use proptest::prelude::*;
use stagefair_core::metrics;
use stagefair_core::model::{
    Budgets, Criterion, FairnessSpec, FeatureSpace, JointDistribution, Scope, SensitivePlacement,
    StagePlan,
};
use stagefair_core::policy::optimize;

fn names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("f{i}")).collect()
}

prop_compose! {
    fn distribution(d: usize)(
        raw in prop::collection::vec(0.01f64..1.0, 1 << d),
        pos in prop::collection::vec(0.0f64..1.0, 1 << d),
    ) -> JointDistribution {
        let total: f64 = raw.iter().sum();
        let mass: Vec<f64> = raw.iter().map(|m| m / total).collect();
        // Re-normalize drift so the sum is exactly 1 within tolerance.
        let space = FeatureSpace::new(names(d)).unwrap();
        JointDistribution::new(space, mass, pos).unwrap()
    }
}

prop_compose! {
    fn budgets2()(a2 in 0.05f64..0.8, extra in 0.0f64..0.2) -> Budgets {
        let a1 = (a2 + extra).min(1.0);
        Budgets::new(vec![a1, a2]).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn utility_ordering_and_residuals(
        dist in distribution(3),
        budgets in budgets2(),
        criterion in prop_oneof![Just(Criterion::Dp), Just(Criterion::Eo)],
    ) {
        let plan = StagePlan::new(vec![1, 3], 0, SensitivePlacement::Stage(1)).unwrap();
        let un = optimize(&dist, &plan, &budgets,
            FairnessSpec::new(criterion, Scope::Unconstrained)).unwrap();
        let gf = optimize(&dist, &plan, &budgets,
            FairnessSpec::new(criterion, Scope::Global)).unwrap();
        let lf = optimize(&dist, &plan, &budgets,
            FairnessSpec::new(criterion, Scope::Local)).unwrap();

        // Tighter constraint sets cannot raise the optimum.
        prop_assert!(un.utility >= gf.utility - 1e-8);
        prop_assert!(gf.utility >= lf.utility - 1e-8);

        // Budget feasibility of every returned policy.
        for opt in [&un, &gf, &lf] {
            let eval = metrics::evaluate(&dist, &opt.policy);
            prop_assert!(eval.selection[0] <= budgets.alphas()[0] + 1e-8);
            prop_assert!((eval.selection[1] - budgets.last()).abs() < 1e-8);
        }

        // Fairness residuals where constrained (rows may be dropped when a
        // group carries no weight, e.g. equal opportunity with a one-sided
        // positive distribution).
        if gf.warnings.is_empty() {
            let gap = metrics::fairness_gap(&dist, &gf.policy, 1, criterion);
            prop_assert!(gap.abs() < 1e-8, "gf final gap {gap}");
        }
        if lf.warnings.is_empty() {
            for stage in 0..2 {
                let gap = metrics::fairness_gap(&dist, &lf.policy, stage, criterion);
                prop_assert!(gap.abs() < 1e-8, "lf stage {stage} gap {gap}");
            }
        }

        // Price of local fairness respects its bound.
        if lf.utility > 1e-9 {
            let ratio = metrics::polf(gf.utility, lf.utility);
            prop_assert!(ratio >= 1.0 - 1e-7);
            prop_assert!(ratio <= metrics::polf_bound(&dist, &budgets) + 1e-7);
        }
    }

    #[test]
    fn coupling_holds_on_optimal_policies(
        dist in distribution(3),
        budgets in budgets2(),
    ) {
        let plan = StagePlan::new(vec![2, 3], 1, SensitivePlacement::Stage(1)).unwrap();
        let opt = optimize(&dist, &plan, &budgets,
            FairnessSpec::new(Criterion::Dp, Scope::Global)).unwrap();
        for prefix in 0..8usize {
            let child = opt.policy.cumulative()[1][prefix];
            let parent = opt.policy.cumulative()[0][prefix & 3];
            prop_assert!(child <= parent + 1e-12);
            prop_assert!((0.0..=1.0).contains(&child));
        }
    }

    #[test]
    fn local_scope_never_beats_proportional_by_less(
        dist in distribution(2),
        budgets in budgets2(),
    ) {
        // The proportional policy is locally fair and meets the budgets, so
        // the LF optimum is at least the base rate it achieves.
        let plan = StagePlan::new(vec![1, 2], 0, SensitivePlacement::Stage(1)).unwrap();
        let lf = optimize(&dist, &plan, &budgets,
            FairnessSpec::new(Criterion::Dp, Scope::Local)).unwrap();
        prop_assert!(lf.utility >= dist.positive_rate() - 1e-8);
    }
}

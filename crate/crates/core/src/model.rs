//! Domain types for multistage selection instances.
//!
//! A selection instance is a [`JointDistribution`] over binary feature cells,
//! a [`StagePlan`] describing which decision-feature prefix each stage
//! observes, [`Budgets`] bounding the expected pass fraction per stage, and a
//! [`FairnessSpec`] naming the criterion and scope under which the selection
//! must be fair.
//!
//! Features are binary only; multi-valued data must be binarized upstream.
//! Cells are packed little-endian: feature 0 is the least significant bit, so
//! a cell index ranges over `0..2^d`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Hard cap on the feature count: dense per-cell vectors of `2^d` values must
/// stay small enough for exhaustive enumeration.
pub const MAX_FEATURES: usize = 20;

/// Tolerance for probability-mass normalization checks.
pub const MASS_TOL: f64 = 1e-12;

/// A validation failure, carrying a human-readable description of the first
/// violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Violation {}

fn violation(msg: impl Into<String>) -> Violation {
    Violation(msg.into())
}

/// An ordered list of named binary features.
///
/// The order fixes the cell encoding: feature `i` occupies bit `i` of the
/// cell index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpace {
    names: Vec<String>,
}

impl FeatureSpace {
    pub fn new(names: Vec<String>) -> Result<Self, Violation> {
        if names.is_empty() || names.len() > MAX_FEATURES {
            return Err(violation(format!(
                "feature count must be in 1..={MAX_FEATURES}, got {}",
                names.len()
            )));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(violation(format!("duplicate feature name `{a}`")));
            }
        }
        Ok(Self { names })
    }

    /// Total feature count `d`.
    pub fn d(&self) -> usize {
        self.names.len()
    }

    /// Number of cells, `2^d`.
    pub fn cell_count(&self) -> usize {
        1 << self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Packs a full feature assignment into a cell index (little-endian).
    pub fn cell_index(&self, assignment: &[u8]) -> Result<usize, Violation> {
        if assignment.len() != self.d() {
            return Err(violation(format!(
                "assignment length {} does not match d = {}",
                assignment.len(),
                self.d()
            )));
        }
        let mut cell = 0usize;
        for (i, &bit) in assignment.iter().enumerate() {
            if bit > 1 {
                return Err(violation(format!("feature value must be 0 or 1, got {bit}")));
            }
            cell |= (bit as usize) << i;
        }
        Ok(cell)
    }

    /// Inverse of [`cell_index`](Self::cell_index).
    pub fn cell_decode(&self, cell: usize) -> Vec<u8> {
        (0..self.d()).map(|i| ((cell >> i) & 1) as u8).collect()
    }
}

/// Value of one feature inside a cell index.
pub fn cell_bit(cell: usize, feature: usize) -> u8 {
    ((cell >> feature) & 1) as u8
}

/// Cell probabilities and per-cell conditional probability of a positive
/// label.
///
/// `mass[c]` is the probability of observing the feature realization `c`;
/// `positive[c]` is the probability that a candidate in cell `c` carries a
/// positive label. Zero-mass cells carry `positive = 0` by convention; they
/// contribute nothing to any objective or constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    space: FeatureSpace,
    mass: Vec<f64>,
    positive: Vec<f64>,
}

impl JointDistribution {
    pub fn new(
        space: FeatureSpace,
        mass: Vec<f64>,
        positive: Vec<f64>,
    ) -> Result<Self, Violation> {
        if mass.len() != space.cell_count() || positive.len() != space.cell_count() {
            return Err(violation(format!(
                "mass/positive length must be {} cells, got {}/{}",
                space.cell_count(),
                mass.len(),
                positive.len()
            )));
        }
        let mut total = 0.0;
        for (c, &m) in mass.iter().enumerate() {
            if !(m >= 0.0) {
                return Err(violation(format!("mass[{c}] = {m} is negative or NaN")));
            }
            total += m;
        }
        if math::abs(total - 1.0) > MASS_TOL {
            return Err(violation(format!("mass sums to {total}, expected 1")));
        }
        for (c, &p) in positive.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(violation(format!("positive[{c}] = {p} outside [0,1]")));
            }
            if mass[c] == 0.0 && p != 0.0 {
                return Err(violation(format!(
                    "positive[{c}] = {p} but mass[{c}] = 0 (zero-mass cells must carry positive = 0)"
                )));
            }
        }
        Ok(Self { space, mass, positive })
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn d(&self) -> usize {
        self.space.d()
    }

    pub fn cell_count(&self) -> usize {
        self.space.cell_count()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn positive(&self) -> &[f64] {
        &self.positive
    }

    /// Base rate `P(y = 1)`, marginalized over all cells.
    pub fn positive_rate(&self) -> f64 {
        self.mass
            .iter()
            .zip(&self.positive)
            .map(|(m, p)| m * p)
            .sum()
    }

    /// `P(x_s = a)`, or `P(y = 1, x_s = a)` when `positives_only` is set.
    pub fn group_mass(&self, sensitive: usize, a: u8, positives_only: bool) -> f64 {
        let mut total = 0.0;
        for c in 0..self.cell_count() {
            if cell_bit(c, sensitive) == a {
                total += if positives_only {
                    self.mass[c] * self.positive[c]
                } else {
                    self.mass[c]
                };
            }
        }
        total
    }
}

/// When the sensitive feature becomes a decision input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivePlacement {
    /// Revealed among the decision features of the given 1-based stage.
    Stage(usize),
    /// Present in the joint distribution (for fairness evaluation) but never
    /// among the decision features.
    Unobserved,
}

/// Stage structure of the selection: cumulative decision-feature prefix
/// lengths `d_1 < … < d_k`, plus the position and placement of the sensitive
/// feature in the full space.
///
/// Decision features are stored re-ordered so each stage observes a prefix of
/// the feature list; any mapping from an original column order is the
/// caller's concern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    cuts: Vec<usize>,
    sensitive: usize,
    placement: SensitivePlacement,
}

impl StagePlan {
    pub fn new(
        cuts: Vec<usize>,
        sensitive: usize,
        placement: SensitivePlacement,
    ) -> Result<Self, Violation> {
        if cuts.is_empty() {
            return Err(violation("stage plan needs at least one stage"));
        }
        let mut prev = 0;
        for (i, &c) in cuts.iter().enumerate() {
            if c <= prev {
                return Err(violation(format!(
                    "cuts must be strictly increasing and positive; cut {i} = {c}"
                )));
            }
            prev = c;
        }
        let plan = Self { cuts, sensitive, placement };
        match placement {
            SensitivePlacement::Stage(stage) => {
                if stage == 0 || stage > plan.k() {
                    return Err(violation(format!(
                        "sensitive placement stage {stage} outside 1..={}",
                        plan.k()
                    )));
                }
                let lo = if stage == 1 { 0 } else { plan.cuts[stage - 2] };
                let hi = plan.cuts[stage - 1];
                if sensitive < lo || sensitive >= hi {
                    return Err(violation(format!(
                        "sensitive feature {sensitive} is not revealed at stage {stage} \
                         (stage reveals features {lo}..{hi})"
                    )));
                }
            }
            SensitivePlacement::Unobserved => {
                if sensitive < plan.decision_count() {
                    return Err(violation(format!(
                        "sensitive feature {sensitive} lies inside the decision prefix \
                         (length {}) but is declared unobserved",
                        plan.decision_count()
                    )));
                }
            }
        }
        Ok(plan)
    }

    /// Stage count `k`.
    pub fn k(&self) -> usize {
        self.cuts.len()
    }

    pub fn cuts(&self) -> &[usize] {
        &self.cuts
    }

    /// Prefix length `d_i` observed by the 0-based stage `i`.
    pub fn cut(&self, stage: usize) -> usize {
        self.cuts[stage]
    }

    /// Number of decision features, `d_k`.
    pub fn decision_count(&self) -> usize {
        *self.cuts.last().unwrap()
    }

    pub fn sensitive(&self) -> usize {
        self.sensitive
    }

    pub fn placement(&self) -> SensitivePlacement {
        self.placement
    }

    /// The stage-`i` prefix of a cell (0-based stage).
    pub fn prefix(&self, cell: usize, stage: usize) -> usize {
        cell & ((1 << self.cuts[stage]) - 1)
    }

    /// The parent prefix (stage `i-1`) of a stage-`i` prefix.
    pub fn parent_prefix(&self, prefix: usize, stage: usize) -> usize {
        debug_assert!(stage >= 1);
        prefix & ((1 << self.cuts[stage - 1]) - 1)
    }
}

/// Per-stage expected pass fractions `α_1 ≥ … ≥ α_k`.
///
/// The first `k-1` values are upper bounds in expectation; the final value is
/// an equality target.
#[derive(Debug, Clone, PartialEq)]
pub struct Budgets {
    alphas: Vec<f64>,
}

impl Budgets {
    pub fn new(alphas: Vec<f64>) -> Result<Self, Violation> {
        if alphas.is_empty() {
            return Err(violation("budgets need at least one stage"));
        }
        let mut prev = 1.0;
        for (i, &a) in alphas.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(violation(format!("α_{} = {a} outside (0,1]", i + 1)));
            }
            if a > prev + MASS_TOL {
                return Err(violation(format!(
                    "α_{} ≥ α_{} fails ({prev} < {a})",
                    i,
                    i + 1
                )));
            }
            prev = a;
        }
        Ok(Self { alphas })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    /// Final-stage equality target `α_k`.
    pub fn last(&self) -> f64 {
        *self.alphas.last().unwrap()
    }
}

/// Fairness criterion: independence of the selection from the sensitive
/// feature, optionally conditioned on a positive label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Demographic parity: selection independent of the sensitive feature.
    Dp,
    /// Equal opportunity: independence among truly positive candidates.
    Eo,
}

/// Where fairness is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// No fairness constraint.
    Unconstrained,
    /// Final-stage selection must be fair.
    Global,
    /// Every stage's selection must be fair.
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FairnessSpec {
    pub criterion: Criterion,
    pub scope: Scope,
}

impl FairnessSpec {
    pub fn new(criterion: Criterion, scope: Scope) -> Self {
        Self { criterion, scope }
    }
}

/// Checks that a (distribution, plan, budgets) triple forms a coherent
/// instance; returns the first violated invariant.
pub fn validate_instance(
    dist: &JointDistribution,
    plan: &StagePlan,
    budgets: &Budgets,
) -> Result<(), Violation> {
    if plan.decision_count() > dist.d() {
        return Err(violation(format!(
            "plan uses {} decision features but distribution has only {}",
            plan.decision_count(),
            dist.d()
        )));
    }
    if plan.sensitive() >= dist.d() {
        return Err(violation(format!(
            "sensitive feature index {} outside feature space of size {}",
            plan.sensitive(),
            dist.d()
        )));
    }
    if budgets.k() != plan.k() {
        return Err(violation(format!(
            "budgets cover {} stages but plan has {}",
            budgets.k(),
            plan.k()
        )));
    }
    Ok(())
}

/// A probabilistic selection policy: cumulative pass probabilities per stage
/// per revealed-feature prefix, with the per-stage conditional pass
/// probabilities recovered from the cumulative values.
///
/// `cumulative[i][prefix]` is the probability that a candidate whose first
/// `d_{i+1}` decision features spell `prefix` survives stages `1..=i+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    plan: StagePlan,
    cumulative: Vec<Vec<f64>>,
    conditional: Vec<Vec<f64>>,
}

impl Policy {
    /// Builds a policy from cumulative values, recovering the per-stage
    /// conditionals as the ratio to the parent prefix (0 where the parent
    /// cumulative vanishes).
    pub fn from_cumulative(plan: StagePlan, cumulative: Vec<Vec<f64>>) -> Result<Self, Violation> {
        if cumulative.len() != plan.k() {
            return Err(violation(format!(
                "expected {} stages of cumulative values, got {}",
                plan.k(),
                cumulative.len()
            )));
        }
        for (i, stage) in cumulative.iter().enumerate() {
            let want = 1usize << plan.cut(i);
            if stage.len() != want {
                return Err(violation(format!(
                    "stage {} needs {want} cumulative values, got {}",
                    i + 1,
                    stage.len()
                )));
            }
            for (prefix, &v) in stage.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(violation(format!(
                        "cumulative[{}][{prefix}] = {v} outside [0,1]",
                        i + 1
                    )));
                }
                if i > 0 {
                    let parent = cumulative[i - 1][plan.parent_prefix(prefix, i)];
                    if v > parent + 1e-9 {
                        return Err(violation(format!(
                            "cumulative[{}][{prefix}] = {v} exceeds parent value {parent}",
                            i + 1
                        )));
                    }
                }
            }
        }
        let mut conditional = Vec::with_capacity(plan.k());
        for (i, stage) in cumulative.iter().enumerate() {
            let cond: Vec<f64> = stage
                .iter()
                .enumerate()
                .map(|(prefix, &v)| {
                    if i == 0 {
                        v
                    } else {
                        let parent = cumulative[i - 1][plan.parent_prefix(prefix, i)];
                        if parent > 0.0 {
                            (v / parent).clamp(0.0, 1.0)
                        } else {
                            0.0
                        }
                    }
                })
                .collect();
            conditional.push(cond);
        }
        Ok(Self { plan, cumulative, conditional })
    }

    /// The locally fair baseline that passes every candidate with probability
    /// `α_i / α_{i-1}` at stage `i`, independent of features.
    pub fn proportional(plan: StagePlan, budgets: &Budgets) -> Self {
        let cumulative = (0..plan.k())
            .map(|i| vec![budgets.alphas()[i]; 1 << plan.cut(i)])
            .collect();
        Self::from_cumulative(plan, cumulative).expect("proportional policy is always valid")
    }

    pub fn plan(&self) -> &StagePlan {
        &self.plan
    }

    pub fn cumulative(&self) -> &[Vec<f64>] {
        &self.cumulative
    }

    pub fn conditional(&self) -> &[Vec<f64>] {
        &self.conditional
    }

    /// Cumulative pass probability of a cell at a 0-based stage.
    pub fn cumulative_for_cell(&self, cell: usize, stage: usize) -> f64 {
        self.cumulative[stage][self.plan.prefix(cell, stage)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform2() -> JointDistribution {
        let space = FeatureSpace::new(vec!["a".into(), "b".into()]).unwrap();
        JointDistribution::new(space, vec![0.25; 4], vec![0.5; 4]).unwrap()
    }

    #[test]
    fn cell_index_packs_little_endian() {
        let space = FeatureSpace::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(space.cell_index(&[0, 0, 0]).unwrap(), 0);
        assert_eq!(space.cell_index(&[1, 0, 0]).unwrap(), 1);
        assert_eq!(space.cell_index(&[1, 1, 0]).unwrap(), 3);
        assert!(space.cell_index(&[0, 0]).is_err());
    }

    #[test]
    fn cell_decode_inverts_index() {
        let space = FeatureSpace::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        for cell in 0..space.cell_count() {
            assert_eq!(space.cell_index(&space.cell_decode(cell)).unwrap(), cell);
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(FeatureSpace::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn mass_must_normalize() {
        let space = FeatureSpace::new(vec!["a".into()]).unwrap();
        let err = JointDistribution::new(space, vec![0.5, 0.4], vec![0.0, 0.0]).unwrap_err();
        assert!(err.0.contains("sums to"), "{err}");
    }

    #[test]
    fn zero_mass_cell_must_have_zero_positive() {
        let space = FeatureSpace::new(vec!["a".into()]).unwrap();
        assert!(JointDistribution::new(space, vec![1.0, 0.0], vec![0.2, 0.3]).is_err());
    }

    #[test]
    fn budgets_must_be_non_increasing() {
        assert!(Budgets::new(vec![0.3, 0.5]).is_err());
        assert!(Budgets::new(vec![0.5, 0.3]).is_ok());
        assert!(Budgets::new(vec![0.0]).is_err());
    }

    #[test]
    fn validate_instance_accepts_uniform() {
        let dist = uniform2();
        let plan = StagePlan::new(vec![1], 0, SensitivePlacement::Stage(1)).unwrap();
        let budgets = Budgets::new(vec![0.5]).unwrap();
        assert!(validate_instance(&dist, &plan, &budgets).is_ok());
    }

    #[test]
    fn group_mass_splits_total() {
        let dist = uniform2();
        let total = dist.group_mass(1, 0, false) + dist.group_mass(1, 1, false);
        assert!((total - 1.0).abs() < 1e-12);
        assert!((dist.group_mass(1, 0, false) - 0.5).abs() < 1e-12);
        let pos = dist.group_mass(1, 0, true) + dist.group_mass(1, 1, true);
        assert!((pos - dist.positive_rate()).abs() < 1e-12);
    }

    #[test]
    fn point_mass_group_query() {
        let space = FeatureSpace::new(vec!["s".into()]).unwrap();
        let dist = JointDistribution::new(space, vec![0.0, 1.0], vec![0.0, 0.7]).unwrap();
        assert_eq!(dist.group_mass(0, 0, false), 0.0);
        assert_eq!(dist.group_mass(0, 1, false), 1.0);
    }

    #[test]
    fn plan_placement_checks() {
        // stage 2 reveals features 2..4
        assert!(StagePlan::new(vec![2, 4], 2, SensitivePlacement::Stage(2)).is_ok());
        assert!(StagePlan::new(vec![2, 4], 1, SensitivePlacement::Stage(2)).is_err());
        assert!(StagePlan::new(vec![2, 4], 4, SensitivePlacement::Unobserved).is_ok());
        assert!(StagePlan::new(vec![2, 4], 3, SensitivePlacement::Unobserved).is_err());
        assert!(StagePlan::new(vec![2, 2], 0, SensitivePlacement::Stage(1)).is_err());
    }

    #[test]
    fn policy_conditionals_multiply_back() {
        let plan = StagePlan::new(vec![1, 2], 0, SensitivePlacement::Stage(1)).unwrap();
        let cumulative = vec![vec![1.0, 0.4], vec![0.5, 0.2, 0.3, 0.0]];
        let policy = Policy::from_cumulative(plan.clone(), cumulative.clone()).unwrap();
        for (i, stage) in cumulative.iter().enumerate() {
            for (prefix, &v) in stage.iter().enumerate() {
                let mut product = 1.0;
                let mut p = prefix;
                for j in (0..=i).rev() {
                    product *= policy.conditional()[j][p & ((1 << plan.cut(j)) - 1)];
                    p &= (1 << plan.cut(j)) - 1;
                }
                assert!((product - v).abs() < 1e-12, "stage {i} prefix {prefix}");
            }
        }
    }

    #[test]
    fn policy_zero_parent_gives_zero_conditional() {
        let plan = StagePlan::new(vec![1, 2], 0, SensitivePlacement::Stage(1)).unwrap();
        let policy =
            Policy::from_cumulative(plan, vec![vec![0.0, 1.0], vec![0.0, 0.5, 0.0, 0.5]]).unwrap();
        assert_eq!(policy.conditional()[1][0], 0.0);
        assert_eq!(policy.conditional()[1][2], 0.0);
    }

    #[test]
    fn policy_rejects_coupling_violation() {
        let plan = StagePlan::new(vec![1, 2], 0, SensitivePlacement::Stage(1)).unwrap();
        assert!(Policy::from_cumulative(plan, vec![vec![0.2, 0.2], vec![0.5, 0.1, 0.1, 0.1]])
            .is_err());
    }
}

//! Experiment orchestration: α sweeps, feature-combination enumeration,
//! empirical CDFs, the three-stage study, and output emission.
//!
//! The two-stage enumeration mirrors the benchmark protocol: from the six
//! binary features pick one sensitive, choose four of the remaining five as
//! decision features, and split them into two stages of two. Stage order
//! within a stage does not change the program, so splits are deduplicated by
//! stage *set* (6 × 5 × C(4,2) = 180 combinations). Each combination is
//! solved with the sensitive feature revealed at stage 1, at stage 2, and
//! unobserved, across an α₁ grid with α₂ fixed.
//!
//! All parallel loops collect in task order, so results are identical for
//! any thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use stagefair_core::metrics;
use stagefair_core::model::{
    Budgets, Criterion, FairnessSpec, JointDistribution, Scope, SensitivePlacement, StagePlan,
};
use stagefair_core::policy::{optimize, OptimizeError, Optimized};

use crate::datasets::{estimate_distribution, RecordBatch};
use crate::formats::{self, fmt_f64, join_floats};
use crate::{InvariantViolation, SolverFailure};

/// One experiment instance: a feature ordering and the stage structure over
/// it.
#[derive(Debug, Clone)]
pub struct Instance {
    /// Human-readable combination id, stable across runs.
    pub combo: String,
    /// Feature order defining the cell bit layout.
    pub order: Vec<String>,
    pub cuts: Vec<usize>,
    pub sensitive: usize,
    pub placement: SensitivePlacement,
    pub placement_name: &'static str,
}

/// α₁ values from `lo` to 1 inclusive, on a fixed-step grid.
pub fn alpha_grid(lo: f64, step: f64) -> Vec<f64> {
    let count = ((1.0 - lo) / step).round() as usize;
    (0..=count).map(|i| (lo + i as f64 * step).min(1.0)).collect()
}

fn combos<T: Clone>(items: &[T], k: usize) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    let n = items.len();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i].clone()).collect());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] + 1 <= n - (k - i) {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// The 180-combination × 3-placement two-stage instance set.
pub fn two_stage_instances(features: &[String]) -> Vec<Instance> {
    let mut out = Vec::new();
    for xs in features {
        let rest: Vec<String> = features.iter().filter(|f| *f != xs).cloned().collect();
        for sub in combos(&rest, 4) {
            for first in combos(&sub, 2) {
                let second: Vec<String> =
                    sub.iter().filter(|f| !first.contains(f)).cloned().collect();
                let combo = format!(
                    "xs={xs}|s1={}|s2={}",
                    first.join("+"),
                    second.join("+")
                );
                // Sensitive revealed at stage 1.
                let mut order = vec![xs.clone()];
                order.extend(first.iter().cloned());
                order.extend(second.iter().cloned());
                out.push(Instance {
                    combo: combo.clone(),
                    order,
                    cuts: vec![3, 5],
                    sensitive: 0,
                    placement: SensitivePlacement::Stage(1),
                    placement_name: "stage1",
                });
                // Sensitive revealed at stage 2.
                let mut order = first.clone();
                order.extend(second.iter().cloned());
                order.push(xs.clone());
                out.push(Instance {
                    combo: combo.clone(),
                    order: order.clone(),
                    cuts: vec![2, 5],
                    sensitive: 4,
                    placement: SensitivePlacement::Stage(2),
                    placement_name: "stage2",
                });
                // Sensitive never observed (still in the joint distribution).
                out.push(Instance {
                    combo,
                    order,
                    cuts: vec![2, 4],
                    sensitive: 4,
                    placement: SensitivePlacement::Unobserved,
                    placement_name: "unobserved",
                });
            }
        }
    }
    out
}

/// Three-stage instances: one decision feature per stage (three of the five
/// non-sensitive features, as a sorted set), with the sensitive feature
/// revealed at stage 1, 2, or 3.
pub fn three_stage_instances(features: &[String]) -> Vec<Instance> {
    let mut out = Vec::new();
    for xs in features {
        let rest: Vec<String> = features.iter().filter(|f| *f != xs).cloned().collect();
        for sub in combos(&rest, 3) {
            let combo = format!("xs={xs}|f={}", sub.join("+"));
            let (f1, f2, f3) = (&sub[0], &sub[1], &sub[2]);
            let variants: [(&'static str, Vec<String>, Vec<usize>, usize); 3] = [
                (
                    "stage1",
                    vec![xs.clone(), f1.clone(), f2.clone(), f3.clone()],
                    vec![2, 3, 4],
                    0,
                ),
                (
                    "stage2",
                    vec![f1.clone(), xs.clone(), f2.clone(), f3.clone()],
                    vec![1, 3, 4],
                    1,
                ),
                (
                    "stage3",
                    vec![f1.clone(), f2.clone(), xs.clone(), f3.clone()],
                    vec![1, 2, 4],
                    2,
                ),
            ];
            for (name, order, cuts, sens) in variants {
                let stage = sens + 1;
                out.push(Instance {
                    combo: combo.clone(),
                    order,
                    cuts,
                    sensitive: sens,
                    placement: SensitivePlacement::Stage(stage),
                    placement_name: name,
                });
            }
        }
    }
    out
}

/// One solved (instance, α) record.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub dataset: String,
    pub combination: String,
    pub placement: String,
    pub criterion: Criterion,
    pub alphas: Vec<f64>,
    pub u_un: f64,
    pub u_gf: f64,
    pub u_lf: f64,
    pub polf: f64,
    /// Intermediate-stage gaps of the globally fair optimum.
    pub volf_stages: Vec<f64>,
    pub volf: f64,
    pub bound: f64,
    pub warnings: Vec<String>,
}

pub fn criterion_name(criterion: Criterion) -> &'static str {
    match criterion {
        Criterion::Dp => "dp",
        Criterion::Eo => "eo",
    }
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.combination,
            self.placement,
            criterion_name(self.criterion),
            join_floats(&self.alphas),
            fmt_f64(self.u_un),
            fmt_f64(self.u_gf),
            fmt_f64(self.u_lf),
            fmt_f64(self.polf),
            fmt_f64(self.volf),
            join_floats(&self.volf_stages),
            fmt_f64(self.bound),
            self.warnings.join(";")
        )
    }
}

const CHAIN_TOL: f64 = 1e-9;

/// Solves one instance at one budget vector under all three scopes and
/// packages the metrics. Verifies the output invariants: the utility chain,
/// the price-of-local-fairness bound, and local fairness of the LF optimum.
pub fn solve_instance(
    dist: &JointDistribution,
    instance: &Instance,
    budgets: &Budgets,
    criterion: Criterion,
    dataset: &str,
) -> Result<SweepRow> {
    let plan = StagePlan::new(instance.cuts.clone(), instance.sensitive, instance.placement)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let solve = |scope| -> Result<Optimized> {
        optimize(dist, &plan, budgets, FairnessSpec::new(criterion, scope)).map_err(|e| {
            let msg = format!("{}/{}: {e}", instance.combo, instance.placement_name);
            match e {
                OptimizeError::Invalid(_) => anyhow::anyhow!(msg),
                _ => anyhow::Error::new(SolverFailure(msg)),
            }
        })
    };
    let un = solve(Scope::Unconstrained)?;
    let gf = solve(Scope::Global)?;
    let lf = solve(Scope::Local)?;

    let volf_report = metrics::volf(dist, &gf.policy, criterion);
    let bound = metrics::polf_bound(dist, budgets);
    let polf = metrics::polf(gf.utility, lf.utility);
    let mut warnings = un.warnings.clone();
    for w in gf.warnings.iter().chain(&lf.warnings) {
        if !warnings.contains(w) {
            warnings.push(w.clone());
        }
    }

    let row = SweepRow {
        dataset: dataset.to_string(),
        combination: instance.combo.clone(),
        placement: instance.placement_name.to_string(),
        criterion,
        alphas: budgets.alphas().to_vec(),
        u_un: un.utility,
        u_gf: gf.utility,
        u_lf: lf.utility,
        polf,
        volf_stages: volf_report.per_stage,
        volf: volf_report.scalar,
        bound,
        warnings,
    };

    let violated = |msg: String| Err(anyhow::Error::new(InvariantViolation(msg)));
    if row.u_lf > row.u_gf + CHAIN_TOL || row.u_gf > row.u_un + CHAIN_TOL {
        return violated(format!(
            "{}/{}: utility chain {} ≤ {} ≤ {} broken",
            row.combination, row.placement, row.u_lf, row.u_gf, row.u_un
        ));
    }
    if row.polf < 1.0 - CHAIN_TOL || row.polf > row.bound + CHAIN_TOL {
        return violated(format!(
            "{}/{}: polf {} outside [1, {}]",
            row.combination, row.placement, row.polf, row.bound
        ));
    }
    let lf_violation = metrics::volf(dist, &lf.policy, criterion).scalar;
    if lf.warnings.is_empty() && lf_violation > CHAIN_TOL {
        return violated(format!(
            "{}/{}: locally fair optimum has gap {lf_violation}",
            row.combination, row.placement
        ));
    }
    Ok(row)
}

/// α₁ sweep of one fixed instance.
pub fn sweep_alpha(
    batch: &RecordBatch,
    instance: &Instance,
    criterion: Criterion,
    alpha_k: f64,
    step: f64,
    dataset: &str,
) -> Result<Vec<SweepRow>> {
    let dist = estimate_distribution(batch, &instance.order)?;
    alpha_grid(alpha_k, step)
        .par_iter()
        .map(|&a1| {
            let budgets =
                Budgets::new(vec![a1, alpha_k]).map_err(|e| anyhow::anyhow!("{e}"))?;
            solve_instance(&dist, instance, &budgets, criterion, dataset)
        })
        .collect()
}

/// Full two-stage enumeration over combinations, placements, and the α grid.
pub fn enumerate_combinations(
    batch: &RecordBatch,
    criterion: Criterion,
    alpha_k: f64,
    step: f64,
    dataset: &str,
) -> Result<Vec<SweepRow>> {
    let instances = two_stage_instances(&batch.features);
    let grid = alpha_grid(alpha_k, step);
    let rows: Result<Vec<Vec<SweepRow>>> = instances
        .par_iter()
        .map(|instance| {
            let dist = estimate_distribution(batch, &instance.order)?;
            grid.iter()
                .map(|&a1| {
                    let budgets =
                        Budgets::new(vec![a1, alpha_k]).map_err(|e| anyhow::anyhow!("{e}"))?;
                    solve_instance(&dist, instance, &budgets, criterion, dataset)
                })
                .collect()
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Three-stage study over the budget simplex grid α_k ≤ α₂ ≤ α₁.
pub fn three_stage_study(
    batch: &RecordBatch,
    criterion: Criterion,
    alpha_k: f64,
    step: f64,
    dataset: &str,
) -> Result<Vec<SweepRow>> {
    let instances = three_stage_instances(&batch.features);
    let grid = alpha_grid(alpha_k, step);
    let mut budget_grid = Vec::new();
    for &a1 in &grid {
        for &a2 in &grid {
            if a2 <= a1 {
                budget_grid.push((a1, a2));
            }
        }
    }
    let rows: Result<Vec<Vec<SweepRow>>> = instances
        .par_iter()
        .map(|instance| {
            let dist = estimate_distribution(batch, &instance.order)?;
            budget_grid
                .iter()
                .map(|&(a1, a2)| {
                    let budgets = Budgets::new(vec![a1, a2, alpha_k])
                        .map_err(|e| anyhow::anyhow!("{e}"))?;
                    solve_instance(&dist, instance, &budgets, criterion, dataset)
                })
                .collect()
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Right-continuous empirical CDF as sorted `(value, P(X ≤ value))` steps.
pub fn empirical_cdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        bail!("empirical CDF of an empty sample");
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in CDF input"));
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => out.push((v, frac)),
        }
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in median input"));
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn write_results_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if rows.is_empty() {
        bail!("no rows to write to {}", path.display());
    }
    let mut out = String::from(formats::RESULTS_HEADER);
    out.push('\n');
    for row in rows {
        writeln!(out, "{}", row.csv_line()).unwrap();
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Parses a results CSV produced by [`write_results_csv`].
pub fn read_results_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == formats::RESULTS_HEADER => {}
        other => bail!("unexpected results header {other:?} in {}", path.display()),
    }
    let parse_list = |s: &str| -> Result<Vec<f64>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(';').map(|v| Ok(v.parse::<f64>()?)).collect()
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            bail!("line {}: expected 13 columns, got {}", i + 2, f.len());
        }
        rows.push(SweepRow {
            dataset: f[0].to_string(),
            combination: f[1].to_string(),
            placement: f[2].to_string(),
            criterion: match f[3] {
                "dp" => Criterion::Dp,
                "eo" => Criterion::Eo,
                other => bail!("line {}: unknown criterion `{other}`", i + 2),
            },
            alphas: parse_list(f[4])?,
            u_un: f[5].parse()?,
            u_gf: f[6].parse()?,
            u_lf: f[7].parse()?,
            polf: f[8].parse()?,
            volf: f[9].parse()?,
            volf_stages: parse_list(f[10])?,
            bound: f[11].parse()?,
            warnings: if f[12].is_empty() {
                Vec::new()
            } else {
                f[12].split(';').map(str::to_string).collect()
            },
        });
    }
    Ok(rows)
}

/// Values of one column grouped by placement, in first-appearance order.
pub fn group_by_placement<'a>(
    rows: &'a [SweepRow],
    value: impl Fn(&SweepRow) -> f64,
) -> Vec<(String, Vec<f64>)> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|(p, _)| *p == row.placement) {
            Some((_, vals)) => vals.push(value(row)),
            None => groups.push((row.placement.clone(), vec![value(row)])),
        }
    }
    groups
}

/// Writes CDF CSVs + SVGs for PoLF and VoLF, and the joint scatter, grouped
/// by sensitive placement.
pub fn emit_cdf_outputs(out_dir: &Path, rows: &[SweepRow], stem: &str) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    for (metric, value) in [
        ("polf", &(|r: &SweepRow| r.polf) as &dyn Fn(&SweepRow) -> f64),
        ("volf", &|r: &SweepRow| r.volf),
    ] {
        let groups = group_by_placement(rows, value);
        let mut series = Vec::new();
        for (placement, vals) in &groups {
            let cdf = empirical_cdf(vals)?;
            formats::write_cdf_csv(
                &out_dir.join(format!("{stem}_{metric}_cdf_{placement}.csv")),
                &cdf,
            )?;
            series.push((placement.as_str(), cdf));
        }
        formats::write_line_svg(
            &out_dir.join(format!("{stem}_{metric}_cdf.svg")),
            &format!("{stem}: empirical CDF of {metric}"),
            metric,
            "fraction of instances",
            &series,
        )?;
    }
    // Joint PoLF/VoLF scatter.
    let mut scatter_series = Vec::new();
    for (placement, _) in group_by_placement(rows, |r| r.polf) {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.placement == placement)
            .map(|r| (r.polf, r.volf))
            .collect();
        formats::write_scatter_csv(
            &out_dir.join(format!("{stem}_scatter_{placement}.csv")),
            "polf,volf",
            &pts,
        )?;
        scatter_series.push((placement, pts));
    }
    let scatter_ref: Vec<(&str, Vec<(f64, f64)>)> = scatter_series
        .iter()
        .map(|(p, v)| (p.as_str(), v.clone()))
        .collect();
    formats::write_scatter_svg(
        &out_dir.join(format!("{stem}_scatter.svg")),
        &format!("{stem}: PoLF vs VoLF"),
        "polf",
        "volf",
        &scatter_ref,
    )?;
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use stagefair::datasets::{self, Dataset};
use stagefair::formats::{
    self, DistributionFile, EvaluationReport, IngestReport, PolicyFile,
};
use stagefair::harness::{self, Instance};
use stagefair::{InvariantViolation, SolverFailure};
use stagefair_core::model::{
    Budgets, Criterion, FairnessSpec, JointDistribution, Policy, Scope, SensitivePlacement,
    StagePlan,
};
use stagefair_core::montecarlo;
use stagefair_core::policy::{build_lp, optimize, OptimizeError};
use stagefair_core::metrics;

/// Utility-maximizing multistage selection under budget and fairness
/// constraints.
#[derive(Parser)]
#[command(name = "stagefair", version, about)]
struct Cli {
    /// Worker threads for sweeps (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum CriterionArg {
    Dp,
    Eo,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Dp => Criterion::Dp,
            CriterionArg::Eo => Criterion::Eo,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ScopeArg {
    Un,
    Gf,
    Lf,
}

impl From<ScopeArg> for Scope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Un => Scope::Unconstrained,
            ScopeArg::Gf => Scope::Global,
            ScopeArg::Lf => Scope::Local,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Binarize a raw dataset and emit an empirical distribution JSON.
    Ingest {
        #[arg(long)]
        dataset: Dataset,
        #[arg(long)]
        input: PathBuf,
        /// Output features (comma-separated recipe names, order = bit order);
        /// defaults to all six.
        #[arg(long, value_delimiter = ',')]
        features: Vec<String>,
        #[arg(long)]
        output: PathBuf,
        /// Flip the label (e.g. COMPAS: select non-reoffenders instead).
        #[arg(long)]
        invert_label: bool,
    },
    /// Solve one instance and write the optimal policy JSON.
    Solve {
        #[arg(long)]
        dist: PathBuf,
        /// Cumulative decision-feature counts per stage, e.g. 2,5.
        #[arg(long, value_delimiter = ',')]
        cuts: Vec<usize>,
        /// Sensitive feature name (placement inferred from its position).
        #[arg(long)]
        sensitive: String,
        /// Per-stage budgets, e.g. 0.33,0.3.
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        #[arg(long, value_enum, default_value_t = CriterionArg::Dp)]
        criterion: CriterionArg,
        #[arg(long, value_enum, default_value_t = ScopeArg::Gf)]
        scope: ScopeArg,
        #[arg(long)]
        output: PathBuf,
        /// Write the assembled LP as plain text for external cross-checks.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
    },
    /// α₁ sweep of one fixed two-stage combination.
    Sweep {
        #[arg(long)]
        dataset: Dataset,
        #[arg(long)]
        input: PathBuf,
        /// Stage-1 decision features.
        #[arg(long, value_delimiter = ',')]
        stage1: Vec<String>,
        /// Stage-2 decision features.
        #[arg(long, value_delimiter = ',')]
        stage2: Vec<String>,
        #[arg(long)]
        sensitive: String,
        /// Where the sensitive feature is revealed: 1, 2, or 0 for never.
        #[arg(long, default_value_t = 2)]
        sensitive_at: usize,
        #[arg(long, value_enum, default_value_t = CriterionArg::Dp)]
        criterion: CriterionArg,
        #[arg(long, default_value_t = 0.3)]
        alpha_k: f64,
        #[arg(long, default_value_t = 0.05)]
        grid_step: f64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        invert_label: bool,
    },
    /// Full two-stage enumeration over combinations, placements, and the α grid.
    Enumerate {
        #[arg(long)]
        dataset: Dataset,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = CriterionArg::Dp)]
        criterion: CriterionArg,
        #[arg(long, default_value_t = 0.3)]
        alpha_k: f64,
        #[arg(long, default_value_t = 0.05)]
        grid_step: f64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        invert_label: bool,
    },
    /// Empirical CDFs and scatter plots from an existing results CSV.
    Cdf {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// File-name stem for the emitted CDF/scatter files.
        #[arg(long, default_value = "results")]
        stem: String,
    },
    /// Three-stage study: one decision feature per stage, sensitive at 1/2/3.
    ThreeStage {
        #[arg(long)]
        dataset: Dataset,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = CriterionArg::Dp)]
        criterion: CriterionArg,
        #[arg(long, default_value_t = 0.3)]
        alpha_k: f64,
        #[arg(long, default_value_t = 0.1)]
        grid_step: f64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        invert_label: bool,
    },
    /// Simulate finite cohorts through a solved policy.
    Simulate {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.downcast_ref::<InvariantViolation>().is_some() {
                3
            } else if e.downcast_ref::<SolverFailure>().is_some() {
                2
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}

fn load_batch(dataset: Dataset, input: &PathBuf, invert: bool) -> Result<datasets::RecordBatch> {
    let mut batch = datasets::load_and_binarize(input, dataset)?;
    if invert {
        batch.invert_labels();
    }
    Ok(batch)
}

fn placement_for(cuts: &[usize], sensitive: usize) -> SensitivePlacement {
    let decision = *cuts.last().unwrap_or(&0);
    if sensitive >= decision {
        return SensitivePlacement::Unobserved;
    }
    let stage = cuts.iter().position(|&c| sensitive < c).unwrap() + 1;
    SensitivePlacement::Stage(stage)
}

fn scope_name(scope: Scope) -> &'static str {
    match scope {
        Scope::Unconstrained => "un",
        Scope::Global => "gf",
        Scope::Local => "lf",
    }
}

fn placement_name(placement: SensitivePlacement) -> String {
    match placement {
        SensitivePlacement::Stage(i) => format!("stage{i}"),
        SensitivePlacement::Unobserved => "unobserved".to_string(),
    }
}

fn solver_error(e: OptimizeError) -> anyhow::Error {
    match e {
        OptimizeError::Invalid(v) => anyhow::anyhow!("invalid instance: {v}"),
        other => anyhow::Error::new(SolverFailure(other.to_string())),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { dataset, input, features, output, invert_label } => {
            let batch = load_batch(dataset, &input, invert_label)?;
            let selected: Vec<String> = if features.is_empty() {
                batch.features.clone()
            } else {
                features
            };
            let dist = datasets::estimate_distribution(&batch, &selected)?;
            DistributionFile::from_distribution(&dist).save(&output)?;
            let report = IngestReport {
                dataset: dataset.to_string(),
                rows_kept: batch.n(),
                rows_skipped: batch.skipped,
                label_inverted: invert_label,
                label_rate: batch.label_rate(),
                marginals: batch
                    .features
                    .iter()
                    .enumerate()
                    .map(|(i, f)| (f.clone(), batch.feature_rate(i)))
                    .collect(),
            };
            let report_path = output.with_extension("report.json");
            std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
                .with_context(|| format!("writing {}", report_path.display()))?;
            println!(
                "ingested {} rows ({} skipped) -> {}",
                batch.n(),
                batch.skipped,
                output.display()
            );
            Ok(())
        }
        Command::Solve { dist, cuts, sensitive, alphas, criterion, scope, output, dump_lp } => {
            let file = DistributionFile::load(&dist)?;
            let features = file.features.clone();
            let joint = file.into_distribution()?;
            let sens = features
                .iter()
                .position(|f| *f == sensitive)
                .with_context(|| format!("sensitive feature `{sensitive}` not in {features:?}"))?;
            let placement = placement_for(&cuts, sens);
            let plan = StagePlan::new(cuts.clone(), sens, placement)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let budgets = Budgets::new(alphas.clone()).map_err(|e| anyhow::anyhow!("{e}"))?;
            let spec = FairnessSpec::new(criterion.into(), scope.into());
            if let Some(path) = dump_lp {
                let (problem, _, _) =
                    build_lp(&joint, &plan, &budgets, spec).map_err(|e| anyhow::anyhow!("{e}"))?;
                std::fs::write(&path, problem.to_string())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let opt = optimize(&joint, &plan, &budgets, spec).map_err(solver_error)?;
            let eval = metrics::evaluate(&joint, &opt.policy);
            let policy_file = PolicyFile {
                features,
                cuts,
                sensitive,
                placement: placement_name(placement),
                alphas,
                criterion: harness::criterion_name(criterion.into()).to_string(),
                scope: scope_name(scope.into()).to_string(),
                status: "optimal".to_string(),
                utility: opt.utility,
                warnings: opt.warnings.clone(),
                stages: formats::policy_stages(&opt.policy),
                evaluation: EvaluationReport::from_evaluation(&eval),
            };
            policy_file.save(&output)?;
            println!("U* = {}", formats::fmt_f64(opt.utility));
            for w in &opt.warnings {
                eprintln!("warning: {w}");
            }
            Ok(())
        }
        Command::Sweep {
            dataset,
            input,
            stage1,
            stage2,
            sensitive,
            sensitive_at,
            criterion,
            alpha_k,
            grid_step,
            out_dir,
            invert_label,
        } => {
            let batch = load_batch(dataset, &input, invert_label)?;
            let (n1, n2) = (stage1.len(), stage2.len());
            if n1 == 0 || n2 == 0 {
                bail!("both stages need at least one decision feature");
            }
            let instance = match sensitive_at {
                1 => {
                    let mut order = vec![sensitive.clone()];
                    order.extend(stage1.iter().cloned());
                    order.extend(stage2.iter().cloned());
                    Instance {
                        combo: format!(
                            "xs={sensitive}|s1={}|s2={}",
                            stage1.join("+"),
                            stage2.join("+")
                        ),
                        order,
                        cuts: vec![1 + n1, 1 + n1 + n2],
                        sensitive: 0,
                        placement: SensitivePlacement::Stage(1),
                        placement_name: "stage1",
                    }
                }
                2 | 0 => {
                    let mut order = stage1.clone();
                    order.extend(stage2.iter().cloned());
                    order.push(sensitive.clone());
                    let observed = sensitive_at == 2;
                    Instance {
                        combo: format!(
                            "xs={sensitive}|s1={}|s2={}",
                            stage1.join("+"),
                            stage2.join("+")
                        ),
                        order,
                        cuts: if observed {
                            vec![n1, n1 + n2 + 1]
                        } else {
                            vec![n1, n1 + n2]
                        },
                        sensitive: n1 + n2,
                        placement: if observed {
                            SensitivePlacement::Stage(2)
                        } else {
                            SensitivePlacement::Unobserved
                        },
                        placement_name: if observed { "stage2" } else { "unobserved" },
                    }
                }
                other => bail!("--sensitive-at must be 1, 2, or 0 (unobserved), got {other}"),
            };
            let rows = harness::sweep_alpha(
                &batch,
                &instance,
                criterion.into(),
                alpha_k,
                grid_step,
                &dataset.to_string(),
            )?;
            std::fs::create_dir_all(&out_dir)?;
            harness::write_results_csv(&out_dir.join("results.csv"), &rows)?;
            let curve = |f: &dyn Fn(&harness::SweepRow) -> f64| -> Vec<(f64, f64)> {
                rows.iter().map(|r| (r.alphas[0], f(r))).collect()
            };
            formats::write_line_svg(
                &out_dir.join("utility.svg"),
                &format!("{dataset}: utility vs alpha1 (alpha2 = {alpha_k})"),
                "alpha1",
                "U*",
                &[
                    ("unconstrained", curve(&|r| r.u_un)),
                    ("globally fair", curve(&|r| r.u_gf)),
                    ("locally fair", curve(&|r| r.u_lf)),
                ],
            )?;
            println!("wrote {} rows to {}", rows.len(), out_dir.display());
            Ok(())
        }
        Command::Enumerate {
            dataset,
            input,
            criterion,
            alpha_k,
            grid_step,
            out_dir,
            invert_label,
        } => {
            let batch = load_batch(dataset, &input, invert_label)?;
            let rows = harness::enumerate_combinations(
                &batch,
                criterion.into(),
                alpha_k,
                grid_step,
                &dataset.to_string(),
            )?;
            std::fs::create_dir_all(&out_dir)?;
            harness::write_results_csv(&out_dir.join("results.csv"), &rows)?;
            harness::emit_cdf_outputs(&out_dir, &rows, &dataset.to_string())?;
            println!(
                "enumerated {} rows ({} combinations x 3 placements x alpha grid)",
                rows.len(),
                harness::two_stage_instances(&batch.features).len() / 3
            );
            Ok(())
        }
        Command::Cdf { results, out_dir, stem } => {
            let rows = harness::read_results_csv(&results)?;
            harness::emit_cdf_outputs(&out_dir, &rows, &stem)?;
            println!("wrote CDFs for {} rows to {}", rows.len(), out_dir.display());
            Ok(())
        }
        Command::ThreeStage {
            dataset,
            input,
            criterion,
            alpha_k,
            grid_step,
            out_dir,
            invert_label,
        } => {
            let batch = load_batch(dataset, &input, invert_label)?;
            let rows = harness::three_stage_study(
                &batch,
                criterion.into(),
                alpha_k,
                grid_step,
                &dataset.to_string(),
            )?;
            std::fs::create_dir_all(&out_dir)?;
            harness::write_results_csv(&out_dir.join("results.csv"), &rows)?;
            harness::emit_cdf_outputs(&out_dir, &rows, &format!("{dataset}_3stage"))?;
            for placement in ["stage1", "stage2", "stage3"] {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.placement == placement)
                    .map(|r| r.polf)
                    .collect();
                println!(
                    "median polf, sensitive at {placement}: {}",
                    formats::fmt_f64(harness::median(&vals))
                );
            }
            Ok(())
        }
        Command::Simulate { dist, policy, n, reps, seed, out } => {
            let joint = DistributionFile::load(&dist)?.into_distribution()?;
            let file = PolicyFile::load(&policy)?;
            let sens = file
                .features
                .iter()
                .position(|f| *f == file.sensitive)
                .with_context(|| format!("sensitive `{}` not in policy features", file.sensitive))?;
            let plan = StagePlan::new(file.cuts.clone(), sens, placement_for(&file.cuts, sens))
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let pol = Policy::from_cumulative(plan, file.cumulative_tables())
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            simulate_csv(&joint, &pol, n, reps, seed, &out)?;
            println!("simulated {reps} cohorts of {n} -> {}", out.display());
            Ok(())
        }
    }
}

/// One CSV row per (replication, stage) budget fraction plus a precision row,
/// each with its model expectation.
fn simulate_csv(
    dist: &JointDistribution,
    policy: &Policy,
    n: usize,
    reps: u64,
    seed: u64,
    out: &PathBuf,
) -> Result<()> {
    use std::fmt::Write as _;
    let k = policy.plan().k();
    let expected_budget: Vec<f64> =
        (0..k).map(|i| metrics::selection_mass(dist, policy, i)).collect();
    let expected_precision = metrics::utility(dist, policy);
    let mut csv = String::from("n,rep,stage,quantity,realized,expected,deviation\n");
    for rep in 0..reps {
        let mut rng = montecarlo::cohort_rng(seed, rep);
        let result = montecarlo::run_policy(dist, policy, n, &mut rng);
        for stage in 0..k {
            let realized = result.budget_fraction(stage);
            writeln!(
                csv,
                "{n},{rep},{},budget,{},{},{}",
                stage + 1,
                formats::fmt_f64(realized),
                formats::fmt_f64(expected_budget[stage]),
                formats::fmt_f64((realized - expected_budget[stage]).abs())
            )
            .unwrap();
        }
        let (realized, deviation) = match result.precision() {
            Some(p) => (
                formats::fmt_f64(p),
                formats::fmt_f64((p - expected_precision).abs()),
            ),
            None => ("".to_string(), "".to_string()),
        };
        writeln!(
            csv,
            "{n},{rep},{k},precision,{realized},{},{deviation}",
            formats::fmt_f64(expected_precision)
        )
        .unwrap();
    }
    std::fs::write(out, csv).with_context(|| format!("writing {}", out.display()))
}

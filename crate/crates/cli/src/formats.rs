//! File formats: distribution and policy JSON, results / CDF / scatter CSVs,
//! and static SVG plots. All writers are byte-stable for identical inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stagefair_core::metrics::PolicyEvaluation;
use stagefair_core::model::{FeatureSpace, JointDistribution, Policy};

/// Interchange format for a joint distribution over binary feature cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionFile {
    pub features: Vec<String>,
    /// Cell probabilities, little-endian cell index (features[0] = bit 0).
    pub mass: Vec<f64>,
    /// P(y = 1 | cell) per cell.
    pub positive: Vec<f64>,
}

impl DistributionFile {
    pub fn from_distribution(dist: &JointDistribution) -> Self {
        Self {
            features: dist.space().names().to_vec(),
            mass: dist.mass().to_vec(),
            positive: dist.positive().to_vec(),
        }
    }

    pub fn into_distribution(self) -> Result<JointDistribution> {
        let space = FeatureSpace::new(self.features).map_err(|e| anyhow::anyhow!("{e}"))?;
        JointDistribution::new(space, self.mass, self.positive).map_err(|e| anyhow::anyhow!("{e}"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Sidecar ingestion report emitted next to a distribution file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub dataset: String,
    pub rows_kept: usize,
    pub rows_skipped: usize,
    pub label_inverted: bool,
    pub label_rate: f64,
    /// Empirical frequency of each output feature.
    pub marginals: Vec<(String, f64)>,
}

/// One per-prefix entry of a policy stage table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyEntry {
    /// Prefix bits, feature 0 first.
    pub prefix: String,
    pub cumulative: f64,
    pub conditional: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyStage {
    pub stage: usize,
    pub observed_features: usize,
    pub entries: Vec<PolicyEntry>,
}

/// Policy output file: plan echo, per-stage tables, optimal utility, and the
/// evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub features: Vec<String>,
    pub cuts: Vec<usize>,
    pub sensitive: String,
    pub placement: String,
    pub alphas: Vec<f64>,
    pub criterion: String,
    pub scope: String,
    pub status: String,
    pub utility: f64,
    pub warnings: Vec<String>,
    pub stages: Vec<PolicyStage>,
    pub evaluation: EvaluationReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub precision: f64,
    pub selection: Vec<f64>,
    pub dp_gaps: Vec<f64>,
    pub eo_gaps: Vec<f64>,
}

impl EvaluationReport {
    pub fn from_evaluation(eval: &PolicyEvaluation) -> Self {
        Self {
            precision: eval.precision,
            selection: eval.selection.clone(),
            dp_gaps: eval.dp_gaps.clone(),
            eo_gaps: eval.eo_gaps.clone(),
        }
    }
}

pub fn policy_stages(policy: &Policy) -> Vec<PolicyStage> {
    let plan = policy.plan();
    (0..plan.k())
        .map(|i| {
            let width = plan.cut(i);
            PolicyStage {
                stage: i + 1,
                observed_features: width,
                entries: (0..(1usize << width))
                    .map(|prefix| PolicyEntry {
                        prefix: (0..width)
                            .map(|b| if (prefix >> b) & 1 == 1 { '1' } else { '0' })
                            .collect(),
                        cumulative: policy.cumulative()[i][prefix],
                        conditional: policy.conditional()[i][prefix],
                    })
                    .collect(),
            }
        })
        .collect()
}

impl PolicyFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Rebuilds the cumulative tables for re-simulation.
    pub fn cumulative_tables(&self) -> Vec<Vec<f64>> {
        self.stages
            .iter()
            .map(|s| s.entries.iter().map(|e| e.cumulative).collect())
            .collect()
    }
}

/// Frozen column order of the results CSV (documented in the README and
/// pinned by a golden test).
pub const RESULTS_HEADER: &str =
    "dataset,combination,placement,criterion,alphas,u_un,u_gf,u_lf,polf,volf,volf_stages,bound,warnings";

/// Formats a float with full round-trip precision (shortest representation).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn join_floats(vals: &[f64]) -> String {
    vals.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";")
}

/// Writes `(value, fraction)` CDF pairs with a `value,fraction` header.
pub fn write_cdf_csv(path: &Path, pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.is_empty() {
        bail!("refusing to write an empty CDF to {}", path.display());
    }
    let mut out = String::from("value,fraction\n");
    for (v, f) in pairs {
        writeln!(out, "{},{}", fmt_f64(*v), fmt_f64(*f)).unwrap();
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Writes `(x, y)` scatter pairs with a custom two-column header.
pub fn write_scatter_csv(path: &Path, header: &str, pairs: &[(f64, f64)]) -> Result<()> {
    let mut out = String::with_capacity(pairs.len() * 20);
    out.push_str(header);
    out.push('\n');
    for (x, y) in pairs {
        writeln!(out, "{},{}", fmt_f64(*x), fmt_f64(*y)).unwrap();
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#66a182", "#edae49", "#7b5ea7", "#3e4e50"];

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_series(series: &[(&str, Vec<(f64, f64)>)]) -> Self {
        let mut f = Frame {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for (_, pts) in series {
            for &(x, y) in pts {
                f.x_min = f.x_min.min(x);
                f.x_max = f.x_max.max(x);
                f.y_min = f.y_min.min(y);
                f.y_max = f.y_max.max(y);
            }
        }
        if f.x_min >= f.x_max {
            f.x_max = f.x_min + 1.0;
        }
        if f.y_min >= f.y_max {
            f.y_max = f.y_min + 1.0;
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (SVG_W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (SVG_H - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str, x_label: &str, y_label: &str, frame: &Frame) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>",
        SVG_W / 2.0,
        xml_escape(title)
    )
    .unwrap();
    // axes
    writeln!(
        s,
        "<line x1=\"{m}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\" stroke=\"black\"/>",
        m = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN
    )
    .unwrap();
    writeln!(
        s,
        "<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b:.1}\" stroke=\"black\"/>",
        m = MARGIN,
        t = MARGIN,
        b = SVG_H - MARGIN
    )
    .unwrap();
    for tick in 0..=4 {
        let fx = frame.x_min + (frame.x_max - frame.x_min) * tick as f64 / 4.0;
        let fy = frame.y_min + (frame.y_max - frame.y_min) * tick as f64 / 4.0;
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>",
            frame.px(fx),
            SVG_H - MARGIN + 18.0,
            fx
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>",
            MARGIN - 6.0,
            frame.py(fy) + 4.0,
            fy
        )
        .unwrap();
    }
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
        SVG_W / 2.0,
        SVG_H - 12.0,
        xml_escape(x_label)
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 {:.1})\">{}</text>",
        SVG_H / 2.0,
        SVG_H / 2.0,
        xml_escape(y_label)
    )
    .unwrap();
    s
}

fn svg_legend(s: &mut String, labels: &[&str]) {
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN + 16.0 * i as f64;
        writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/>",
            SVG_W - MARGIN - 130.0,
            y,
            PALETTE[i % PALETTE.len()]
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            SVG_W - MARGIN - 113.0,
            y + 10.0,
            xml_escape(label)
        )
        .unwrap();
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one or more line series into a static SVG plot.
pub fn write_line_svg(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> Result<()> {
    if series.iter().all(|(_, pts)| pts.is_empty()) {
        bail!("refusing to plot empty series to {}", path.display());
    }
    let frame = Frame::from_series(series);
    let mut s = svg_open(title, x_label, y_label, &frame);
    for (i, (_, pts)) in series.iter().enumerate() {
        let points: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            PALETTE[i % PALETTE.len()],
            points.join(" ")
        )
        .unwrap();
    }
    svg_legend(&mut s, &series.iter().map(|(l, _)| *l).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// Renders one or more point clouds into a static SVG scatter plot.
pub fn write_scatter_svg(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> Result<()> {
    if series.iter().all(|(_, pts)| pts.is_empty()) {
        bail!("refusing to plot empty series to {}", path.display());
    }
    let frame = Frame::from_series(series);
    let mut s = svg_open(title, x_label, y_label, &frame);
    for (i, (_, pts)) in series.iter().enumerate() {
        for &(x, y) in pts {
            writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.6\"/>",
                frame.px(x),
                frame.py(y),
                PALETTE[i % PALETTE.len()]
            )
            .unwrap();
        }
    }
    svg_legend(&mut s, &series.iter().map(|(l, _)| *l).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

//! Ingestion of the three benchmark datasets into binary feature batches and
//! empirical joint distributions.
//!
//! Each builtin recipe maps raw columns to exactly six binary features plus a
//! binary label:
//!
//! * **Adult** (comma-separated, no header, UCI column order): `sex` = Male;
//!   `age` > 35; `native_country` ∈ {United-States, England, Canada, Germany,
//!   Japan, Italy, France}; `hours_per_week` > 35; `education` ∈ {Bachelors,
//!   Masters, Doctorate}; `relationship` ∈ {Wife, Husband}; label income
//!   > 50K.
//! * **COMPAS** (comma-separated with header): rows restricted to Caucasian
//!   and African-American defendants; `sex` = Male; `young` = age < 25;
//!   `old` = age > 45; `long_sentence` = jail stay > 30 whole days (missing
//!   timestamps count as short); `drugs` = recidivism charge description
//!   contains "Cocaine" or "Cannabis" (case-sensitive); `race` = Caucasian;
//!   label `is_recid` = 1 (reoffended — see `--invert-label` for the
//!   selection-friendly polarity).
//! * **German** (space-separated, no header, attribute codes): `job` ∈
//!   {A173, A174} (skilled/highly-qualified employment); `housing` = A152
//!   (owns); `sex` ∈ {A91, A93, A94} (male codes); `savings` ∈ {A63, A64}
//!   (> 500 DM); `credit_history` ∈ {A30, A31, A32} (all credits paid duly);
//!   `age` > 50; label = good credit (class 1).
//!
//! Unparsable rows are skipped and counted, never silently dropped.

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::NaiveDateTime;
use stagefair_core::model::{FeatureSpace, JointDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Dataset {
    Adult,
    Compas,
    German,
}

impl Dataset {
    /// Output feature names in recipe order (bit order of the batch).
    pub fn feature_names(self) -> [&'static str; 6] {
        match self {
            Dataset::Adult => [
                "sex",
                "age",
                "native_country",
                "hours_per_week",
                "education",
                "relationship",
            ],
            Dataset::Compas => ["sex", "young", "old", "long_sentence", "drugs", "race"],
            Dataset::German => ["job", "housing", "sex", "savings", "credit_history", "age"],
        }
    }

    pub fn label_name(self) -> &'static str {
        match self {
            Dataset::Adult => "income",
            Dataset::Compas => "recidivism",
            Dataset::German => "returns",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Adult => "adult",
            Dataset::Compas => "compas",
            Dataset::German => "german",
        })
    }
}

/// Binarized rows: six feature bits packed little-endian (recipe order) plus
/// the label.
#[derive(Debug, Clone)]
pub struct RecordBatch {
    pub features: Vec<String>,
    /// (packed feature bits, label) per kept row.
    pub rows: Vec<(u8, bool)>,
    /// Rows dropped as unparsable (filtered rows are not counted here).
    pub skipped: usize,
}

impl RecordBatch {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn label_rate(&self) -> f64 {
        self.rows.iter().filter(|r| r.1).count() as f64 / self.rows.len() as f64
    }

    /// Empirical frequency of one feature column.
    pub fn feature_rate(&self, feature: usize) -> f64 {
        self.rows.iter().filter(|r| (r.0 >> feature) & 1 == 1).count() as f64
            / self.rows.len() as f64
    }

    pub fn invert_labels(&mut self) {
        for row in &mut self.rows {
            row.1 = !row.1;
        }
    }
}

fn pack(bits: [bool; 6]) -> u8 {
    bits.iter()
        .enumerate()
        .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i))
}

pub fn load_and_binarize(path: &Path, dataset: Dataset) -> Result<RecordBatch> {
    let rows = match dataset {
        Dataset::Adult => load_adult(path)?,
        Dataset::Compas => load_compas(path)?,
        Dataset::German => load_german(path)?,
    };
    if rows.0.is_empty() {
        bail!("{dataset}: no usable rows in {}", path.display());
    }
    Ok(RecordBatch {
        features: dataset.feature_names().iter().map(|s| s.to_string()).collect(),
        rows: rows.0,
        skipped: rows.1,
    })
}

fn load_adult(path: &Path) -> Result<(Vec<(u8, bool)>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    let mut skipped = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() < 15 {
            skipped += 1;
            continue;
        }
        let age: i64 = match record[0].parse() {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let hours: i64 = match record[12].parse() {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let bits = pack([
            &record[9] == "Male",
            age > 35,
            matches!(
                &record[13],
                "United-States" | "England" | "Canada" | "Germany" | "Japan" | "Italy" | "France"
            ),
            hours > 35,
            matches!(&record[3], "Bachelors" | "Masters" | "Doctorate"),
            matches!(&record[7], "Wife" | "Husband"),
        ]);
        rows.push((bits, &record[14] == ">50K"));
    }
    Ok((rows, skipped))
}

/// Whole days between two jail timestamps, floored like a calendar
/// difference (a stay of −1 hour is −1 days, not 0).
fn jail_days(jail_in: &str, jail_out: &str) -> Option<i64> {
    let fmt = "%Y-%m-%d %H:%M:%S";
    let i = NaiveDateTime::parse_from_str(jail_in, fmt).ok()?;
    let o = NaiveDateTime::parse_from_str(jail_out, fmt).ok()?;
    Some((o - i).num_seconds().div_euclid(86_400))
}

fn load_compas(path: &Path) -> Result<(Vec<(u8, bool)>, usize)> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("COMPAS input missing column `{name}`"))
    };
    let (c_sex, c_age, c_race) = (col("sex")?, col("age")?, col("race")?);
    let (c_recid, c_charge) = (col("is_recid")?, col("r_charge_desc")?);
    let (c_in, c_out) = (col("c_jail_in")?, col("c_jail_out")?);
    let mut rows = Vec::new();
    let mut skipped = 0usize;
    for record in reader.records() {
        let record = record?;
        let race = &record[c_race];
        if race != "Caucasian" && race != "African-American" {
            continue;
        }
        let age: i64 = match record[c_age].parse() {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let recid: i64 = match record[c_recid].parse() {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let long = jail_days(&record[c_in], &record[c_out]).is_some_and(|d| d > 30);
        let charge = &record[c_charge];
        let bits = pack([
            &record[c_sex] == "Male",
            age < 25,
            age > 45,
            long,
            charge.contains("Cocaine") || charge.contains("Cannabis"),
            race == "Caucasian",
        ]);
        rows.push((bits, recid == 1));
    }
    Ok((rows, skipped))
}

fn load_german(path: &Path) -> Result<(Vec<(u8, bool)>, usize)> {
    let content = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    let mut skipped = 0usize;
    for line in content.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 21 {
            skipped += 1;
            continue;
        }
        let age: i64 = match f[12].parse() {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let bits = pack([
            matches!(f[16], "A173" | "A174"),
            f[14] == "A152",
            matches!(f[8], "A91" | "A93" | "A94"),
            matches!(f[5], "A63" | "A64"),
            matches!(f[2], "A30" | "A31" | "A32"),
            age > 50,
        ]);
        rows.push((bits, f[20] == "1"));
    }
    Ok((rows, skipped))
}

/// Estimates the empirical joint distribution over a chosen subset and order
/// of the batch's features (the order fixes the cell bit layout).
pub fn estimate_distribution(batch: &RecordBatch, selected: &[String]) -> Result<JointDistribution> {
    if batch.rows.is_empty() {
        bail!("empty batch");
    }
    let indices: Vec<usize> = selected
        .iter()
        .map(|name| {
            batch
                .features
                .iter()
                .position(|f| f == name)
                .with_context(|| format!("unknown feature `{name}`"))
        })
        .collect::<Result<_>>()?;
    let d = indices.len();
    let cells = 1usize << d;
    let mut count = vec![0u64; cells];
    let mut pos = vec![0u64; cells];
    for &(bits, label) in &batch.rows {
        let mut cell = 0usize;
        for (i, &src) in indices.iter().enumerate() {
            cell |= (((bits >> src) & 1) as usize) << i;
        }
        count[cell] += 1;
        if label {
            pos[cell] += 1;
        }
    }
    let n = batch.rows.len() as f64;
    let mass: Vec<f64> = count.iter().map(|&c| c as f64 / n).collect();
    let positive: Vec<f64> = count
        .iter()
        .zip(&pos)
        .map(|(&c, &p)| if c > 0 { p as f64 / c as f64 } else { 0.0 })
        .collect();
    let space = FeatureSpace::new(selected.to_vec()).map_err(|e| anyhow::anyhow!("{e}"))?;
    JointDistribution::new(space, mass, positive).map_err(|e| anyhow::anyhow!("{e}"))
}

//! Output-format guarantees: the frozen results CSV schema, byte-stable and
//! well-formed SVG plots, and an end-to-end smoke test of the CLI binary.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

use stagefair::formats;
use stagefair::harness::{self, SweepRow};
use stagefair_core::model::Criterion;

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("stagefair-tests").join(name);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn sample_rows() -> Vec<SweepRow> {
    vec![
        SweepRow {
            dataset: "demo".into(),
            combination: "xs=a|s1=b+c|s2=d+e".into(),
            placement: "stage1".into(),
            criterion: Criterion::Dp,
            alphas: vec![0.5, 0.3],
            u_un: 0.41,
            u_gf: 0.4,
            u_lf: 1.0 / 3.0,
            polf: 1.2,
            volf_stages: vec![0.05],
            volf: 0.05,
            bound: 2.5,
            warnings: vec![],
        },
        SweepRow {
            dataset: "demo".into(),
            combination: "xs=a|s1=b+c|s2=d+e".into(),
            placement: "stage2".into(),
            criterion: Criterion::Eo,
            alphas: vec![0.4, 0.3],
            u_un: 0.39,
            u_gf: 0.39,
            u_lf: 0.39,
            polf: 1.0,
            volf_stages: vec![0.0],
            volf: 0.0,
            bound: 2.0,
            warnings: vec!["fairness row for stage 1 dropped: test".into()],
        },
    ]
}

#[test]
fn results_header_is_frozen() {
    // The column order is a documented interface; changing it breaks
    // downstream consumers and must show up as a test failure.
    assert_eq!(
        formats::RESULTS_HEADER,
        "dataset,combination,placement,criterion,alphas,u_un,u_gf,u_lf,polf,volf,volf_stages,bound,warnings"
    );
}

#[test]
fn results_csv_round_trips_exactly() {
    let dir = temp_dir("roundtrip");
    let path = dir.join("results.csv");
    let rows = sample_rows();
    harness::write_results_csv(&path, &rows).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(formats::RESULTS_HEADER));
    let back = harness::read_results_csv(&path).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!(a.combination, b.combination);
        assert_eq!(a.criterion, b.criterion);
        assert_eq!(a.alphas, b.alphas);
        assert_eq!(a.u_lf, b.u_lf); // shortest round-trip formatting is lossless
        assert_eq!(a.volf_stages, b.volf_stages);
        assert_eq!(a.warnings, b.warnings);
    }
    // Writers are byte-stable.
    let again = dir.join("results2.csv");
    harness::write_results_csv(&again, &rows).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn svg_outputs_are_well_formed_xml() {
    let dir = temp_dir("svg");
    let series = vec![
        ("stage<1>", vec![(0.3, 0.1), (0.5, 0.6), (1.0, 1.0)]),
        ("a&b", vec![(0.3, 0.2), (1.0, 0.9)]),
    ];
    let line = dir.join("line.svg");
    formats::write_line_svg(&line, "demo & <title>", "x", "y", &series).unwrap();
    let scatter = dir.join("scatter.svg");
    formats::write_scatter_svg(&scatter, "demo", "polf", "volf", &series).unwrap();
    for path in [&line, &scatter] {
        let text = fs::read_to_string(path).unwrap();
        let doc = roxmltree::Document::parse(&text)
            .unwrap_or_else(|e| panic!("{}: invalid XML: {e}", path.display()));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
    // Byte-stable for identical input.
    let line2 = dir.join("line2.svg");
    formats::write_line_svg(&line2, "demo & <title>", "x", "y", &series).unwrap();
    assert_eq!(fs::read(&line).unwrap(), fs::read(&line2).unwrap());
}

#[test]
fn cdf_outputs_cover_every_placement() {
    let dir = temp_dir("cdf");
    harness::emit_cdf_outputs(&dir, &sample_rows(), "demo").unwrap();
    for name in [
        "demo_polf_cdf_stage1.csv",
        "demo_polf_cdf_stage2.csv",
        "demo_volf_cdf_stage1.csv",
        "demo_polf_cdf.svg",
        "demo_volf_cdf.svg",
        "demo_scatter_stage1.csv",
        "demo_scatter.svg",
    ] {
        assert!(dir.join(name).exists(), "missing {name}");
    }
    let scatter = fs::read_to_string(dir.join("demo_scatter_stage1.csv")).unwrap();
    assert!(scatter.starts_with("polf,volf\n"));
}

// ---------------------------------------------------------------------------
// CLI smoke tests

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stagefair"))
}

fn data(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(file)
}

#[test]
fn cli_ingest_solve_simulate_pipeline() {
    let dir = temp_dir("cli");
    let dist = dir.join("german.json");

    let out = bin()
        .args(["ingest", "--dataset", "german"])
        .arg("--input")
        .arg(data("german.csv"))
        .arg("--output")
        .arg(&dist)
        .output()
        .unwrap();
    assert!(out.status.success(), "ingest: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("german.report.json")).unwrap()).unwrap();
    assert_eq!(report["rows_kept"], 1000);

    let policy = dir.join("policy.json");
    let out = bin()
        .args(["solve", "--cuts", "2,6", "--sensitive", "sex", "--alphas", "0.5,0.3"])
        .args(["--criterion", "dp", "--scope", "gf"])
        .arg("--dist")
        .arg(&dist)
        .arg("--output")
        .arg(&policy)
        .arg("--dump-lp")
        .arg(dir.join("problem.lp"))
        .output()
        .unwrap();
    assert!(out.status.success(), "solve: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("U* = "), "unexpected stdout: {stdout}");
    let file: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&policy).unwrap()).unwrap();
    assert_eq!(file["status"], "optimal");
    assert_eq!(file["placement"], "stage2");
    assert!(fs::read_to_string(dir.join("problem.lp")).unwrap().starts_with("maximize"));

    let sim = dir.join("sim.csv");
    let out = bin()
        .args(["simulate", "--n", "2000", "--reps", "3", "--seed", "7"])
        .arg("--dist")
        .arg(&dist)
        .arg("--policy")
        .arg(&policy)
        .arg("--out")
        .arg(&sim)
        .output()
        .unwrap();
    assert!(out.status.success(), "simulate: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(&sim).unwrap();
    assert!(csv.starts_with("n,rep,stage,quantity,realized,expected,deviation\n"));
    // 3 reps × (2 budget rows + 1 precision row)
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
}

#[test]
fn cli_sweep_and_cdf() {
    let dir = temp_dir("cli-sweep");
    let out = bin()
        .args(["sweep", "--dataset", "german"])
        .arg("--input")
        .arg(data("german.csv"))
        .args(["--stage1", "job,housing", "--stage2", "savings,credit_history"])
        .args(["--sensitive", "sex", "--sensitive-at", "2", "--grid-step", "0.1"])
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "sweep: {}", String::from_utf8_lossy(&out.stderr));
    let rows = harness::read_results_csv(&dir.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 8); // α₁ ∈ {0.3, 0.4, …, 1.0}
    assert!(dir.join("utility.svg").exists());

    let cdf_dir = dir.join("cdf");
    let out = bin()
        .args(["cdf", "--stem", "german"])
        .arg("--results")
        .arg(dir.join("results.csv"))
        .arg("--out-dir")
        .arg(&cdf_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "cdf: {}", String::from_utf8_lossy(&out.stderr));
    assert!(cdf_dir.join("german_polf_cdf_stage2.csv").exists());
}

#[test]
fn cli_reports_input_errors_with_exit_code_1() {
    let out = bin()
        .args(["ingest", "--dataset", "german", "--input", "/nonexistent/file.csv"])
        .args(["--output", "/tmp/never-written.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    // Invalid budgets (increasing) are an input error, not a solver failure.
    let dir = temp_dir("cli-err");
    let dist = dir.join("german.json");
    let ok = bin()
        .args(["ingest", "--dataset", "german"])
        .arg("--input")
        .arg(data("german.csv"))
        .arg("--output")
        .arg(&dist)
        .output()
        .unwrap();
    assert!(ok.status.success());
    let out = bin()
        .args(["solve", "--cuts", "2,6", "--sensitive", "sex", "--alphas", "0.2,0.5"])
        .arg("--dist")
        .arg(&dist)
        .arg("--output")
        .arg(dir.join("policy.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

use std::path::Path;
use std::process::{Command, Output};

use normlab::cli::{format_csv, parse_csv, CSV_HEADER};

fn normlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normlab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL_FIG1: &[&str] = &["fig1", "--samples", "20", "--m", "40,80", "--depth", "3", "--n", "30"];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_owned(args: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normlab")).args(args).output().unwrap()
}

#[test]
fn bounds_and_solver_print_numbers() {
    let o = normlab(&["bounds", "--m", "4000", "--eps", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    let p: f64 = stdout(&o).trim().parse().unwrap();
    assert!((p - 0.0572).abs() < 1e-4);

    let o = normlab(&["solve-eps", "--m", "4000", "--delta", "0.05"]);
    let e: f64 = stdout(&o).trim().parse().unwrap();
    assert!((e - 0.102).abs() < 1e-3);

    let o = normlab(&["min-width", "--d", "10", "--eps", "0.3", "--delta", "0.05"]);
    assert_eq!(stdout(&o).trim(), "51601");

    let o = normlab(&[
        "bounds",
        "--kind",
        "forward",
        "--m",
        "4000",
        "--depth",
        "10",
        "--samples",
        "2000",
        "--eps",
        "0.2",
        "--format",
        "json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["probability"].as_f64().unwrap() - 0.053_498_445_280_506_6).abs() < 1e-12);
    assert_eq!(v["vacuous"], false);
}

#[test]
fn exit_codes() {
    assert_eq!(normlab(&["bounds", "--m", "10", "--eps", "1.0"]).status.code(), Some(1));
    assert_eq!(
        normlab(&["solve-eps", "--m", "10", "--delta", "0"]).status.code(),
        Some(1)
    );
    assert_eq!(normlab(&["nonsense"]).status.code(), Some(1));
    assert_eq!(normlab(&["fig2", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(normlab(&[]).status.code(), Some(1));
    assert_eq!(normlab(&["fig1", "--eps", "2"]).status.code(), Some(1));
    assert_eq!(normlab(&["--help"]).status.code(), Some(0));
    let o = normlab(&["fig1", "--samples", "2", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    assert_eq!(
        normlab(&["fig1", "--config", "/nonexistent-dir/c.json"]).status.code(),
        Some(2)
    );
}

#[test]
fn experiment_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = run_owned(&with(SMALL_FIG1, &["--seed", "5", "--out", p.to_str().unwrap()]));
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);

    let other = run_owned(&with(SMALL_FIG1, &["--seed", "6"]));
    assert_ne!(other.stdout, ta);
}

#[test]
fn csv_round_trips_and_carries_config() {
    let o = run_owned(&with(SMALL_FIG1, &[]));
    let text = stdout(&o);
    let mut lines = text.lines();
    let config = lines.next().unwrap();
    assert!(config.starts_with("# config: {"));
    assert!(config.contains("\"depth\":3"));
    assert_eq!(lines.next(), Some(CSV_HEADER));
    // 2 schemes × 2 widths × 3 layers × (act, grad)
    assert_eq!(lines.count(), 24);
    let table = parse_csv(&text).unwrap();
    assert_eq!(format_csv(&table).unwrap(), text);
}

#[test]
fn json_output_mirrors_csv() {
    let csv = parse_csv(&stdout(&run_owned(&with(SMALL_FIG1, &[])))).unwrap();
    let o = run_owned(&with(SMALL_FIG1, &["--format", "json"]));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), csv.rows.len());
    for (r, c) in rows.iter().zip(&csv.rows) {
        assert_eq!(r["metric"], c.metric.as_str());
        assert_eq!(r["mean"].as_f64().unwrap(), c.mean);
        assert_eq!(r["count"].as_u64().unwrap(), c.count as u64);
    }
    assert_eq!(v["config"], csv.config);
}

#[test]
fn svg_output_is_a_plot() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig.svg");
    let o = run_owned(&with(SMALL_FIG1, &["--out", path.to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(0));
    let svg = std::fs::read_to_string(&path).unwrap();
    assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains(">act_ratio</text>") && svg.contains(">grad_ratio</text>"));
    assert!(svg.contains(">he_n40</text>") && svg.contains(">glorot_n80</text>"));
    assert_eq!(svg.matches("<polyline").count(), 8);
    assert!(!svg.contains("href"));
}

#[test]
fn no_clobber_refuses_existing_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    std::fs::write(&path, "keep").unwrap();
    let o = normlab(&[
        "fig3",
        "--samples",
        "2",
        "--depth",
        "2",
        "--m",
        "30",
        "--v",
        "0,5",
        "--out",
        path.to_str().unwrap(),
        "--no-clobber",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "keep");
    let o = normlab(&[
        "fig3",
        "--samples",
        "2",
        "--depth",
        "2",
        "--m",
        "30",
        "--v",
        "0,5",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(std::fs::read_to_string(&path)
        .unwrap()
        .contains("grad_ratio_pooled/all,5,"));
}

#[test]
fn config_file_overrides_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(
        &path,
        r#"{"depth": 2, "input_dim": 10, "num_samples": 3, "widths": [{"uniform": 16}], "schemes": ["he-fanin"]}"#,
    )
    .unwrap();
    let o = normlab(&["fig1", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let t = parse_csv(&stdout(&o)).unwrap();
    assert_eq!(t.metrics(), vec!["act_ratio/he-fanin_n16", "grad_ratio/he-fanin_n16"]);
    assert!(t.rows.iter().all(|r| r.count == 3));
}

#[test]
fn monte_carlo_subcommand() {
    let o = normlab(&[
        "mc", "--kind", "inner", "--m", "200", "--n", "10", "--eps", "0.3,0.5", "--trials", "200", "--seed", "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("epsilon,trials,violation_count"));
    assert_eq!(
        normlab(&["mc", "--m", "10", "--n", "5", "--p", "0", "--kind", "backward"])
            .status
            .code(),
        Some(1)
    );
    let o = normlab(&[
        "mc", "--kind", "gates", "--m", "8", "--n", "4", "--depth", "2", "--trials", "50",
    ]);
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn subspace_subcommand_reports_formula_width() {
    let o = normlab(&["subspace", "--samples", "50", "--m", "64", "--n", "20", "--d", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = parse_csv(&stdout(&o)).unwrap();
    let w = t.get("formula_width/all", 3).unwrap().mean;
    assert_eq!(w, normlab::bounds::subspace_min_width(3, 0.5, 0.05, 3).unwrap() as f64);
    assert!(Path::new(env!("CARGO_BIN_EXE_normlab")).exists());
}

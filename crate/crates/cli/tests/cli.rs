//! End-to-end tests of the CLI pipeline: CSV ingestion, categorical
//! expansion, run outputs, and byte-level determinism.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use survlap::theta::Strategy;
use survlap_cli::{assemble_run, run, DataFrame, RunConfig, RunSpec};

fn write_larynx_like(dir: &Path) -> PathBuf {
    // A small survival table with a categorical stage column.
    let csv = "\
id,time,delta,stage,age
1,0.6,1,one,77
2,1.3,1,one,53
3,2.4,1,two,45
4,2.5,1,two,57
5,3.2,1,three,58
6,3.3,0,three,69
7,4.0,1,four,66
8,4.3,1,four,71
9,5.0,0,one,70
10,6.0,1,two,68
11,6.1,0,three,74
12,6.2,1,four,65
13,7.0,1,one,52
14,7.5,0,two,60
15,8.1,1,three,55
";
    let path = dir.join("larynx.csv");
    fs::write(&path, csv).unwrap();
    path
}

fn spec_json() -> &'static str {
    r#"{
        "spec_version": 1,
        "surv": [{
            "data": "larynx",
            "time": "time",
            "event": "delta",
            "covariates": ["stage", "age"],
            "baseline": "weibull",
            "standardize": ["age"]
        }]
    }"#
}

fn config(dir: &Path, out: &str, seed: u64) -> RunConfig {
    let mut data = BTreeMap::new();
    data.insert("larynx".to_string(), dir.join("larynx.csv"));
    RunConfig {
        spec_path: dir.join("spec.json"),
        data,
        out_dir: dir.join(out),
        seed,
        samples: 200,
        strategy: Some(Strategy::Grid),
        hr: true,
        sdcor: false,
        priors: true,
        validate_only: false,
    }
}

#[test]
fn categorical_expansion_lexicographic_reference() {
    let dir = tempfile::tempdir().unwrap();
    write_larynx_like(dir.path());
    fs::write(dir.path().join("spec.json"), spec_json()).unwrap();
    let cfg = config(dir.path(), "out", 1);
    let spec: RunSpec =
        serde_json::from_str(&fs::read_to_string(&cfg.spec_path).unwrap()).unwrap();
    let a = assemble_run(&spec, &cfg).unwrap();
    // Levels {four, one, three, two}: lexicographically first ("four") is
    // the reference, so dummies are stageone, stagethree, stagetwo.
    assert!(a.lookup("stageone_S1").is_some());
    assert!(a.lookup("stagethree_S1").is_some());
    assert!(a.lookup("stagetwo_S1").is_some());
    assert!(a.lookup("stagefour_S1").is_none());
    assert!(a.lookup("age_S1").is_some());
    // Intercept + 3 dummies + age.
    assert_eq!(a.model.latent_dim(), 5);
}

#[test]
fn run_writes_all_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_larynx_like(dir.path());
    fs::write(dir.path().join("spec.json"), spec_json()).unwrap();
    let cfg = config(dir.path(), "out", 7);
    let result = run(&cfg).unwrap().unwrap();
    assert!(result.criteria.log_mlik.is_finite());

    let out = dir.path().join("out");
    for f in ["summary.json", "diagnostics.json", "priors.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["spec_version"], 1);
    let rows = summary["summary"].as_array().unwrap();
    // Intercept, 3 dummies, age, shape.
    assert_eq!(rows.len(), 6);
    assert!(summary["hazard_ratios"].as_array().unwrap().len() == 4);
    // Marginal CSVs exist for every symbol and parse as x,density pairs.
    let m = fs::read_to_string(out.join("marginals/age_S1.csv")).unwrap();
    assert!(m.starts_with("x,density\n"));
    assert!(m.lines().count() > 50);
    // Prior overlay for the Weibull shape.
    assert!(out.join("priors/Weibull__shape__S1.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_larynx_like(dir.path());
    fs::write(dir.path().join("spec.json"), spec_json()).unwrap();
    run(&config(dir.path(), "out1", 42)).unwrap();
    run(&config(dir.path(), "out2", 42)).unwrap();
    for f in ["summary.json", "priors.json", "diagnostics.json", "marginals/age_S1.csv"] {
        let a = fs::read(dir.path().join("out1").join(f)).unwrap();
        let b = fs::read(dir.path().join("out2").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
}

#[test]
fn validate_only_skips_fit_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_larynx_like(dir.path());
    fs::write(dir.path().join("spec.json"), spec_json()).unwrap();
    let mut cfg = config(dir.path(), "out", 1);
    cfg.validate_only = true;
    let result = run(&cfg).unwrap();
    assert!(result.is_none());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_binding_and_bad_column_error_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    write_larynx_like(dir.path());
    fs::write(dir.path().join("spec.json"), spec_json()).unwrap();
    let mut cfg = config(dir.path(), "out", 1);
    cfg.data.clear();
    let err = run(&cfg).unwrap_err().to_string();
    assert!(err.contains("--data larynx="), "unexpected error: {err}");

    // Unknown column.
    let bad_spec = spec_json().replace("\"delta\"", "\"status\"");
    fs::write(dir.path().join("spec.json"), bad_spec).unwrap();
    let cfg = config(dir.path(), "out", 1);
    let err = run(&cfg).unwrap_err().to_string();
    assert!(err.contains("status"), "unexpected error: {err}");
}

#[test]
fn dataframe_rejects_ragged_and_headerless() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    fs::write(&p, "a,b\n1,2\n3\n").unwrap();
    assert!(DataFrame::read(&p).is_err());
    let p2 = dir.path().join("empty.csv");
    fs::write(&p2, "a,b\n").unwrap();
    assert!(DataFrame::read(&p2).is_err());
}

#[test]
fn standardize_centers_and_scales() {
    let dir = tempfile::tempdir().unwrap();
    write_larynx_like(dir.path());
    fs::write(dir.path().join("spec.json"), spec_json()).unwrap();
    let cfg = config(dir.path(), "out", 1);
    let spec: RunSpec =
        serde_json::from_str(&fs::read_to_string(&cfg.spec_path).unwrap()).unwrap();
    let a = assemble_run(&spec, &cfg).unwrap();
    // The standardized age column has mean ~0 and sd ~1 across rows.
    let idx = a.lookup("age_S1").unwrap();
    let col = match idx.target {
        survlap::assemble::SymbolTarget::Latent(i) => i,
        _ => unreachable!(),
    };
    let vals: Vec<f64> = a
        .model
        .rows
        .iter()
        .map(|r| {
            r.design
                .iter()
                .find(|(c, _)| *c == col)
                .map(|(_, coef)| coef.value(&[]))
                .unwrap_or(0.0)
        })
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 1e-10);
    assert!((var - 1.0).abs() < 1e-10);
}

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use afba::problem_file::{default_variant, ProblemFile};
use afba::problems::{gen_admm3, gen_lasso, gen_strongly_convex_qp, Admm3Dims, ProblemInstance};
use serde_json::Value;

fn afba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afba")).args(args).output().expect("binary runs")
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn sample(inst: ProblemInstance, variant: &str) -> ProblemFile {
    let mut file = inst.file.clone();
    file.variant = Some(default_variant(variant, &inst.model()).unwrap());
    file
}

fn samples() -> Vec<(&'static str, ProblemFile)> {
    vec![
        ("qp_condat_vu.json", sample(gen_strongly_convex_qp(3, 12, 5), "condat_vu")),
        ("lasso_fbs.json", sample(gen_lasso(1, 40, 20, 0.2, 0.05), "fbs")),
        ("admm3.json", sample(gen_admm3(6, Admm3Dims::default()), "admm3")),
    ]
}

fn write_tmp(dir: &tempfile::TempDir, name: &str, contents: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, contents).unwrap();
    p.to_str().unwrap().to_owned()
}

/// Set `AFBA_UPDATE_DATA=1` to regenerate the sample files.
#[test]
fn sample_files_match_generators() {
    for (name, file) in samples() {
        let path = data_dir().join(name);
        let text = file.to_json_pretty();
        if std::env::var_os("AFBA_UPDATE_DATA").is_some() {
            fs::create_dir_all(data_dir()).unwrap();
            fs::write(&path, &text).unwrap();
        }
        let on_disk = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(ProblemFile::from_json_str(&on_disk).unwrap(), file, "{name} is stale");
    }
}

#[test]
fn validate_prints_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let (_, file) = &samples()[0];
    let p = write_tmp(&dir, "p.json", &file.to_json_pretty());
    let out = afba(&["validate", &p]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cert: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cert["variant"], "condat_vu");
}

#[test]
fn rejected_parameters_exit_2_with_margin_report() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut file) = samples().remove(0);
    let v = file.variant.as_mut().unwrap();
    v.gamma1 = Some(100.0);
    v.gamma2 = Some(100.0);
    let p = write_tmp(&dir, "p.json", &file.to_json_pretty());
    for cmd in ["validate", "solve"] {
        let out = afba(&[cmd, &p]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        let report: Value = serde_json::from_slice(&out.stdout).unwrap();
        let failed: Vec<&str> = report["inequalities"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|i| i["holds"] == false)
            .map(|i| i["name"].as_str().unwrap())
            .collect();
        assert!(!failed.is_empty());
    }
}

#[test]
fn schema_errors_exit_3_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let (_, file) = &samples()[0];
    let text = file.to_json_pretty().replacen("\"gamma1\"", "\"gamma_one\"", 1);
    let p = write_tmp(&dir, "p.json", &text);
    let out = afba(&["solve", &p]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("variant.gamma_one"));
    let out = afba(&["validate", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn solve_writes_trace_and_report_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (_, file) = &samples()[0];
    let p = write_tmp(&dir, "p.json", &file.to_json_pretty());
    let mut traces = Vec::new();
    for k in 0..2 {
        let trace = dir.path().join(format!("t{k}.csv"));
        let report = dir.path().join(format!("r{k}.json"));
        let out = afba(&["solve", &p, "--trace", trace.to_str().unwrap(), "--report", report.to_str().unwrap(), "--seed", "5"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let rep: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(rep["exit_code"], 0);
        assert_eq!(rep["seed"], 5);
        assert!(rep["diagnostics"]["fejer"]["holds"].as_bool().unwrap());
        traces.push(fs::read(&trace).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn budget_exhaustion_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut file) = samples().remove(0);
    file.run.max_iter = 3;
    let p = write_tmp(&dir, "p.json", &file.to_json_pretty());
    assert_eq!(afba(&["solve", &p]).status.code(), Some(1));
}

#[test]
fn admm_file_solves() {
    let out = afba(&["solve", data_dir().join("admm3.json").to_str().unwrap()]);
    assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn compare_writes_sorted_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.json");
    let p = data_dir().join("qp_condat_vu.json");
    let out = afba(&["compare", p.to_str().unwrap(), "--variants", "dst,condat_vu,fbs", "--out", table.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let t: Value = serde_json::from_str(&fs::read_to_string(&table).unwrap()).unwrap();
    let rows = t["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert_eq!(names, ["condat_vu", "dst", "fbs"]);
    assert!(rows[2]["status"].as_str().unwrap().starts_with("skipped"));
    assert_eq!(rows[0]["status"], "converged");
}

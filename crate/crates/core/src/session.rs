//! File-level pipelines: validate, solve and compare.

use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::diagnostics::{linear_rate_fit, little_o_trend, monitor_dnorm, monitor_fejer_with};
use crate::linops::Vector;
use crate::problem_file::{build_solver, default_variant, FileError, Model, ProblemFile, VariantSpec, SCHEMA_VERSION};
use crate::report::{SolveReport, Termination};
use crate::validity::ValidityCertificate;
use crate::variants::{run, Solver};

/// Process exit status shared by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    Budget,
    InvalidParams,
    BadInput,
    NumericFailure,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Self::Converged => 0,
            Self::Budget => 1,
            Self::InvalidParams => 2,
            Self::BadInput => 3,
            Self::NumericFailure => 4,
        }
    }

    pub fn of_error(e: &FileError) -> Self {
        match e {
            FileError::Rejected(_) => Self::InvalidParams,
            _ => Self::BadInput,
        }
    }

    pub fn of_termination(t: &Termination) -> Self {
        match t {
            Termination::Converged | Termination::Stationary => Self::Converged,
            Termination::MaxIterations => Self::Budget,
            Termination::Diverged | Termination::NumericFailure { .. } => Self::NumericFailure,
        }
    }
}

fn variant_of(file: &ProblemFile) -> Result<&VariantSpec, FileError> {
    file.variant.as_ref().ok_or_else(|| FileError::Content {
        key: "variant".into(),
        message: "a variant is required".into(),
    })
}

/// Builds the configured solver and returns its certificate.
pub fn validate(file: &ProblemFile, seed: u64) -> Result<ValidityCertificate, FileError> {
    let model = file.model(seed)?;
    let solver = build_solver(&model, variant_of(file)?)?;
    Ok(solver.certificate().clone())
}

pub struct SolveOutcome {
    pub outcome: Outcome,
    pub report: SolveReport,
    pub csv: String,
    pub json: Value,
}

fn oracle_state(file: &ProblemFile, solver: &dyn Solver) -> Result<Option<Vector>, FileError> {
    Ok(file.oracle_pair()?.map(|(x, y)| solver.oracle_state(&x, &y)))
}

/// Verdicts computed from a finished run.
pub fn diagnostics(report: &SolveReport) -> Value {
    let mut out = serde_json::Map::new();
    if let Some(dist) = report.fejer_series() {
        let d0 = dist.first().copied().unwrap_or(0.0);
        out.insert("fejer".into(), json!(monitor_fejer_with(&dist, 0.0, 1e-10 * d0 + 1e-14)));
        out.insert("linear_rate".into(), json!(linear_rate_fit(&dist)));
    }
    let d2 = report.res_d_squared();
    out.insert("dnorm_monotone".into(), json!(monitor_dnorm(&d2)));
    if let Ok(v) = little_o_trend(&d2) {
        out.insert("little_o_trend".into(), json!(v));
    }
    Value::Object(out)
}

/// Runs the configured solver; the CSV is thinned by `run.every_k`.
pub fn solve(file: &ProblemFile, seed: u64) -> Result<SolveOutcome, FileError> {
    let model = file.model(seed)?;
    let spec = variant_of(file)?;
    let mut solver = build_solver(&model, spec)?;
    let mut opts = file.run_options();
    opts.record_objective = true;
    opts.keep_every = 0;
    if let Some(z) = oracle_state(file, solver.as_ref())? {
        opts = opts.with_oracle(z);
    }
    let start = Instant::now();
    let z0 = solver.default_start();
    let report = run(solver.as_mut(), &z0, &opts);
    let elapsed = start.elapsed();
    let outcome = Outcome::of_termination(&report.termination);
    let csv = report.to_csv(file.run.every_k);
    let final_row = report.final_row();
    let mut json = json!({
        "schema": SCHEMA_VERSION,
        "variant": solver.name(),
        "seed": seed,
        "termination": report.termination,
        "exit_code": outcome.code(),
        "iterations": report.iterations,
        "final": final_row,
        "certificate": solver.certificate(),
        "diagnostics": diagnostics(&report),
        "timings": { "solve_seconds": elapsed.as_secs_f64() },
        "config": file,
    });
    if outcome == Outcome::NumericFailure {
        json["last_good_iterate"] = json!(report.final_z.iter().copied().collect::<Vec<f64>>());
    }
    Ok(SolveOutcome { outcome, report, csv, json })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub variant: String,
    /// `"converged"`, `"budget"`, `"numeric_failure"` or `"skipped: <reason>"`.
    pub status: String,
    pub iterations: Option<usize>,
    pub final_res_p: Option<f64>,
    pub q_factor: Option<f64>,
    pub linear: Option<bool>,
    pub params: Option<VariantSpec>,
}

fn skipped(name: &str, reason: String) -> CompareRow {
    CompareRow {
        variant: name.into(),
        status: format!("skipped: {reason}"),
        iterations: None,
        final_res_p: None,
        q_factor: None,
        linear: None,
        params: None,
    }
}

fn compare_one(file: &ProblemFile, model: &Model, name: &str) -> CompareRow {
    let spec = match default_variant(name, model) {
        Ok(s) => s,
        Err(e) => return skipped(name, e.to_string()),
    };
    let mut solver = match build_solver(model, &spec) {
        Ok(s) => s,
        Err(FileError::Rejected(r)) => {
            return skipped(name, r.first_failure().unwrap_or("rejected").to_string());
        }
        Err(e) => return skipped(name, e.to_string()),
    };
    let mut opts = file.run_options();
    match oracle_state(file, solver.as_ref()) {
        Ok(Some(z)) => opts = opts.with_oracle(z),
        Ok(None) => {}
        Err(e) => return skipped(name, e.to_string()),
    }
    let z0 = solver.default_start();
    let report = run(solver.as_mut(), &z0, &opts);
    let fit = report.fejer_series().map(|d| linear_rate_fit(&d));
    let status = match Outcome::of_termination(&report.termination) {
        Outcome::Converged => "converged",
        Outcome::Budget => "budget",
        _ => "numeric_failure",
    };
    CompareRow {
        variant: name.into(),
        status: status.into(),
        iterations: Some(report.iterations),
        final_res_p: report.final_row().map(|r| r.res_p),
        q_factor: fit.as_ref().map(|f| f.q_factor),
        linear: fit.as_ref().map(|f| f.linear),
        params: Some(spec),
    }
}

/// Runs every named variant with its own defaults, one thread each; rows are sorted by name.
pub fn compare(file: &ProblemFile, names: &[String], seed: u64) -> Result<Vec<CompareRow>, FileError> {
    if names.is_empty() {
        return Err(FileError::Content { key: "variants".into(), message: "no variants requested".into() });
    }
    let model = file.model(seed)?;
    let mut rows: Vec<CompareRow> = std::thread::scope(|s| {
        let handles: Vec<_> = names.iter().map(|n| s.spawn(|| compare_one(file, &model, n))).collect();
        handles.into_iter().map(|h| h.join().expect("compare worker panicked")).collect()
    });
    rows.sort_by(|a, b| a.variant.cmp(&b.variant));
    Ok(rows)
}

//! Iteration driver, trace rows and solve reports shared by every solver.

use std::fmt::Write as _;

use serde::Serialize;

use crate::linops::{all_finite, SymMetric, Vector};

/// One history row: `(n, λ_n, α_n, ‖z̃_n‖_P, ‖z̃_n‖_D, ‖z_n − z*‖_S, objective)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub res_p: f64,
    pub res_d: f64,
    pub fejer: Option<f64>,
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Converged,
    Stationary,
    MaxIterations,
    Diverged,
    NumericFailure { message: String },
}

impl Termination {
    pub fn converged(&self) -> bool {
        matches!(self, Self::Converged | Self::Stationary)
    }
}

/// Quantities produced by one call to [`Iteration::step`].
#[derive(Debug, Clone)]
pub struct Step {
    pub next: Vector,
    pub lambda: f64,
    pub alpha: f64,
    pub res_p: f64,
    pub res_d: f64,
    /// `z̃_n` is exactly zero.
    pub fixed_point: bool,
}

/// Anything that maps `z_n` to `z_{n+1}` while reporting residuals.
pub trait Iteration {
    fn step(&mut self, z: &Vector, n: usize) -> Result<Step, String>;

    /// Metric used for distances to the oracle point.
    fn fejer_metric(&self) -> Option<&SymMetric> {
        None
    }

    fn objective(&self, _z: &Vector) -> Option<f64> {
        None
    }
}

#[derive(Clone)]
pub struct RunOptions {
    pub max_iter: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub oracle: Option<Vector>,
    /// Keep every k-th iterate in the report (0 keeps none besides the last).
    pub keep_every: usize,
    pub record_objective: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { max_iter: 10_000, tol_abs: 1e-10, tol_rel: 0.0, oracle: None, keep_every: 0, record_objective: false }
    }
}

impl RunOptions {
    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol_abs = tol;
        self
    }

    pub fn with_oracle(mut self, z: Vector) -> Self {
        self.oracle = Some(z);
        self
    }

    pub fn keep_all(mut self) -> Self {
        self.keep_every = 1;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub termination: Termination,
    /// Number of updates applied.
    pub iterations: usize,
    pub rows: Vec<TraceRow>,
    /// `(n, z_n)` pairs kept according to [`RunOptions::keep_every`].
    #[serde(skip)]
    pub iterates: Vec<(usize, Vector)>,
    #[serde(skip)]
    pub final_z: Vector,
}

impl SolveReport {
    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn fejer_series(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.fejer).collect()
    }

    pub fn res_d_squared(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.res_d * r.res_d).collect()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.lambda).collect()
    }

    pub fn iterate_series(&self) -> Vec<Vector> {
        self.iterates.iter().map(|(_, z)| z.clone()).collect()
    }

    /// CSV trace with every `every_k`-th row plus the first and last rows.
    pub fn to_csv(&self, every_k: usize) -> String {
        let mut out = String::from("n,lambda,alpha,res_P,res_D,fejer,objective\n");
        let k = every_k.max(1);
        let last = self.rows.len().saturating_sub(1);
        for (i, r) in self.rows.iter().enumerate() {
            if i % k != 0 && i != last {
                continue;
            }
            let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{},{}",
                r.n,
                r.lambda,
                r.alpha,
                r.res_p,
                r.res_d,
                opt(r.fejer),
                opt(r.objective)
            );
        }
        out
    }
}

/// Runs `it` from `z0` until `res_P ≤ tol_abs + tol_rel‖z‖_P`, the budget is spent,
/// or the iterate stops being finite.
pub fn drive<I: Iteration + ?Sized>(it: &mut I, z0: &Vector, opts: &RunOptions) -> SolveReport {
    let mut z = z0.clone();
    let mut rows = Vec::new();
    let mut iterates = Vec::new();
    let z0_scale = 1.0 + z0.norm();
    let fejer = |it: &I, z: &Vector| -> Option<f64> {
        let star = opts.oracle.as_ref()?;
        let s = it.fejer_metric()?;
        Some(s.norm_of(&(z - star)))
    };
    let mut n = 0;
    let termination = loop {
        if opts.keep_every > 0 && n % opts.keep_every == 0 {
            iterates.push((n, z.clone()));
        }
        let step = match it.step(&z, n) {
            Ok(s) => s,
            Err(message) => break Termination::NumericFailure { message },
        };
        let finite = [step.lambda, step.alpha, step.res_p, step.res_d].iter().all(|v| !v.is_nan());
        if !finite {
            break Termination::NumericFailure { message: format!("non-finite step data at n = {n}") };
        }
        rows.push(TraceRow {
            n,
            lambda: step.lambda,
            alpha: step.alpha,
            res_p: step.res_p,
            res_d: step.res_d,
            fejer: fejer(it, &z),
            objective: if opts.record_objective { it.objective(&z) } else { None },
        });
        if step.fixed_point && n == 0 {
            break Termination::Stationary;
        }
        let scale = opts.tol_rel * it.fejer_metric().map_or(z.norm(), |s| s.norm_of(&z));
        if step.fixed_point || step.res_p <= opts.tol_abs + scale {
            break Termination::Converged;
        }
        if n >= opts.max_iter {
            break Termination::MaxIterations;
        }
        if !all_finite(&step.next) {
            break Termination::NumericFailure {
                message: format!("non-finite iterate produced at n = {}", n + 1),
            };
        }
        if (&step.next - z0).norm() > 1e12 * z0_scale {
            z = step.next;
            n += 1;
            break Termination::Diverged;
        }
        z = step.next;
        n += 1;
    };
    if opts.keep_every > 0 && iterates.last().map(|(k, _)| *k) != Some(n) {
        iterates.push((n, z.clone()));
    }
    SolveReport { termination, iterations: n, rows, iterates, final_z: z }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Halve;

    impl Iteration for Halve {
        fn step(&mut self, z: &Vector, _n: usize) -> Result<Step, String> {
            let next = z * 0.5;
            let r = (&next - z).norm();
            Ok(Step { next, lambda: 1.0, alpha: 1.0, res_p: r, res_d: r, fixed_point: r == 0.0 })
        }
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let rep = drive(&mut Halve, &Vector::zeros(2), &RunOptions::default());
        assert_eq!(rep.termination, Termination::Stationary);
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.rows.len(), 1);
    }

    #[test]
    fn budget_exhaustion_reported() {
        let opts = RunOptions::default().with_tol(0.0).with_max_iter(5);
        let rep = drive(&mut Halve, &Vector::from_vec(vec![1.0]), &opts);
        assert_eq!(rep.termination, Termination::MaxIterations);
        assert_eq!(rep.iterations, 5);
        assert_eq!(rep.rows.len(), 6);
    }

    #[test]
    fn csv_thinning_keeps_first_and_last() {
        let opts = RunOptions::default().with_tol(0.0).with_max_iter(10);
        let rep = drive(&mut Halve, &Vector::from_vec(vec![1.0]), &opts);
        let csv = rep.to_csv(4);
        let ns: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(ns, vec!["0", "4", "8", "10"]);
        assert!(csv.lines().all(|l| l.split(',').count() == 7));
    }
}

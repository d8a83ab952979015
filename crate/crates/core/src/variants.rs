//! Named presets over the primal-dual family and the engine.

use std::collections::BTreeMap;

use nalgebra::Cholesky;
use serde::Serialize;

use crate::atoms::{BlockAtom, CocoMap, ProxAtom, Quadratic};
use crate::engine::{Afba, BetaP, InclusionOps, LambdaSchedule, PreconditionerTriple, LAMBDA_MARGIN};
use crate::linops::{
    concat, min_eig, min_singular_value, split, LinearMap, Matrix, SymMetric, Vector, POWER_TOL,
};
use crate::primal_dual::{
    candidate_cases, certify, lambda_inequalities, pd_quadratics, schedule_max, tau_of, InfConv,
    PdError, PdMatrices, PdParams, PdRelaxation, PdSolver, SaddleProblem, CASE_GENERAL,
    CASE_L_INDICATOR, CASE_L_INDICATOR_H_ZERO, CASE_THETA2_POSITIVE_P, NORM_PAD,
};
use crate::report::{drive, Iteration, RunOptions, SolveReport, Step};
use crate::validity::{select_case, CaseOutcome, Inequality, Relation, ValidityCertificate};

pub const VARIANT_NAMES: [&str; 10] =
    ["condat_vu", "bac", "dst", "mu0", "dr_forward", "admm3", "fbs", "ppa", "drs_classic", "fbfs"];

/// The substitution a preset makes into the general iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Substitution {
    pub theta: Option<f64>,
    pub mu: Option<f64>,
    /// `"schedule"`, `"unit_alpha"`, `"fixed_alpha"` or `"fbfs_adaptive"`.
    pub relaxation: &'static str,
}

/// A built preset.
pub trait Solver: Iteration + Send {
    fn name(&self) -> &'static str;

    fn certificate(&self) -> &ValidityCertificate;

    fn substitution(&self) -> Substitution;

    fn dim(&self) -> usize;

    /// Starting point used when the caller supplies none.
    fn default_start(&self) -> Vector {
        Vector::zeros(self.dim())
    }

    /// Engine running the same recursion, when one exists.
    fn engine(&self) -> Option<Result<Afba, PdError>>;

    /// Solver state at a primal-dual solution `(x*, y*)`.
    fn oracle_state(&self, x: &Vector, y: &Vector) -> Vector {
        concat(x, y)
    }

    /// Maps a solver state into the engine's coordinates.
    fn to_engine_coords(&self, z: &Vector) -> Vector {
        z.clone()
    }
}

/// Runs any preset.
pub fn run(solver: &mut dyn Solver, z0: &Vector, opts: &RunOptions) -> SolveReport {
    drive(solver, z0, opts)
}

fn outcome(case: &str, inequalities: Vec<Inequality>, delta: f64, beta: Option<f64>, tau: Option<f64>) -> CaseOutcome {
    CaseOutcome { case: case.into(), inequalities, delta, tau, beta_p: beta, positive_p: false }
}

fn simple_certificate(variant: &str, chosen: CaseOutcome, lambda: Option<f64>) -> ValidityCertificate {
    ValidityCertificate {
        variant: variant.into(),
        case: chosen.case,
        tau: chosen.tau,
        beta_p: chosen.beta_p,
        delta: chosen.delta,
        positive_p: chosen.positive_p,
        lambda,
        rate: None,
        flags: BTreeMap::new(),
        inequalities: chosen.inequalities,
    }
}

fn inv(b: f64) -> f64 {
    if b == 0.0 {
        f64::INFINITY
    } else {
        1.0 / b
    }
}

/// Primal-dual preset backed by [`PdSolver`].
#[derive(Debug)]
pub struct PdVariant {
    name: &'static str,
    inner: PdSolver,
}

impl PdVariant {
    pub fn inner(&self) -> &PdSolver {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut PdSolver {
        &mut self.inner
    }

    pub fn run(&mut self, z0: &Vector, opts: &RunOptions) -> SolveReport {
        drive(self, z0, opts)
    }
}

impl Iteration for PdVariant {
    fn step(&mut self, z: &Vector, n: usize) -> Result<Step, String> {
        self.inner.step(z, n)
    }

    fn fejer_metric(&self) -> Option<&SymMetric> {
        self.inner.fejer_metric()
    }

    fn objective(&self, z: &Vector) -> Option<f64> {
        self.inner.objective(z)
    }
}

impl Solver for PdVariant {
    fn name(&self) -> &'static str {
        self.name
    }

    fn certificate(&self) -> &ValidityCertificate {
        self.inner.certificate()
    }

    fn substitution(&self) -> Substitution {
        let p = self.inner.params();
        let relaxation = match self.inner.relaxation() {
            PdRelaxation::Schedule(_) => "schedule",
            PdRelaxation::UnitAlpha => "unit_alpha",
        };
        Substitution { theta: Some(p.theta), mu: Some(p.mu), relaxation }
    }

    fn dim(&self) -> usize {
        self.inner.problem().n() + self.inner.problem().m()
    }

    fn engine(&self) -> Option<Result<Afba, PdError>> {
        Some(self.inner.engine())
    }
}

fn rename(mut c: CaseOutcome, from: &str, to: &str) -> CaseOutcome {
    for i in &mut c.inequalities {
        if i.name == from {
            i.name = to.into();
        }
    }
    c
}

/// `θ = 2`: pure relaxation `z⁺ = z + λz̃`.
pub fn build_condat_vu(
    problem: SaddleProblem,
    gamma1: f64,
    gamma2: f64,
    schedule: LambdaSchedule,
) -> Result<PdVariant, PdError> {
    let p = PdParams::new(gamma1, gamma2, 2.0, 1.0)?;
    let cases = candidate_cases(&problem, &p, &schedule)?
        .into_iter()
        .map(|c| {
            let c = rename(c, "p_strong_positivity", "gamma1_inv_minus_gamma2_L2");
            let c = rename(c, "gamma1_inv_minus_quarter_theta2_gamma2_L2", "gamma1_inv_minus_gamma2_L2");
            rename(
                c,
                "gamma1_inv_minus_quarter_theta2_gamma2_L2_gt_quarter_beta_h",
                "gamma1_inv_minus_gamma2_L2_gt_quarter_beta_h",
            )
        })
        .collect();
    let chosen = select_case("condat_vu", cases).map_err(PdError::Rejected)?;
    let cert = certify("condat_vu", &problem, &p, chosen, schedule_max(&schedule))?;
    let inner = PdSolver::with_certificate(problem, p, PdRelaxation::Schedule(schedule), cert)?;
    Ok(PdVariant { name: "condat_vu", inner })
}

/// `θ = 0`, `μ = ½`, `α = 1`.
pub fn build_bac(problem: SaddleProblem, gamma1: f64, gamma2: f64) -> Result<PdVariant, PdError> {
    let p = PdParams::new(gamma1, gamma2, 0.0, 0.5)?;
    let nl = problem.norm_l();
    let tau = tau_of(&p, nl);
    let lhs = 1.0 / gamma1 - gamma2 * nl * nl;
    let (bh, bl) = (problem.beta_h(), problem.beta_l());
    let mut cases = Vec::new();
    if !(problem.h_absent() && problem.l_indicator()) {
        let beta = tau * inv(bh).min(inv(bl));
        cases.push(outcome(
            CASE_GENERAL,
            vec![Inequality::new("bac_coco_bound", CASE_GENERAL, lhs, Relation::Gt, 1.0 / (2.0 * beta * gamma1))],
            2.0 - 1.0 / (2.0 * beta),
            Some(beta),
            Some(tau),
        ));
    }
    if problem.l_indicator() && !problem.h_absent() {
        let beta = 1.0 / (gamma1 * bh);
        cases.push(outcome(
            CASE_L_INDICATOR,
            vec![Inequality::new("gamma1_inv_minus_gamma2_L2_gt_half_beta_h", CASE_L_INDICATOR, lhs, Relation::Gt, bh / 2.0)],
            2.0 - 1.0 / (2.0 * beta),
            Some(beta),
            Some(tau),
        ));
    }
    if problem.l_indicator() && problem.h_absent() {
        cases.push(outcome(
            CASE_L_INDICATOR_H_ZERO,
            vec![Inequality::new("gamma1_inv_minus_gamma2_L2", CASE_L_INDICATOR_H_ZERO, lhs, Relation::Gt, 0.0)],
            2.0,
            None,
            Some(tau),
        ));
    }
    let chosen = select_case("bac", cases).map_err(PdError::Rejected)?;
    let beta = chosen.beta_p;
    let mut cert = certify("bac", &problem, &p, chosen, None)?;
    // o(1/(n+1)) holds when (1 + γ₁γ₂‖L‖²)² ≤ δ.
    let c2 = 1.0 + gamma1 * gamma2 * nl * nl;
    let delta = 2.0 - beta.map_or(0.0, |b| 1.0 / (2.0 * b));
    cert.flags.insert("little_o_rate".into(), c2 * c2 <= delta);
    let inner = PdSolver::with_certificate(problem, p, PdRelaxation::UnitAlpha, cert)?;
    Ok(PdVariant { name: "bac", inner })
}

/// `θ = 1`, `μ = 1`, `α = 1`.
pub fn build_dst(problem: SaddleProblem, gamma1: f64, gamma2: f64) -> Result<PdVariant, PdError> {
    let p = PdParams::new(gamma1, gamma2, 1.0, 1.0)?;
    let nl = problem.norm_l();
    let tau = tau_of(&p, nl);
    let t = gamma1 * gamma2 * nl * nl;
    let (bh, bl) = (problem.beta_h(), problem.beta_l());
    let mut cases = Vec::new();
    if !(problem.h_absent() && problem.l_indicator()) {
        let beta = tau * inv(bh).min(inv(bl));
        let k = 1.0 + 1.0 / (2.0 * (2.0 * beta - 1.0));
        cases.push(outcome(
            CASE_GENERAL,
            vec![
                Inequality::new("dst_two_beta_gt_one", CASE_GENERAL, 2.0 * beta, Relation::Gt, 1.0),
                Inequality::new(
                    "dst_gamma_bound_general",
                    CASE_GENERAL,
                    1.0 / gamma1 - gamma2 * k * k * nl * nl,
                    Relation::Gt,
                    0.0,
                ),
            ],
            2.0 - 1.0 / (2.0 * beta),
            Some(beta),
            Some(tau),
        ));
    }
    if problem.l_indicator() && !problem.h_absent() {
        let beta = p.q(nl) / bh;
        cases.push(outcome(
            CASE_L_INDICATOR,
            vec![Inequality::new(
                "dst_beta_h_gamma1_bound",
                CASE_L_INDICATOR,
                bh * gamma1,
                Relation::Lt,
                2.0 - t - t.sqrt(),
            )],
            2.0 - 1.0 / (2.0 * beta),
            Some(beta),
            Some(tau),
        ));
    }
    if problem.l_indicator() && problem.h_absent() {
        cases.push(outcome(
            CASE_L_INDICATOR_H_ZERO,
            vec![Inequality::new(
                "gamma1_inv_minus_gamma2_L2",
                CASE_L_INDICATOR_H_ZERO,
                1.0 / gamma1 - gamma2 * nl * nl,
                Relation::Gt,
                0.0,
            )],
            2.0,
            None,
            Some(tau),
        ));
    }
    let chosen = select_case("dst", cases).map_err(PdError::Rejected)?;
    let little_o = {
        let s = t.sqrt();
        if problem.l_indicator() {
            bh * gamma1 < 4.0 - t - (2.0 + s).powi(3) / (4.0 - t)
        } else {
            let b = chosen.beta_p.unwrap_or(f64::INFINITY);
            1.0 / b < 4.0 - 4.0 * (2.0 + s) / ((2.0 - s) * (2.0 - s))
        }
    };
    let mut cert = certify("dst", &problem, &p, chosen, None)?;
    cert.flags.insert("little_o_rate".into(), little_o);
    let inner = PdSolver::with_certificate(problem, p, PdRelaxation::UnitAlpha, cert)?;
    Ok(PdVariant { name: "dst", inner })
}

/// `μ = 0`, `α = 1`, for `h ≡ 0` and `l = ι_{0}`.
pub fn build_mu0(problem: SaddleProblem, gamma1: f64, gamma2: f64, theta: f64) -> Result<PdVariant, PdError> {
    if !(problem.h_absent() && problem.l_indicator()) {
        return Err(PdError::Invalid("mu0 requires h ≡ 0 and l = ι_{0}".into()));
    }
    let p = PdParams::new(gamma1, gamma2, theta, 0.0)?;
    let nl = problem.norm_l();
    let tau = tau_of(&p, nl);
    let factor = theta * theta - 3.0 * theta + 3.0;
    let mut cases = vec![outcome(
        CASE_L_INDICATOR_H_ZERO,
        vec![Inequality::new(
            "mu0_gamma_bound",
            CASE_L_INDICATOR_H_ZERO,
            1.0 / gamma1 - gamma2 * factor * nl * nl,
            Relation::Gt,
            0.0,
        )],
        2.0,
        None,
        Some(tau),
    )];
    if theta == 2.0 {
        let mut c = outcome(
            CASE_THETA2_POSITIVE_P,
            vec![Inequality::new(
                "gamma1_inv_minus_gamma2_L2",
                CASE_THETA2_POSITIVE_P,
                1.0 / gamma1 - gamma2 * nl * nl,
                Relation::Ge,
                0.0,
            )],
            2.0,
            None,
            Some(tau),
        );
        c.positive_p = true;
        cases.push(c);
    }
    let chosen = select_case("mu0", cases).map_err(PdError::Rejected)?;
    let cert = certify("mu0", &problem, &p, chosen, None)?;
    let inner = PdSolver::with_certificate(problem, p, PdRelaxation::UnitAlpha, cert)?;
    Ok(PdVariant { name: "mu0", inner })
}

fn schedule_bounds(s: &LambdaSchedule) -> Result<(f64, f64), PdError> {
    match s {
        LambdaSchedule::Constant(r) => Ok((*r, *r)),
        LambdaSchedule::Table(t) if !t.is_empty() => Ok((
            t.iter().copied().fold(f64::INFINITY, f64::min),
            t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )),
        other => Err(PdError::Invalid(format!("relaxation {other:?} is not supported here"))),
    }
}

fn schedule_at(s: &LambdaSchedule, n: usize) -> f64 {
    match s {
        LambdaSchedule::Constant(r) => *r,
        LambdaSchedule::Table(t) => t[n.min(t.len() - 1)],
        _ => 1.0,
    }
}

/// Relaxation bounded inside `]0, hi[` with the usual margin.
fn relaxation_inequalities(prefix: &str, case: &str, lo: f64, hi: f64, upper: f64) -> Vec<Inequality> {
    vec![
        Inequality::new(&format!("{prefix}_positive"), case, lo, Relation::Ge, LAMBDA_MARGIN),
        Inequality::new(&format!("{prefix}_upper_bound"), case, hi, Relation::Le, upper - LAMBDA_MARGIN),
    ]
}

fn check_dim(name: &str, a: &ProxAtom, n: usize) -> Result<(), PdError> {
    match a.dim() {
        Some(k) if k != n => Err(PdError::Invalid(format!("{name} has dim {k}, expected {n}"))),
        _ => Ok(()),
    }
}

/// Douglas-Rachford iteration with a forward term, on the state `(x, s)`.
#[derive(Debug)]
pub struct DrForward {
    name: &'static str,
    d: ProxAtom,
    e: ProxAtom,
    f: Option<CocoMap>,
    n: usize,
    gamma: f64,
    theta: f64,
    rho: LambdaSchedule,
    params: PdParams,
    certificate: ValidityCertificate,
    metric: SymMetric,
}

impl DrForward {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `(x, s)` from `x₀` and `s₀` (default `s₀ = x₀`).
    pub fn start(&self, x0: &Vector, s0: Option<&Vector>) -> Vector {
        concat(x0, s0.unwrap_or(x0))
    }

    pub fn s_of(&self, z: &Vector) -> Vector {
        z.rows(self.n, self.n).into_owned()
    }

    /// `(x, y)` with `y = (x − s)/γ`.
    pub fn to_xy(&self, z: &Vector) -> Vector {
        let (x, s) = split(z, self.n);
        let y = (&x - s) / self.gamma;
        concat(&x, &y)
    }

    pub fn from_xy(&self, z: &Vector) -> Vector {
        let (x, y) = split(z, self.n);
        let s = &x - y * self.gamma;
        concat(&x, &s)
    }

    /// The same data as a saddle problem with `L = Id`.
    pub fn saddle_problem(&self) -> Result<SaddleProblem, PdError> {
        SaddleProblem::new(
            self.d.clone(),
            self.e.clone(),
            self.f.clone(),
            InfConv::Indicator0,
            LinearMap::identity(self.n),
        )?
        .with_norm_bound(1.0)
    }

    /// `P` in `(x, y)` coordinates.
    pub fn p_matrix(&self) -> Matrix {
        PdMatrices::new(&Matrix::identity(self.n, self.n), &self.params).p
    }

    pub fn run(&mut self, z0: &Vector, opts: &RunOptions) -> SolveReport {
        drive(self, z0, opts)
    }
}

pub fn build_dr_forward(
    d: ProxAtom,
    e: ProxAtom,
    f: Option<CocoMap>,
    n: usize,
    gamma: f64,
    theta: f64,
    rho: LambdaSchedule,
) -> Result<DrForward, PdError> {
    check_dim("D", &d, n)?;
    check_dim("E", &e, n)?;
    let f = f.filter(|c| !c.is_zero());
    if let Some(c) = &f {
        if c.dim() != n {
            return Err(PdError::Invalid(format!("F has dim {}, expected {n}", c.dim())));
        }
    }
    if !(gamma > 0.0 && gamma.is_finite() && theta >= 0.0) {
        return Err(PdError::Invalid(format!("γ = {gamma}, θ = {theta}")));
    }
    let (lo, hi) = schedule_bounds(&rho)?;
    let mut cases = Vec::new();
    match &f {
        Some(c) => {
            let eta = c.beta_canonical();
            let case = "forward";
            let mut ineqs = vec![
                Inequality::new("theta_lt_2", case, theta, Relation::Lt, 2.0),
                Inequality::new("dr_gamma_bound", case, gamma, Relation::Lt, eta * (4.0 - theta * theta)),
            ];
            let upper = if theta < 2.0 {
                (4.0 - theta * theta - gamma / eta) / ((2.0 - theta) * (2.0 + (2.0 - theta).sqrt()))
            } else {
                f64::NAN
            };
            ineqs.extend(relaxation_inequalities("rho", case, lo, hi, upper));
            cases.push(outcome(case, ineqs, 2.0, None, None));
        }
        None if theta == 2.0 => {
            let case = "no_forward_theta2";
            let mut c = outcome(case, relaxation_inequalities("rho", case, lo, hi, 2.0), 2.0, None, None);
            c.positive_p = true;
            cases.push(c);
        }
        None => {
            let case = "no_forward";
            let mut ineqs = vec![Inequality::new("theta_lt_2", case, theta, Relation::Lt, 2.0)];
            let upper = if theta < 2.0 { 2.0 - (2.0 - theta).sqrt() } else { f64::NAN };
            ineqs.extend(relaxation_inequalities("rho", case, lo, hi, upper));
            cases.push(outcome(case, ineqs, 2.0, None, None));
        }
    }
    let chosen = select_case("dr_forward", cases).map_err(PdError::Rejected)?;
    let cert = simple_certificate("dr_forward", chosen, Some(hi));
    let params = PdParams::new(gamma, 1.0 / gamma, theta, 0.0)?;
    let mats = PdMatrices::new(&Matrix::identity(n, n), &params);
    // S in (x, s) coordinates: Tᵀ S T with T(x, s) = (x, (x − s)/γ).
    let mut t = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        t[(i, i)] = 1.0;
        t[(n + i, i)] = 1.0 / gamma;
        t[(n + i, n + i)] = -1.0 / gamma;
    }
    let s = t.transpose() * mats.s(0.0)? * &t;
    let metric = SymMetric::from_dense((&s + s.transpose()) * 0.5)?;
    Ok(DrForward { name: "dr_forward", d, e, f, n, gamma, theta, rho, params, certificate: cert, metric })
}

/// `θ = 2`, `F ≡ 0`: the classical Douglas-Rachford iteration.
pub fn build_drs_classic(d: ProxAtom, e: ProxAtom, n: usize, gamma: f64, rho: LambdaSchedule) -> Result<DrForward, PdError> {
    let mut s = build_dr_forward(d, e, None, n, gamma, 2.0, rho)?;
    s.name = "drs_classic";
    s.certificate.variant = "drs_classic".into();
    Ok(s)
}

impl Iteration for DrForward {
    fn step(&mut self, z: &Vector, n: usize) -> Result<Step, String> {
        let (x, s) = split(z, self.n);
        let g = self.gamma;
        let th = self.theta;
        let fx = self.f.as_ref().map_or_else(|| Vector::zeros(self.n), |c| c.apply(&x));
        let xbar = self.d.resolvent(g, &(&s - fx * g)).map_err(|e| e.to_string())?;
        let u = &xbar * th + &x * (2.0 - th) - &s;
        let r = self.e.resolvent(g, &u).map_err(|e| e.to_string())?;
        let rho = schedule_at(&self.rho, n);
        let s_next = &s + (&r - &xbar) * rho;
        let x_next = &x + (&xbar - &x) * rho;
        // Residuals in (x, y) coordinates.
        let y = (&x - &s) / g;
        let ybar = (&u - &r) / g;
        let xt = &xbar - &x;
        let yt = ybar - y;
        let cross = xt.dot(&yt);
        let q = pd_quadratics(&self.params, xt.norm_squared(), yt.norm_squared(), xt.norm_squared(), yt.norm_squared(), cross);
        let fixed_point = xt.iter().chain(yt.iter()).all(|e| *e == 0.0);
        let lambda = if th == 2.0 || !(q.num > 0.0) { rho } else { rho * q.v / q.num };
        Ok(Step {
            next: concat(&x_next, &s_next),
            lambda,
            alpha: rho,
            res_p: q.num.max(0.0).sqrt(),
            res_d: q.v.max(0.0).sqrt(),
            fixed_point,
        })
    }

    fn fejer_metric(&self) -> Option<&SymMetric> {
        Some(&self.metric)
    }
}

impl Solver for DrForward {
    fn name(&self) -> &'static str {
        self.name
    }

    fn certificate(&self) -> &ValidityCertificate {
        &self.certificate
    }

    fn substitution(&self) -> Substitution {
        Substitution { theta: Some(self.theta), mu: Some(0.0), relaxation: "fixed_alpha" }
    }

    fn dim(&self) -> usize {
        2 * self.n
    }

    fn engine(&self) -> Option<Result<Afba, PdError>> {
        let build = || -> Result<Afba, PdError> {
            let problem = self.saddle_problem()?;
            let ops = problem.inclusion_ops()?;
            let pre = crate::primal_dual::build_s_family(&problem, &self.params)?;
            if self.certificate.positive_p {
                Ok(Afba::positive_p(ops, pre, self.rho.clone())?)
            } else {
                let schedule = match &self.rho {
                    LambdaSchedule::Constant(r) => LambdaSchedule::FixedAlpha(*r),
                    _ => return Err(PdError::Invalid("engine form needs a constant ρ".into())),
                };
                // α is fixed directly, so δ does not constrain the schedule here.
                Ok(Afba::new(ops, pre, BetaP::Given(None), schedule)?)
            }
        };
        Some(build())
    }

    fn to_engine_coords(&self, z: &Vector) -> Vector {
        self.to_xy(z)
    }

    fn oracle_state(&self, x: &Vector, y: &Vector) -> Vector {
        concat(x, &(x - y * self.gamma))
    }
}

fn block_resolvent(a: &BlockAtom, gamma: f64, v: &Vector) -> Result<Vector, PdError> {
    let mut out = Vector::zeros(v.len());
    let mut off = 0;
    for (op, d) in a.blocks() {
        let seg = v.rows(off, *d).into_owned();
        out.rows_mut(off, *d).copy_from(&op.resolvent(gamma, &seg)?);
        off += d;
    }
    Ok(out)
}

/// Forward-backward (`C` present) or proximal point (`C ≡ 0`) iteration.
#[derive(Debug)]
pub struct Fbs {
    name: &'static str,
    a: BlockAtom,
    c: Option<CocoMap>,
    gamma: f64,
    lambda: f64,
    certificate: ValidityCertificate,
    metric: SymMetric,
}

impl Fbs {
    pub fn run(&mut self, z0: &Vector, opts: &RunOptions) -> SolveReport {
        drive(self, z0, opts)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// `z⁺ = z + λ(J_{γA}(z − γCz) − z)` with `γ ∈ ]0, 4β[`, `λ ∈ ]0, 2 − γ/(2β)[`.
pub fn build_fbs(a: BlockAtom, c: CocoMap, gamma: f64, lambda: f64) -> Result<Fbs, PdError> {
    if c.dim() != a.dim() {
        return Err(PdError::Invalid(format!("C has dim {}, A has dim {}", c.dim(), a.dim())));
    }
    if c.is_zero() {
        return build_ppa(a, gamma, lambda);
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(PdError::Invalid(format!("step {gamma} must be positive")));
    }
    let beta = c.beta_canonical();
    let delta = 2.0 - gamma / (2.0 * beta);
    let mut ineqs = vec![Inequality::new("fbs_gamma_lt_4beta", "fbs", gamma, Relation::Lt, 4.0 * beta)];
    ineqs.extend(lambda_inequalities(&LambdaSchedule::Constant(lambda), delta, "fbs")?);
    let chosen = select_case("fbs", vec![outcome("fbs", ineqs, delta, Some(beta / gamma), None)])
        .map_err(PdError::Rejected)?;
    let d = a.dim();
    Ok(Fbs {
        name: "fbs",
        a,
        c: Some(c),
        gamma,
        lambda,
        certificate: simple_certificate("fbs", chosen, Some(lambda)),
        metric: SymMetric::from_dense(Matrix::identity(d, d))?,
    })
}

pub fn build_ppa(a: BlockAtom, gamma: f64, lambda: f64) -> Result<Fbs, PdError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(PdError::Invalid(format!("step {gamma} must be positive")));
    }
    let ineqs = lambda_inequalities(&LambdaSchedule::Constant(lambda), 2.0, "ppa")?;
    let chosen = select_case("ppa", vec![outcome("ppa", ineqs, 2.0, None, None)]).map_err(PdError::Rejected)?;
    let d = a.dim();
    Ok(Fbs {
        name: "ppa",
        a,
        c: None,
        gamma,
        lambda,
        certificate: simple_certificate("ppa", chosen, Some(lambda)),
        metric: SymMetric::from_dense(Matrix::identity(d, d))?,
    })
}

impl Iteration for Fbs {
    fn step(&mut self, z: &Vector, _n: usize) -> Result<Step, String> {
        let g = self.gamma;
        let mut v = z.clone();
        if let Some(c) = &self.c {
            v -= c.apply(z) * g;
        }
        let zbar = block_resolvent(&self.a, g, &v).map_err(|e| e.to_string())?;
        let zt = &zbar - z;
        let nz = zt.norm();
        let fixed_point = zt.iter().all(|e| *e == 0.0);
        Ok(Step {
            next: z + &zt * self.lambda,
            lambda: self.lambda,
            alpha: self.lambda * g,
            res_p: nz / g.sqrt(),
            res_d: nz / g,
            fixed_point,
        })
    }

    fn fejer_metric(&self) -> Option<&SymMetric> {
        Some(&self.metric)
    }
}

impl Solver for Fbs {
    fn name(&self) -> &'static str {
        self.name
    }

    fn certificate(&self) -> &ValidityCertificate {
        &self.certificate
    }

    fn substitution(&self) -> Substitution {
        Substitution { theta: None, mu: None, relaxation: "schedule" }
    }

    fn dim(&self) -> usize {
        self.a.dim()
    }

    /// The state is `x` alone when the dual part is trivial.
    fn oracle_state(&self, x: &Vector, y: &Vector) -> Vector {
        if x.len() == self.dim() {
            x.clone()
        } else {
            concat(x, y)
        }
    }

    fn engine(&self) -> Option<Result<Afba, PdError>> {
        let build = || -> Result<Afba, PdError> {
            let d = self.a.dim();
            let c = self.c.clone().map(|c| vec![c]).unwrap_or_default();
            let ops = InclusionOps::new(self.a.clone(), LinearMap::zero(d, d), c)?;
            let h = Matrix::identity(d, d) / self.gamma;
            let pre = PreconditionerTriple::new(h, Matrix::identity(d, d), self.a.partition())?;
            let beta = self.c.as_ref().map(|c| c.beta_canonical() / self.gamma);
            Ok(Afba::new(ops, pre, BetaP::Given(beta), LambdaSchedule::Constant(self.lambda))?)
        };
        Some(build())
    }
}

/// Forward-backward-forward form for a skew `M`.
#[derive(Debug)]
pub struct Fbfs {
    a: BlockAtom,
    m: LinearMap,
    c: Option<CocoMap>,
    gamma: f64,
    certificate: ValidityCertificate,
    metric: SymMetric,
}

impl Fbfs {
    pub fn run(&mut self, z0: &Vector, opts: &RunOptions) -> SolveReport {
        drive(self, z0, opts)
    }
}

/// `z̄ = J_{γA}(z − γMz − γCz)`, `z⁺ = z̄ − γM(z̄ − z)`.
pub fn build_fbfs(a: BlockAtom, m: LinearMap, c: Option<CocoMap>, gamma: f64) -> Result<Fbfs, PdError> {
    let d = a.dim();
    if m.shape() != (d, d) {
        return Err(PdError::Invalid(format!("M is {:?}, A has dim {d}", m.shape())));
    }
    let c = c.filter(|c| !c.is_zero());
    if let Some(cc) = &c {
        if cc.dim() != d {
            return Err(PdError::Invalid(format!("C has dim {}, A has dim {d}", cc.dim())));
        }
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(PdError::Invalid(format!("step {gamma} must be positive")));
    }
    let md = m.to_dense();
    let skew = (&md + md.transpose()).amax();
    let norm_m = m.op_norm(POWER_TOL)?.value * (1.0 + NORM_PAD);
    let case = "fbfs";
    let mut ineqs =
        vec![Inequality::new("fbfs_skew_m", case, skew, Relation::Le, 1e-12 * md.amax().max(1.0))];
    let (lhs, beta_p, delta) = match &c {
        Some(cc) => {
            let b = cc.beta_canonical();
            (gamma * gamma * norm_m * norm_m + gamma / (2.0 * b), Some(b / gamma), 2.0 - gamma / (2.0 * b))
        }
        None => (gamma * gamma * norm_m * norm_m, None, 2.0),
    };
    ineqs.push(Inequality::new("fbfs_gamma_range", case, lhs, Relation::Lt, 1.0));
    let chosen = select_case("fbfs", vec![outcome(case, ineqs, delta, beta_p, None)]).map_err(PdError::Rejected)?;
    Ok(Fbfs {
        a,
        m,
        c,
        gamma,
        certificate: simple_certificate("fbfs", chosen, None),
        metric: SymMetric::from_dense(Matrix::identity(d, d))?,
    })
}

impl Iteration for Fbfs {
    fn step(&mut self, z: &Vector, _n: usize) -> Result<Step, String> {
        let g = self.gamma;
        let mz = self.m.apply(z).map_err(|e| e.to_string())?;
        let mut v = z - mz * g;
        if let Some(c) = &self.c {
            v -= c.apply(z) * g;
        }
        let zbar = block_resolvent(&self.a, g, &v).map_err(|e| e.to_string())?;
        let zt = &zbar - z;
        let mzt = self.m.apply(&zt).map_err(|e| e.to_string())?;
        let nz2 = zt.norm_squared();
        let fixed_point = zt.iter().all(|e| *e == 0.0);
        let lambda = if nz2 > 0.0 { 1.0 + g * g * mzt.norm_squared() / nz2 } else { 1.0 };
        let res_d = (&zt / g - &mzt).norm();
        Ok(Step {
            next: &zbar - mzt * g,
            lambda,
            alpha: g,
            res_p: (nz2 / g).sqrt(),
            res_d,
            fixed_point,
        })
    }

    fn fejer_metric(&self) -> Option<&SymMetric> {
        Some(&self.metric)
    }
}

impl Solver for Fbfs {
    fn name(&self) -> &'static str {
        "fbfs"
    }

    fn certificate(&self) -> &ValidityCertificate {
        &self.certificate
    }

    fn substitution(&self) -> Substitution {
        Substitution { theta: None, mu: None, relaxation: "fbfs_adaptive" }
    }

    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn engine(&self) -> Option<Result<Afba, PdError>> {
        let build = || -> Result<Afba, PdError> {
            let d = self.a.dim();
            let c = self.c.clone().map(|c| vec![c]).unwrap_or_default();
            let ops = InclusionOps::new(self.a.clone(), self.m.clone(), c)?;
            let h = Matrix::identity(d, d) / self.gamma;
            let pre = PreconditionerTriple::new(h, Matrix::identity(d, d), self.a.partition())?;
            let beta = self.c.as_ref().map(|c| c.beta_canonical() / self.gamma);
            Ok(Afba::new(ops, pre, BetaP::Given(beta), LambdaSchedule::FbfsAdaptive { gamma: self.gamma })?)
        };
        Some(build())
    }
}

/// Engine with `C ≡ 0`, `H = S = Id` and a monotone `M`, for `A` a normal cone.
pub fn solodov_tseng(a: BlockAtom, m: LinearMap, lambda: f64) -> Result<Afba, PdError> {
    let d = a.dim();
    let ops = InclusionOps::new(a, m, Vec::new())?;
    let pre = PreconditionerTriple::new(Matrix::identity(d, d), Matrix::identity(d, d), ops.a.partition())?;
    Ok(Afba::new(ops, pre, BetaP::Given(None), LambdaSchedule::Constant(lambda))?)
}

/// The strongly convex first block of the three-block problem.
#[derive(Debug, Clone, PartialEq)]
pub enum StronglyConvex {
    /// `½x'Qx + c'x` with `Q ≻ 0`.
    Quad(Quadratic),
    /// `g(x) + (ξ/2)‖x‖²` with `g` prox-friendly.
    ProxPlusSq { g: ProxAtom, xi: f64, dim: usize },
}

impl StronglyConvex {
    pub fn dim(&self) -> usize {
        match self {
            Self::Quad(q) => q.dim(),
            Self::ProxPlusSq { dim, .. } => *dim,
        }
    }

    /// Strong convexity modulus.
    pub fn xi(&self) -> f64 {
        match self {
            Self::Quad(q) => min_eig(q.q()).unwrap_or(f64::NAN),
            Self::ProxPlusSq { xi, .. } => *xi,
        }
    }

    /// `argmin_x f(x) + ⟨v, x⟩`.
    fn argmin_linear(&self, v: &Vector, chol: Option<&Cholesky<f64, nalgebra::Dyn>>) -> Result<Vector, PdError> {
        match self {
            Self::Quad(q) => {
                let ch = chol.expect("factorized at build");
                Ok(-ch.solve(&(q.c() + v)))
            }
            Self::ProxPlusSq { g, xi, .. } => Ok(g.resolvent(1.0 / xi, &(-v / *xi))?),
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            Self::Quad(q) => 0.5 * x.dot(&(q.q() * x)) + q.c().dot(x),
            Self::ProxPlusSq { g, xi, .. } => g.eval(x) + 0.5 * xi * x.norm_squared(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Admm3Problem {
    pub f1: StronglyConvex,
    pub f2: Quadratic,
    pub f3: Quadratic,
    pub l1: Matrix,
    pub l2: Matrix,
    pub l3: Matrix,
    pub b: Vector,
}

impl Admm3Problem {
    pub fn dims(&self) -> [usize; 4] {
        [self.l1.ncols(), self.l2.ncols(), self.l3.ncols(), self.b.len()]
    }

    pub fn check(&self) -> Result<(), PdError> {
        let [n1, n2, n3, m] = self.dims();
        let ok = self.f1.dim() == n1
            && self.f2.dim() == n2
            && self.f3.dim() == n3
            && self.l1.nrows() == m
            && self.l2.nrows() == m
            && self.l3.nrows() == m;
        if ok {
            Ok(())
        } else {
            Err(PdError::Invalid("block dimensions of the three-block problem disagree".into()))
        }
    }

    /// Splits `(x₁, x₂, x₃, y)`.
    pub fn split4(&self, z: &Vector) -> [Vector; 4] {
        let [n1, n2, n3, m] = self.dims();
        [
            z.rows(0, n1).into_owned(),
            z.rows(n1, n2).into_owned(),
            z.rows(n1 + n2, n3).into_owned(),
            z.rows(n1 + n2 + n3, m).into_owned(),
        ]
    }

    pub fn constraint_residual(&self, x1: &Vector, x2: &Vector, x3: &Vector) -> Vector {
        &self.l1 * x1 + &self.l2 * x2 + &self.l3 * x3 - &self.b
    }

    /// Stationarity residuals `‖∇f_i(x_i) + L_i'y‖` for the quadratic blocks and the
    /// prox residual for a nonsmooth first block.
    pub fn kkt_residuals(&self, x1: &Vector, x2: &Vector, x3: &Vector, y: &Vector) -> [f64; 4] {
        let r1 = match &self.f1 {
            StronglyConvex::Quad(q) => (q.q() * x1 + q.c() + self.l1.tr_mul(y)).norm(),
            StronglyConvex::ProxPlusSq { g, xi, .. } => {
                let v = x1 - (x1 * *xi + self.l1.tr_mul(y));
                g.resolvent(1.0, &v).map_or(f64::INFINITY, |p| (x1 - p).norm())
            }
        };
        let r2 = (self.f2.q() * x2 + self.f2.c() + self.l2.tr_mul(y)).norm();
        let r3 = (self.f3.q() * x3 + self.f3.c() + self.l3.tr_mul(y)).norm();
        [r1, r2, r3, self.constraint_residual(x1, x2, x3).norm()]
    }
}

/// Three-block ADMM; the state is `(x₁, x₂, x₃, y_n, y_{n−1})`.
#[derive(Debug)]
pub struct Admm3 {
    p: Admm3Problem,
    gamma: f64,
    theta: f64,
    chol1: Option<Cholesky<f64, nalgebra::Dyn>>,
    chol2: Cholesky<f64, nalgebra::Dyn>,
    chol3: Cholesky<f64, nalgebra::Dyn>,
    certificate: ValidityCertificate,
    /// Compute `x₂` before `x₁`; the two updates are independent.
    pub swap_order: bool,
}

/// Upper bound `ξ(2−θ)(θ−√(2−θ))/‖L₁‖²` on `γ`.
pub fn admm_gamma_bound(xi: f64, theta: f64, norm_l1: f64) -> f64 {
    xi * (2.0 - theta) * (theta - (2.0 - theta).sqrt()) / (norm_l1 * norm_l1)
}

pub fn build_admm3(p: Admm3Problem, gamma: f64, theta: f64) -> Result<Admm3, PdError> {
    p.check()?;
    let xi = p.f1.xi();
    let norm_l1 = LinearMap::dense(p.l1.clone()).op_norm(POWER_TOL)?.value * (1.0 + NORM_PAD);
    let case = "admm3";
    let ineqs = vec![
        Inequality::new("admm_theta_range", case, theta, Relation::Gt, 1.0),
        Inequality::new("admm_theta_range", case, theta, Relation::Lt, 2.0),
        Inequality::new("admm_xi_positive", case, xi, Relation::Gt, 0.0),
        Inequality::new("admm_gamma_bound", case, gamma, Relation::Lt, admm_gamma_bound(xi, theta, norm_l1)),
        Inequality::new("gamma_positive", case, gamma, Relation::Gt, 0.0),
        Inequality::new("admm_rank_L2", case, min_singular_value(&p.l2), Relation::Gt, 1e-8),
        Inequality::new("admm_rank_L3", case, min_singular_value(&p.l3), Relation::Gt, 1e-8),
    ];
    let chosen = select_case("admm3", vec![outcome(case, ineqs, 2.0, None, None)]).map_err(PdError::Rejected)?;
    let chol1 = match &p.f1 {
        StronglyConvex::Quad(q) => Some(
            Cholesky::new(q.q().clone()).ok_or_else(|| PdError::Invalid("Q₁ is not positive definite".into()))?,
        ),
        StronglyConvex::ProxPlusSq { .. } => None,
    };
    let factor = |q: &Quadratic, l: &Matrix| {
        Cholesky::new(q.q() + l.tr_mul(l) * gamma)
            .ok_or_else(|| PdError::Invalid("augmented block is not positive definite".into()))
    };
    let chol2 = factor(&p.f2, &p.l2)?;
    let chol3 = factor(&p.f3, &p.l3)?;
    Ok(Admm3 {
        chol1,
        chol2,
        chol3,
        certificate: simple_certificate("admm3", chosen, Some(1.0)),
        p,
        gamma,
        theta,
        swap_order: false,
    })
}

impl Admm3 {
    pub fn problem(&self) -> &Admm3Problem {
        &self.p
    }

    /// State from `x₀ = 0`, `y₀` and `y₁` (default `y₁ = y₀`).
    pub fn start(&self, x: [&Vector; 3], y0: &Vector, y1: Option<&Vector>) -> Vector {
        let mut v: Vec<f64> = Vec::new();
        for part in x.iter().copied().chain([y1.unwrap_or(y0), y0]) {
            v.extend(part.iter());
        }
        Vector::from_vec(v)
    }

    pub fn split_state(&self, z: &Vector) -> ([Vector; 4], Vector) {
        let total: usize = self.p.dims().iter().sum();
        let m = self.p.b.len();
        (self.p.split4(&z.rows(0, total).into_owned()), z.rows(total, m).into_owned())
    }

    pub fn run(&mut self, z0: &Vector, opts: &RunOptions) -> SolveReport {
        drive(self, z0, opts)
    }

    fn x1_update(&self, y: &Vector) -> Result<Vector, PdError> {
        self.p.f1.argmin_linear(&self.p.l1.tr_mul(y), self.chol1.as_ref())
    }

    fn x2_update(&self, ybar: &Vector, x1: &Vector, x3: &Vector) -> Vector {
        let p = &self.p;
        let r = &p.l1 * x1 + &p.l3 * x3 - &p.b;
        let rhs = -(p.f2.c() + p.l2.tr_mul(ybar) + p.l2.tr_mul(&r) * self.gamma);
        self.chol2.solve(&rhs)
    }

    fn x3_update(&self, ybar: &Vector, x1: &Vector, x2: &Vector) -> Vector {
        let p = &self.p;
        let r = &p.l1 * x1 + &p.l2 * x2 - &p.b;
        let rhs = -(p.f3.c() + p.l3.tr_mul(ybar) + p.l3.tr_mul(&r) * self.gamma);
        self.chol3.solve(&rhs)
    }
}

impl Iteration for Admm3 {
    fn step(&mut self, z: &Vector, _n: usize) -> Result<Step, String> {
        let ([x1, _, x3, y], y_prev) = self.split_state(z);
        let th = self.theta;
        let ybar = &y * (th - 1.0) + &y_prev * (2.0 - th);
        let (x1n, x2n) = if self.swap_order {
            let b = self.x2_update(&ybar, &x1, &x3);
            (self.x1_update(&y).map_err(|e| e.to_string())?, b)
        } else {
            let a = self.x1_update(&y).map_err(|e| e.to_string())?;
            (a, self.x2_update(&ybar, &x1, &x3))
        };
        let x3n = self.x3_update(&ybar, &x1n, &x2n);
        let r = self.p.constraint_residual(&x1n, &x2n, &x3n);
        let yn = &ybar + &r * self.gamma;
        let mut v: Vec<f64> = Vec::with_capacity(z.len());
        for part in [&x1n, &x2n, &x3n, &yn, &y] {
            v.extend(part.iter());
        }
        let next = Vector::from_vec(v);
        let step_len = (&next - z).norm();
        Ok(Step {
            lambda: 1.0,
            alpha: 1.0,
            res_p: step_len,
            res_d: r.norm(),
            fixed_point: step_len == 0.0,
            next,
        })
    }

    fn objective(&self, z: &Vector) -> Option<f64> {
        let ([x1, x2, x3, _], _) = self.split_state(z);
        let q = |f: &Quadratic, x: &Vector| 0.5 * x.dot(&(f.q() * x)) + f.c().dot(x);
        Some(self.p.f1.value(&x1) + q(&self.p.f2, &x2) + q(&self.p.f3, &x3))
    }
}

impl Solver for Admm3 {
    fn name(&self) -> &'static str {
        "admm3"
    }

    fn certificate(&self) -> &ValidityCertificate {
        &self.certificate
    }

    fn substitution(&self) -> Substitution {
        Substitution { theta: Some(self.theta), mu: Some(0.0), relaxation: "fixed_alpha" }
    }

    fn dim(&self) -> usize {
        self.p.dims().iter().sum::<usize>() + self.p.b.len()
    }

    fn oracle_state(&self, x: &Vector, y: &Vector) -> Vector {
        concat(&concat(x, y), y)
    }

    /// The iteration acts on the dual problem; no engine form is exposed.
    fn engine(&self) -> Option<Result<Afba, PdError>> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::AtomOp;
    use crate::primal_dual::CASE_THETA2_POSITIVE_P;

    fn unit_l() -> LinearMap {
        LinearMap::from_rows(&[vec![0.6, 0.8], vec![0.0, 0.0]]).unwrap()
    }

    fn pd(h: Option<CocoMap>) -> SaddleProblem {
        SaddleProblem::new(ProxAtom::l1(0.1).unwrap(), ProxAtom::Zero, h, InfConv::Indicator0, unit_l())
            .unwrap()
            .with_norm_bound(1.0)
            .unwrap()
    }

    fn h_with_lipschitz(bh: f64) -> CocoMap {
        CocoMap::affine_gradient(Matrix::identity(2, 2) * bh.sqrt(), Vector::zeros(2)).unwrap()
    }

    #[test]
    fn condat_cases() {
        let v = build_condat_vu(pd(Some(h_with_lipschitz(1.0))), 1.0, 0.5, LambdaSchedule::Constant(0.9)).unwrap();
        assert!((v.certificate().delta - 1.0).abs() < 1e-12);
        assert_eq!(v.substitution().theta, Some(2.0));

        let v = build_condat_vu(pd(None), 1.0, 1.0, LambdaSchedule::Constant(1.9)).unwrap();
        assert_eq!(v.certificate().case, CASE_THETA2_POSITIVE_P);

        let err = build_condat_vu(pd(None), 1.0, 1.5, LambdaSchedule::Constant(1.0)).unwrap_err();
        assert!(err.margin_report().unwrap().fails("gamma1_inv_minus_gamma2_L2"));

        let h = || Some(h_with_lipschitz(1.0));
        let err = build_condat_vu(pd(h()), 1.0, 0.75, LambdaSchedule::Constant(0.01)).unwrap_err();
        assert!(err.margin_report().unwrap().fails("gamma1_inv_minus_gamma2_L2_gt_quarter_beta_h"));
        let v = build_condat_vu(pd(h()), 1.0, 0.74, LambdaSchedule::Constant(0.01)).unwrap();
        assert!((v.certificate().delta - (2.0 - 1.0 / 0.52)).abs() < 1e-12);
    }

    #[test]
    fn bac_cases_and_little_o() {
        let v = build_bac(pd(None), 1.0, 0.5).unwrap();
        assert_eq!(v.certificate().case, CASE_L_INDICATOR_H_ZERO);
        let g = ((2f64.sqrt() - 1.0) * 0.999).sqrt();
        let v = build_bac(pd(None), g, g).unwrap();
        assert!(v.certificate().flags["little_o_rate"]);
        let g = ((2f64.sqrt() - 1.0) * 1.001).sqrt();
        let v = build_bac(pd(None), g, g).unwrap();
        assert!(!v.certificate().flags["little_o_rate"]);
    }

    #[test]
    fn dst_cases() {
        let v = build_dst(pd(Some(h_with_lipschitz(0.5))), 0.5, 0.5).unwrap();
        let i = &v.certificate().inequalities[0];
        assert_eq!(i.name, "dst_beta_h_gamma1_bound");
        assert!((i.lhs - 0.25).abs() < 1e-12 && (i.rhs - 1.25).abs() < 1e-12);
        let err = build_dst(pd(None), 1.0, 1.0).unwrap_err();
        assert!(err.margin_report().unwrap().fails("gamma1_inv_minus_gamma2_L2"));
    }

    #[test]
    fn mu0_factor() {
        let v = build_mu0(pd(None), 1.0, 1.0, 1.5).unwrap();
        assert!((v.certificate().inequalities[0].lhs - 0.25).abs() < 1e-12);
        let err = build_mu0(pd(None), 1.0, 1.0, 0.0).unwrap_err();
        assert!((err.margin_report().unwrap().inequalities[0].lhs + 2.0).abs() < 1e-12);
    }

    #[test]
    fn dr_bounds() {
        let f = CocoMap::linear_scaled(1.0, 2).unwrap();
        let d = ProxAtom::boxed(-1.0, 1.0).unwrap();
        let e = ProxAtom::sq_l2(1.0).unwrap();
        let s = build_dr_forward(d.clone(), e.clone(), Some(f.clone()), 2, 1.0, 1.0, LambdaSchedule::Constant(0.5))
            .unwrap();
        let up = s.certificate().inequalities.iter().find(|i| i.name == "rho_upper_bound").unwrap();
        assert!((up.rhs + LAMBDA_MARGIN - 2.0 / 3.0).abs() < 1e-12);
        let err = build_dr_forward(d.clone(), e.clone(), Some(f), 2, 1.0, 2.0, LambdaSchedule::Constant(0.5))
            .unwrap_err();
        assert!(err.margin_report().unwrap().fails("theta_lt_2"));
        let err = build_dr_forward(d, e, None, 2, 1.0, 1.5, LambdaSchedule::Constant(1.3)).unwrap_err();
        assert!(err.margin_report().unwrap().fails("rho_upper_bound"));
    }

    #[test]
    fn fbs_boundary_and_ppa() {
        let a = BlockAtom::single(AtomOp::Subdiff(ProxAtom::Zero), 2).unwrap();
        let c = CocoMap::affine_gradient(Matrix::identity(2, 2), Vector::from_vec(vec![1.0, -1.0])).unwrap();
        assert!(build_fbs(a.clone(), c.clone(), 3.0, 0.25).is_ok());
        let err = build_fbs(a.clone(), c, 4.0, 0.1).unwrap_err();
        assert!(err.margin_report().unwrap().fails("fbs_gamma_lt_4beta"));

        let box_a = BlockAtom::single(AtomOp::Subdiff(ProxAtom::boxed(0.0, 1.0).unwrap()), 2).unwrap();
        let mut ppa = build_ppa(box_a, 1.0, 1.0).unwrap();
        let z0 = Vector::from_vec(vec![0.5, 0.25]);
        let rep = ppa.run(&z0, &RunOptions::default());
        assert_eq!(rep.termination, crate::report::Termination::Stationary);
    }

    #[test]
    fn fbfs_range_and_degenerate() {
        let a = BlockAtom::single(AtomOp::Subdiff(ProxAtom::l1(0.3).unwrap()), 2).unwrap();
        let m = LinearMap::from_rows(&[vec![0.0, 2.0], vec![-2.0, 0.0]]).unwrap();
        assert!(build_fbfs(a.clone(), m.clone(), None, 0.9 / 2.0).is_ok());
        let err = build_fbfs(a.clone(), m, None, 0.5).unwrap_err();
        assert!(err.margin_report().unwrap().fails("fbfs_gamma_range"));
        let sym = LinearMap::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(build_fbfs(a.clone(), sym, None, 0.1).unwrap_err().margin_report().unwrap().fails("fbfs_skew_m"));
        let mut f = build_fbfs(a, LinearMap::zero(2, 2), None, 1.0).unwrap();
        let st = f.step(&Vector::from_vec(vec![1.0, -1.0]), 0).unwrap();
        assert_eq!(st.lambda, 1.0);
    }

    #[test]
    fn admm_bound_example() {
        let b = admm_gamma_bound(1.0, 1.5, 1.0);
        assert!((b - 0.5 * (1.5 - 0.5f64.sqrt())).abs() < 1e-15);
        assert!((b - 0.3964).abs() < 1e-4);
    }
}

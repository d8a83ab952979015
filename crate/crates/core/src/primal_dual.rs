//! Primal-dual instances for `min f(x) + h(x) + (g □ l)(Lx)`.
//!
//! The saddle system is posed on `z = (x, y)` with `A = ∂f × ∂g*`,
//! `M(x, y) = (L'y, −Lx)` and `C = (∇h, ∇l*)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Cholesky;
use thiserror::Error;

use crate::atoms::{AtomError, AtomOp, BlockAtom, CocoMap, ProxAtom};
use crate::diagnostics::sandwich_constants;
use crate::engine::{
    Afba, BetaP, EngineError, InclusionOps, LambdaSchedule, PreconditionerTriple, UpdateDirection,
    LAMBDA_MARGIN,
};
use crate::linops::{concat, split, LinearMap, LinopsError, Matrix, SymMetric, Vector, POWER_TOL};
use crate::report::{drive, Iteration, RunOptions, SolveReport, Step};
use crate::validity::{
    select_case, CaseOutcome, Inequality, MarginReport, RateEligibility, Relation,
    ValidityCertificate,
};

/// Relative padding applied to power-iteration norm estimates.
pub const NORM_PAD: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PdError {
    #[error("{0}")]
    Rejected(MarginReport),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Atom(#[from] AtomError),
    #[error(transparent)]
    Linops(#[from] LinopsError),
}

impl PdError {
    pub fn margin_report(&self) -> Option<&MarginReport> {
        match self {
            Self::Rejected(r) => Some(r),
            _ => None,
        }
    }
}

/// The `l` in `g □ l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InfConv {
    /// `l = ι_{0}`, so `g □ l = g`.
    Indicator0,
    /// `l = (μ/2)‖·‖²`, so `∇l*` is `1/μ`-Lipschitz.
    SqL2 { mu: f64 },
}

#[derive(Debug, Clone)]
pub struct SaddleProblem {
    pub f: ProxAtom,
    pub g: ProxAtom,
    /// `∇h`; `None` encodes `h ≡ 0`.
    pub h: Option<CocoMap>,
    pub l: InfConv,
    pub lmap: LinearMap,
    norm_l: f64,
}

fn check_atom_dim(name: &str, a: &ProxAtom, d: usize) -> Result<(), PdError> {
    match a.dim() {
        Some(k) if k != d => Err(PdError::Invalid(format!("{name} has dim {k}, expected {d}"))),
        _ => Ok(()),
    }
}

impl SaddleProblem {
    pub fn new(
        f: ProxAtom,
        g: ProxAtom,
        h: Option<CocoMap>,
        l: InfConv,
        lmap: LinearMap,
    ) -> Result<Self, PdError> {
        let (m, n) = lmap.shape();
        check_atom_dim("f", &f, n)?;
        check_atom_dim("g", &g, m)?;
        let h = h.filter(|c| !c.is_zero());
        if let Some(c) = &h {
            if c.dim() != n {
                return Err(PdError::Invalid(format!("∇h has dim {}, expected {n}", c.dim())));
            }
        }
        if let InfConv::SqL2 { mu } = l {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(PdError::Invalid(format!("l modulus {mu} must be positive")));
            }
        }
        let est = lmap.op_norm(POWER_TOL)?;
        let norm_l = est.value * (1.0 + NORM_PAD);
        Ok(Self { f, g, h, l, lmap, norm_l })
    }

    /// Re-estimates `‖L‖` from a different power-iteration start.
    pub fn with_norm_seed(mut self, seed: u64) -> Result<Self, PdError> {
        self.norm_l = self.lmap.op_norm_seeded(POWER_TOL, seed)?.value * (1.0 + NORM_PAD);
        Ok(self)
    }

    /// Replaces the padded estimate of `‖L‖` by a caller-certified bound.
    pub fn with_norm_bound(mut self, norm: f64) -> Result<Self, PdError> {
        let est = self.lmap.op_norm(POWER_TOL)?.value;
        if !(norm >= est - 1e-9) {
            return Err(PdError::Invalid(format!("norm bound {norm} is below the estimate {est}")));
        }
        self.norm_l = norm;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.lmap.cols()
    }

    pub fn m(&self) -> usize {
        self.lmap.rows()
    }

    pub fn norm_l(&self) -> f64 {
        self.norm_l
    }

    /// Lipschitz constant of `∇h`; zero when `h ≡ 0`.
    pub fn beta_h(&self) -> f64 {
        self.h.as_ref().map_or(0.0, CocoMap::lipschitz)
    }

    /// Lipschitz constant of `∇l*`; zero when `l = ι_{0}`.
    pub fn beta_l(&self) -> f64 {
        match self.l {
            InfConv::Indicator0 => 0.0,
            InfConv::SqL2 { mu } => 1.0 / mu,
        }
    }

    pub fn h_absent(&self) -> bool {
        self.h.is_none()
    }

    pub fn l_indicator(&self) -> bool {
        self.l == InfConv::Indicator0
    }

    pub fn grad_h(&self, x: &Vector) -> Vector {
        self.h.as_ref().map_or_else(|| Vector::zeros(x.len()), |c| c.apply(x))
    }

    pub fn grad_l_conj(&self, y: &Vector) -> Vector {
        match self.l {
            InfConv::Indicator0 => Vector::zeros(y.len()),
            InfConv::SqL2 { mu } => y / mu,
        }
    }

    /// `(A, M, C)` on the product space.
    pub fn inclusion_ops(&self) -> Result<InclusionOps, PdError> {
        let (n, m) = (self.n(), self.m());
        let a = BlockAtom::new(vec![
            (AtomOp::Subdiff(self.f.clone()), n),
            (AtomOp::ConjugateSubdiff(self.g.clone()), m),
        ])?;
        let c = if self.h_absent() && self.l_indicator() {
            Vec::new()
        } else {
            let ch = self.h.clone().unwrap_or(CocoMap::Zero { dim: n });
            let cl = match self.l {
                InfConv::Indicator0 => CocoMap::Zero { dim: m },
                InfConv::SqL2 { mu } => CocoMap::linear_scaled(mu, m)?,
            };
            vec![ch, cl]
        };
        Ok(InclusionOps::new(a, LinearMap::saddle_skew(&self.lmap), c)?)
    }

    /// `(g □ l)(v)`.
    pub fn g_box_l(&self, v: &Vector) -> Result<f64, PdError> {
        match self.l {
            InfConv::Indicator0 => Ok(self.g.eval(v)),
            InfConv::SqL2 { mu } => {
                let p = self.g.resolvent(1.0 / mu, v)?;
                Ok(self.g.eval(&p) + 0.5 * mu * (v - &p).norm_squared())
            }
        }
    }

    pub fn objective(&self, x: &Vector) -> Result<f64, PdError> {
        let lx = self.lmap.apply(x)?;
        let h = self.h.as_ref().map_or(0.0, |c| c.value(x));
        Ok(self.f.eval(x) + h + self.g_box_l(&lx)?)
    }

    /// Prox-based residual of the optimality system.
    pub fn kkt_residual(&self, x: &Vector, y: &Vector) -> Result<f64, PdError> {
        let lty = self.lmap.adjoint_apply(y)?;
        let lx = self.lmap.apply(x)?;
        let px = self.f.resolvent(1.0, &(x - lty - self.grad_h(x)))?;
        let py = self.g.moreau_conjugate_prox(1.0, &(y + lx - self.grad_l_conj(y)))?;
        Ok(((x - px).norm_squared() + (y - py).norm_squared()).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PdParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub theta: f64,
    pub mu: f64,
}

impl PdParams {
    pub fn new(gamma1: f64, gamma2: f64, theta: f64, mu: f64) -> Result<Self, PdError> {
        let ok = gamma1 > 0.0
            && gamma2 > 0.0
            && gamma1.is_finite()
            && gamma2.is_finite()
            && theta >= 0.0
            && theta.is_finite()
            && (0.0..=1.0).contains(&mu);
        if !ok {
            return Err(PdError::Invalid(format!(
                "γ₁ = {gamma1}, γ₂ = {gamma2}, θ = {theta}, μ = {mu}"
            )));
        }
        Ok(Self { gamma1, gamma2, theta, mu })
    }

    /// `γ₁⁻¹ − γ₂θ²‖L‖²/4`.
    pub fn q(&self, norm_l: f64) -> f64 {
        1.0 / self.gamma1 - 0.25 * self.gamma2 * self.theta * self.theta * norm_l * norm_l
    }
}

/// Strong positivity constant of `P`; negative values mean `P` is indefinite.
pub fn tau_of(p: &PdParams, norm_l: f64) -> f64 {
    let (a, c) = (1.0 / p.gamma1, 1.0 / p.gamma2);
    let t = p.theta * norm_l;
    0.5 * a + 0.5 * c - 0.5 * (t * t + (a - c) * (a - c)).sqrt()
}

/// Cocoercivity constant of `C` in the `P` metric; `None` when `C ≡ 0`.
pub fn beta_of(problem: &SaddleProblem, p: &PdParams, tau: f64) -> Option<f64> {
    let bh = problem.beta_h();
    match (problem.l_indicator(), problem.h_absent()) {
        (true, true) => None,
        (true, false) => Some(p.q(problem.norm_l()) / bh),
        _ => {
            let inv = |b: f64| if b == 0.0 { f64::INFINITY } else { 1.0 / b };
            Some(tau * inv(bh).min(inv(problem.beta_l())))
        }
    }
}

fn delta_from_beta(beta: Option<f64>) -> f64 {
    match beta {
        None => 2.0,
        Some(b) if b.is_infinite() => 2.0,
        Some(b) => 2.0 - 1.0 / (2.0 * b),
    }
}

/// `λ > 0` and `λ ≤ δ − margin` (constant) or `≤ δ` (table).
pub fn lambda_inequalities(
    schedule: &LambdaSchedule,
    delta: f64,
    case: &str,
) -> Result<Vec<Inequality>, PdError> {
    let (lo, hi, rhs) = match schedule {
        LambdaSchedule::Constant(l) => (*l, *l, delta - LAMBDA_MARGIN),
        LambdaSchedule::Table(t) if !t.is_empty() => (
            t.iter().copied().fold(f64::INFINITY, f64::min),
            t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            delta,
        ),
        other => {
            return Err(PdError::Invalid(format!("λ schedule {other:?} is not supported here")))
        }
    };
    Ok(vec![
        Inequality::new("lambda_positive", case, lo, Relation::Gt, 0.0),
        Inequality::new("lambda_below_delta", case, hi, Relation::Le, rhs),
    ])
}

/// Largest constant in the schedule, if any.
pub fn schedule_max(schedule: &LambdaSchedule) -> Option<f64> {
    match schedule {
        LambdaSchedule::Constant(l) => Some(*l),
        LambdaSchedule::Table(t) => t.iter().copied().reduce(f64::max),
        _ => None,
    }
}

pub const CASE_GENERAL: &str = "general";
pub const CASE_L_INDICATOR: &str = "l_indicator";
pub const CASE_L_INDICATOR_H_ZERO: &str = "l_indicator_h_zero";
pub const CASE_THETA2_POSITIVE_P: &str = "theta2_positive_p";

/// Candidate cases with their inequalities, in order of preference.
pub fn candidate_cases(
    problem: &SaddleProblem,
    p: &PdParams,
    schedule: &LambdaSchedule,
) -> Result<Vec<CaseOutcome>, PdError> {
    let nl = problem.norm_l();
    let tau = tau_of(p, nl);
    let q = p.q(nl);
    let bh = problem.beta_h();
    let mut cases = Vec::new();
    let mut push = |case: &str,
                    mut ineqs: Vec<Inequality>,
                    beta: Option<f64>,
                    delta: f64,
                    positive_p: bool|
     -> Result<(), PdError> {
        ineqs.extend(lambda_inequalities(schedule, delta, case)?);
        cases.push(CaseOutcome {
            case: case.into(),
            inequalities: ineqs,
            delta,
            tau: Some(tau),
            beta_p: beta,
            positive_p,
        });
        Ok(())
    };
    let strong = |case: &str| Inequality::new("p_strong_positivity", case, q, Relation::Gt, 0.0);

    if !(problem.h_absent() && problem.l_indicator()) {
        let c = CASE_GENERAL;
        let inv = |b: f64| if b == 0.0 { f64::INFINITY } else { 1.0 / b };
        let mn = inv(bh).min(inv(problem.beta_l()));
        let beta = tau * mn;
        push(
            c,
            vec![strong(c), Inequality::new("coco_tau_bound", c, 4.0 * tau * mn, Relation::Gt, 1.0)],
            Some(beta),
            delta_from_beta(Some(beta)),
            false,
        )?;
    }
    if problem.l_indicator() && !problem.h_absent() {
        let c = CASE_L_INDICATOR;
        let beta = q / bh;
        push(
            c,
            vec![
                strong(c),
                Inequality::new(
                    "gamma1_inv_minus_quarter_theta2_gamma2_L2_gt_quarter_beta_h",
                    c,
                    q,
                    Relation::Gt,
                    bh / 4.0,
                ),
            ],
            Some(beta),
            delta_from_beta(Some(beta)),
            false,
        )?;
    }
    if problem.l_indicator() && problem.h_absent() {
        let c = CASE_L_INDICATOR_H_ZERO;
        push(
            c,
            vec![Inequality::new("gamma1_inv_minus_quarter_theta2_gamma2_L2", c, q, Relation::Gt, 0.0)],
            None,
            2.0,
            false,
        )?;
        if p.theta == 2.0 {
            let c = CASE_THETA2_POSITIVE_P;
            let lhs = 1.0 / p.gamma1 - p.gamma2 * nl * nl;
            push(
                c,
                vec![Inequality::new("gamma1_inv_minus_gamma2_L2", c, lhs, Relation::Ge, 0.0)],
                None,
                2.0,
                true,
            )?;
        }
    }
    Ok(cases)
}

/// Builds the certificate from a selected case.
pub fn certify(
    variant: &str,
    problem: &SaddleProblem,
    p: &PdParams,
    chosen: CaseOutcome,
    lambda: Option<f64>,
) -> Result<ValidityCertificate, PdError> {
    let rate = if chosen.positive_p {
        None
    } else {
        let mats = PdMatrices::new(&problem.lmap.to_dense(), p);
        Some(rate_eligibility(&mats.p, &mats.d(p.mu), chosen.delta, lambda)?)
    };
    let mut flags = BTreeMap::new();
    flags.insert("h_zero".to_string(), problem.h_absent());
    flags.insert("l_indicator".to_string(), problem.l_indicator());
    Ok(ValidityCertificate {
        variant: variant.into(),
        case: chosen.case,
        tau: chosen.tau,
        beta_p: chosen.beta_p,
        delta: chosen.delta,
        positive_p: chosen.positive_p,
        lambda,
        rate,
        flags,
        inequalities: chosen.inequalities,
    })
}

/// Sandwich constants of `D` against `P` and the cap `c₁δ/c₂`.
pub fn rate_eligibility(
    p: &Matrix,
    d: &Matrix,
    delta: f64,
    lambda: Option<f64>,
) -> Result<RateEligibility, PdError> {
    let (c1, c2) = sandwich_constants(p, d)
        .map_err(|e| PdError::InvariantViolation(e.to_string()))?;
    let cap = c1 * delta / c2;
    Ok(RateEligibility { c1, c2, lambda_cap: cap, eligible: lambda.is_some_and(|l| l <= cap) })
}

/// Dense `(H + M*)* S⁻¹ (H + M*)`.
pub fn d_from_s(pre: &PreconditionerTriple, m: &Matrix) -> Result<Matrix, PdError> {
    let hm = pre.h() + m.transpose();
    let ch = Cholesky::new(pre.s().matrix().clone())
        .ok_or_else(|| PdError::InvariantViolation("S is not positive definite".into()))?;
    let d = hm.transpose() * ch.solve(&hm);
    Ok((&d + d.transpose()) * 0.5)
}

/// Selects a case and certifies it.
pub fn validate(
    problem: &SaddleProblem,
    p: &PdParams,
    schedule: &LambdaSchedule,
) -> Result<ValidityCertificate, PdError> {
    let cases = candidate_cases(problem, p, schedule)?;
    let chosen = select_case("primal_dual", cases).map_err(PdError::Rejected)?;
    certify("primal_dual", problem, p, chosen, schedule_max(schedule))
}

fn block(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Matrix {
    let (n, m) = (a.nrows(), d.nrows());
    let mut out = Matrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((0, n), (n, m)).copy_from(b);
    out.view_mut((n, 0), (m, n)).copy_from(c);
    out.view_mut((n, n), (m, m)).copy_from(d);
    out
}

/// Dense `H`, `P`, `S₁`, `S₂`, `D₁`, `D₂` of the family.
#[derive(Debug, Clone)]
pub struct PdMatrices {
    pub h: Matrix,
    pub p: Matrix,
    pub s1: Matrix,
    pub s2: Matrix,
    pub d1: Matrix,
    pub d2: Matrix,
}

impl PdMatrices {
    pub fn new(l: &Matrix, p: &PdParams) -> Self {
        let (m, n) = l.shape();
        let (g1, g2, th) = (p.gamma1, p.gamma2, p.theta);
        let (a, c) = (1.0 / g1, 1.0 / g2);
        let lt = l.transpose();
        let ia = Matrix::identity(n, n) * a;
        let ic = Matrix::identity(m, m) * c;
        let ltl = &lt * l;
        let llt = l * &lt;
        let z_nm = Matrix::zeros(n, m);
        let h = block(&ia, &z_nm, &(l * -th), &ic);
        let pm = block(&ia, &(&lt * (-th / 2.0)), &(l * (-th / 2.0)), &ic);
        let s1 = block(
            &ia,
            &(&lt * (1.0 - th)),
            &(l * (1.0 - th)),
            &(&ic + &llt * (g1 * (1.0 - th) * (2.0 - th))),
        );
        let s2 = block(&(&ia + &ltl * (g2 * (2.0 - th))), &(-&lt), &(-l), &ic);
        let d1 = block(&ia, &(-&lt), &(-l), &(&ic + &llt * (g1 * (2.0 - th))));
        let d2 = block(
            &(&ia + &ltl * (g2 * (1.0 - th) * (2.0 - th))),
            &(&lt * (1.0 - th)),
            &(l * (1.0 - th)),
            &ic,
        );
        Self { h, p: pm, s1, s2, d1, d2 }
    }

    /// `S = (μS₁⁻¹ + (1 − μ)S₂⁻¹)⁻¹`.
    pub fn s(&self, mu: f64) -> Result<Matrix, PdError> {
        if mu == 1.0 {
            return Ok(self.s1.clone());
        }
        if mu == 0.0 {
            return Ok(self.s2.clone());
        }
        let inv = |s: &Matrix| {
            s.clone()
                .try_inverse()
                .ok_or_else(|| PdError::InvariantViolation("S₁ or S₂ is singular".into()))
        };
        let blend = inv(&self.s1)? * mu + inv(&self.s2)? * (1.0 - mu);
        let s = blend
            .try_inverse()
            .ok_or_else(|| PdError::InvariantViolation("blended S is singular".into()))?;
        Ok((&s + s.transpose()) * 0.5)
    }

    /// `D = μD₁ + (1 − μ)D₂`.
    pub fn d(&self, mu: f64) -> Matrix {
        &self.d1 * mu + &self.d2 * (1.0 - mu)
    }
}

/// Closed-form `S⁻¹(H + M*)`.
#[derive(Debug, Clone)]
pub struct PdDirection {
    n: usize,
    l: LinearMap,
    p: PdParams,
}

impl PdDirection {
    pub fn new(l: LinearMap, p: PdParams) -> Self {
        Self { n: l.cols(), l, p }
    }
}

impl UpdateDirection for PdDirection {
    fn direction(&self, ztilde: &Vector) -> Vector {
        let (xt, yt) = split(ztilde, self.n);
        let p = &self.p;
        let k = 2.0 - p.theta;
        let lty = self.l.adjoint_apply(&yt).expect("shape checked at build");
        let lx = self.l.apply(&xt).expect("shape checked at build");
        let dx = &xt - lty * (p.mu * p.gamma1 * k);
        let dy = lx * ((1.0 - p.mu) * p.gamma2 * k) + &yt;
        concat(&dx, &dy)
    }
}

/// `(H, P, K, S)` for the family with the closed-form direction attached.
pub fn build_s_family(problem: &SaddleProblem, p: &PdParams) -> Result<PreconditionerTriple, PdError> {
    let l = problem.lmap.to_dense();
    let mats = PdMatrices::new(&l, p);
    let s = mats.s(p.mu)?;
    let pre = PreconditionerTriple::new(mats.h, s, vec![problem.n(), problem.m()])?;
    Ok(pre.with_direction(Arc::new(PdDirection::new(problem.lmap.clone(), *p))))
}

/// The quantities entering `α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdQuadratics {
    /// `‖z̃‖²_P`.
    pub num: f64,
    /// `‖z̃‖²_D`.
    pub v: f64,
}

/// `‖x̃‖²`, `‖ỹ‖²`, `‖Lx̃‖²`, `‖L'ỹ‖²` and `⟨Lx̃, ỹ⟩` combined into `(‖z̃‖²_P, ‖z̃‖²_D)`.
pub fn pd_quadratics(p: &PdParams, xx: f64, yy: f64, lx2: f64, lty2: f64, cross: f64) -> PdQuadratics {
    let (a, c) = (1.0 / p.gamma1, 1.0 / p.gamma2);
    let (th, mu) = (p.theta, p.mu);
    let base = a * xx + c * yy;
    let num = base - th * cross;
    let mut v = base + 2.0 * ((1.0 - mu) * (1.0 - th) - mu) * cross;
    if mu != 1.0 {
        v += (1.0 - mu) * p.gamma2 * (1.0 - th) * (2.0 - th) * lx2;
    }
    if mu != 0.0 {
        v += mu * p.gamma1 * (2.0 - th) * lty2;
    }
    PdQuadratics { num, v }
}

/// `λ‖z̃‖²_P / ‖z̃‖²_D`.
pub fn alpha_pd(
    p: &PdParams,
    lambda: f64,
    xt: &Vector,
    yt: &Vector,
    l: &LinearMap,
) -> Result<f64, PdError> {
    let lx = l.apply(xt)?;
    let lty = l.adjoint_apply(yt)?;
    let q = pd_quadratics(p, xt.norm_squared(), yt.norm_squared(), lx.norm_squared(), lty.norm_squared(), lx.dot(yt));
    alpha_from(p, lambda, q)
}

fn alpha_from(p: &PdParams, lambda: f64, q: PdQuadratics) -> Result<f64, PdError> {
    if p.theta == 2.0 && q.v <= 0.0 {
        return Ok(lambda);
    }
    if !(q.v > 0.0) {
        return Err(PdError::InvariantViolation(format!("‖z̃‖²_D = {:e} is not positive", q.v)));
    }
    Ok(lambda * q.num / q.v)
}

/// How the relaxation is chosen each iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum PdRelaxation {
    /// Use the schedule for `λ` and compute `α`.
    Schedule(LambdaSchedule),
    /// Fix `α` and report the implied `λ = α‖z̃‖²_D/‖z̃‖²_P`.
    UnitAlpha,
}

/// Specialized loop for the family, with `L`-product caching at `μ ∈ {0, 1}`.
pub struct PdSolver {
    problem: SaddleProblem,
    params: PdParams,
    relax: PdRelaxation,
    certificate: ValidityCertificate,
    s_metric: SymMetric,
    p_metric: SymMetric,
    lx_cache: Option<(Vector, Vector)>,
    lty_cache: Option<(Vector, Vector)>,
    matvecs: usize,
    debug_checks: bool,
    dense_d: Option<Matrix>,
}

impl std::fmt::Debug for PdSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PdSolver")
            .field("params", &self.params)
            .field("relax", &self.relax)
            .field("case", &self.certificate.case)
            .finish()
    }
}

impl PdSolver {
    /// Validates and builds the solver for a `λ` schedule.
    pub fn new(problem: SaddleProblem, params: PdParams, schedule: LambdaSchedule) -> Result<Self, PdError> {
        let cert = validate(&problem, &params, &schedule)?;
        Self::with_certificate(problem, params, PdRelaxation::Schedule(schedule), cert)
    }

    /// Builds from an already-issued certificate.
    pub fn with_certificate(
        problem: SaddleProblem,
        params: PdParams,
        relax: PdRelaxation,
        certificate: ValidityCertificate,
    ) -> Result<Self, PdError> {
        let l = problem.lmap.to_dense();
        let mats = PdMatrices::new(&l, &params);
        let s_metric = SymMetric::from_dense(mats.s(params.mu)?)?;
        let p_metric = SymMetric::from_dense(mats.p.clone())?;
        Ok(Self {
            problem,
            params,
            relax,
            certificate,
            s_metric,
            p_metric,
            lx_cache: None,
            lty_cache: None,
            matvecs: 0,
            debug_checks: false,
            dense_d: None,
        })
    }

    /// Checks `‖z̃‖²_P` and `‖z̃‖²_D` against dense realizations every iteration.
    pub fn with_debug_checks(mut self, on: bool) -> Self {
        self.debug_checks = on;
        self.dense_d = if on {
            let mats = PdMatrices::new(&self.problem.lmap.to_dense(), &self.params);
            Some(mats.d(self.params.mu))
        } else {
            None
        };
        self
    }

    pub fn certificate(&self) -> &ValidityCertificate {
        &self.certificate
    }

    pub fn params(&self) -> &PdParams {
        &self.params
    }

    pub fn problem(&self) -> &SaddleProblem {
        &self.problem
    }

    pub fn relaxation(&self) -> &PdRelaxation {
        &self.relax
    }

    pub fn s_metric(&self) -> &SymMetric {
        &self.s_metric
    }

    pub fn p_metric(&self) -> &SymMetric {
        &self.p_metric
    }

    /// Products with `L` or `L'` performed so far.
    pub fn matvecs(&self) -> usize {
        self.matvecs
    }

    pub fn zero_point(&self) -> Vector {
        Vector::zeros(self.problem.n() + self.problem.m())
    }

    fn l_apply(&mut self, v: &Vector) -> Vector {
        self.matvecs += 1;
        self.problem.lmap.apply(v).expect("dimensions checked")
    }

    fn lt_apply(&mut self, v: &Vector) -> Vector {
        self.matvecs += 1;
        self.problem.lmap.adjoint_apply(v).expect("dimensions checked")
    }

    fn cached(cache: &Option<(Vector, Vector)>, key: &Vector) -> Option<Vector> {
        cache.as_ref().filter(|(k, _)| k == key).map(|(_, v)| v.clone())
    }

    /// Engine configured with the same `(H, P, K, S)`, `β` and `λ`.
    pub fn engine(&self) -> Result<Afba, PdError> {
        let schedule = match &self.relax {
            PdRelaxation::Schedule(s) => s.clone(),
            PdRelaxation::UnitAlpha if self.params.theta == 2.0 => LambdaSchedule::Constant(1.0),
            PdRelaxation::UnitAlpha => LambdaSchedule::FixedAlpha(1.0),
        };
        let ops = self.problem.inclusion_ops()?;
        let pre = build_s_family(&self.problem, &self.params)?;
        if self.certificate.positive_p {
            Ok(Afba::positive_p(ops, pre, schedule)?)
        } else {
            let beta = if ops.c_absent() { None } else { self.certificate.beta_p };
            Ok(Afba::new(ops, pre, BetaP::Given(beta), schedule)?)
        }
    }

    pub fn run(&mut self, z0: &Vector, opts: &RunOptions) -> SolveReport {
        drive(self, z0, opts)
    }

    fn lambda_at(&self, n: usize) -> f64 {
        match &self.relax {
            PdRelaxation::Schedule(LambdaSchedule::Constant(l)) => *l,
            PdRelaxation::Schedule(LambdaSchedule::Table(t)) => t[n.min(t.len() - 1)],
            _ => 1.0,
        }
    }

    fn pd_step(&mut self, z: &Vector, n: usize) -> Result<Step, PdError> {
        let nn = self.problem.n();
        let (x, y) = split(z, nn);
        let p = self.params;
        let (g1, g2, th, mu) = (p.gamma1, p.gamma2, p.theta, p.mu);
        let lty = match Self::cached(&self.lty_cache, &y) {
            Some(v) => v,
            None => self.lt_apply(&y),
        };
        let xbar = self
            .problem
            .f
            .resolvent(g1, &(&x - (&lty + self.problem.grad_h(&x)) * g1))?;
        // L((1 − θ)x + θx̄), together with Lx and Lx̄ when they are needed.
        let (w, lx_pair) = if mu == 1.0 {
            let mix = &x * (1.0 - th) + &xbar * th;
            (self.l_apply(&mix), None)
        } else {
            let lx = match Self::cached(&self.lx_cache, &x) {
                Some(v) => v,
                None => self.l_apply(&x),
            };
            let lxbar = self.l_apply(&xbar);
            (&lx * (1.0 - th) + &lxbar * th, Some((lx, lxbar)))
        };
        let ybar = self.problem.g.moreau_conjugate_prox(
            g2,
            &(&y + (&w - self.problem.grad_l_conj(&y)) * g2),
        )?;
        let xt = &xbar - &x;
        let yt = &ybar - &y;
        let lxt = lx_pair.as_ref().map(|(lx, lxbar)| lxbar - lx);
        let ltyt = if mu != 0.0 {
            let ltybar = self.lt_apply(&ybar);
            Some(ltybar - &lty)
        } else {
            None
        };
        let cross = match (&lxt, &ltyt) {
            (Some(lx), _) => lx.dot(&yt),
            (None, Some(lt)) => xt.dot(lt),
            (None, None) => unreachable!("one of the products is always formed"),
        };
        let q = pd_quadratics(
            &p,
            xt.norm_squared(),
            yt.norm_squared(),
            lxt.as_ref().map_or(0.0, Vector::norm_squared),
            ltyt.as_ref().map_or(0.0, Vector::norm_squared),
            cross,
        );
        let fixed_point = xt.iter().chain(yt.iter()).all(|e| *e == 0.0);
        let res_p = q.num.max(0.0).sqrt();
        let res_d = q.v.max(0.0).sqrt();
        if fixed_point {
            return Ok(Step { next: z.clone(), lambda: self.lambda_at(n), alpha: 0.0, res_p, res_d, fixed_point });
        }
        if self.debug_checks {
            let zt = concat(&xt, &yt);
            let dense_p = self.p_metric.quad(&zt);
            let dense_d = self.dense_d.as_ref().map_or(q.v, |d| zt.dot(&(d * &zt)));
            let scale = zt.norm_squared() * (1.0 + self.p_metric.norm());
            let dd = self.dense_d.as_ref().map_or(0.0, |d| d.norm());
            if (dense_p - q.num).abs() > 1e-10 * scale.max(dense_p.abs())
                || (dense_d - q.v).abs() > 1e-10 * (zt.norm_squared() * (1.0 + dd)).max(dense_d.abs())
            {
                return Err(PdError::InvariantViolation(format!(
                    "quadratic forms disagree: P {dense_p:e} vs {:e}, D {dense_d:e} vs {:e}",
                    q.num, q.v
                )));
            }
        }
        let (lambda, alpha) = match &self.relax {
            // At θ = 2 the direction is z̃ itself, so α = λ.
            PdRelaxation::UnitAlpha if th == 2.0 => (1.0, 1.0),
            PdRelaxation::UnitAlpha => {
                if !(q.num > 0.0) {
                    return Err(PdError::InvariantViolation("‖z̃‖²_P vanished".into()));
                }
                (q.v / q.num, 1.0)
            }
            PdRelaxation::Schedule(_) => {
                let l = self.lambda_at(n);
                (l, alpha_from(&p, l, q)?)
            }
        };
        let k = 2.0 - th;
        let mut dx = xt.clone();
        if mu != 0.0 {
            dx -= ltyt.as_ref().expect("formed when μ ≠ 0") * (mu * g1 * k);
        }
        let mut dy = yt.clone();
        if mu != 1.0 {
            dy += lxt.as_ref().expect("formed when μ ≠ 1") * ((1.0 - mu) * g2 * k);
        }
        let xn = &x + dx * alpha;
        let yn = &y + dy * alpha;
        self.lx_cache = None;
        self.lty_cache = None;
        if mu == 0.0 {
            let (lx, _) = lx_pair.expect("formed when μ ≠ 1");
            let lxn = lx + lxt.expect("formed when μ ≠ 1") * alpha;
            self.lx_cache = Some((xn.clone(), lxn));
        } else if mu == 1.0 {
            let ltyn = lty + ltyt.expect("formed when μ ≠ 0") * alpha;
            self.lty_cache = Some((yn.clone(), ltyn));
        }
        Ok(Step { next: concat(&xn, &yn), lambda, alpha, res_p, res_d, fixed_point })
    }
}

impl Iteration for PdSolver {
    fn step(&mut self, z: &Vector, n: usize) -> Result<Step, String> {
        self.pd_step(z, n).map_err(|e| e.to_string())
    }

    fn fejer_metric(&self) -> Option<&SymMetric> {
        Some(&self.s_metric)
    }

    fn objective(&self, z: &Vector) -> Option<f64> {
        let (x, _) = split(z, self.problem.n());
        self.problem.objective(&x).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::min_eig;

    fn l_unit() -> LinearMap {
        LinearMap::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.5]]).unwrap()
    }

    fn problem(h: Option<CocoMap>, l: InfConv) -> SaddleProblem {
        SaddleProblem::new(ProxAtom::l1(0.1).unwrap(), ProxAtom::Zero, h, l, l_unit())
            .unwrap()
            .with_norm_bound(1.0)
            .unwrap()
    }

    fn h_unit() -> CocoMap {
        CocoMap::affine_gradient(Matrix::identity(2, 2), Vector::zeros(2)).unwrap()
    }

    #[test]
    fn tau_examples() {
        let p = PdParams::new(1.0, 1.0, 0.0, 0.5).unwrap();
        assert_eq!(tau_of(&p, 1.0), 1.0);
        let p = PdParams::new(1.0, 1.0, 2.0, 0.5).unwrap();
        assert_eq!(tau_of(&p, 1.0), 0.0);
        let p = PdParams::new(1.0, 1.0, 1.0, 0.5).unwrap();
        assert_eq!(tau_of(&p, 1.0), 0.5);
        let l = l_unit().to_dense();
        let pm = PdMatrices::new(&l, &p);
        assert!((min_eig(&pm.p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn beta_examples() {
        let pr = problem(Some(h_unit()), InfConv::Indicator0);
        let p = PdParams::new(1.0, 0.5, 2.0, 0.5).unwrap();
        assert_eq!(beta_of(&pr, &p, tau_of(&p, 1.0)), Some(0.5));
        let pr0 = problem(None, InfConv::Indicator0);
        assert_eq!(beta_of(&pr0, &p, 1.0), None);
        let prl = problem(Some(h_unit()), InfConv::SqL2 { mu: 0.5 });
        assert_eq!(beta_of(&prl, &p, 0.5), Some(0.25));
    }

    #[test]
    fn validate_examples() {
        let pr = problem(Some(h_unit()), InfConv::Indicator0);
        let p = PdParams::new(1.0, 0.5, 2.0, 0.5).unwrap();
        let c = validate(&pr, &p, &LambdaSchedule::Constant(0.9)).unwrap();
        assert_eq!(c.case, CASE_L_INDICATOR);
        assert_eq!(c.delta, 1.0);
        assert!(c.recheck());

        let p1 = PdParams::new(1.0, 1.0, 2.0, 0.5).unwrap();
        let err = validate(&pr, &p1, &LambdaSchedule::Constant(0.5)).unwrap_err();
        let rep = err.margin_report().unwrap();
        assert!(rep.fails("gamma1_inv_minus_quarter_theta2_gamma2_L2_gt_quarter_beta_h"));

        let pr0 = problem(None, InfConv::Indicator0);
        let c = validate(&pr0, &p1, &LambdaSchedule::Constant(1.5)).unwrap();
        assert_eq!(c.case, CASE_THETA2_POSITIVE_P);
        assert!(c.positive_p);

        let p2 = PdParams::new(1.0, 1.0, 1.0, 0.5).unwrap();
        let c = validate(&pr0, &p2, &LambdaSchedule::Constant(1.5)).unwrap();
        assert_eq!(c.case, CASE_L_INDICATOR_H_ZERO);
        assert_eq!(c.delta, 2.0);
        assert_eq!(c.inequalities[0].lhs, 0.75);
    }

    #[test]
    fn coco_boundary_rejected() {
        // τ = 0.5, β_h = 1, β_l = 2 gives β = 1/4 exactly.
        let pr = problem(Some(h_unit()), InfConv::SqL2 { mu: 0.5 });
        let p = PdParams::new(1.0, 1.0, 1.0, 0.5).unwrap();
        let err = validate(&pr, &p, &LambdaSchedule::Constant(0.1)).unwrap_err();
        assert!(err.margin_report().unwrap().fails("coco_tau_bound"));
    }

    #[test]
    fn closed_form_direction_and_d_identity() {
        let pr = problem(None, InfConv::Indicator0);
        for (th, mu) in [(0.0, 0.5), (1.0, 1.0), (1.5, 0.3), (0.7, 0.0)] {
            let p = PdParams::new(0.8, 0.6, th, mu).unwrap();
            let pre = build_s_family(&pr, &p).unwrap();
            let ops = pr.inclusion_ops().unwrap();
            let hm = pre.h() + ops.m.to_dense().transpose();
            let zt = Vector::from_vec(vec![0.3, -1.0, 0.7, 0.2]);
            let want = Cholesky::new(pre.s().matrix().clone()).unwrap().solve(&(&hm * &zt));
            let got = PdDirection::new(pr.lmap.clone(), p).direction(&zt);
            assert!((want - got).amax() < 1e-12);
            let mats = PdMatrices::new(&pr.lmap.to_dense(), &p);
            assert!((d_from_s(&pre, &ops.m.to_dense()).unwrap() - mats.d(mu)).amax() < 1e-10);
            let (xt, yt) = split(&zt, 2);
            let a = alpha_pd(&p, 1.0, &xt, &yt, &pr.lmap).unwrap();
            let dp = pre.p().quad(&zt);
            let dd = zt.dot(&(mats.d(mu) * &zt));
            assert!((a - dp / dd).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_is_lambda_at_theta_two() {
        let p = PdParams::new(0.7, 0.4, 2.0, 0.3).unwrap();
        let xt = Vector::from_vec(vec![0.3, -0.2]);
        let yt = Vector::from_vec(vec![-1.0, 0.1]);
        let a = alpha_pd(&p, 1.3, &xt, &yt, &l_unit()).unwrap();
        assert!((a - 1.3).abs() < 1e-12 * 1.3);
    }

    #[test]
    fn specialized_loop_matches_engine() {
        let pr = problem(Some(h_unit()), InfConv::SqL2 { mu: 4.0 });
        for mu in [0.0, 1.0, 0.5] {
            let p = PdParams::new(0.5, 0.5, 1.0, mu).unwrap();
            let mut s = PdSolver::new(pr.clone(), p, LambdaSchedule::Constant(0.8))
                .unwrap()
                .with_debug_checks(true);
            let eng = s.engine().unwrap();
            let z0 = Vector::from_vec(vec![1.0, -2.0, 0.5, 0.3]);
            let opts = RunOptions::default().with_max_iter(50).with_tol(0.0).keep_all();
            let a = s.run(&z0, &opts);
            let b = eng.run(&z0, &opts);
            for ((_, za), (_, zb)) in a.iterates.iter().zip(&b.iterates) {
                assert!((za - zb).amax() < 1e-12, "μ = {mu}");
            }
            let per_iter = s.matvecs() as f64 / 51.0;
            if mu == 0.5 {
                assert!(per_iter > 3.9);
            } else {
                assert!(per_iter < 2.1, "μ = {mu}: {per_iter}");
            }
        }
    }

    #[test]
    fn zero_problem_stays_put() {
        let pr = SaddleProblem::new(
            ProxAtom::Zero,
            ProxAtom::Zero,
            None,
            InfConv::Indicator0,
            LinearMap::zero(2, 3),
        )
        .unwrap();
        let p = PdParams::new(1.0, 1.0, 2.0, 0.0).unwrap();
        let mut s = PdSolver::new(pr, p, LambdaSchedule::Constant(1.0)).unwrap();
        // g ≡ 0 forces y = 0, so only points with a zero dual block are fixed.
        let z0 = Vector::from_vec(vec![1.0, 2.0, 3.0, 0.0, 0.0]);
        let rep = s.run(&z0, &RunOptions::default());
        assert!(rep.termination.converged());
        assert_eq!(rep.final_z, z0);
    }
}

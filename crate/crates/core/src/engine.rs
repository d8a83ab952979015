//! The generic asymmetric forward-backward-adjoint iteration.
//!
//! Solves `0 ∈ Az + Mz + Cz` with `A` maximally monotone and block separable,
//! `M` linear monotone and `C` cocoercive, given preconditioners `H = P + K`
//! (block lower triangular) and `S`.

use std::fmt;
use std::sync::Arc;

use nalgebra::Cholesky;
use thiserror::Error;

use crate::atoms::{coco_in_p_metric, AtomError, BlockAtom, CocoMap};
use crate::linops::{LinearMap, LinopsError, Matrix, SymMetric, Vector};
use crate::report::{drive, Iteration, RunOptions, SolveReport, Step};

/// Margin kept between a constant relaxation and its admissible upper bound.
pub const LAMBDA_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid preconditioner: {0}")]
    Preconditioner(String),
    #[error("invalid configuration: {0}")]
    Configuration(String),
    #[error("invalid relaxation schedule: {0}")]
    Schedule(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Atom(#[from] AtomError),
    #[error(transparent)]
    Linops(#[from] LinopsError),
}

/// `δ = 2 − 1/(2β)`, or `2` when the cocoercive term is absent.
pub fn compute_delta(beta_p: Option<f64>) -> Result<f64, EngineError> {
    match beta_p {
        None => Ok(2.0),
        Some(b) if b.is_infinite() && b > 0.0 => Ok(2.0),
        Some(b) if b > 0.25 => Ok(2.0 - 1.0 / (2.0 * b)),
        Some(b) => Err(EngineError::Configuration(format!(
            "cocoercivity constant {b} must exceed 1/4"
        ))),
    }
}

/// `1 + (γ‖Mz̃‖/‖z̃‖)²`; `None` when `z̃ = 0`.
pub fn fbfs_lambda(ztilde: &Vector, gamma: f64, m: &LinearMap) -> Option<f64> {
    let nz = ztilde.norm();
    if nz == 0.0 {
        return None;
    }
    let mz = m.apply(ztilde).ok()?.norm();
    let r = gamma * mz / nz;
    Some(1.0 + r * r)
}

/// The operators of the inclusion.
#[derive(Debug, Clone)]
pub struct InclusionOps {
    pub a: BlockAtom,
    pub m: LinearMap,
    /// One map per block of `a`, or a single map over the whole space; empty when `C ≡ 0`.
    pub c: Vec<CocoMap>,
}

impl InclusionOps {
    pub fn new(a: BlockAtom, m: LinearMap, c: Vec<CocoMap>) -> Result<Self, EngineError> {
        let n = a.dim();
        if m.shape() != (n, n) {
            return Err(EngineError::Dimension(format!("M is {:?}, space has dim {n}", m.shape())));
        }
        let whole = c.len() == 1 && c[0].dim() == n;
        if !c.is_empty() && !whole {
            if c.len() != a.blocks().len() {
                return Err(EngineError::Dimension("C blocks do not match A blocks".into()));
            }
            for (ci, (_, d)) in c.iter().zip(a.blocks()) {
                if ci.dim() != *d {
                    return Err(EngineError::Dimension(format!(
                        "C block of dim {} against A block of dim {d}",
                        ci.dim()
                    )));
                }
            }
        }
        Ok(Self { a, m, c })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn c_absent(&self) -> bool {
        self.c.iter().all(CocoMap::is_zero)
    }

    pub fn apply_c(&self, z: &Vector) -> Vector {
        if self.c.len() == 1 && self.c[0].dim() == z.len() {
            return self.c[0].apply(z);
        }
        let mut out = Vector::zeros(z.len());
        let mut off = 0;
        for (ci, (_, d)) in self.c.iter().zip(self.a.blocks()) {
            let seg = z.rows(off, *d).into_owned();
            out.rows_mut(off, *d).copy_from(&ci.apply(&seg));
            off += d;
        }
        out
    }

    /// Smallest canonical cocoercivity constant over the blocks.
    pub fn beta_canonical(&self) -> f64 {
        self.c.iter().map(CocoMap::beta_canonical).fold(f64::INFINITY, f64::min)
    }
}

/// Closed-form realization of `z̃ ↦ S⁻¹(H + M*)z̃`.
pub trait UpdateDirection: Send + Sync {
    fn direction(&self, ztilde: &Vector) -> Vector;
}

/// `(H, P, K, S)` together with the block partition of the space.
#[derive(Clone)]
pub struct PreconditionerTriple {
    partition: Vec<usize>,
    h: Matrix,
    p: SymMetric,
    k: Matrix,
    s: SymMetric,
    closed_form: Option<Arc<dyn UpdateDirection>>,
}

impl fmt::Debug for PreconditionerTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PreconditionerTriple")
            .field("partition", &self.partition)
            .field("h", &self.h)
            .field("s", self.s.matrix())
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

fn offsets(partition: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    partition
        .iter()
        .map(|d| {
            let o = acc;
            acc += d;
            o
        })
        .collect()
}

impl PreconditionerTriple {
    /// Splits `H` into its symmetric part `P` and skew part `K`.
    pub fn new(h: Matrix, s: Matrix, partition: Vec<usize>) -> Result<Self, EngineError> {
        let n: usize = partition.iter().sum();
        if h.shape() != (n, n) || s.shape() != (n, n) {
            return Err(EngineError::Dimension(format!(
                "H {:?} and S {:?} against partition total {n}",
                h.shape(),
                s.shape()
            )));
        }
        let p = SymMetric::from_dense((&h + h.transpose()) * 0.5)?;
        let k = (&h - h.transpose()) * 0.5;
        let s = SymMetric::from_dense(s)?;
        let scale = h.amax().max(1.0);
        let off = offsets(&partition);
        for (i, (&oi, &di)) in off.iter().zip(&partition).enumerate() {
            for (&oj, &dj) in off.iter().zip(&partition).skip(i + 1) {
                if di > 0 && dj > 0 && h.view((oi, oj), (di, dj)).amax() > 1e-14 * scale {
                    return Err(EngineError::Preconditioner(
                        "H is not block lower triangular".into(),
                    ));
                }
            }
            if di > 0 {
                let blk = h.view((oi, oi), (di, di)).into_owned();
                let m = SymMetric::from_dense(blk).map_err(|_| {
                    EngineError::Preconditioner(format!("diagonal block {i} of H is not symmetric"))
                })?;
                if m.min_eig() <= 0.0 {
                    return Err(EngineError::Preconditioner(format!(
                        "diagonal block {i} of H is not positive definite"
                    )));
                }
            }
        }
        Ok(Self { partition, h, p, k, s, closed_form: None })
    }

    pub fn with_direction(mut self, d: Arc<dyn UpdateDirection>) -> Self {
        self.closed_form = Some(d);
        self
    }

    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn p(&self) -> &SymMetric {
        &self.p
    }

    pub fn k(&self) -> &Matrix {
        &self.k
    }

    pub fn s(&self) -> &SymMetric {
        &self.s
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form.is_some()
    }
}

enum DiagSolve {
    Scalar(f64),
    Metric(Matrix),
}

/// Sequential evaluation of `(H + A)⁻¹` for block lower-triangular `H`.
pub struct BlockResolvent {
    h: Matrix,
    a: BlockAtom,
    off: Vec<usize>,
    diag: Vec<DiagSolve>,
}

impl BlockResolvent {
    pub fn new(h: &Matrix, a: &BlockAtom) -> Result<Self, EngineError> {
        let partition = a.partition();
        let off = offsets(&partition);
        let mut diag = Vec::new();
        for ((op, d), &o) in a.blocks().iter().zip(&off) {
            let blk = h.view((o, o), (*d, *d)).into_owned();
            match scalar_multiple_of_identity(&blk) {
                Some(c) if c > 0.0 => diag.push(DiagSolve::Scalar(1.0 / c)),
                _ if *d == 0 => diag.push(DiagSolve::Scalar(1.0)),
                _ if op.supports_metric() => diag.push(DiagSolve::Metric(blk)),
                _ => {
                    return Err(EngineError::Preconditioner(format!(
                        "diagonal block at offset {o} is not a multiple of the identity and \
                         {op:?} has no general-metric resolvent"
                    )))
                }
            }
        }
        Ok(Self { h: h.clone(), a: a.clone(), off, diag })
    }

    /// `z̄ᵢ = (Hᵢᵢ + Aᵢ)⁻¹(rhsᵢ − Σ_{j<i} Hᵢⱼ z̄ⱼ)` in block order.
    pub fn apply(&self, rhs: &Vector) -> Result<Vector, EngineError> {
        let n = self.a.dim();
        if rhs.len() != n {
            return Err(EngineError::Dimension(format!("rhs of length {} for dim {n}", rhs.len())));
        }
        let mut zbar = Vector::zeros(n);
        for (i, ((op, d), &o)) in self.a.blocks().iter().zip(&self.off).enumerate() {
            let d = *d;
            if d == 0 {
                continue;
            }
            let mut r = rhs.rows(o, d).into_owned();
            if o > 0 {
                r -= self.h.view((o, 0), (d, o)) * zbar.rows(0, o);
            }
            let zi = match &self.diag[i] {
                DiagSolve::Scalar(gamma) => op.resolvent(*gamma, &(r * *gamma))?,
                DiagSolve::Metric(hii) => op.resolvent_in_metric(hii, &r)?,
            };
            zbar.rows_mut(o, d).copy_from(&zi);
        }
        Ok(zbar)
    }
}

fn scalar_multiple_of_identity(m: &Matrix) -> Option<f64> {
    if m.is_empty() {
        return None;
    }
    let c = m[(0, 0)];
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { c } else { 0.0 };
            if m[(i, j)] != want {
                return None;
            }
        }
    }
    Some(c)
}

/// Convenience wrapper around [`BlockResolvent`].
pub fn resolvent_block_triangular(
    h: &Matrix,
    a: &BlockAtom,
    rhs: &Vector,
) -> Result<Vector, EngineError> {
    BlockResolvent::new(h, a)?.apply(rhs)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSchedule {
    Constant(f64),
    /// `λ_n = 1 + (γ‖Mz̃_n‖/‖z̃_n‖)²`.
    FbfsAdaptive { gamma: f64 },
    /// Entries used in order; the last one repeats.
    Table(Vec<f64>),
    /// `λ_n = α ‖z̃_n‖²_D / ‖z̃_n‖²_P`, which makes every step length equal `α`.
    FixedAlpha(f64),
}

impl LambdaSchedule {
    /// Checks the schedule against `δ`.
    pub fn validate(&self, delta: f64) -> Result<(), EngineError> {
        match self {
            Self::Constant(l) => {
                if !(*l > 0.0) {
                    return Err(EngineError::Schedule(format!("λ = {l} must be positive")));
                }
                if *l > delta - LAMBDA_MARGIN {
                    return Err(EngineError::Schedule(format!(
                        "λ = {l} exceeds δ − margin = {}",
                        delta - LAMBDA_MARGIN
                    )));
                }
                Ok(())
            }
            Self::Table(t) => {
                if t.is_empty() {
                    return Err(EngineError::Schedule("empty λ table".into()));
                }
                match t.iter().find(|l| !(**l > 0.0 && **l <= delta)) {
                    Some(l) => Err(EngineError::Schedule(format!("table entry {l} outside ]0, δ]"))),
                    None => Ok(()),
                }
            }
            Self::FbfsAdaptive { gamma } | Self::FixedAlpha(gamma) => {
                if *gamma > 0.0 {
                    Ok(())
                } else {
                    Err(EngineError::Schedule(format!("step {gamma} must be positive")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// Strongly positive `P` and `S`, full update through `S⁻¹(H + M*)`.
    General,
    /// `C ≡ 0`, `M` skew, `K = M`, `S = P ⪰ 0`: `z⁺ = z + λ(z̄ − z)`.
    PositiveP,
}

/// Current iterate and the quantities of the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub n: usize,
    pub z: Vector,
    pub zbar: Vector,
    pub ztilde: Vector,
    pub lambda: f64,
    pub alpha: f64,
    pub res_p: f64,
    pub res_d: f64,
}

/// A validated engine instance.
pub struct Afba {
    ops: InclusionOps,
    pre: PreconditionerTriple,
    mode: StepMode,
    resolvent: BlockResolvent,
    h_minus_m: Matrix,
    h_plus_mt: Matrix,
    s_chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    rho: f64,
    beta_p: Option<f64>,
    delta: f64,
    schedule: LambdaSchedule,
    debug_checks: bool,
}

impl fmt::Debug for Afba {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Afba")
            .field("mode", &self.mode)
            .field("beta_p", &self.beta_p)
            .field("delta", &self.delta)
            .field("schedule", &self.schedule)
            .finish()
    }
}

/// How the cocoercivity constant in the `P` metric is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaP {
    /// `min β_canonical · min_eig(P)`.
    Auto,
    /// Supplied by a builder with a sharper analysis; `None` means `C ≡ 0`.
    Given(Option<f64>),
}

impl Afba {
    pub fn new(
        ops: InclusionOps,
        pre: PreconditionerTriple,
        beta: BetaP,
        schedule: LambdaSchedule,
    ) -> Result<Self, EngineError> {
        if pre.partition() != ops.a.partition().as_slice() {
            return Err(EngineError::Dimension("partition of H differs from A".into()));
        }
        let rho = pre.p().min_eig();
        if !(rho > 0.0) {
            return Err(EngineError::Preconditioner(format!(
                "P is not strongly positive (min eigenvalue {rho:e}); use the positive-P path"
            )));
        }
        if !(pre.s().min_eig() > 0.0) {
            return Err(EngineError::Preconditioner("S is not strongly positive".into()));
        }
        let beta_p = if ops.c_absent() {
            None
        } else {
            match beta {
                BetaP::Auto => {
                    let mut b = f64::INFINITY;
                    for c in &ops.c {
                        b = b.min(coco_in_p_metric(c, rho)?);
                    }
                    Some(b)
                }
                BetaP::Given(b) => b,
            }
        };
        let delta = compute_delta(beta_p)?;
        schedule.validate(delta)?;
        let m = ops.m.to_dense();
        let s_chol = Cholesky::new(pre.s().matrix().clone())
            .ok_or_else(|| EngineError::Preconditioner("S has no Cholesky factor".into()))?;
        Ok(Self {
            resolvent: BlockResolvent::new(pre.h(), &ops.a)?,
            h_minus_m: pre.h() - &m,
            h_plus_mt: pre.h() + m.transpose(),
            ops,
            pre,
            mode: StepMode::General,
            s_chol: Some(s_chol),
            rho,
            beta_p,
            delta,
            schedule,
            debug_checks: cfg!(debug_assertions),
        })
    }

    /// Engine for the semidefinite-`P` iteration `z̄ = (H + A)⁻¹Pz`, `z⁺ = z + λ(z̄ − z)`.
    pub fn positive_p(
        ops: InclusionOps,
        pre: PreconditionerTriple,
        schedule: LambdaSchedule,
    ) -> Result<Self, EngineError> {
        if !ops.c_absent() {
            return Err(EngineError::Configuration(
                "the positive-P iteration requires C ≡ 0".into(),
            ));
        }
        if pre.partition() != ops.a.partition().as_slice() {
            return Err(EngineError::Dimension("partition of H differs from A".into()));
        }
        let m = ops.m.to_dense();
        let scale = m.amax().max(pre.h().amax()).max(1.0);
        if (&m + m.transpose()).amax() > 1e-12 * scale {
            return Err(EngineError::Configuration("M must be skew-adjoint".into()));
        }
        if (pre.k() - &m).amax() > 1e-12 * scale {
            return Err(EngineError::Configuration("K must equal M".into()));
        }
        if (pre.s().matrix() - pre.p().matrix()).amax() > 1e-12 * scale {
            return Err(EngineError::Configuration("S must equal P".into()));
        }
        let pn = pre.p().norm();
        if pre.p().min_eig() < -1e-10 * pn.max(1.0) {
            return Err(EngineError::Preconditioner("P is not positive semidefinite".into()));
        }
        match &schedule {
            LambdaSchedule::Constant(l) => {
                if !(*l >= LAMBDA_MARGIN && *l <= 2.0 - LAMBDA_MARGIN) {
                    return Err(EngineError::Schedule(format!(
                        "λ = {l} must lie in [{LAMBDA_MARGIN}, 2 − {LAMBDA_MARGIN}]"
                    )));
                }
            }
            LambdaSchedule::Table(_) => schedule.validate(2.0)?,
            other => {
                return Err(EngineError::Schedule(format!(
                    "{other:?} is not available on the positive-P path"
                )))
            }
        }
        Ok(Self {
            resolvent: BlockResolvent::new(pre.h(), &ops.a)?,
            h_minus_m: pre.h() - &m,
            h_plus_mt: pre.h() + m.transpose(),
            rho: pre.p().min_eig(),
            ops,
            pre,
            mode: StepMode::PositiveP,
            s_chol: None,
            beta_p: None,
            delta: 2.0,
            schedule,
            debug_checks: cfg!(debug_assertions),
        })
    }

    pub fn with_debug_checks(mut self, on: bool) -> Self {
        self.debug_checks = on;
        self
    }

    pub fn mode(&self) -> StepMode {
        self.mode
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn beta_p(&self) -> Option<f64> {
        self.beta_p
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn preconditioners(&self) -> &PreconditionerTriple {
        &self.pre
    }

    pub fn ops(&self) -> &InclusionOps {
        &self.ops
    }

    pub fn schedule(&self) -> &LambdaSchedule {
        &self.schedule
    }

    /// Dense `D = (H + M*)* S⁻¹ (H + M*)`, or `P` on the positive-P path.
    pub fn d_matrix(&self) -> Matrix {
        match &self.s_chol {
            Some(ch) => self.h_plus_mt.transpose() * ch.solve(&self.h_plus_mt),
            None => self.pre.p().matrix().clone(),
        }
    }

    /// `S⁻¹(H + M*) z̃`.
    pub fn direction(&self, ztilde: &Vector) -> Vector {
        match (&self.pre.closed_form, &self.s_chol) {
            (Some(cf), _) => cf.direction(ztilde),
            (None, Some(ch)) => ch.solve(&(&self.h_plus_mt * ztilde)),
            (None, None) => ztilde.clone(),
        }
    }

    /// `z̄ = (H + A)⁻¹(H − M − C)z`.
    pub fn forward_backward(&self, z: &Vector) -> Result<Vector, EngineError> {
        if z.len() != self.ops.dim() {
            return Err(EngineError::Dimension(format!("iterate of length {}", z.len())));
        }
        let mut rhs = &self.h_minus_m * z;
        if !self.ops.c_absent() {
            rhs -= self.ops.apply_c(z);
        }
        self.resolvent.apply(&rhs)
    }

    fn lambda_at(&self, n: usize, ztilde: &Vector, res_p2: f64, res_d2: f64) -> f64 {
        match &self.schedule {
            LambdaSchedule::Constant(l) => *l,
            LambdaSchedule::Table(t) => t[n.min(t.len() - 1)],
            LambdaSchedule::FbfsAdaptive { gamma } => {
                fbfs_lambda(ztilde, *gamma, &self.ops.m).unwrap_or(1.0)
            }
            LambdaSchedule::FixedAlpha(a) => {
                if res_p2 > 0.0 {
                    a * res_d2 / res_p2
                } else {
                    *a
                }
            }
        }
    }

    /// One iteration from `z` (the `n`-th).
    pub fn afba_step(&self, z: &Vector, n: usize) -> Result<EngineState, EngineError> {
        let zbar = self.forward_backward(z)?;
        let ztilde = &zbar - z;
        let res_p2 = self.pre.p().quad(&ztilde).max(0.0);
        let zero = ztilde.iter().all(|e| *e == 0.0);
        if self.mode == StepMode::PositiveP {
            let lambda = self.lambda_at(n, &ztilde, res_p2, res_p2);
            let next = z + &ztilde * lambda;
            return Ok(EngineState {
                n,
                z: next,
                zbar,
                ztilde,
                lambda,
                alpha: lambda,
                res_p: res_p2.sqrt(),
                res_d: res_p2.sqrt(),
            });
        }
        let dir = self.direction(&ztilde);
        let res_d2 = (&self.h_plus_mt * &ztilde).dot(&dir).max(0.0);
        let lambda = self.lambda_at(n, &ztilde, res_p2, res_d2);
        if zero {
            return Ok(EngineState {
                n,
                z: z.clone(),
                zbar,
                ztilde,
                lambda,
                alpha: 0.0,
                res_p: 0.0,
                res_d: 0.0,
            });
        }
        if !(res_d2 > 0.0) {
            return Err(EngineError::InvariantViolation(format!(
                "‖(H+M*)z̃‖_(S⁻¹) vanished with ‖z̃‖ = {:e}",
                ztilde.norm()
            )));
        }
        if self.debug_checks {
            let bound = self.rho * self.rho / self.pre.s().norm() * ztilde.norm_squared();
            if res_d2 < bound - 1e-10 {
                return Err(EngineError::InvariantViolation(format!(
                    "D lower bound failed: {res_d2:e} < {bound:e}"
                )));
            }
        }
        let alpha = lambda * res_p2 / res_d2;
        let next = z + &dir * alpha;
        Ok(EngineState {
            n,
            z: next,
            zbar,
            ztilde,
            lambda,
            alpha,
            res_p: res_p2.sqrt(),
            res_d: res_d2.sqrt(),
        })
    }

    /// Alias of [`Afba::afba_step`] on the positive-P path.
    pub fn positive_p_step(&self, z: &Vector, n: usize) -> Result<EngineState, EngineError> {
        if self.mode != StepMode::PositiveP {
            return Err(EngineError::Configuration("engine is not on the positive-P path".into()));
        }
        self.afba_step(z, n)
    }

    pub fn run(&self, z0: &Vector, opts: &RunOptions) -> SolveReport {
        let mut it = EngineIteration { engine: self };
        drive(&mut it, z0, opts)
    }
}

struct EngineIteration<'a> {
    engine: &'a Afba,
}

impl Iteration for EngineIteration<'_> {
    fn step(&mut self, z: &Vector, n: usize) -> Result<Step, String> {
        let st = self.engine.afba_step(z, n).map_err(|e| e.to_string())?;
        let fixed_point = st.ztilde.iter().all(|e| *e == 0.0);
        Ok(Step {
            next: st.z,
            lambda: st.lambda,
            alpha: st.alpha,
            res_p: st.res_p,
            res_d: st.res_d,
            fixed_point,
        })
    }

    fn fejer_metric(&self) -> Option<&SymMetric> {
        Some(self.engine.pre.s())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::{AtomOp, ProxAtom};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    #[test]
    fn delta_examples() {
        assert_eq!(compute_delta(None).unwrap(), 2.0);
        assert_eq!(compute_delta(Some(0.5)).unwrap(), 1.0);
        assert!(compute_delta(Some(0.25)).is_err());
    }

    #[test]
    fn fbfs_lambda_examples() {
        let m = LinearMap::zero(2, 2);
        assert_eq!(fbfs_lambda(&v(&[1.0, 0.0]), 0.5, &m), Some(1.0));
        let rot = LinearMap::dense(Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        assert_eq!(fbfs_lambda(&v(&[0.6, 0.8]), 0.5, &rot), Some(1.25));
        assert_eq!(fbfs_lambda(&v(&[0.0, 0.0]), 0.5, &rot), None);
    }

    #[test]
    fn identity_metric_zero_atom_is_identity() {
        let a = BlockAtom::single(AtomOp::Subdiff(ProxAtom::Zero), 3).unwrap();
        let r = v(&[1.0, -2.0, 3.0]);
        assert_eq!(resolvent_block_triangular(&Matrix::identity(3, 3), &a, &r).unwrap(), r);
    }

    #[test]
    fn scaled_metric_box_is_clamp_of_half() {
        let a = BlockAtom::single(AtomOp::Subdiff(ProxAtom::boxed(0.0, 1.0).unwrap()), 3).unwrap();
        let h = Matrix::identity(3, 3) * 2.0;
        let out = resolvent_block_triangular(&h, &a, &v(&[-1.0, 1.0, 5.0])).unwrap();
        assert_eq!(out, v(&[0.0, 0.5, 1.0]));
    }

    #[test]
    fn non_scalar_block_without_metric_resolvent_rejected() {
        let a = BlockAtom::single(AtomOp::Subdiff(ProxAtom::NonNeg), 2).unwrap();
        let h = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(BlockResolvent::new(&h, &a).is_err());
    }

    fn fbs_engine(gamma: f64, lambda: f64) -> Afba {
        let a = BlockAtom::single(AtomOp::Subdiff(ProxAtom::NonNeg), 2).unwrap();
        let grad = CocoMap::affine_gradient(
            Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            v(&[1.0, -1.0]),
        )
        .unwrap();
        let beta = grad.beta_canonical();
        let ops = InclusionOps::new(a, LinearMap::zero(2, 2), vec![grad]).unwrap();
        let pre = PreconditionerTriple::new(
            Matrix::identity(2, 2) / gamma,
            Matrix::identity(2, 2),
            vec![2],
        )
        .unwrap();
        Afba::new(ops, pre, BetaP::Given(Some(beta / gamma)), LambdaSchedule::Constant(lambda))
            .unwrap()
    }

    #[test]
    fn fbs_configuration_step_length_is_lambda_gamma() {
        let gamma = 0.7;
        let e = fbs_engine(gamma, 0.3);
        let z = v(&[0.4, 2.0]);
        let st = e.afba_step(&z, 0).unwrap();
        assert!((st.alpha - 0.3 * gamma).abs() <= 1e-12 * gamma);
        assert!((st.z - (&z + st.ztilde * 0.3)).amax() < 1e-14);
    }

    #[test]
    fn schedule_above_delta_rejected() {
        let a = BlockAtom::single(AtomOp::Subdiff(ProxAtom::Zero), 1).unwrap();
        let grad = CocoMap::linear_scaled(1.0, 1).unwrap();
        let ops = InclusionOps::new(a, LinearMap::zero(1, 1), vec![grad]).unwrap();
        let pre = PreconditionerTriple::new(Matrix::identity(1, 1), Matrix::identity(1, 1), vec![1])
            .unwrap();
        let err = Afba::new(ops, pre, BetaP::Auto, LambdaSchedule::Constant(1.6)).unwrap_err();
        assert!(matches!(err, EngineError::Schedule(_)));
    }

    #[test]
    fn zero_lambda_rejected() {
        assert!(LambdaSchedule::Constant(0.0).validate(2.0).is_err());
        assert!(LambdaSchedule::Table(vec![1.0, 0.0]).validate(2.0).is_err());
    }

    #[test]
    fn fixed_point_start_is_stationary() {
        let e = fbs_engine(0.5, 1.0);
        // minimiser of ½‖Ax − b‖² over the orthant, computed by running to convergence
        let rep = e.run(&v(&[0.0, 0.0]), &RunOptions::default().with_max_iter(100_000).with_tol(0.0));
        let rep2 = e.run(&rep.final_z, &RunOptions::default());
        assert!(rep2.iterations <= 1);
    }

    #[test]
    fn c_present_rejected_on_positive_p_path() {
        let a = BlockAtom::single(AtomOp::Subdiff(ProxAtom::Zero), 1).unwrap();
        let grad = CocoMap::linear_scaled(1.0, 1).unwrap();
        let ops = InclusionOps::new(a, LinearMap::zero(1, 1), vec![grad]).unwrap();
        let pre = PreconditionerTriple::new(Matrix::identity(1, 1), Matrix::identity(1, 1), vec![1])
            .unwrap();
        assert!(Afba::positive_p(ops, pre, LambdaSchedule::Constant(1.0)).is_err());
    }
}

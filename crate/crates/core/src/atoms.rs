//! Proximal atoms, cocoercive maps and block-separable operators.

use std::fmt;
use std::sync::Mutex;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linops::{Matrix, SymMetric, Vector};

/// Feasibility slack used by indicator evaluations.
pub const INDICATOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AtomError {
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid atom parameter: {0}")]
    InvalidParameter(String),
    #[error("{0} has no resolvent in a non-scalar metric")]
    NoMetricResolvent(String),
    #[error("linear solve failed: {0}")]
    Singular(String),
}

/// `½ x'Qx + c'x` with `Q` symmetric positive semidefinite.
pub struct Quadratic {
    q: Matrix,
    c: Vector,
    cache: Mutex<Option<(f64, Cholesky<f64, nalgebra::Dyn>)>>,
}

impl Quadratic {
    pub fn new(q: Matrix, c: Vector) -> Result<Self, AtomError> {
        if q.nrows() != q.ncols() || q.nrows() != c.len() {
            return Err(AtomError::InvalidParameter(format!(
                "quadratic with Q {:?} and linear term of length {}",
                q.shape(),
                c.len()
            )));
        }
        let metric = SymMetric::from_dense(q.clone())
            .map_err(|e| AtomError::InvalidParameter(e.to_string()))?;
        if metric.min_eig() < -1e-12 * metric.norm().max(1.0) {
            return Err(AtomError::InvalidParameter(format!(
                "quadratic term is not positive semidefinite (min eigenvalue {:e})",
                metric.min_eig()
            )));
        }
        Ok(Self { q: metric.matrix().clone(), c, cache: Mutex::new(None) })
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn c(&self) -> &Vector {
        &self.c
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Solves `(I + γQ) z = rhs`, reusing the factorization while `γ` is unchanged.
    fn solve_shifted(&self, gamma: f64, rhs: &Vector) -> Result<Vector, AtomError> {
        let mut guard = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        let stale = !matches!(&*guard, Some((g, _)) if *g == gamma);
        if stale {
            let n = self.dim();
            let m = Matrix::identity(n, n) + &self.q * gamma;
            let chol = Cholesky::new(m)
                .ok_or_else(|| AtomError::Singular("I + γQ is not positive definite".into()))?;
            *guard = Some((gamma, chol));
        }
        let (_, chol) = guard.as_ref().expect("factorization present");
        Ok(chol.solve(rhs))
    }
}

impl Clone for Quadratic {
    fn clone(&self) -> Self {
        Self { q: self.q.clone(), c: self.c.clone(), cache: Mutex::new(None) }
    }
}

impl fmt::Debug for Quadratic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Quadratic").field("q", &self.q).field("c", &self.c).finish()
    }
}

impl PartialEq for Quadratic {
    fn eq(&self, other: &Self) -> bool {
        self.q == other.q && self.c == other.c
    }
}

/// Proper closed convex function with a closed-form or direct-solve prox.
#[derive(Debug, Clone, PartialEq)]
pub enum ProxAtom {
    Zero,
    L1 { weight: f64 },
    /// `½μ‖x‖²`
    SqL2 { mu: f64 },
    Quad(Quadratic),
    Box { lo: f64, hi: f64 },
    Point { b: Vector },
    NonNeg,
    /// `w‖x‖₂`
    L2 { weight: f64 },
}

fn check_step(gamma: f64) -> Result<(), AtomError> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(AtomError::NonPositiveStep(gamma))
    }
}

impl ProxAtom {
    pub fn l1(weight: f64) -> Result<Self, AtomError> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(AtomError::InvalidParameter(format!("l1 weight {weight}")));
        }
        Ok(Self::L1 { weight })
    }

    pub fn sq_l2(mu: f64) -> Result<Self, AtomError> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(AtomError::InvalidParameter(format!("sq_l2 modulus {mu}")));
        }
        Ok(Self::SqL2 { mu })
    }

    pub fn quad(q: Matrix, c: Vector) -> Result<Self, AtomError> {
        Ok(Self::Quad(Quadratic::new(q, c)?))
    }

    pub fn boxed(lo: f64, hi: f64) -> Result<Self, AtomError> {
        if !(lo <= hi) {
            return Err(AtomError::InvalidParameter(format!("box [{lo}, {hi}] is empty")));
        }
        Ok(Self::Box { lo, hi })
    }

    pub fn point(b: Vector) -> Self {
        Self::Point { b }
    }

    pub fn l2(weight: f64) -> Result<Self, AtomError> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(AtomError::InvalidParameter(format!("l2 weight {weight}")));
        }
        Ok(Self::L2 { weight })
    }

    /// File-format tag of the atom kind.
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::L1 { .. } => "l1",
            Self::SqL2 { .. } => "sq_l2",
            Self::Quad(_) => "quad",
            Self::Box { .. } => "box",
            Self::Point { .. } => "point",
            Self::NonNeg => "nonneg",
            Self::L2 { .. } => "l2",
        }
    }

    /// Fixed dimension when the atom carries vector data.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Quad(q) => Some(q.dim()),
            Self::Point { b } => Some(b.len()),
            _ => None,
        }
    }

    fn check_dim(&self, v: &Vector) -> Result<(), AtomError> {
        match self.dim() {
            Some(d) if d != v.len() => Err(AtomError::DimensionMismatch { expected: d, got: v.len() }),
            _ => Ok(()),
        }
    }

    /// `argmin_z f(z) + ‖v − z‖²/(2γ)`.
    pub fn resolvent(&self, gamma: f64, v: &Vector) -> Result<Vector, AtomError> {
        check_step(gamma)?;
        self.check_dim(v)?;
        Ok(match self {
            Self::Zero => v.clone(),
            Self::L1 { weight } => {
                let t = gamma * weight;
                v.map(|e| e.signum() * (e.abs() - t).max(0.0))
            }
            Self::SqL2 { mu } => v / (1.0 + gamma * mu),
            Self::Quad(q) => q.solve_shifted(gamma, &(v - q.c() * gamma))?,
            Self::Box { lo, hi } => v.map(|e| e.clamp(*lo, *hi)),
            Self::Point { b } => b.clone(),
            Self::NonNeg => v.map(|e| e.max(0.0)),
            Self::L2 { weight } => {
                let nv = v.norm();
                if nv == 0.0 {
                    Vector::zeros(v.len())
                } else {
                    v * (1.0 - gamma * weight / nv).max(0.0)
                }
            }
        })
    }

    /// Prox of `γ f*`, computed through the Moreau identity.
    pub fn moreau_conjugate_prox(&self, gamma: f64, v: &Vector) -> Result<Vector, AtomError> {
        check_step(gamma)?;
        let inner = self.resolvent(1.0 / gamma, &(v / gamma))?;
        Ok(v - inner * gamma)
    }

    /// Function value; indicators return `+∞` outside their set.
    pub fn eval(&self, v: &Vector) -> f64 {
        if self.check_dim(v).is_err() {
            return f64::INFINITY;
        }
        let s = INDICATOR_SLACK;
        match self {
            Self::Zero => 0.0,
            Self::L1 { weight } => weight * v.lp_norm(1),
            Self::SqL2 { mu } => 0.5 * mu * v.norm_squared(),
            Self::Quad(q) => 0.5 * v.dot(&(q.q() * v)) + q.c().dot(v),
            Self::Box { lo, hi } => {
                if v.iter().all(|e| *e >= lo - s && *e <= hi + s) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::Point { b } => {
                if (v - b).iter().all(|e| e.abs() <= s) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::NonNeg => {
                if v.iter().all(|e| *e >= -s) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::L2 { weight } => weight * v.norm(),
        }
    }

    /// Gradient for the differentiable kinds.
    pub fn gradient(&self, v: &Vector) -> Option<Vector> {
        match self {
            Self::Zero => Some(Vector::zeros(v.len())),
            Self::SqL2 { mu } => Some(v * *mu),
            Self::Quad(q) => Some(q.q() * v + q.c()),
            _ => None,
        }
    }
}

/// Either `∂f` or `∂f*` for an atom `f`.
#[derive(Debug, Clone, PartialEq)]
pub enum AtomOp {
    Subdiff(ProxAtom),
    ConjugateSubdiff(ProxAtom),
}

impl AtomOp {
    pub fn atom(&self) -> &ProxAtom {
        match self {
            Self::Subdiff(a) | Self::ConjugateSubdiff(a) => a,
        }
    }

    /// `(Id + γ·op)⁻¹ v`.
    pub fn resolvent(&self, gamma: f64, v: &Vector) -> Result<Vector, AtomError> {
        match self {
            Self::Subdiff(a) => a.resolvent(gamma, v),
            Self::ConjugateSubdiff(a) => a.moreau_conjugate_prox(gamma, v),
        }
    }

    /// Whether [`AtomOp::resolvent_in_metric`] accepts a general positive definite metric.
    pub fn supports_metric(&self) -> bool {
        matches!(
            self,
            Self::Subdiff(ProxAtom::Zero)
                | Self::Subdiff(ProxAtom::SqL2 { .. })
                | Self::Subdiff(ProxAtom::Quad(_))
                | Self::Subdiff(ProxAtom::Point { .. })
                | Self::ConjugateSubdiff(ProxAtom::Zero)
                | Self::ConjugateSubdiff(ProxAtom::Point { .. })
                | Self::ConjugateSubdiff(ProxAtom::SqL2 { .. })
        )
    }

    /// Solves `r ∈ h z + op(z)` for a symmetric positive definite `h`.
    pub fn resolvent_in_metric(&self, h: &Matrix, r: &Vector) -> Result<Vector, AtomError> {
        let n = r.len();
        let solve = |m: Matrix, rhs: Vector| -> Result<Vector, AtomError> {
            m.lu().solve(&rhs).ok_or_else(|| AtomError::Singular("metric block".into()))
        };
        match self {
            Self::Subdiff(ProxAtom::Zero) => solve(h.clone(), r.clone()),
            Self::Subdiff(ProxAtom::SqL2 { mu }) => {
                solve(h + Matrix::identity(n, n) * *mu, r.clone())
            }
            Self::Subdiff(ProxAtom::Quad(q)) => solve(h + q.q(), r - q.c()),
            Self::Subdiff(ProxAtom::Point { b }) => Ok(b.clone()),
            Self::ConjugateSubdiff(ProxAtom::Zero) => Ok(Vector::zeros(n)),
            Self::ConjugateSubdiff(ProxAtom::Point { b }) => solve(h.clone(), r - b),
            Self::ConjugateSubdiff(ProxAtom::SqL2 { mu }) if *mu == 0.0 => Ok(Vector::zeros(n)),
            Self::ConjugateSubdiff(ProxAtom::SqL2 { mu }) => {
                solve(h + Matrix::identity(n, n) / *mu, r.clone())
            }
            other => Err(AtomError::NoMetricResolvent(format!("{other:?}"))),
        }
    }
}

/// Block-separable operator: an ordered list of `(operator, block dimension)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAtom {
    blocks: Vec<(AtomOp, usize)>,
}

impl BlockAtom {
    pub fn new(blocks: Vec<(AtomOp, usize)>) -> Result<Self, AtomError> {
        for (op, d) in &blocks {
            if let Some(fixed) = op.atom().dim() {
                if fixed != *d {
                    return Err(AtomError::DimensionMismatch { expected: *d, got: fixed });
                }
            }
        }
        Ok(Self { blocks })
    }

    pub fn single(op: AtomOp, dim: usize) -> Result<Self, AtomError> {
        Self::new(vec![(op, dim)])
    }

    pub fn blocks(&self) -> &[(AtomOp, usize)] {
        &self.blocks
    }

    pub fn partition(&self) -> Vec<usize> {
        self.blocks.iter().map(|(_, d)| *d).collect()
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|(_, d)| d).sum()
    }
}

/// Single-valued cocoercive map with its canonical constant.
#[derive(Debug, Clone, PartialEq)]
pub enum CocoMap {
    Zero { dim: usize },
    /// `x ↦ A'(Ax − b)`, the gradient of `½‖Ax − b‖²`.
    AffineGradient { a: Matrix, b: Vector, beta: f64 },
    /// `y ↦ y/μ`, the gradient of the conjugate of `(μ/2)‖·‖²`.
    LinearScaled { mu: f64, dim: usize },
}

impl CocoMap {
    pub fn affine_gradient(a: Matrix, b: Vector) -> Result<Self, AtomError> {
        if a.nrows() != b.len() {
            return Err(AtomError::DimensionMismatch { expected: a.nrows(), got: b.len() });
        }
        let smax = if a.is_empty() { 0.0 } else { a.clone().svd(false, false).singular_values.max() };
        let beta = if smax == 0.0 { f64::INFINITY } else { 1.0 / (smax * smax) };
        Ok(Self::AffineGradient { a, b, beta })
    }

    pub fn linear_scaled(mu: f64, dim: usize) -> Result<Self, AtomError> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(AtomError::InvalidParameter(format!("strong convexity modulus {mu}")));
        }
        Ok(Self::LinearScaled { mu, dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Zero { dim } | Self::LinearScaled { dim, .. } => *dim,
            Self::AffineGradient { a, .. } => a.ncols(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero { .. })
            || matches!(self, Self::AffineGradient { beta, .. } if beta.is_infinite())
    }

    /// Cocoercivity constant in the canonical norm; `+∞` for the zero map.
    pub fn beta_canonical(&self) -> f64 {
        match self {
            Self::Zero { .. } => f64::INFINITY,
            Self::AffineGradient { beta, .. } => *beta,
            Self::LinearScaled { mu, .. } => *mu,
        }
    }

    /// Lipschitz constant `1/β`; zero for the zero map.
    pub fn lipschitz(&self) -> f64 {
        1.0 / self.beta_canonical()
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        match self {
            Self::Zero { dim } => Vector::zeros(*dim),
            Self::AffineGradient { a, b, .. } => a.tr_mul(&(a * v - b)),
            Self::LinearScaled { mu, .. } => v / *mu,
        }
    }

    /// Value of the underlying smooth function.
    pub fn value(&self, v: &Vector) -> f64 {
        match self {
            Self::Zero { .. } => 0.0,
            Self::AffineGradient { a, b, .. } => 0.5 * (a * v - b).norm_squared(),
            Self::LinearScaled { mu, .. } => v.norm_squared() / (2.0 * mu),
        }
    }
}

/// `β·τ`, a cocoercivity constant with respect to `‖·‖_P` whenever `P ⪰ τ Id`.
pub fn coco_in_p_metric(c: &CocoMap, tau: f64) -> Result<f64, AtomError> {
    if !(tau > 0.0) {
        return Err(AtomError::InvalidParameter(format!("strong positivity {tau} must be positive")));
    }
    Ok(c.beta_canonical() * tau)
}

/// Serialization form of an atom, keyed by kind tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AtomSpec {
    Zero,
    L1 { weight: f64 },
    SqL2 { mu: f64 },
    Quad { q: Vec<Vec<f64>>, c: Vec<f64> },
    Box { lo: f64, hi: f64 },
    Point { b: Vec<f64> },
    Nonneg,
    L2 { weight: f64 },
}

impl AtomSpec {
    pub fn build(&self) -> Result<ProxAtom, AtomError> {
        Ok(match self {
            Self::Zero => ProxAtom::Zero,
            Self::L1 { weight } => ProxAtom::l1(*weight)?,
            Self::SqL2 { mu } => ProxAtom::sq_l2(*mu)?,
            Self::Quad { q, c } => {
                let n = c.len();
                if q.len() != n || q.iter().any(|r| r.len() != n) {
                    return Err(AtomError::InvalidParameter("quad matrix shape".into()));
                }
                ProxAtom::quad(Matrix::from_fn(n, n, |i, j| q[i][j]), Vector::from_vec(c.clone()))?
            }
            Self::Box { lo, hi } => ProxAtom::boxed(*lo, *hi)?,
            Self::Point { b } => ProxAtom::point(Vector::from_vec(b.clone())),
            Self::Nonneg => ProxAtom::NonNeg,
            Self::L2 { weight } => ProxAtom::l2(*weight)?,
        })
    }

    pub fn from_atom(a: &ProxAtom) -> Self {
        match a {
            ProxAtom::Zero => Self::Zero,
            ProxAtom::L1 { weight } => Self::L1 { weight: *weight },
            ProxAtom::SqL2 { mu } => Self::SqL2 { mu: *mu },
            ProxAtom::Quad(q) => Self::Quad {
                q: (0..q.dim()).map(|i| q.q().row(i).iter().copied().collect()).collect(),
                c: q.c().iter().copied().collect(),
            },
            ProxAtom::Box { lo, hi } => Self::Box { lo: *lo, hi: *hi },
            ProxAtom::Point { b } => Self::Point { b: b.iter().copied().collect() },
            ProxAtom::NonNeg => Self::Nonneg,
            ProxAtom::L2 { weight } => Self::L2 { weight: *weight },
        }
    }
}

//! Dense vectors, product-space points and linear maps with adjoints.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Seed used by [`LinearMap::op_norm`] when no seed is supplied.
pub const DEFAULT_NORM_SEED: u64 = 0x5eed_1e55;
pub const POWER_MAX_ITER: usize = 10_000;
pub const POWER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinopsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not symmetric (largest asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

/// A point `(x, y)` of the primal-dual product space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualPoint {
    pub x: Vector,
    pub y: Vector,
}

impl PrimalDualPoint {
    pub fn new(x: Vector, y: Vector) -> Self {
        Self { x, y }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self { x: Vector::zeros(n), y: Vector::zeros(m) }
    }

    /// Stacks `x` above `y`.
    pub fn to_vector(&self) -> Vector {
        concat(&self.x, &self.y)
    }

    /// Splits a stacked vector after its first `n` entries.
    pub fn from_vector(z: &Vector, n: usize) -> Self {
        let (x, y) = split(z, n);
        Self { x, y }
    }
}

pub fn concat(a: &Vector, b: &Vector) -> Vector {
    let mut out = Vector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

pub fn split(z: &Vector, n: usize) -> (Vector, Vector) {
    let x = z.rows(0, n).into_owned();
    let y = z.rows(n, z.len() - n).into_owned();
    (x, y)
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|e| e.is_finite())
}

#[derive(Debug, Clone)]
enum Node {
    Dense(Matrix),
    Identity,
    Zero,
    Scaled(f64, Arc<LinearMap>),
    Adjoint(Arc<LinearMap>),
    Sum(Arc<LinearMap>, Arc<LinearMap>),
    Compose(Arc<LinearMap>, Arc<LinearMap>),
    Block([Arc<LinearMap>; 4]),
}

/// Linear operator `R^cols -> R^rows` built from dense matrices and
/// structural combinators. Every map has a dense realization.
#[derive(Debug, Clone)]
pub struct LinearMap {
    node: Node,
    rows: usize,
    cols: usize,
}

/// Result of a power-iteration norm estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl LinearMap {
    pub fn dense(m: Matrix) -> Self {
        let (rows, cols) = m.shape();
        Self { node: Node::Dense(m), rows, cols }
    }

    /// Dense map from row-major nested rows. All rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinopsError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinopsError::Shape("ragged rows".into()));
        }
        Ok(Self::dense(Matrix::from_fn(r, c, |i, j| rows[i][j])))
    }

    pub fn identity(n: usize) -> Self {
        Self { node: Node::Identity, rows: n, cols: n }
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self { node: Node::Zero, rows, cols }
    }

    pub fn scaled(factor: f64, inner: LinearMap) -> Self {
        let (rows, cols) = inner.shape();
        Self { node: Node::Scaled(factor, Arc::new(inner)), rows, cols }
    }

    pub fn sum(a: LinearMap, b: LinearMap) -> Result<Self, LinopsError> {
        if a.shape() != b.shape() {
            return Err(LinopsError::Shape(format!(
                "sum of {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (rows, cols) = a.shape();
        Ok(Self { node: Node::Sum(Arc::new(a), Arc::new(b)), rows, cols })
    }

    /// `outer ∘ inner`.
    pub fn compose(outer: LinearMap, inner: LinearMap) -> Result<Self, LinopsError> {
        if outer.cols != inner.rows {
            return Err(LinopsError::Shape(format!(
                "compose {:?} after {:?}",
                outer.shape(),
                inner.shape()
            )));
        }
        let (rows, cols) = (outer.rows, inner.cols);
        Ok(Self { node: Node::Compose(Arc::new(outer), Arc::new(inner)), rows, cols })
    }

    /// `[[a, b], [c, d]]` acting on stacked vectors.
    pub fn block2x2(
        a: LinearMap,
        b: LinearMap,
        c: LinearMap,
        d: LinearMap,
    ) -> Result<Self, LinopsError> {
        if a.rows != b.rows || c.rows != d.rows || a.cols != c.cols || b.cols != d.cols {
            return Err(LinopsError::Shape("2x2 blocks do not conform".into()));
        }
        let (rows, cols) = (a.rows + c.rows, a.cols + b.cols);
        Ok(Self {
            node: Node::Block([Arc::new(a), Arc::new(b), Arc::new(c), Arc::new(d)]),
            rows,
            cols,
        })
    }

    /// The skew map `(x, y) ↦ (L*y, −Lx)` on the product space.
    pub fn saddle_skew(l: &LinearMap) -> Self {
        let (m, n) = l.shape();
        Self::block2x2(
            Self::zero(n, n),
            l.adjoint(),
            Self::scaled(-1.0, l.clone()),
            Self::zero(m, m),
        )
        .expect("conforming blocks by construction")
    }

    pub fn adjoint(&self) -> Self {
        if let Node::Adjoint(inner) = &self.node {
            return (**inner).clone();
        }
        Self { node: Node::Adjoint(Arc::new(self.clone())), rows: self.cols, cols: self.rows }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.node, Node::Identity)
    }

    pub fn apply(&self, v: &Vector) -> Result<Vector, LinopsError> {
        if v.len() != self.cols {
            return Err(LinopsError::DimensionMismatch { expected: self.cols, got: v.len() });
        }
        Ok(self.fwd(v))
    }

    pub fn adjoint_apply(&self, v: &Vector) -> Result<Vector, LinopsError> {
        if v.len() != self.rows {
            return Err(LinopsError::DimensionMismatch { expected: self.rows, got: v.len() });
        }
        Ok(self.bwd(v))
    }

    fn fwd(&self, v: &Vector) -> Vector {
        match &self.node {
            Node::Dense(m) => m * v,
            Node::Identity => v.clone(),
            Node::Zero => Vector::zeros(self.rows),
            Node::Scaled(s, t) => t.fwd(v) * *s,
            Node::Adjoint(t) => t.bwd(v),
            Node::Sum(a, b) => a.fwd(v) + b.fwd(v),
            Node::Compose(outer, inner) => outer.fwd(&inner.fwd(v)),
            Node::Block([a, b, c, d]) => {
                let (v1, v2) = split(v, a.cols);
                concat(&(a.fwd(&v1) + b.fwd(&v2)), &(c.fwd(&v1) + d.fwd(&v2)))
            }
        }
    }

    fn bwd(&self, v: &Vector) -> Vector {
        match &self.node {
            Node::Dense(m) => m.tr_mul(v),
            Node::Identity => v.clone(),
            Node::Zero => Vector::zeros(self.cols),
            Node::Scaled(s, t) => t.bwd(v) * *s,
            Node::Adjoint(t) => t.fwd(v),
            Node::Sum(a, b) => a.bwd(v) + b.bwd(v),
            Node::Compose(outer, inner) => inner.bwd(&outer.bwd(v)),
            Node::Block([a, b, c, d]) => {
                let (v1, v2) = split(v, a.rows);
                concat(&(a.bwd(&v1) + c.bwd(&v2)), &(b.bwd(&v1) + d.bwd(&v2)))
            }
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match &self.node {
            Node::Dense(m) => m.clone(),
            Node::Identity => Matrix::identity(self.rows, self.cols),
            Node::Zero => Matrix::zeros(self.rows, self.cols),
            Node::Scaled(s, t) => t.to_dense() * *s,
            Node::Adjoint(t) => t.to_dense().transpose(),
            Node::Sum(a, b) => a.to_dense() + b.to_dense(),
            Node::Compose(outer, inner) => outer.to_dense() * inner.to_dense(),
            Node::Block([a, b, c, d]) => {
                let mut out = Matrix::zeros(self.rows, self.cols);
                out.view_mut((0, 0), a.shape()).copy_from(&a.to_dense());
                out.view_mut((0, a.cols), b.shape()).copy_from(&b.to_dense());
                out.view_mut((a.rows, 0), c.shape()).copy_from(&c.to_dense());
                out.view_mut((a.rows, a.cols), d.shape()).copy_from(&d.to_dense());
                out
            }
        }
    }

    /// Spectral norm by power iteration on `T*T` from the default seed.
    pub fn op_norm(&self, tol: f64) -> Result<NormEstimate, LinopsError> {
        self.op_norm_seeded(tol, DEFAULT_NORM_SEED)
    }

    pub fn op_norm_seeded(&self, tol: f64, seed: u64) -> Result<NormEstimate, LinopsError> {
        if !(tol > 0.0) {
            return Err(LinopsError::BadTolerance(tol));
        }
        if self.rows == 0 || self.cols == 0 || matches!(self.node, Node::Zero) {
            return Ok(NormEstimate { value: 0.0, converged: true, iterations: 0 });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Vector::from_fn(self.cols, |_, _| rng.random::<f64>() - 0.5);
        let n0 = v.norm();
        if n0 == 0.0 {
            v[0] = 1.0;
        } else {
            v /= n0;
        }
        let mut prev = f64::NAN;
        let mut est = 0.0;
        for k in 1..=POWER_MAX_ITER {
            let u = self.fwd(&v);
            est = u.norm_squared();
            let w = self.bwd(&u);
            let wn = w.norm();
            if wn == 0.0 {
                return Ok(NormEstimate { value: 0.0, converged: true, iterations: k });
            }
            if (est - prev).abs() <= tol * est {
                return Ok(NormEstimate { value: est.sqrt(), converged: true, iterations: k });
            }
            prev = est;
            v = w / wn;
        }
        Ok(NormEstimate { value: est.sqrt(), converged: false, iterations: POWER_MAX_ITER })
    }

    /// True when `T + T*` vanishes on the dense realization to `tol·max(1, max|T|)`.
    pub fn is_skew(&self, tol: f64) -> bool {
        let d = self.to_dense();
        if d.nrows() != d.ncols() {
            return false;
        }
        let scale = d.amax().max(1.0);
        (&d + d.transpose()).amax() <= tol * scale
    }
}

/// Symmetric operator with cached extreme eigenvalues.
#[derive(Debug, Clone)]
pub struct SymMetric {
    dense: Matrix,
    min_eig: f64,
    max_eig: f64,
}

/// Relative elementwise symmetry tolerance.
pub const SYMMETRY_TOL: f64 = 1e-12;

impl SymMetric {
    pub fn new(map: &LinearMap) -> Result<Self, LinopsError> {
        Self::from_dense(map.to_dense())
    }

    pub fn from_dense(m: Matrix) -> Result<Self, LinopsError> {
        if m.nrows() != m.ncols() {
            return Err(LinopsError::Shape(format!("metric must be square, got {:?}", m.shape())));
        }
        let asym = if m.is_empty() { 0.0 } else { (&m - m.transpose()).amax() };
        let scale = if m.is_empty() { 0.0 } else { m.amax() };
        if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(LinopsError::NotSymmetric { asymmetry: asym });
        }
        let sym = (&m + m.transpose()) * 0.5;
        let (min_eig, max_eig) = if sym.is_empty() {
            (0.0, 0.0)
        } else {
            let ev = SymmetricEigen::new(sym.clone()).eigenvalues;
            (ev.min(), ev.max())
        };
        Ok(Self { dense: sym, min_eig, max_eig })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.dense
    }

    pub fn dim(&self) -> usize {
        self.dense.nrows()
    }

    pub fn min_eig(&self) -> f64 {
        self.min_eig
    }

    pub fn max_eig(&self) -> f64 {
        self.max_eig
    }

    /// Spectral norm of the symmetric matrix.
    pub fn norm(&self) -> f64 {
        self.max_eig.abs().max(self.min_eig.abs())
    }

    /// Strong-positivity lower bound (zero when not positive definite).
    pub fn tau(&self) -> f64 {
        self.min_eig.max(0.0)
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        &self.dense * v
    }

    /// `⟨v, T v⟩`.
    pub fn quad(&self, v: &Vector) -> f64 {
        v.dot(&(&self.dense * v))
    }

    /// `sqrt(⟨v, T v⟩)`, clamping round-off negatives to zero.
    pub fn norm_of(&self, v: &Vector) -> f64 {
        self.quad(v).max(0.0).sqrt()
    }

    pub fn eigen(&self) -> SymmetricEigen<f64, nalgebra::Dyn> {
        SymmetricEigen::new(self.dense.clone())
    }
}

/// Smallest eigenvalue of a symmetric dense matrix.
pub fn min_eig(t: &Matrix) -> Result<f64, LinopsError> {
    Ok(SymMetric::from_dense(t.clone())?.min_eig())
}

/// Smallest singular value of a dense matrix (zero for an empty matrix).
pub fn min_singular_value(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    if a.nrows() < a.ncols() {
        0.0
    } else {
        sv.min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    fn dense(rows: &[&[f64]]) -> LinearMap {
        let owned: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        LinearMap::from_rows(&owned).unwrap()
    }

    #[test]
    fn identity_and_zero_apply() {
        let v = Vector::from_vec(vec![1.0, 2.0]);
        assert_eq!(LinearMap::identity(2).apply(&v).unwrap(), v);
        assert_eq!(LinearMap::zero(3, 2).apply(&v).unwrap(), Vector::zeros(3));
    }

    #[test]
    fn rotation_apply() {
        let t = dense(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let out = t.apply(&Vector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(out, Vector::from_vec(vec![0.0, -1.0]));
    }

    #[test]
    fn apply_rejects_bad_dimension() {
        let err = LinearMap::identity(3).apply(&Vector::zeros(2)).unwrap_err();
        assert_eq!(err, LinopsError::DimensionMismatch { expected: 3, got: 2 });
    }

    #[test]
    fn saddle_skew_adjoint_is_negation() {
        let l = dense(&[&[1.0, 2.0, 0.5], &[-0.3, 0.0, 4.0]]);
        let m = LinearMap::saddle_skew(&l);
        let v = Vector::from_vec(vec![0.1, -2.0, 3.0, 0.7, 1.1]);
        let a = m.adjoint_apply(&v).unwrap();
        let b = m.apply(&v).unwrap();
        assert!((a + b).amax() < 1e-14);
        assert!(m.is_skew(1e-14));
    }

    #[test]
    fn compose_adjoint_reverses_order() {
        let a = dense(&[&[1.0, 2.0], &[3.0, -1.0], &[0.0, 1.0]]);
        let b = dense(&[&[2.0, 0.0, 1.0], &[1.0, 1.0, -1.0]]);
        let ab = LinearMap::compose(a.clone(), b.clone()).unwrap();
        let v = Vector::from_vec(vec![0.3, -0.2, 1.5]);
        let lhs = ab.adjoint_apply(&v).unwrap();
        let rhs = b.adjoint_apply(&a.adjoint_apply(&v).unwrap()).unwrap();
        assert!((lhs - rhs).amax() < 1e-14);
    }

    #[test]
    fn op_norm_examples() {
        assert_eq!(LinearMap::identity(4).op_norm(1e-9).unwrap().value, 1.0);
        let d = dense(&[&[3.0, 0.0], &[0.0, 1.0]]);
        assert!(rel(d.op_norm(1e-12).unwrap().value, 3.0) < 1e-9);
        assert_eq!(LinearMap::zero(3, 3).op_norm(1e-9).unwrap().value, 0.0);
    }

    #[test]
    fn op_norm_is_deterministic() {
        let d = dense(&[&[1.0, 2.0], &[0.5, -1.0], &[0.0, 3.0]]);
        assert_eq!(d.op_norm(1e-9).unwrap(), d.op_norm(1e-9).unwrap());
    }

    #[test]
    fn min_eig_examples() {
        assert_eq!(SymMetric::new(&LinearMap::identity(3)).unwrap().min_eig(), 1.0);
        let d = dense(&[&[2.0, 0.0], &[0.0, -1.0]]);
        assert!((SymMetric::new(&d).unwrap().min_eig() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn asymmetric_metric_rejected() {
        let d = dense(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(SymMetric::new(&d), Err(LinopsError::NotSymmetric { .. })));
    }

    #[test]
    fn adjoint_of_adjoint_is_original() {
        let a = dense(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let aa = a.adjoint().adjoint();
        let v = Vector::from_vec(vec![1.0, -1.0, 0.5]);
        assert_eq!(aa.apply(&v).unwrap(), a.apply(&v).unwrap());
    }

    #[test]
    fn block_to_dense_matches_apply() {
        let a = dense(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = dense(&[&[5.0], &[6.0]]);
        let c = dense(&[&[7.0, 8.0]]);
        let d = dense(&[&[9.0]]);
        let blk = LinearMap::block2x2(a, b, c, d).unwrap();
        let v = Vector::from_vec(vec![1.0, 0.5, -2.0]);
        let x = blk.to_dense() * &v;
        assert_eq!(x, blk.apply(&v).unwrap());
    }

    #[test]
    fn min_singular_value_of_wide_matrix_is_zero() {
        let a = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(min_singular_value(&a), 0.0);
        let t = Matrix::from_row_slice(2, 1, &[3.0, 4.0]);
        assert!((min_singular_value(&t) - 5.0).abs() < 1e-14);
    }
}

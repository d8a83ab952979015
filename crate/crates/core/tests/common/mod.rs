//! Fixtures and independent reference codings shared by the integration tests.
//!
//! The references below use only `nalgebra` and their own prox formulas.
#![allow(dead_code)]

use afba::linops::{Matrix, Vector};
use afba::problem_file::{build_solver, default_variant, Model, VariantSpec};
use afba::problems::{
    gen_dr_pair, gen_lasso, gen_smoothed_lasso, gen_strongly_convex_qp, ProblemInstance,
};
use afba::variants::Solver;

pub fn qp() -> ProblemInstance {
    gen_strongly_convex_qp(3, 12, 5)
}

/// Problems in the Fejér matrix.
pub fn fixtures() -> Vec<ProblemInstance> {
    vec![
        gen_lasso(1, 40, 20, 0.2, 0.05),
        gen_smoothed_lasso(2, 6, 10),
        qp(),
        gen_strongly_convex_qp(4, 30, 10),
        gen_dr_pair(5, 10, true),
        gen_dr_pair(6, 12, false),
    ]
}

pub const MATRIX_VARIANTS: [&str; 10] =
    ["primal_dual", "condat_vu", "bac", "dst", "mu0", "dr_forward", "drs_classic", "fbs", "ppa", "fbfs"];

/// Every (fixture, variant) pair whose defaults validate.
pub fn fejer_matrix() -> Vec<(ProblemInstance, VariantSpec)> {
    let mut out = Vec::new();
    for inst in fixtures() {
        let model = inst.model();
        for name in MATRIX_VARIANTS {
            let Ok(spec) = default_variant(name, &model) else { continue };
            if build_solver(&model, &spec).is_ok() {
                out.push((inst.clone(), spec));
            }
        }
    }
    out
}

pub fn build(inst: &ProblemInstance, spec: &VariantSpec) -> Box<dyn Solver> {
    build_solver(&inst.model(), spec).unwrap_or_else(|e| panic!("{} / {}: {e}", inst.name, spec.name))
}

pub fn oracle_state(inst: &ProblemInstance, s: &dyn Solver) -> Vector {
    let (x, y) = inst.oracle();
    s.oracle_state(&x, &y)
}

pub fn rel_diff(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax() / (1.0 + a.amax().max(b.amax()))
}

/// Dense data of `min ½xᵀQx + cᵀx  s.t.  Lx = b`.
pub struct QpData {
    pub q: Matrix,
    pub c: Vector,
    pub l: Matrix,
    pub b: Vector,
}

pub fn qp_data(inst: &ProblemInstance) -> QpData {
    let Model::Saddle(p) = inst.model() else { panic!("saddle fixture expected") };
    let (q, c) = match &p.f {
        afba::atoms::ProxAtom::Quad(q) => (q.q().clone(), q.c().clone()),
        other => panic!("quadratic f expected, got {other:?}"),
    };
    let b = match &p.g {
        afba::atoms::ProxAtom::Point { b } => b.clone(),
        other => panic!("point indicator expected, got {other:?}"),
    };
    QpData { q, c, l: p.lmap.to_dense(), b }
}

impl QpData {
    /// `(Id + γQ)⁻¹(v − γc)`.
    pub fn prox_f(&self, gamma: f64, v: &Vector) -> Vector {
        let n = self.q.nrows();
        let a = Matrix::identity(n, n) + &self.q * gamma;
        a.lu().solve(&(v - &self.c * gamma)).expect("nonsingular")
    }

    /// Prox of `γ g*` for `g = ι_{b}`: `g*(y) = ⟨b, y⟩`.
    pub fn prox_gconj(&self, gamma: f64, v: &Vector) -> Vector {
        v - &self.b * gamma
    }
}

/// Relaxed iteration with `θ = 2`, written from the textbook form.
pub fn reference_condat_vu(d: &QpData, g1: f64, g2: f64, lambda: f64, x0: &Vector, y0: &Vector, iters: usize) -> Vec<(Vector, Vector)> {
    let (mut x, mut y) = (x0.clone(), y0.clone());
    let mut out = vec![(x.clone(), y.clone())];
    for _ in 0..iters {
        let xb = d.prox_f(g1, &(&x - d.l.transpose() * &y * g1));
        let yb = d.prox_gconj(g2, &(&y + &d.l * (&xb * 2.0 - &x) * g2));
        x = &x + (xb - &x) * lambda;
        y = &y + (yb - &y) * lambda;
        out.push((x.clone(), y.clone()));
    }
    out
}

/// Primal step, dual step on `x̄`, primal correction with the dual change.
pub fn reference_dst(d: &QpData, g1: f64, g2: f64, x0: &Vector, y0: &Vector, iters: usize) -> Vec<(Vector, Vector)> {
    let (mut x, mut y) = (x0.clone(), y0.clone());
    let mut out = vec![(x.clone(), y.clone())];
    for _ in 0..iters {
        let xb = d.prox_f(g1, &(&x - d.l.transpose() * &y * g1));
        let yn = d.prox_gconj(g2, &(&y + &d.l * &xb * g2));
        x = &xb - d.l.transpose() * (&yn - &y) * g1;
        y = yn;
        out.push((x.clone(), y.clone()));
    }
    out
}

/// Box `[lo, hi]ⁿ` projection.
pub fn project_box(v: &Vector, lo: f64, hi: f64) -> Vector {
    v.map(|e| e.max(lo).min(hi))
}

/// `x = prox_{γD}(s)`, `r = prox_{γE}(2x − s)`, `s⁺ = s + r − x`; returns `(x_k, s_k)`.
pub fn textbook_drs(
    prox_d: impl Fn(&Vector) -> Vector,
    prox_e: impl Fn(&Vector) -> Vector,
    s0: &Vector,
    iters: usize,
) -> Vec<(Vector, Vector)> {
    let mut s = s0.clone();
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        let x = prox_d(&s);
        let r = prox_e(&(&x * 2.0 - &s));
        s = &s + &r - &x;
        out.push((x, s.clone()));
    }
    out
}

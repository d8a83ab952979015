//! Seeded test problems with high-accuracy oracle solutions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::atoms::AtomSpec;
use crate::linops::{min_singular_value, Matrix, Vector};
use crate::problem_file::{
    matrix_to_rows, vec_of, FileError, FirstBlockSpec, InfConvSpec, Model, Operator, OracleSpec, ProblemFile,
    QuadSpec, RunSpec, SmoothSpec, Space, Atoms,
};

/// A generated problem file plus the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub name: String,
    pub seed: u64,
    pub file: ProblemFile,
}

impl ProblemInstance {
    pub fn model(&self) -> Model {
        self.file.model(self.seed).expect("generated problems are consistent")
    }

    /// `(x*, y*)`.
    pub fn oracle(&self) -> (Vector, Vector) {
        self.file.oracle_pair().expect("oracle sized by the generator").expect("generated with an oracle")
    }

    /// Optimality residual of the shipped oracle.
    pub fn oracle_residual(&self) -> f64 {
        let (x, y) = self.oracle();
        match self.model() {
            Model::Saddle(p) => p.kkt_residual(&x, &y).unwrap_or(f64::INFINITY),
            Model::Admm3(p) => {
                let parts = p.split4(&crate::linops::concat(&x, &y));
                p.kkt_residuals(&parts[0], &parts[1], &parts[2], &parts[3]).into_iter().fold(0.0, f64::max)
            }
        }
    }

    pub fn to_json(&self) -> String {
        self.file.to_json_pretty()
    }

    pub fn from_json(name: &str, seed: u64, s: &str) -> Result<Self, FileError> {
        Ok(Self { name: name.into(), seed, file: ProblemFile::from_json_str(s)? })
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| { let v: f64 = StandardNormal.sample(r); scale * v })
}

fn gaussian_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| { let v: f64 = StandardNormal.sample(r); scale * v })
}

/// `BᵀB/n + shift·Id`.
fn spd(r: &mut ChaCha8Rng, n: usize, shift: f64) -> Matrix {
    let b = gaussian(r, n, n, 1.0);
    let q = b.tr_mul(&b) / n as f64 + Matrix::identity(n, n) * shift;
    (&q + q.transpose()) * 0.5
}

fn quad_spec(q: &Matrix, c: &Vector) -> AtomSpec {
    AtomSpec::Quad { q: matrix_to_rows(q), c: vec_of(c) }
}

/// Accelerated proximal gradient with gradient restarts, run to stagnation.
pub fn reference_prox_grad(
    x0: Vector,
    lipschitz: f64,
    grad: impl Fn(&Vector) -> Vector,
    prox: impl Fn(&Vector, f64) -> Vector,
    max_iter: usize,
) -> Vector {
    let t = 1.0 / lipschitz;
    let mut x = x0.clone();
    let mut v = x0;
    let mut k = 1.0f64;
    for _ in 0..max_iter {
        let xn = prox(&(&v - grad(&v) * t), t);
        let step = &xn - &x;
        if step.norm() <= 1e-15 * (1.0 + xn.norm()) {
            return xn;
        }
        let kn = 0.5 * (1.0 + (1.0 + 4.0 * k * k).sqrt());
        if (&v - &xn).dot(&step) > 0.0 {
            v = xn.clone();
            k = 1.0;
        } else {
            v = &xn + &step * ((k - 1.0) / kn);
            k = kn;
        }
        x = xn;
    }
    x
}

fn soft(v: &Vector, w: f64) -> Vector {
    v.map(|e| e.signum() * (e.abs() - w).max(0.0))
}

fn spectral_sq(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let s = a.clone().svd(false, false).singular_values.max();
    s * s
}

fn instance(name: &str, seed: u64, file: ProblemFile) -> ProblemInstance {
    ProblemInstance { name: name.into(), seed, file }
}

fn oracle(x: &Vector, y: &Vector, accuracy: f64, note: &str) -> Option<OracleSpec> {
    Some(OracleSpec { primal: vec_of(x), dual: vec_of(y), accuracy: Some(accuracy), note: Some(note.into()) })
}

/// `min reg‖x‖₁ + ½‖Ax − b‖²` with `L = A` and `g ≡ 0`.
pub fn gen_lasso(seed: u64, m: usize, n: usize, sparsity: f64, reg: f64) -> ProblemInstance {
    assert!(m <= 200 && n <= 200, "desk-scale sizes only");
    let mut r = rng(seed);
    let a = gaussian(&mut r, m, n, 1.0 / (m as f64).sqrt());
    let k = ((sparsity.clamp(0.0, 1.0) * n as f64).ceil() as usize).min(n);
    let u = Uniform::new(1.0, 2.0).expect("valid range");
    let mut xs = Vector::zeros(n);
    for i in 0..k {
        let coin: f64 = StandardNormal.sample(&mut r);
        let sign = if coin > 0.0 { 1.0 } else { -1.0 };
        xs[(i * 7919) % n] = sign * u.sample(&mut r);
    }
    let b = &a * &xs + gaussian_vec(&mut r, m, 0.01);
    let x = reference_prox_grad(
        Vector::zeros(n),
        spectral_sq(&a).max(1e-12),
        |x| a.tr_mul(&(&a * x - &b)),
        |v, t| soft(v, t * reg),
        1_000_000,
    );
    let y = Vector::zeros(m);
    let file = ProblemFile {
        space: Space { n, m, blocks: None },
        atoms: Atoms {
            f: Some(AtomSpec::L1 { weight: reg }),
            h: Some(SmoothSpec::LeastSquares { a: matrix_to_rows(&a), b: vec_of(&b) }),
            ..Default::default()
        },
        operator: Operator { l: Some(matrix_to_rows(&a)), ..Default::default() },
        variant: None,
        run: RunSpec::default(),
        oracle: oracle(&x, &y, 0.0, "accelerated proximal gradient to stagnation"),
    };
    let mut inst = instance("lasso", seed, file);
    stamp_accuracy(&mut inst);
    inst
}

/// Lasso with a Huber coupling: `w‖x‖₁ + ½‖Ax − b‖² + (g □ l)(Lx)`, `g = w₂‖·‖₁`, `l = (μ/2)‖·‖²`.
pub fn gen_smoothed_lasso(seed: u64, m: usize, n: usize) -> ProblemInstance {
    assert!(m <= 200 && n <= 200, "desk-scale sizes only");
    let mut r = rng(seed);
    let a = gaussian(&mut r, n + 5, n, 1.0 / ((n + 5) as f64).sqrt());
    let b = gaussian_vec(&mut r, n + 5, 1.0);
    let l = gaussian(&mut r, m, n, 1.0 / (n as f64).sqrt());
    let (w, w2, mu) = (0.05, 0.2, 2.0);
    // ∇(g □ l)(v) = μ(v − prox_{g/μ}(v)), μ-Lipschitz.
    let grad_env = |v: &Vector| (v - soft(v, w2 / mu)) * mu;
    let lip = spectral_sq(&a) + mu * spectral_sq(&l);
    let x = reference_prox_grad(
        Vector::zeros(n),
        lip,
        |x| a.tr_mul(&(&a * x - &b)) + l.tr_mul(&grad_env(&(&l * x))),
        |v, t| soft(v, t * w),
        1_000_000,
    );
    let y = grad_env(&(&l * &x));
    let file = ProblemFile {
        space: Space { n, m, blocks: None },
        atoms: Atoms {
            f: Some(AtomSpec::L1 { weight: w }),
            g: Some(AtomSpec::L1 { weight: w2 }),
            h: Some(SmoothSpec::LeastSquares { a: matrix_to_rows(&a), b: vec_of(&b) }),
            l: Some(InfConvSpec::SqL2 { mu }),
            ..Default::default()
        },
        operator: Operator { l: Some(matrix_to_rows(&l)), ..Default::default() },
        variant: None,
        run: RunSpec::default(),
        oracle: oracle(&x, &y, 0.0, "accelerated proximal gradient on the primal to stagnation"),
    };
    let mut inst = instance("smoothed_lasso", seed, file);
    stamp_accuracy(&mut inst);
    inst
}

/// Solves `[Q Lᵀ; L 0][x; y] = [−c; b]`.
pub fn qp_kkt(q: &Matrix, c: &Vector, l: &Matrix, b: &Vector) -> Option<(Vector, Vector)> {
    let (m, n) = l.shape();
    let mut k = Matrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(q);
    k.view_mut((0, n), (n, m)).copy_from(&l.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(l);
    let mut rhs = Vector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&-c);
    rhs.rows_mut(n, m).copy_from(b);
    let sol = k.lu().solve(&rhs)?;
    Some((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

/// `min ½xᵀQx + cᵀx` subject to `Lx = b`, i.e. `f` quadratic and `g = ι_{b}`.
///
/// ```
/// use afba::linops::{Matrix, Vector};
/// use afba::problems::qp_instance;
///
/// let q = Matrix::identity(2, 2);
/// let l = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
/// let inst = qp_instance(0, &q, &Vector::zeros(2), &l, &Vector::from_vec(vec![2.0])).unwrap();
/// let (x, y) = inst.oracle();
/// assert!((x - Vector::from_vec(vec![1.0, 1.0])).amax() < 1e-14);
/// assert!((y[0] + 1.0).abs() < 1e-14);
/// ```
pub fn qp_instance(seed: u64, q: &Matrix, c: &Vector, l: &Matrix, b: &Vector) -> Option<ProblemInstance> {
    let (x, y) = qp_kkt(q, c, l, b)?;
    let (m, n) = l.shape();
    let file = ProblemFile {
        space: Space { n, m, blocks: None },
        atoms: Atoms {
            f: Some(quad_spec(q, c)),
            g: Some(AtomSpec::Point { b: vec_of(b) }),
            ..Default::default()
        },
        operator: Operator { l: Some(matrix_to_rows(l)), ..Default::default() },
        variant: None,
        run: RunSpec::default(),
        oracle: oracle(&x, &y, 0.0, "dense KKT solve"),
    };
    let mut inst = instance("qp", seed, file);
    stamp_accuracy(&mut inst);
    Some(inst)
}

/// Random strongly convex equality-constrained QP; rank-deficient draws are re-sampled.
pub fn gen_strongly_convex_qp(seed: u64, n: usize, m: usize) -> ProblemInstance {
    assert!(m <= n && n <= 200, "needs m ≤ n ≤ 200");
    let mut s = seed;
    loop {
        let mut r = rng(s);
        let q = spd(&mut r, n, 0.5);
        let c = gaussian_vec(&mut r, n, 1.0);
        let l = gaussian(&mut r, m, n, 1.0 / (n as f64).sqrt());
        let b = gaussian_vec(&mut r, m, 1.0);
        if min_singular_value(&l.transpose()) > 1e-2 {
            if let Some(mut inst) = qp_instance(seed, &q, &c, &l, &b) {
                inst.name = "strongly_convex_qp".into();
                return inst;
            }
        }
        s = s.wrapping_add(1);
    }
}

/// `0 ∈ Dx + Ex + Fx` with `D = ∂ι_[−1,1]ⁿ`, `E = ∂(½xᵀQx + cᵀx)` and optionally
/// `F = Aᵀ(A· − b)`.
pub fn gen_dr_pair(seed: u64, n: usize, with_forward: bool) -> ProblemInstance {
    assert!(n <= 100, "desk-scale sizes only");
    let mut r = rng(seed);
    let q = spd(&mut r, n, 0.1);
    let c = gaussian_vec(&mut r, n, 2.0);
    let a = gaussian(&mut r, n, n, 1.0 / (n as f64).sqrt());
    let b = gaussian_vec(&mut r, n, 1.0);
    let lip = spectral_sq(&q) + if with_forward { spectral_sq(&a) } else { 0.0 };
    let x = reference_prox_grad(
        Vector::zeros(n),
        lip,
        |x| {
            let mut g = &q * x + &c;
            if with_forward {
                g += a.tr_mul(&(&a * x - &b));
            }
            g
        },
        |v, _| v.map(|e| e.clamp(-1.0, 1.0)),
        1_000_000,
    );
    let y = &q * &x + &c;
    let file = ProblemFile {
        space: Space { n, m: n, blocks: None },
        atoms: Atoms {
            f: Some(AtomSpec::Box { lo: -1.0, hi: 1.0 }),
            g: Some(quad_spec(&q, &c)),
            h: with_forward.then(|| SmoothSpec::LeastSquares { a: matrix_to_rows(&a), b: vec_of(&b) }),
            ..Default::default()
        },
        operator: Operator { norm: Some(1.0), ..Default::default() },
        variant: None,
        run: RunSpec::default(),
        oracle: oracle(&x, &y, 0.0, "accelerated projected gradient to stagnation"),
    };
    let name = if with_forward { "dr_pair_forward" } else { "dr_pair" };
    let mut inst = instance(name, seed, file);
    stamp_accuracy(&mut inst);
    inst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Admm3Dims {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub m: usize,
    /// `f₂ = f₃ = 0`.
    pub zero_f23: bool,
}

impl Default for Admm3Dims {
    fn default() -> Self {
        Self { n1: 4, n2: 3, n3: 3, m: 8, zero_f23: false }
    }
}

/// Three quadratic blocks coupled by `L₁x₁ + L₂x₂ + L₃x₃ = b`, `L₂`, `L₃` injective.
pub fn gen_admm3(seed: u64, dims: Admm3Dims) -> ProblemInstance {
    let Admm3Dims { n1, n2, n3, m, zero_f23 } = dims;
    assert!(m >= n2.max(n3) && (!zero_f23 || m >= n2 + n3), "blocks cannot be injective");
    let mut s = seed;
    loop {
        let mut r = rng(s);
        s = s.wrapping_add(1);
        let q1 = spd(&mut r, n1, 1.0);
        let c1 = gaussian_vec(&mut r, n1, 1.0);
        let mut psd = |k: usize| {
            if zero_f23 {
                (Matrix::zeros(k, k), Vector::zeros(k))
            } else {
                let g = gaussian(&mut r, k, k, 1.0);
                (g.tr_mul(&g) / k as f64, gaussian_vec(&mut r, k, 1.0))
            }
        };
        let (q2, c2) = psd(n2);
        let (q3, c3) = psd(n3);
        let scale = 1.0 / (m as f64).sqrt();
        let l1 = gaussian(&mut r, m, n1, scale);
        let l2 = gaussian(&mut r, m, n2, scale);
        let l3 = gaussian(&mut r, m, n3, scale);
        let b = gaussian_vec(&mut r, m, 1.0);
        let mut l23 = Matrix::zeros(m, n2 + n3);
        l23.view_mut((0, 0), (m, n2)).copy_from(&l2);
        l23.view_mut((0, n2), (m, n3)).copy_from(&l3);
        if min_singular_value(&l2) < 0.1 || min_singular_value(&l3) < 0.1 || (zero_f23 && min_singular_value(&l23) < 0.1) {
            continue;
        }
        let n = n1 + n2 + n3;
        let mut q = Matrix::zeros(n, n);
        q.view_mut((0, 0), (n1, n1)).copy_from(&q1);
        q.view_mut((n1, n1), (n2, n2)).copy_from(&q2);
        q.view_mut((n1 + n2, n1 + n2), (n3, n3)).copy_from(&q3);
        let mut l = Matrix::zeros(m, n);
        l.view_mut((0, 0), (m, n1)).copy_from(&l1);
        l.view_mut((0, n1), (m, n2 + n3)).copy_from(&l23);
        let c = Vector::from_iterator(n, c1.iter().chain(c2.iter()).chain(c3.iter()).copied());
        let Some((x, y)) = qp_kkt(&q, &c, &l, &b) else { continue };
        let file = ProblemFile {
            space: Space { n, m, blocks: Some([n1, n2, n3]) },
            atoms: Atoms {
                f1: Some(FirstBlockSpec::Quad { q: matrix_to_rows(&q1), c: vec_of(&c1) }),
                f2: Some(QuadSpec { q: matrix_to_rows(&q2), c: vec_of(&c2) }),
                f3: Some(QuadSpec { q: matrix_to_rows(&q3), c: vec_of(&c3) }),
                ..Default::default()
            },
            operator: Operator {
                l1: Some(matrix_to_rows(&l1)),
                l2: Some(matrix_to_rows(&l2)),
                l3: Some(matrix_to_rows(&l3)),
                b: Some(vec_of(&b)),
                ..Default::default()
            },
            variant: None,
            run: RunSpec::default(),
            oracle: oracle(&x, &y, 0.0, "monolithic dense KKT solve"),
        };
        let mut inst = instance("admm3", seed, file);
        stamp_accuracy(&mut inst);
        return inst;
    }
}

fn stamp_accuracy(inst: &mut ProblemInstance) {
    let res = inst.oracle_residual();
    if let Some(o) = inst.file.oracle.as_mut() {
        o.accuracy = Some(res);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::LinearMap;

    #[test]
    fn oracles_verify() {
        let cases = [
            gen_lasso(1, 40, 20, 0.2, 0.05),
            gen_smoothed_lasso(2, 6, 10),
            gen_strongly_convex_qp(3, 12, 5),
            gen_dr_pair(4, 10, true),
            gen_dr_pair(5, 10, false),
            gen_admm3(6, Admm3Dims::default()),
        ];
        for inst in &cases {
            assert!(inst.oracle_residual() <= 1e-10, "{}: {:e}", inst.name, inst.oracle_residual());
        }
    }

    #[test]
    fn lasso_large_reg_gives_zero() {
        let probe = gen_lasso(9, 30, 15, 0.2, 1.0);
        let Model::Saddle(p) = probe.model() else { unreachable!() };
        let Some(crate::atoms::CocoMap::AffineGradient { a, b, .. }) = &p.h else { unreachable!() };
        let atb = a.tr_mul(b).amax();
        for reg in [atb * 1.0001, atb * 1e3] {
            let inst = gen_lasso(9, 30, 15, 0.2, reg);
            assert!(inst.oracle().0.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn seed_stable_and_round_trips() {
        let a = gen_strongly_convex_qp(11, 8, 3);
        let b = gen_strongly_convex_qp(11, 8, 3);
        assert_eq!(a, b);
        let back = ProblemInstance::from_json(&a.name, a.seed, &a.to_json()).unwrap();
        assert_eq!(back, a);
        let d = gen_admm3(11, Admm3Dims::default());
        assert_eq!(ProblemInstance::from_json(&d.name, d.seed, &d.to_json()).unwrap(), d);
    }

    #[test]
    fn qp_constraint_row_and_negative_control() {
        let inst = gen_strongly_convex_qp(12, 10, 4);
        let Model::Saddle(p) = inst.model() else { unreachable!() };
        let (x, mut y) = inst.oracle();
        let lx = p.lmap.apply(&x).unwrap();
        let Some(AtomSpec::Point { b }) = &inst.file.atoms.g else { unreachable!() };
        assert!((lx - Vector::from_vec(b.clone())).amax() < 1e-12);
        y[0] += 1e-3;
        assert!(p.kkt_residual(&x, &y).unwrap() > 1e-6);
    }

    #[test]
    fn admm3_xi_and_dual_ascent_fixture() {
        let inst = gen_admm3(13, Admm3Dims { zero_f23: true, ..Default::default() });
        let Model::Admm3(p) = inst.model() else { unreachable!() };
        assert!(p.f2.q().iter().all(|v| *v == 0.0));
        let q1 = match &p.f1 {
            crate::variants::StronglyConvex::Quad(q) => q.q().clone(),
            _ => unreachable!(),
        };
        let xi = q1.symmetric_eigen().eigenvalues.min();
        assert!((p.f1.xi() - xi).abs() < 1e-12);
        assert!(inst.oracle_residual() < 1e-10);
    }

    #[test]
    fn dr_forward_eta() {
        let inst = gen_dr_pair(14, 8, true);
        let Model::Saddle(p) = inst.model() else { unreachable!() };
        let c = p.h.clone().unwrap();
        let Some(SmoothSpec::LeastSquares { a, .. }) = &inst.file.atoms.h else { unreachable!() };
        let am = crate::problem_file::matrix_from_rows("a", a, None).unwrap();
        let norm = LinearMap::dense(am).op_norm(1e-12).unwrap().value;
        assert!((c.beta_canonical() - 1.0 / (norm * norm)).abs() < 1e-8 * c.beta_canonical());
    }
}

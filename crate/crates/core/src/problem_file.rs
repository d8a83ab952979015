//! JSON problem files: schema, loading and solver construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atoms::{AtomError, AtomOp, AtomSpec, BlockAtom, CocoMap, ProxAtom, Quadratic};
use crate::engine::{LambdaSchedule, LAMBDA_MARGIN};
use crate::linops::{concat, LinearMap, Matrix, Vector};
use crate::primal_dual::{InfConv, PdError, PdParams, PdSolver, SaddleProblem};
use crate::report::RunOptions;
use crate::validity::{MarginReport, ValidityCertificate};
use crate::variants::{
    admm_gamma_bound, build_admm3, build_bac, build_condat_vu, build_dr_forward, build_drs_classic,
    build_dst, build_fbfs, build_fbs, build_mu0, build_ppa, Admm3Problem, PdVariant, Solver,
    StronglyConvex, Substitution,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Every name accepted in `variant.name`.
pub const SOLVER_NAMES: [&str; 11] = [
    "primal_dual",
    "condat_vu",
    "bac",
    "dst",
    "mu0",
    "dr_forward",
    "drs_classic",
    "admm3",
    "fbs",
    "ppa",
    "fbfs",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Space {
    pub n: usize,
    #[serde(default)]
    pub m: usize,
    /// Block sizes `(n₁, n₂, n₃)` of a three-block problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<[usize; 3]>,
}

/// Smooth term with a cocoercive gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmoothSpec {
    Zero,
    /// `½‖Ax − b‖²`
    LeastSquares { a: Vec<Vec<f64>>, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InfConvSpec {
    IndicatorZero,
    SqL2 { mu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSpec {
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FirstBlockSpec {
    Quad { q: Vec<Vec<f64>>, c: Vec<f64> },
    /// `g(x) + (ξ/2)‖x‖²`
    ProxPlusSq { g: AtomSpec, xi: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atoms {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<AtomSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<AtomSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<SmoothSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<InfConvSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<FirstBlockSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f2: Option<QuadSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f3: Option<QuadSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Operator {
    /// Row-major; omitted means the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<Vec<f64>>>,
    /// Certified upper bound on `‖L‖` replacing the power estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l3: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_every_k")]
    pub every_k: usize,
}

fn default_max_iter() -> usize {
    10_000
}

fn default_tol() -> f64 {
    1e-8
}

fn default_every_k() -> usize {
    1
}

impl Default for RunSpec {
    fn default() -> Self {
        Self { max_iter: default_max_iter(), tol: default_tol(), every_k: default_every_k() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
    /// Optimality residual measured when the oracle was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub space: Space,
    pub atoms: Atoms,
    #[serde(default)]
    pub operator: Operator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<VariantSpec>,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
}

#[derive(Debug, Error)]
pub enum FileError {
    #[error("malformed problem file at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("inconsistent problem at `{key}`: {message}")]
    Content { key: String, message: String },
    #[error("{0}")]
    Rejected(MarginReport),
    #[error("{0}")]
    Solver(PdError),
}

impl FileError {
    fn content(key: &str, message: impl ToString) -> Self {
        Self::Content { key: key.into(), message: message.to_string() }
    }

    pub fn margin_report(&self) -> Option<&MarginReport> {
        match self {
            Self::Rejected(r) => Some(r),
            _ => None,
        }
    }
}

impl From<PdError> for FileError {
    fn from(e: PdError) -> Self {
        match e {
            PdError::Rejected(r) => Self::Rejected(r),
            other => Self::Solver(other),
        }
    }
}

pub fn matrix_from_rows(key: &str, rows: &[Vec<f64>], ncols: Option<usize>) -> Result<Matrix, FileError> {
    let c = ncols.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if rows.iter().any(|r| r.len() != c) {
        return Err(FileError::content(key, "rows have different lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(FileError::content(key, "entries must be finite"));
    }
    Ok(Matrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn vec_of(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

/// The object a problem file describes.
#[derive(Debug, Clone)]
pub enum Model {
    Saddle(SaddleProblem),
    Admm3(Admm3Problem),
}

fn atom(key: &str, spec: Option<&AtomSpec>) -> Result<ProxAtom, FileError> {
    spec.map_or(Ok(ProxAtom::Zero), |s| s.build().map_err(|e| FileError::content(key, e)))
}

fn quad(key: &str, q: &QuadSpec, n: usize) -> Result<Quadratic, FileError> {
    let qm = matrix_from_rows(key, &q.q, Some(n))?;
    if qm.nrows() != n || q.c.len() != n {
        return Err(FileError::content(key, format!("expected a {n}×{n} block")));
    }
    Quadratic::new(qm, Vector::from_vec(q.c.clone())).map_err(|e| FileError::content(key, e))
}

fn atom_err(key: &str) -> impl Fn(AtomError) -> FileError + '_ {
    move |e| FileError::content(key, e)
}

impl ProblemFile {
    pub fn from_json_str(s: &str) -> Result<Self, FileError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        serde_path_to_error::deserialize(de).map_err(|e| FileError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem file serializes")
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions::default().with_max_iter(self.run.max_iter).with_tol(self.run.tol)
    }

    pub fn is_admm3(&self) -> bool {
        self.space.blocks.is_some()
    }

    /// Builds the problem; `seed` drives the power-iteration start.
    pub fn model(&self, seed: u64) -> Result<Model, FileError> {
        if let Some([n1, n2, n3]) = self.space.blocks {
            return self.admm3_model(n1, n2, n3).map(Model::Admm3);
        }
        let (n, m) = (self.space.n, self.space.m);
        let lmap = match &self.operator.l {
            Some(rows) => {
                let l = matrix_from_rows("operator.l", rows, Some(n))?;
                if l.nrows() != m {
                    return Err(FileError::content("operator.l", format!("expected {m} rows, found {}", l.nrows())));
                }
                LinearMap::dense(l)
            }
            None if m == n => LinearMap::identity(n),
            None => return Err(FileError::content("operator.l", "required when space.m differs from space.n")),
        };
        let f = atom("atoms.f", self.atoms.f.as_ref())?;
        let g = atom("atoms.g", self.atoms.g.as_ref())?;
        let h = match &self.atoms.h {
            None | Some(SmoothSpec::Zero) => None,
            Some(SmoothSpec::LeastSquares { a, b }) => {
                let am = matrix_from_rows("atoms.h.a", a, Some(n))?;
                Some(CocoMap::affine_gradient(am, Vector::from_vec(b.clone())).map_err(atom_err("atoms.h"))?)
            }
        };
        let l = match self.atoms.l {
            None | Some(InfConvSpec::IndicatorZero) => InfConv::Indicator0,
            Some(InfConvSpec::SqL2 { mu }) => InfConv::SqL2 { mu },
        };
        let key_err = |key: &'static str| move |e: PdError| FileError::content(key, e);
        let mut p = SaddleProblem::new(f, g, h, l, lmap).map_err(key_err("atoms"))?;
        p = p.with_norm_seed(seed).map_err(key_err("operator"))?;
        if let Some(bound) = self.operator.norm {
            p = p.with_norm_bound(bound).map_err(key_err("operator.norm"))?;
        }
        Ok(Model::Saddle(p))
    }

    fn admm3_model(&self, n1: usize, n2: usize, n3: usize) -> Result<Admm3Problem, FileError> {
        let m = self.space.m;
        let op = &self.operator;
        let need = |key: &str, v: &Option<Vec<Vec<f64>>>, cols: usize| -> Result<Matrix, FileError> {
            let rows = v.as_ref().ok_or_else(|| FileError::content(key, "required for a three-block problem"))?;
            let l = matrix_from_rows(key, rows, Some(cols))?;
            if l.nrows() != m {
                return Err(FileError::content(key, format!("expected {m} rows")));
            }
            Ok(l)
        };
        let l1 = need("operator.l1", &op.l1, n1)?;
        let l2 = need("operator.l2", &op.l2, n2)?;
        let l3 = need("operator.l3", &op.l3, n3)?;
        let b = op.b.clone().ok_or_else(|| FileError::content("operator.b", "required"))?;
        if b.len() != m {
            return Err(FileError::content("operator.b", format!("expected length {m}")));
        }
        let f1 = match &self.atoms.f1 {
            Some(FirstBlockSpec::Quad { q, c }) => {
                StronglyConvex::Quad(quad("atoms.f1", &QuadSpec { q: q.clone(), c: c.clone() }, n1)?)
            }
            Some(FirstBlockSpec::ProxPlusSq { g, xi }) => StronglyConvex::ProxPlusSq {
                g: g.build().map_err(atom_err("atoms.f1.g"))?,
                xi: *xi,
                dim: n1,
            },
            None => return Err(FileError::content("atoms.f1", "required")),
        };
        let zero = |k: usize| QuadSpec { q: vec![vec![0.0; k]; k], c: vec![0.0; k] };
        let f2 = quad("atoms.f2", self.atoms.f2.as_ref().unwrap_or(&zero(n2)), n2)?;
        let f3 = quad("atoms.f3", self.atoms.f3.as_ref().unwrap_or(&zero(n3)), n3)?;
        let p = Admm3Problem { f1, f2, f3, l1, l2, l3, b: Vector::from_vec(b) };
        p.check().map_err(|e| FileError::content("space", e))?;
        Ok(p)
    }

    /// `(x*, y*)` from the file, when present and of the right size.
    pub fn oracle_pair(&self) -> Result<Option<(Vector, Vector)>, FileError> {
        let Some(o) = &self.oracle else { return Ok(None) };
        let n = self.space.blocks.map_or(self.space.n, |b| b.iter().sum());
        if o.primal.len() != n || o.dual.len() != self.space.m {
            return Err(FileError::content("oracle", format!("expected lengths ({n}, {})", self.space.m)));
        }
        Ok(Some((Vector::from_vec(o.primal.clone()), Vector::from_vec(o.dual.clone()))))
    }
}

fn require(v: Option<f64>, key: &str) -> Result<f64, FileError> {
    v.ok_or_else(|| FileError::content(&format!("variant.{key}"), "required for this variant"))
}

fn saddle(model: &Model, name: &str) -> Result<SaddleProblem, FileError> {
    match model {
        Model::Saddle(p) => Ok(p.clone()),
        Model::Admm3(_) => Err(FileError::content("variant.name", format!("{name} needs a saddle problem"))),
    }
}

fn identity_pair(p: &SaddleProblem, name: &str) -> Result<(), FileError> {
    let ok = p.lmap.is_identity() || p.lmap.to_dense() == Matrix::identity(p.m(), p.n());
    if !ok || !p.l_indicator() {
        return Err(FileError::content("operator.l", format!("{name} needs L = Id and l = ι_{{0}}")));
    }
    Ok(())
}

/// General primal-dual solver wrapped as a preset.
#[derive(Debug)]
pub struct GeneralPd(pub PdSolver);

impl crate::report::Iteration for GeneralPd {
    fn step(&mut self, z: &Vector, n: usize) -> Result<crate::report::Step, String> {
        self.0.step(z, n)
    }

    fn fejer_metric(&self) -> Option<&crate::linops::SymMetric> {
        self.0.fejer_metric()
    }

    fn objective(&self, z: &Vector) -> Option<f64> {
        self.0.objective(z)
    }
}

impl Solver for GeneralPd {
    fn name(&self) -> &'static str {
        "primal_dual"
    }

    fn certificate(&self) -> &ValidityCertificate {
        self.0.certificate()
    }

    fn substitution(&self) -> Substitution {
        let p = self.0.params();
        Substitution { theta: Some(p.theta), mu: Some(p.mu), relaxation: "schedule" }
    }

    fn dim(&self) -> usize {
        self.0.problem().n() + self.0.problem().m()
    }

    fn engine(&self) -> Option<Result<crate::engine::Afba, PdError>> {
        Some(self.0.engine())
    }
}

/// Validates and builds the named solver.
pub fn build_solver(model: &Model, spec: &VariantSpec) -> Result<Box<dyn Solver>, FileError> {
    let name = spec.name.as_str();
    let lambda = || LambdaSchedule::Constant(spec.lambda.unwrap_or(1.0));
    let boxed = |v: PdVariant| -> Box<dyn Solver> { Box::new(v) };
    Ok(match name {
        "primal_dual" => {
            let p = saddle(model, name)?;
            let params = PdParams::new(
                require(spec.gamma1, "gamma1")?,
                require(spec.gamma2, "gamma2")?,
                require(spec.theta, "theta")?,
                require(spec.mu, "mu")?,
            )?;
            Box::new(GeneralPd(PdSolver::new(p, params, lambda())?))
        }
        "condat_vu" => boxed(build_condat_vu(
            saddle(model, name)?,
            require(spec.gamma1, "gamma1")?,
            require(spec.gamma2, "gamma2")?,
            lambda(),
        )?),
        "bac" => boxed(build_bac(saddle(model, name)?, require(spec.gamma1, "gamma1")?, require(spec.gamma2, "gamma2")?)?),
        "dst" => boxed(build_dst(saddle(model, name)?, require(spec.gamma1, "gamma1")?, require(spec.gamma2, "gamma2")?)?),
        "mu0" => boxed(build_mu0(
            saddle(model, name)?,
            require(spec.gamma1, "gamma1")?,
            require(spec.gamma2, "gamma2")?,
            require(spec.theta, "theta")?,
        )?),
        "dr_forward" | "drs_classic" => {
            let p = saddle(model, name)?;
            identity_pair(&p, name)?;
            let gamma = require(spec.gamma, "gamma")?;
            let rho = LambdaSchedule::Constant(spec.rho.unwrap_or(1.0));
            if name == "drs_classic" {
                if p.h.is_some() {
                    return Err(FileError::content("atoms.h", "drs_classic needs h ≡ 0"));
                }
                let n = p.n();
                Box::new(build_drs_classic(p.f, p.g, n, gamma, rho)?)
            } else {
                Box::new(build_dr_forward(p.f.clone(), p.g.clone(), p.h.clone(), p.n(), gamma, require(spec.theta, "theta")?, rho)?)
            }
        }
        "admm3" => match model {
            Model::Admm3(p) => Box::new(build_admm3(p.clone(), require(spec.gamma, "gamma")?, require(spec.theta, "theta")?)?),
            Model::Saddle(_) => return Err(FileError::content("variant.name", "admm3 needs a three-block problem")),
        },
        "fbs" | "ppa" => {
            let p = saddle(model, name)?;
            if p.g != ProxAtom::Zero || !p.l_indicator() {
                return Err(FileError::content("atoms.g", format!("{name} needs g ≡ 0 and l = ι_{{0}}")));
            }
            let a = BlockAtom::single(AtomOp::Subdiff(p.f.clone()), p.n()).map_err(atom_err("atoms.f"))?;
            let gamma = require(spec.gamma, "gamma")?;
            let lam = spec.lambda.unwrap_or(1.0);
            match (name, p.h) {
                ("fbs", Some(c)) => Box::new(build_fbs(a, c, gamma, lam)?),
                ("fbs", None) => return Err(FileError::content("atoms.h", "fbs needs a smooth term")),
                (_, Some(_)) => return Err(FileError::content("atoms.h", "ppa needs h ≡ 0")),
                (_, None) => Box::new(build_ppa(a, gamma, lam)?),
            }
        }
        "fbfs" => {
            let p = saddle(model, name)?;
            let ops = p.inclusion_ops()?;
            let c = match ops.c.len() {
                0 => None,
                _ => Some(combined_coco(&p)?),
            };
            Box::new(build_fbfs(ops.a, ops.m, c, require(spec.gamma, "gamma")?)?)
        }
        other => {
            return Err(FileError::content(
                "variant.name",
                format!("unknown variant `{other}`; expected one of {}", SOLVER_NAMES.join(", ")),
            ))
        }
    })
}

/// `(∇h, ∇l*)` as a single map on the product space.
fn combined_coco(p: &SaddleProblem) -> Result<CocoMap, FileError> {
    let (n, m) = (p.n(), p.m());
    let (ah, bh) = match &p.h {
        Some(CocoMap::AffineGradient { a, b, .. }) => (a.clone(), b.clone()),
        _ => (Matrix::zeros(0, n), Vector::zeros(0)),
    };
    let (rl, sl) = match p.l {
        InfConv::Indicator0 => (0, 0.0),
        InfConv::SqL2 { mu } => (m, 1.0 / mu.sqrt()),
    };
    // ∇l*(y) = y/μ is the gradient of ½‖y/√μ‖².
    let mut a = Matrix::zeros(ah.nrows() + rl, n + m);
    a.view_mut((0, 0), (ah.nrows(), n)).copy_from(&ah);
    for i in 0..rl {
        a[(ah.nrows() + i, n + i)] = sl;
    }
    let b = concat(&bh, &Vector::zeros(rl));
    CocoMap::affine_gradient(a, b).map_err(atom_err("atoms"))
}

/// Validated default parameters for `name` on `model`.
pub fn default_variant(name: &str, model: &Model) -> Result<VariantSpec, FileError> {
    let mut spec = VariantSpec { name: name.into(), ..Default::default() };
    match model {
        Model::Admm3(p) => {
            if name != "admm3" {
                return Err(FileError::content("variant.name", format!("{name} needs a saddle problem")));
            }
            let norm = LinearMap::dense(p.l1.clone()).op_norm(crate::linops::POWER_TOL).map_err(PdError::from)?.value;
            spec.theta = Some(1.5);
            spec.gamma = Some(0.9 * admm_gamma_bound(p.f1.xi(), 1.5, norm * (1.0 + crate::primal_dual::NORM_PAD)));
        }
        Model::Saddle(p) => {
            let nl = p.norm_l().max(1e-12);
            let bh = p.beta_h();
            let bl = p.beta_l();
            match name {
                "primal_dual" | "condat_vu" | "bac" | "dst" | "mu0" => {
                    // γ₂‖L‖ = 1/2 with γ₁⁻¹ leaving room for β_h.
                    let g2 = 0.5 / nl / (1.0 + bl);
                    let g1 = 1.0 / (g2 * nl * nl * 4.0 + 2.0 * bh + 1e-12);
                    spec.gamma1 = Some(g1.min(0.5 / nl));
                    spec.gamma2 = Some(g2);
                    match name {
                        "primal_dual" => {
                            spec.theta = Some(1.0);
                            spec.mu = Some(0.5);
                            spec.lambda = Some(1.0);
                        }
                        "condat_vu" => spec.lambda = Some(1.0),
                        "mu0" => spec.theta = Some(1.5),
                        _ => {}
                    }
                }
                "dr_forward" => {
                    spec.theta = Some(1.0);
                    match &p.h {
                        Some(c) => {
                            let eta = c.beta_canonical();
                            // θ = 1 and γ = η put the ρ bound at 2/3.
                            spec.gamma = Some(eta);
                            spec.rho = Some(1.0 / 3.0);
                        }
                        None => {
                            spec.gamma = Some(1.0);
                            spec.rho = Some(0.9);
                        }
                    }
                }
                "drs_classic" => {
                    spec.gamma = Some(1.0);
                    spec.rho = Some(1.0);
                }
                "fbs" => {
                    spec.gamma = Some(if bh > 0.0 { 1.0 / bh } else { 1.0 });
                    spec.lambda = Some(1.0);
                }
                "ppa" => {
                    spec.gamma = Some(1.0);
                    spec.lambda = Some(1.0);
                }
                "fbfs" => {
                    let lip = bh.max(bl);
                    spec.gamma = Some(0.5 / nl.max(lip).max(1e-12));
                }
                other => {
                    return Err(FileError::content("variant.name", format!("unknown variant `{other}`")));
                }
            }
        }
    }
    // Shrink the relaxation when only the λ bound fails, the steps otherwise.
    let pd_family = matches!(name, "primal_dual" | "condat_vu" | "bac" | "dst" | "mu0");
    for _ in 0..60 {
        let Err(FileError::Rejected(r)) = build_solver(model, &spec) else { break };
        if spec.lambda.is_some() && r.failed().all(|i| i.name == "lambda_below_delta") {
            let cap = r.failed().map(|i| i.rhs).fold(f64::INFINITY, f64::min);
            spec.lambda = Some((0.5 * (cap + LAMBDA_MARGIN)).max(2.0 * LAMBDA_MARGIN));
        } else if pd_family {
            spec.gamma1 = spec.gamma1.map(|g| g * 0.5);
            spec.gamma2 = spec.gamma2.map(|g| g * 0.5);
        } else {
            break;
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const QP: &str = r#"{
        "space": {"n": 2, "m": 1},
        "atoms": {"f": {"kind": "quad", "q": [[1, 0], [0, 1]], "c": [0, 0]}, "g": {"kind": "point", "b": [2]}},
        "operator": {"l": [[1, 1]]},
        "variant": {"name": "condat_vu", "gamma1": 0.5, "gamma2": 0.5, "lambda": 1.0},
        "oracle": {"primal": [1, 1], "dual": [-1]}
    }"#;

    #[test]
    fn unknown_key_reports_path() {
        let bad = QP.replace("\"gamma1\"", "\"gamma_one\"");
        match ProblemFile::from_json_str(&bad) {
            Err(FileError::Schema { path, .. }) => assert_eq!(path, "variant.gamma_one"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn qp_builds_and_solves() {
        let file = ProblemFile::from_json_str(QP).unwrap();
        let model = file.model(7).unwrap();
        let mut s = build_solver(&model, file.variant.as_ref().unwrap()).unwrap();
        let (x, y) = file.oracle_pair().unwrap().unwrap();
        let z0 = s.default_start();
        let rep = crate::variants::run(s.as_mut(), &z0, &file.run_options().with_tol(1e-12).with_max_iter(5000));
        assert!(rep.termination.converged());
        assert!((rep.final_z - s.oracle_state(&x, &y)).amax() < 1e-9);
    }

    #[test]
    fn json_round_trip() {
        let file = ProblemFile::from_json_str(QP).unwrap();
        let again = ProblemFile::from_json_str(&file.to_json_pretty()).unwrap();
        assert_eq!(file, again);
    }

    #[test]
    fn defaults_validate() {
        let file = ProblemFile::from_json_str(QP).unwrap();
        let model = file.model(0).unwrap();
        for name in ["primal_dual", "condat_vu", "bac", "dst", "mu0", "fbfs"] {
            let spec = default_variant(name, &model).unwrap();
            assert!(build_solver(&model, &spec).is_ok(), "{name}: {spec:?}");
        }
    }
}

//! Runtime monitors and post-hoc analyses of recorded runs.
//!
//! Everything here is a pure function of its inputs.

use serde::Serialize;
use thiserror::Error;

use crate::linops::{LinopsError, Matrix, SymMetric, Vector};

/// Eigenvalues below `RANGE_CUTOFF·‖P‖` are treated as zero.
pub const RANGE_CUTOFF: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("P is singular (min eigenvalue {0:e}); use the range-of-P analysis")]
    SingularP(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("series of length {len} is shorter than {need}")]
    TooShort { len: usize, need: usize },
    #[error(transparent)]
    Linops(#[from] LinopsError),
}

/// Outcome of a monitor together with its worst point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub holds: bool,
    /// Index with the smallest margin, if any comparison was made.
    pub worst_index: Option<usize>,
    /// Smallest `allowed − observed` over the checked indices.
    pub worst_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    fn vacuous(note: &str) -> Self {
        Self { holds: true, worst_index: None, worst_margin: f64::INFINITY, note: Some(note.into()) }
    }

    fn from_margins(margins: impl Iterator<Item = (usize, f64)>) -> Self {
        let mut worst = (None, f64::INFINITY);
        for (i, m) in margins {
            if m < worst.1 || m.is_nan() {
                worst = (Some(i), m);
                if m.is_nan() {
                    break;
                }
            }
        }
        Self { holds: worst.1 >= 0.0, worst_index: worst.0, worst_margin: worst.1, note: None }
    }
}

/// `(c₁, c₂)`, the extreme eigenvalues of the pencil `P^{-1/2} D P^{-1/2}`.
pub fn sandwich_constants(p: &Matrix, d: &Matrix) -> Result<(f64, f64), DiagError> {
    if p.shape() != d.shape() || !p.is_square() {
        return Err(DiagError::Shape(format!("P {:?} vs D {:?}", p.shape(), d.shape())));
    }
    let ps = SymMetric::from_dense(p.clone())?;
    if !(ps.min_eig() > 0.0) {
        return Err(DiagError::SingularP(ps.min_eig()));
    }
    let eig = ps.eigen();
    let inv_sqrt = &eig.eigenvectors
        * Matrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose();
    let pencil = &inv_sqrt * d * &inv_sqrt;
    let pencil = SymMetric::from_dense((&pencil + pencil.transpose()) * 0.5)?;
    Ok((pencil.min_eig(), pencil.max_eig()))
}

/// `min λ(δ − λ)` over `λ ∈ [lo, hi]`.
pub fn tau_lower(lo: f64, hi: f64, delta: f64) -> f64 {
    (lo * (delta - lo)).min(hi * (delta - hi))
}

/// Sandwich constants together with the relaxation bound they imply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateBundle {
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
    /// `c₁δ/c₂`.
    pub lambda_cap: f64,
    pub tau_lower: f64,
}

impl RateBundle {
    pub fn new(p: &Matrix, d: &Matrix, delta: f64, lambda_lo: f64, lambda_hi: f64) -> Result<Self, DiagError> {
        let (c1, c2) = sandwich_constants(p, d)?;
        Ok(Self { c1, c2, delta, lambda_cap: c1 * delta / c2, tau_lower: tau_lower(lambda_lo, lambda_hi, delta) })
    }
}

/// `d_{n+1} ≤ d_n(1 + 1e-12) + 1e-14` for all `n`.
pub fn monitor_fejer(dist: &[f64]) -> Verdict {
    monitor_fejer_with(dist, 1e-12, 1e-14)
}

pub fn monitor_fejer_with(dist: &[f64], rel: f64, abs: f64) -> Verdict {
    if dist.len() < 2 {
        return Verdict::vacuous("fewer than two points");
    }
    Verdict::from_margins(dist.windows(2).enumerate().map(|(i, w)| (i + 1, w[0] * (1.0 + rel) + abs - w[1])))
}

/// `‖z̃_{n+1}‖²_D ≤ ‖z̃_n‖²_D(1 + 1e-12)` for all `n`.
pub fn monitor_dnorm(d2: &[f64]) -> Verdict {
    monitor_dnorm_with(d2, 1e-12, 0.0)
}

/// As [`monitor_dnorm`] with an absolute floor below which round-off dominates.
pub fn monitor_dnorm_with(d2: &[f64], rel: f64, abs_floor: f64) -> Verdict {
    if d2.len() < 2 {
        return Verdict::vacuous("fewer than two points");
    }
    Verdict::from_margins(d2.windows(2).enumerate().map(|(i, w)| (i + 1, w[0] * (1.0 + rel) + abs_floor - w[1])))
}

/// `‖z̃_n‖²_D ≤ c₂²/(τ̲(n+1))·‖z₀ − z*‖²_S` at every `n`, with relative `slack`.
pub fn rate_bound_check(d2: &[f64], c2: f64, tau_lower: f64, dist0_sq: f64, slack: f64) -> Verdict {
    if !(tau_lower > 0.0) {
        return Verdict {
            holds: false,
            worst_index: None,
            worst_margin: f64::NAN,
            note: Some(format!("τ̲ = {tau_lower:e} is not positive")),
        };
    }
    let k = c2 * c2 * dist0_sq / tau_lower;
    Verdict::from_margins(d2.iter().enumerate().map(|(n, v)| {
        let bound = k / (n as f64 + 1.0);
        (n, bound * (1.0 + slack) + slack * k - v)
    }))
}

/// Empirical proxy for `o(1/(n+1))`: `(n+1)·s_n` at the end of the run is at most a tenth
/// of its maximum over the last half.
pub fn little_o_trend(series: &[f64]) -> Result<Verdict, DiagError> {
    if series.len() < 100 {
        return Err(DiagError::TooShort { len: series.len(), need: 100 });
    }
    let half = series.len() / 2;
    let w: Vec<f64> = series.iter().enumerate().skip(half).map(|(n, v)| (n as f64 + 1.0) * v).collect();
    let max = w.iter().copied().fold(0.0, f64::max);
    let last = *w.last().expect("non-empty");
    let margin = max / 10.0 - last;
    Ok(Verdict {
        holds: last <= max / 10.0,
        worst_index: Some(series.len() - 1),
        worst_margin: margin,
        note: Some("empirical proxy, not a proof".into()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFitOptions {
    /// Fraction of the pre-floor window discarded at the start.
    pub burn_in_frac: f64,
    /// Values below `floor_rel · max` count as having hit the numerical floor.
    pub floor_rel: f64,
}

impl Default for LinearFitOptions {
    fn default() -> Self {
        Self { burn_in_frac: 0.1, floor_rel: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    /// `exp` of the least-squares slope of `log d_n`.
    pub q_factor: f64,
    /// Largest per-step ratio in the window.
    pub kappa: f64,
    /// Half-open index window used for the fit.
    pub window: (usize, usize),
    /// Residual sums of squares of the exponential and power-law models.
    pub ssr_exponential: f64,
    pub ssr_power: f64,
    pub linear: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let ssr = xs.iter().zip(ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    (slope, icpt, ssr)
}

/// Fits `log d_n` against `n` (geometric) and `log(n+1)` (power law) on the
/// post-burn-in, pre-floor window.
pub fn linear_rate_fit(d: &[f64]) -> LinearFit {
    linear_rate_fit_with(d, LinearFitOptions::default())
}

pub fn linear_rate_fit_with(d: &[f64], opts: LinearFitOptions) -> LinearFit {
    let max = d.iter().copied().fold(0.0, f64::max);
    let floor = (opts.floor_rel * max).max(f64::MIN_POSITIVE);
    let end = d.iter().position(|v| !(*v > floor)).unwrap_or(d.len());
    let start = ((end as f64) * opts.burn_in_frac).floor() as usize;
    let fail = |note: &str| LinearFit {
        q_factor: f64::NAN,
        kappa: f64::NAN,
        window: (start, end),
        ssr_exponential: f64::NAN,
        ssr_power: f64::NAN,
        linear: false,
        note: Some(note.into()),
    };
    if end < start + 5 {
        return fail("fewer than five points above the floor");
    }
    let idx: Vec<usize> = (start..end).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| d[i].ln()).collect();
    let ns: Vec<f64> = idx.iter().map(|&i| i as f64).collect();
    let logs: Vec<f64> = idx.iter().map(|&i| (i as f64 + 1.0).ln()).collect();
    let (slope, _, ssr_e) = least_squares(&ns, &ys);
    let (_, _, ssr_p) = least_squares(&logs, &ys);
    let kappa = idx.windows(2).map(|w| d[w[1]] / d[w[0]]).fold(0.0, f64::max);
    let q = slope.exp();
    LinearFit {
        q_factor: q,
        kappa,
        window: (start, end),
        ssr_exponential: ssr_e,
        ssr_power: ssr_p,
        linear: q < 1.0 && kappa < 1.0 && ssr_e <= ssr_p,
        note: None,
    }
}

/// Orthogonal projector `Q` onto `ran(P)` and `R = P + Id − Q`.
#[derive(Debug, Clone)]
pub struct RanPProjection {
    q: Matrix,
    r: SymMetric,
    rank: usize,
    min_positive: f64,
}

impl RanPProjection {
    pub fn new(p: &Matrix) -> Result<Self, DiagError> {
        let ps = SymMetric::from_dense(p.clone())?;
        let eig = ps.eigen();
        let cutoff = RANGE_CUTOFF * ps.norm();
        let k = p.nrows();
        let mut q = Matrix::zeros(k, k);
        let mut rank = 0;
        let mut min_positive = f64::INFINITY;
        for (i, l) in eig.eigenvalues.iter().enumerate() {
            if *l > cutoff {
                let u = eig.eigenvectors.column(i);
                q += u * u.transpose();
                rank += 1;
                min_positive = min_positive.min(*l);
            }
        }
        let r = SymMetric::from_dense(ps.matrix() + Matrix::identity(k, k) - &q)?;
        Ok(Self { q, r, rank, min_positive })
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &SymMetric {
        &self.r
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Smallest nonzero eigenvalue of `P`.
    pub fn min_positive_eig(&self) -> f64 {
        self.min_positive
    }

    pub fn project(&self, v: &Vector) -> Vector {
        &self.q * v
    }

    /// `‖Qv‖²_R`.
    pub fn r_norm_sq_of_projection(&self, v: &Vector) -> f64 {
        self.r.quad(&self.project(v))
    }
}

/// `τ = ε²/(2 − ε)²` for relaxations in `[ε, 2 − ε]`.
pub fn tau_eps(eps: f64) -> f64 {
    (eps / (2.0 - eps)).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RanPVerdict {
    pub verdict: Verdict,
    /// `constant/τ · ‖Qz₀ − Qz*‖²_R`, the numerator of the bound.
    pub scale: f64,
    /// Set when `z*` was replaced by the last iterate.
    pub approximate: bool,
}

/// `diffs[n] ≤ constant/(τ(n+1))·‖Qz₀ − Qz*‖²_R` with slack `1e-9`, where `constant` is
/// `‖P‖` for `‖Pz_{n+1} − Pz_n‖²` and `γ` for the `s`-sequence of the Douglas-Rachford form.
pub fn ran_p_rate(
    diffs: &[f64],
    proj: &RanPProjection,
    constant: f64,
    tau: f64,
    z0: &Vector,
    zstar: Option<&Vector>,
    z_last: &Vector,
) -> RanPVerdict {
    let (star, approximate) = match zstar {
        Some(s) => (s, false),
        None => (z_last, true),
    };
    let scale = constant / tau * proj.r_norm_sq_of_projection(&(z0 - star));
    let mut verdict = Verdict::from_margins(diffs.iter().enumerate().map(|(n, v)| {
        let bound = scale / (n as f64 + 1.0);
        (n, bound * (1.0 + 1e-9) + 1e-9 - v)
    }));
    if approximate {
        verdict.note = Some("z* replaced by the last iterate".into());
    }
    RanPVerdict { verdict, scale, approximate }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sandwich_examples() {
        let p = Matrix::identity(3, 3) * 2.0;
        let (c1, c2) = sandwich_constants(&p, &p).unwrap();
        assert!((c1 - 1.0).abs() < 1e-14 && (c2 - 1.0).abs() < 1e-14);
        let g = 0.4;
        let (c1, c2) =
            sandwich_constants(&(Matrix::identity(2, 2) / g), &(Matrix::identity(2, 2) / (g * g))).unwrap();
        assert!((c1 - 1.0 / g).abs() < 1e-12 && (c2 - 1.0 / g).abs() < 1e-12);
        let singular = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(sandwich_constants(&singular, &singular), Err(DiagError::SingularP(_))));
    }

    #[test]
    fn fejer_and_dnorm() {
        assert!(monitor_fejer(&[1.0; 10]).holds);
        assert!(!monitor_fejer(&[1.0, 0.5, 0.6]).holds);
        assert!(monitor_dnorm(&[3.0]).holds);
        let v = monitor_dnorm(&[3.0, 2.0, 2.5]);
        assert_eq!(v.worst_index, Some(2));
    }

    #[test]
    fn little_o_examples() {
        let geo: Vec<f64> = (0..200).map(|n| 0.9f64.powi(n)).collect();
        assert!(little_o_trend(&geo).unwrap().holds);
        let harm: Vec<f64> = (0..200).map(|n| 1.0 / (n as f64 + 1.0)).collect();
        assert!(!little_o_trend(&harm).unwrap().holds);
        assert!(little_o_trend(&harm[..50]).is_err());
    }

    #[test]
    fn linear_fit_examples() {
        let geo: Vec<f64> = (0..60).map(|n| 0.5f64.powi(n)).collect();
        let f = linear_rate_fit(&geo);
        assert!(f.linear);
        assert!((f.q_factor - 0.5).abs() < 1e-6);
        let harm: Vec<f64> = (0..500).map(|n| 1.0 / (n as f64 + 1.0)).collect();
        assert!(!linear_rate_fit(&harm).linear);
    }

    #[test]
    fn projection_identities() {
        let g = 0.7;
        let p = Matrix::from_row_slice(2, 2, &[1.0 / g, -1.0, -1.0, g]);
        let pr = RanPProjection::new(&p).unwrap();
        assert_eq!(pr.rank(), 1);
        let q = pr.q();
        assert!((q * q - q).amax() < 1e-12);
        let v = Vector::from_vec(vec![0.3, -1.1]);
        assert!((pr.r_norm_sq_of_projection(&v) - v.dot(&(&p * &v))).abs() < 1e-12);
        assert!(pr.r().min_eig() >= 1.0f64.min(pr.min_positive_eig()) - 1e-9);
        assert_eq!(tau_eps(1.0), 1.0);
    }
}

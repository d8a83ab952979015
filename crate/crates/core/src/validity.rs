//! Named inequalities, margin reports and validity certificates.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

/// Relative tolerance used to decide exact equality at a boundary.
pub const BOUNDARY_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gt => ">",
            Self::Ge => ">=",
            Self::Lt => "<",
            Self::Le => "<=",
        })
    }
}

/// `lhs relation rhs`, with `margin` positive on the satisfied side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inequality {
    pub name: String,
    pub case: String,
    pub lhs: f64,
    pub relation: Relation,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

fn decide(relation: Relation, lhs: f64, rhs: f64) -> (f64, bool) {
    let margin = match relation {
        Relation::Gt | Relation::Ge => lhs - rhs,
        Relation::Lt | Relation::Le => rhs - lhs,
    };
    let scale = lhs.abs().max(rhs.abs());
    let tol = if scale.is_finite() { BOUNDARY_RTOL * scale } else { 0.0 };
    let holds = match relation {
        Relation::Gt | Relation::Lt => margin > tol,
        Relation::Ge | Relation::Le => margin >= -tol,
    };
    (margin, holds && !margin.is_nan())
}

impl Inequality {
    pub fn new(name: &str, case: &str, lhs: f64, relation: Relation, rhs: f64) -> Self {
        let (margin, holds) = decide(relation, lhs, rhs);
        Self { name: name.into(), case: case.into(), lhs, relation, rhs, margin, holds }
    }

    /// Re-evaluates the relation from the stored sides.
    pub fn recheck(&self) -> bool {
        decide(self.relation, self.lhs, self.rhs).1
    }
}

impl fmt::Display for Inequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}]: {:e} {} {:e} (margin {:e}, {})",
            self.name,
            self.case,
            self.lhs,
            self.relation,
            self.rhs,
            self.margin,
            if self.holds { "ok" } else { "FAILS" }
        )
    }
}

/// Every inequality checked for a rejected configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginReport {
    pub variant: String,
    pub inequalities: Vec<Inequality>,
}

impl MarginReport {
    pub fn failed(&self) -> impl Iterator<Item = &Inequality> {
        self.inequalities.iter().filter(|i| !i.holds)
    }

    pub fn fails(&self, name: &str) -> bool {
        self.failed().any(|i| i.name == name)
    }

    /// Name of the first failing inequality.
    pub fn first_failure(&self) -> Option<&str> {
        self.failed().next().map(|i| i.name.as_str())
    }
}

impl fmt::Display for MarginReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} rejected:", self.variant)?;
        for i in &self.inequalities {
            writeln!(f, "  {i}")?;
        }
        Ok(())
    }
}

/// Sandwich constants `c₁P ⪯ D ⪯ c₂P` and the relaxation cap `c₁δ/c₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEligibility {
    pub c1: f64,
    pub c2: f64,
    pub lambda_cap: f64,
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityCertificate {
    pub variant: String,
    pub case: String,
    pub tau: Option<f64>,
    pub beta_p: Option<f64>,
    pub delta: f64,
    pub positive_p: bool,
    pub lambda: Option<f64>,
    pub rate: Option<RateEligibility>,
    pub flags: BTreeMap<String, bool>,
    pub inequalities: Vec<Inequality>,
}

impl ValidityCertificate {
    /// True when every stored inequality still holds when recomputed.
    pub fn recheck(&self) -> bool {
        self.inequalities.iter().all(Inequality::recheck)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("certificate serializes")
    }
}

/// Candidate case: its inequalities and the resulting certificate fields.
#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub case: String,
    pub inequalities: Vec<Inequality>,
    pub delta: f64,
    pub tau: Option<f64>,
    pub beta_p: Option<f64>,
    pub positive_p: bool,
}

impl CaseOutcome {
    pub fn holds(&self) -> bool {
        self.inequalities.iter().all(|i| i.holds)
    }
}

/// Picks the passing case with the largest `δ` (earlier cases win ties),
/// or reports every inequality of every case.
pub fn select_case(variant: &str, cases: Vec<CaseOutcome>) -> Result<CaseOutcome, MarginReport> {
    let mut best: Option<CaseOutcome> = None;
    for c in cases.iter().filter(|c| c.holds()) {
        if best.as_ref().is_none_or(|b| c.delta > b.delta) {
            best = Some(c.clone());
        }
    }
    best.ok_or_else(|| MarginReport {
        variant: variant.into(),
        inequalities: cases.into_iter().flat_map(|c| c.inequalities).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_inequality_fails_at_equality() {
        let i = Inequality::new("x", "c", 1.0, Relation::Gt, 1.0);
        assert!(!i.holds);
        assert_eq!(i.margin, 0.0);
        let j = Inequality::new("x", "c", 1.0, Relation::Ge, 1.0);
        assert!(j.holds);
    }

    #[test]
    fn rounding_at_boundary_is_equality() {
        let i = Inequality::new("x", "c", 0.1 + 0.2, Relation::Gt, 0.3);
        assert!(!i.holds);
        let j = Inequality::new("x", "c", 0.3, Relation::Le, 0.1 + 0.2);
        assert!(j.holds);
    }

    #[test]
    fn less_than_margin_sign() {
        let i = Inequality::new("x", "c", 1.0, Relation::Lt, 3.0);
        assert_eq!(i.margin, 2.0);
        assert!(i.holds && i.recheck());
    }
}

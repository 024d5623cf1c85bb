//! Cox proportional hazards: design builders for the MRS and PIN models,
//! partial-likelihood Newton-Raphson with Efron or Breslow ties, and the
//! Breslow cumulative baseline hazard.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aft::cap_transform;
use crate::cohort::{Cohort, Covariate, Subject};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity(Covariate),
    Square(Covariate),
    Product(Covariate, Covariate),
    /// 1 when the covariate equals the level, else 0.
    Indicator(Covariate, u8),
    /// `Age * (CAG - 34)`.
    Cap,
}

impl Transform {
    fn apply(self, s: &Subject) -> Result<f64> {
        Ok(match self {
            Transform::Identity(c) => s.require(c)?,
            Transform::Square(c) => s.require(c)?.powi(2),
            Transform::Product(a, b) => s.require(a)? * s.require(b)?,
            Transform::Indicator(c, level) => f64::from(u8::from(s.require(c)? == f64::from(level))),
            Transform::Cap => cap_transform(s.age_enroll, s.cag),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignName {
    Mrs,
    Pin,
    Custom(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub name: DesignName,
    pub terms: Vec<Term>,
}

fn term(name: &str, transform: Transform) -> Term {
    Term {
        name: name.to_string(),
        transform,
    }
}

impl DesignSpec {
    /// The 13-term multivariate risk score design.
    pub fn mrs() -> Self {
        use Covariate::*;
        use Transform::*;
        DesignSpec {
            name: DesignName::Mrs,
            terms: vec![
                term("DCL1", Indicator(Dcl, 1)),
                term("DCL2", Indicator(Dcl, 2)),
                term("DCL3", Indicator(Dcl, 3)),
                term("TMS", Identity(Tms)),
                term("Color", Identity(StroopColor)),
                term("Word", Identity(StroopWord)),
                term("Interference", Identity(StroopInterference)),
                term("SDMT", Identity(Sdmt)),
                term("CAG", Identity(Cag)),
                term("Age", Identity(Age)),
                term("TMS2", Square(Tms)),
                term("CAGxTMS", Product(Cag, Tms)),
                term("CAGxAge", Product(Cag, Age)),
            ],
        }
    }

    /// The prognostic index: TMS, SDMT and CAP main effects.
    pub fn pin() -> Self {
        DesignSpec {
            name: DesignName::Pin,
            terms: vec![
                term("TMS", Transform::Identity(Covariate::Tms)),
                term("SDMT", Transform::Identity(Covariate::Sdmt)),
                term("CAP", Transform::Cap),
            ],
        }
    }

    pub fn term_names(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn label(&self) -> &str {
        match &self.name {
            DesignName::Mrs => "MRS",
            DesignName::Pin => "PIN",
            DesignName::Custom(s) => s,
        }
    }
}

/// Design matrix with one row per subject in cohort order.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub spec: DesignSpec,
    pub ids: Vec<String>,
    pub matrix: DMatrix<f64>,
}

pub fn build_design(spec: &DesignSpec, cohort: &Cohort) -> Result<Design> {
    let n = cohort.len();
    let p = spec.terms.len();
    let mut matrix = DMatrix::zeros(n, p);
    for (i, s) in cohort.subjects().iter().enumerate() {
        for (j, t) in spec.terms.iter().enumerate() {
            matrix[(i, j)] = t.transform.apply(s)?;
        }
    }
    Ok(Design {
        spec: spec.clone(),
        ids: cohort.subjects().iter().map(|s| s.id.clone()).collect(),
        matrix,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieMethod {
    #[default]
    Efron,
    Breslow,
}

#[derive(Debug, Clone, Copy)]
pub struct CoxOptions {
    pub ties: TieMethod,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Relative change in log partial likelihood declaring convergence.
    pub tolerance: f64,
    /// `|beta_j|` above this is treated as monotone likelihood.
    pub separation_bound: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            ties: TieMethod::Efron,
            max_iterations: 50,
            max_halvings: 10,
            tolerance: 1e-9,
            separation_bound: 50.0,
        }
    }
}

/// Breslow cumulative baseline hazard, a right-continuous step function.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineHazard {
    pub times: Vec<f64>,
    pub cumulative_hazard: Vec<f64>,
}

impl BaselineHazard {
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative_hazard[k - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub model: String,
    pub terms: Vec<String>,
    pub beta: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    pub baseline: BaselineHazard,
    pub loglik: Option<f64>,
    pub loglik_null: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub ties: TieMethod,
}

impl CoxFit {
    /// Fit from user-supplied coefficients keyed by term name. Every term of the
    /// design must be present and no other key is allowed.
    pub fn from_coefficients(spec: &DesignSpec, coefficients: &BTreeMap<String, f64>) -> Result<Self> {
        let names = spec.term_names();
        for key in coefficients.keys() {
            if !names.contains(&key.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "unknown {} coefficient `{key}`",
                    spec.label()
                )));
            }
        }
        let mut beta = Vec::with_capacity(names.len());
        for name in &names {
            match coefficients.get(*name) {
                Some(v) if v.is_finite() => beta.push(*v),
                Some(v) => {
                    return Err(Error::InvalidArgument(format!(
                        "{} coefficient `{name}` is not finite ({v})",
                        spec.label()
                    )))
                }
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "missing {} coefficient `{name}`",
                        spec.label()
                    )))
                }
            }
        }
        Ok(CoxFit {
            model: spec.label().to_string(),
            terms: names.iter().map(|s| s.to_string()).collect(),
            beta,
            std_errors: None,
            baseline: BaselineHazard::default(),
            loglik: None,
            loglik_null: None,
            iterations: 0,
            converged: true,
            ties: TieMethod::default(),
        })
    }

    pub fn coefficients(&self) -> BTreeMap<String, f64> {
        self.terms.iter().cloned().zip(self.beta.iter().copied()).collect()
    }
}

/// Subjects ordered by decreasing time, grouped by distinct time.
struct RiskOrder {
    order: Vec<usize>,
    /// `(start, end)` ranges into `order` sharing one time, latest first.
    groups: Vec<(usize, usize)>,
}

fn risk_order(time: &[f64]) -> RiskOrder {
    let mut order: Vec<usize> = (0..time.len()).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
    let mut groups = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && time[order[j]] == time[order[i]] {
            j += 1;
        }
        groups.push((i, j));
        i = j;
    }
    RiskOrder { order, groups }
}

struct PartialLik {
    loglik: f64,
    gradient: DVector<f64>,
    /// Negative Hessian (observed information).
    information: DMatrix<f64>,
}

fn partial_likelihood(
    x: &DMatrix<f64>,
    event: &[bool],
    ro: &RiskOrder,
    beta: &DVector<f64>,
    ties: TieMethod,
) -> PartialLik {
    let (n, p) = x.shape();
    let eta_raw = x * beta;
    let shift = eta_raw.sum() / n.max(1) as f64;
    let eta: Vec<f64> = eta_raw.iter().map(|e| e - shift).collect();

    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut loglik = 0.0;
    let mut gradient = DVector::zeros(p);
    let mut information = DMatrix::zeros(p, p);

    for &(start, end) in &ro.groups {
        let mut d = 0usize;
        let mut e0 = 0.0;
        let mut e1 = DVector::zeros(p);
        let mut e2 = DMatrix::zeros(p, p);
        for &i in &ro.order[start..end] {
            let w = eta[i].exp();
            let xi = x.row(i).transpose();
            s0 += w;
            s1.axpy(w, &xi, 1.0);
            s2.ger(w, &xi, &xi, 1.0);
            if event[i] {
                d += 1;
                loglik += eta[i];
                gradient += &xi;
                e0 += w;
                e1.axpy(w, &xi, 1.0);
                e2.ger(w, &xi, &xi, 1.0);
            }
        }
        for l in 0..d {
            let f = match ties {
                TieMethod::Efron => l as f64 / d as f64,
                TieMethod::Breslow => 0.0,
            };
            let a0 = s0 - f * e0;
            let a1 = &s1 - &e1 * f;
            let a2 = &s2 - &e2 * f;
            loglik -= a0.ln();
            gradient.axpy(-1.0 / a0, &a1, 1.0);
            information += a2 / a0;
            information.ger(-1.0 / (a0 * a0), &a1, &a1, 1.0);
        }
    }
    PartialLik {
        loglik,
        gradient,
        information,
    }
}

/// Solves `A x = b` for symmetric positive definite `A` after scaling to unit
/// diagonal. Returns `None` when `A` is numerically singular.
fn scaled_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let p = a.nrows();
    let d: Vec<f64> = (0..p).map(|j| a[(j, j)]).collect();
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return None;
    }
    let scale = DVector::from_iterator(p, d.iter().map(|v| 1.0 / v.sqrt()));
    let scaled = DMatrix::from_fn(p, p, |i, j| a[(i, j)] * scale[i] * scale[j]);
    let chol = scaled.cholesky()?;
    let l = chol.l_dirty();
    if (0..p).any(|j| l[(j, j)].powi(2) < 1e-12) {
        return None;
    }
    let y = chol.solve(&b.component_mul(&scale));
    let inv_scaled = chol.inverse();
    let inv = DMatrix::from_fn(p, p, |i, j| inv_scaled[(i, j)] * scale[i] * scale[j]);
    Some((y.component_mul(&scale), inv))
}

fn rank_deficiency(design: &Design, info: &DMatrix<f64>) -> Error {
    for (j, name) in design.spec.term_names().iter().enumerate() {
        if !(info[(j, j)] > 0.0) {
            return Error::RankDeficient(format!("column `{name}` has no variation within risk sets"));
        }
    }
    Error::RankDeficient("columns are linearly dependent on the event risk sets".into())
}

/// Maximum partial likelihood fit. Covariates are used on their raw scale.
pub fn cox_fit(design: &Design, cohort: &Cohort, opts: &CoxOptions) -> Result<CoxFit> {
    let n = cohort.len();
    if design.matrix.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: design.matrix.nrows(),
        });
    }
    if cohort.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let x = &design.matrix;
    let p = x.ncols();
    let time = cohort.times();
    let event = cohort.events();
    let ro = risk_order(&time);
    let names = design.spec.term_names();

    let mut beta = DVector::zeros(p);
    let mut cur = partial_likelihood(x, &event, &ro, &beta, opts.ties);
    let loglik_null = cur.loglik;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;
        let (step, _) = scaled_solve(&cur.information, &cur.gradient).ok_or_else(|| rank_deficiency(design, &cur.information))?;
        let mut scale = 1.0;
        let mut next = None;
        for _ in 0..=opts.max_halvings {
            let cand = &beta + &step * scale;
            let pl = partial_likelihood(x, &event, &ro, &cand, opts.ties);
            if pl.loglik.is_finite() && pl.loglik >= cur.loglik {
                next = Some((cand, pl));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, pl)) = next else {
            // no ascent direction left at working precision
            converged = true;
            break;
        };
        let change = (pl.loglik - cur.loglik).abs();
        beta = cand;
        cur = pl;
        if let Some(j) = beta.iter().position(|b| b.abs() > opts.separation_bound) {
            return Err(Error::Separation {
                column: names[j].to_string(),
            });
        }
        if change <= opts.tolerance * cur.loglik.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: format!("{} Cox fit", design.spec.label()),
            iterations,
        });
    }

    let mut solved = scaled_solve(&cur.information, &cur.gradient);
    // a converged likelihood whose Newton step is still large is flat along a
    // diverging direction
    if let Some((step, _)) = &solved {
        if let Some(j) = (0..p).find(|&j| step[j].abs() > 1e-2 * beta[j].abs().max(1.0)) {
            return Err(Error::Separation {
                column: names[j].to_string(),
            });
        }
    }
    // near the optimum loglik differences drown in rounding, so polish on the
    // score norm instead
    for _ in 0..3 {
        let Some((step, _)) = &solved else { break };
        let cand = &beta + step;
        let pl = partial_likelihood(x, &event, &ro, &cand, opts.ties);
        if !(pl.loglik.is_finite() && pl.gradient.norm() < cur.gradient.norm()) {
            break;
        }
        beta = cand;
        cur = pl;
        solved = scaled_solve(&cur.information, &cur.gradient);
    }
    let std_errors = solved.map(|(_, inv)| (0..p).map(|j| inv[(j, j)].max(0.0).sqrt()).collect());
    let baseline = breslow_baseline(x, &time, &event, &ro, &beta);

    Ok(CoxFit {
        model: design.spec.label().to_string(),
        terms: names.iter().map(|s| s.to_string()).collect(),
        beta: beta.iter().copied().collect(),
        std_errors,
        baseline,
        loglik: Some(cur.loglik),
        loglik_null: Some(loglik_null),
        iterations,
        converged,
        ties: opts.ties,
    })
}

fn breslow_baseline(x: &DMatrix<f64>, time: &[f64], event: &[bool], ro: &RiskOrder, beta: &DVector<f64>) -> BaselineHazard {
    let eta = x * beta;
    let mut s0 = 0.0;
    let mut jumps = Vec::new();
    for &(start, end) in &ro.groups {
        let mut d = 0usize;
        for &i in &ro.order[start..end] {
            s0 += eta[i].exp();
            d += usize::from(event[i]);
        }
        if d > 0 {
            jumps.push((time[ro.order[start]], d as f64 / s0));
        }
    }
    jumps.reverse();
    let mut acc = 0.0;
    let mut out = BaselineHazard::default();
    for (t, h) in jumps {
        acc += h;
        out.times.push(t);
        out.cumulative_hazard.push(acc);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskScore {
    pub id: String,
    pub score: f64,
}

/// Linear predictor `beta' Z` per design row.
pub fn linear_predictor(fit: &CoxFit, design: &Design) -> Result<Vec<f64>> {
    if design.matrix.ncols() != fit.beta.len() {
        return Err(Error::DimensionMismatch {
            expected: fit.beta.len(),
            actual: design.matrix.ncols(),
        });
    }
    let beta = DVector::from_column_slice(&fit.beta);
    Ok((&design.matrix * beta).iter().copied().collect())
}

pub fn cox_score(fit: &CoxFit, design: &Design) -> Result<Vec<RiskScore>> {
    Ok(linear_predictor(fit, design)?
        .into_iter()
        .zip(&design.ids)
        .map(|(score, id)| RiskScore { id: id.clone(), score })
        .collect())
}

//! Logistic age-at-diagnosis model with CAG-dependent mean and variance.
//!
//! Age at diagnosis given CAG is logistic with mean
//! `mu(CAG) = b0 + exp(b1 - b2 * CAG)` and variance
//! `sigma2(CAG) = g0 + exp(g1 - g2 * CAG)`. The likelihood is fit on the age at
//! the end of follow-up (`age_enroll + time`) without a left-truncation term.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::stats::softplus;

/// `pi / sqrt(3)`: converts a standard deviation into the logistic scale.
pub const LOGISTIC_SD: f64 = PI / 1.732_050_807_568_877_2;

/// CAG range over which the variance function must stay positive.
pub const SUPPORTED_CAG: std::ops::RangeInclusive<u32> = 40..=57;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangbehnParams {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub g0: f64,
    pub g1: f64,
    pub g2: f64,
}

impl LangbehnParams {
    pub fn mean_age(&self, cag: u32) -> f64 {
        self.b0 + (self.b1 - self.b2 * f64::from(cag)).exp()
    }

    pub fn variance(&self, cag: u32) -> f64 {
        self.g0 + (self.g1 - self.g2 * f64::from(cag)).exp()
    }

    /// Checks `b2 > 0`, `g2 > 0` and a positive variance over [`SUPPORTED_CAG`].
    pub fn validate(&self) -> Result<()> {
        if !(self.b2 > 0.0 && self.g2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Langbehn b2 and g2 must be positive (b2 = {}, g2 = {})",
                self.b2, self.g2
            )));
        }
        for cag in SUPPORTED_CAG {
            let v = self.variance(cag);
            if !(v > 0.0) {
                return Err(Error::NonPositiveVariance { cag, variance: v });
            }
        }
        Ok(())
    }

    /// Standardised logistic argument `(x - mu) / s` with `s = sigma * sqrt(3) / pi`.
    fn z(&self, x: f64, cag: u32) -> Result<f64> {
        let v = self.variance(cag);
        if !(v > 0.0) {
            return Err(Error::NonPositiveVariance { cag, variance: v });
        }
        Ok(LOGISTIC_SD * (x - self.mean_age(cag)) / v.sqrt())
    }

    /// Crude starting point: half of the mean event age goes to the asymptote
    /// `b0` and half to the exponential term at the mean CAG, likewise for the
    /// variance.
    pub fn initial_guess(cohort: &Cohort) -> Result<Self> {
        let ages: Vec<f64> = cohort
            .subjects()
            .iter()
            .filter(|s| s.event)
            .map(|s| s.exit_age())
            .collect();
        if ages.is_empty() {
            return Err(Error::NoEvents);
        }
        let m = ages.iter().sum::<f64>() / ages.len() as f64;
        let v = if ages.len() > 1 {
            ages.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (ages.len() - 1) as f64
        } else {
            25.0
        }
        .max(1.0);
        let cag_bar = mean_cag(cohort);
        let (b2, g2) = (0.15, 0.3);
        Ok(LangbehnParams {
            b0: 0.5 * m,
            b1: (0.5 * m).ln() + b2 * cag_bar,
            b2,
            g0: 0.5 * v,
            g1: (0.5 * v).ln() + g2 * cag_bar,
            g2,
        })
    }
}

fn mean_cag(cohort: &Cohort) -> f64 {
    cohort.subjects().iter().map(|s| f64::from(s.cag)).sum::<f64>() / cohort.len().max(1) as f64
}

/// `P(X <= x | CAG)`.
pub fn langbehn_cdf(params: &LangbehnParams, x: f64, cag: u32) -> Result<f64> {
    let z = params.z(x, cag)?;
    Ok(crate::stats::logistic(z))
}

/// `P(X <= x_f | CAG, X > x_c) = 1 - (1 - F(x_f)) / (1 - F(x_c))`.
pub fn langbehn_conditional(params: &LangbehnParams, x_c: f64, x_f: f64, cag: u32) -> Result<f64> {
    if x_f < x_c {
        return Err(Error::InvalidArgument(format!(
            "horizon age {x_f} precedes current age {x_c}"
        )));
    }
    let log_surv_c = -softplus(params.z(x_c, cag)?);
    if log_surv_c.exp() <= f64::EPSILON {
        return Err(Error::BeyondSupport { age: x_c });
    }
    let log_surv_f = -softplus(params.z(x_f, cag)?);
    Ok((-(log_surv_f - log_surv_c).exp_m1()).clamp(0.0, 1.0))
}

/// Censored log-likelihood `sum delta * ln f(a) + (1 - delta) * ln S(a)` at
/// exit ages `a`.
pub fn log_likelihood(params: &LangbehnParams, cohort: &Cohort) -> f64 {
    LikelihoodData::new(cohort).eval(params)
}

/// Exit ages grouped by CAG so the mean and variance functions are evaluated
/// once per distinct repeat length.
struct LikelihoodData {
    groups: Vec<(u32, Vec<(f64, bool)>)>,
    cag_bar: f64,
}

impl LikelihoodData {
    fn new(cohort: &Cohort) -> Self {
        let mut groups: std::collections::BTreeMap<u32, Vec<(f64, bool)>> = Default::default();
        for s in cohort.subjects() {
            groups.entry(s.cag).or_default().push((s.exit_age(), s.event));
        }
        LikelihoodData {
            groups: groups.into_iter().collect(),
            cag_bar: mean_cag(cohort),
        }
    }

    fn eval(&self, p: &LangbehnParams) -> f64 {
        let mut total = 0.0;
        for (cag, obs) in &self.groups {
            let v = p.variance(*cag);
            if !(v > 0.0) || !v.is_finite() {
                return f64::NEG_INFINITY;
            }
            let scale = v.sqrt() / LOGISTIC_SD;
            let mu = p.mean_age(*cag);
            let log_scale = scale.ln();
            for &(age, event) in obs {
                let z = (age - mu) / scale;
                total += if event {
                    -log_scale - z - 2.0 * softplus(-z)
                } else {
                    -softplus(z)
                };
            }
        }
        total
    }
}

/// One point of the `b2` profile likelihood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub b2: f64,
    pub loglik: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LangbehnFit {
    pub params: LangbehnParams,
    pub loglik: f64,
    pub profile: Vec<ProfilePoint>,
}

#[derive(Debug, Clone)]
pub struct LangbehnFitOptions {
    pub b2_grid: Vec<f64>,
    pub optimizer: NelderMeadOptions,
}

impl Default for LangbehnFitOptions {
    fn default() -> Self {
        LangbehnFitOptions {
            b2_grid: default_b2_grid(),
            optimizer: NelderMeadOptions::default(),
        }
    }
}

/// 50 log-spaced points on `[0.05, 0.5]`.
pub fn default_b2_grid() -> Vec<f64> {
    log_grid(0.05, 0.5, 50)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Maximum likelihood by profiling over a grid of `b2` values.
///
/// For each grid value the other five parameters are optimised by
/// Nelder-Mead, starting from `init` with `b1` shifted so that the
/// exponential term at the mean CAG is unchanged. The grid point with the
/// highest profile log-likelihood is returned; grid points whose optimiser did
/// not converge are excluded.
pub fn langbehn_fit(cohort: &Cohort, init: &LangbehnParams, opts: &LangbehnFitOptions) -> Result<LangbehnFit> {
    if opts.b2_grid.is_empty() || opts.b2_grid.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::InvalidArgument("b2 grid must be non-empty and positive".into()));
    }
    if cohort.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let data = LikelihoodData::new(cohort);
    let cag_bar = data.cag_bar;
    let b1_centered = init.b1 - init.b2 * cag_bar;
    let g1_centered = init.g1 - init.g2 * cag_bar;

    let unpack = |b2: f64, x: &[f64]| LangbehnParams {
        b0: x[0],
        b1: x[1] + b2 * cag_bar,
        b2,
        g0: x[2],
        g1: x[3] + x[4] * cag_bar,
        g2: x[4],
    };

    let fits: Vec<(ProfilePoint, LangbehnParams)> = opts
        .b2_grid
        .par_iter()
        .map(|&b2| {
            let x0 = [init.b0, b1_centered, init.g0, g1_centered, init.g2];
            let steps = [
                (0.1 * init.b0.abs()).max(1.0),
                0.2,
                (0.1 * init.g0.abs()).max(1.0),
                0.3,
                0.05,
            ];
            let min = nelder_mead(|x| -data.eval(&unpack(b2, x)), &x0, &steps, &opts.optimizer);
            let params = unpack(b2, &min.x);
            (
                ProfilePoint {
                    b2,
                    loglik: -min.value,
                    converged: min.converged && min.value.is_finite(),
                },
                params,
            )
        })
        .collect();

    let best = fits
        .iter()
        .filter(|(p, _)| p.converged)
        .max_by(|a, b| a.0.loglik.total_cmp(&b.0.loglik))
        .ok_or_else(|| Error::NonConvergence {
            what: "Langbehn profile likelihood (every b2 grid point)".into(),
            iterations: opts.optimizer.max_iterations,
        })?;
    Ok(LangbehnFit {
        params: best.1,
        loglik: best.0.loglik,
        profile: fits.iter().map(|(p, _)| p.clone()).collect(),
    })
}

/// Conditional diagnosis probability within `horizon` years of enrollment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LangbehnScore {
    pub id: String,
    pub current_age: f64,
    pub horizon_age: f64,
    pub conditional_probability: f64,
}

pub fn langbehn_score(params: &LangbehnParams, cohort: &Cohort, horizon: f64) -> Result<Vec<LangbehnScore>> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    cohort
        .subjects()
        .iter()
        .map(|s| {
            let x_f = s.age_enroll + horizon;
            Ok(LangbehnScore {
                id: s.id.clone(),
                current_age: s.age_enroll,
                horizon_age: x_f,
                conditional_probability: langbehn_conditional(params, s.age_enroll, x_f, s.cag)?,
            })
        })
        .collect()
}

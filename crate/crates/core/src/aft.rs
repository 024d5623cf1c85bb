//! CAP model: log-logistic accelerated failure time regression
//! `log X = b0 + b1 * Age * (CAG + b2) + sigma * eps`, eps standard logistic.
//!
//! The model is linear in `c1 = b1` and `c2 = b1 * b2`, so it is fit on the
//! design `{Age * CAG, Age}` and converted afterwards.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::stats::{logistic, softplus};

/// CAP transform `Age * (CAG - 34)`.
pub fn cap_transform(age: f64, cag: u32) -> f64 {
    age * (f64::from(cag) - 34.0)
}

/// Published-parameter block for the CAP model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapParams {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AftStdErrors {
    pub b0: f64,
    pub b1: f64,
    pub b2: Option<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AftFit {
    pub b0: f64,
    /// Coefficient of `Age * CAG` (equals `c1`).
    pub b1: f64,
    /// `c2 / c1`; absent when `c1 == 0`.
    pub b2: Option<f64>,
    pub c1: f64,
    pub c2: f64,
    pub sigma: f64,
    pub loglik: Option<f64>,
    pub iterations: usize,
    /// Wald standard errors from the observed information (delta method for
    /// `b2` and `sigma`).
    pub std_errors: Option<AftStdErrors>,
}

/// Log-logistic survival with median `exp(lp)`: `1 / (1 + (t / e^lp)^(1/sigma))`.
pub fn log_logistic_survival(t: f64, lp: f64, sigma: f64) -> f64 {
    1.0 - logistic((t.ln() - lp) / sigma)
}

impl AftFit {
    pub fn from_params(p: &CapParams) -> Result<Self> {
        if !(p.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("CAP sigma must be positive, got {}", p.sigma)));
        }
        Ok(AftFit {
            b0: p.b0,
            b1: p.b1,
            b2: Some(p.b2),
            c1: p.b1,
            c2: p.b1 * p.b2,
            sigma: p.sigma,
            loglik: None,
            iterations: 0,
            std_errors: None,
        })
    }

    pub fn params(&self) -> Option<CapParams> {
        self.b2.map(|b2| CapParams {
            b0: self.b0,
            b1: self.b1,
            b2,
            sigma: self.sigma,
        })
    }

    /// AFT linear predictor (log-time scale) in the linear parametrisation.
    pub fn linear_predictor(&self, age: f64, cag: u32) -> f64 {
        self.b0 + self.c1 * age * f64::from(cag) + self.c2 * age
    }

    pub fn survival(&self, t: f64, age: f64, cag: u32) -> f64 {
        log_logistic_survival(t, self.linear_predictor(age, cag), self.sigma)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AftOptions {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for AftOptions {
    fn default() -> Self {
        AftOptions {
            gradient_tolerance: 1e-9,
            max_iterations: 200,
        }
    }
}

struct Scaled {
    y: Vec<f64>,
    x1: Vec<f64>,
    x2: Vec<f64>,
    event: Vec<bool>,
    mean: [f64; 2],
    sd: [f64; 2],
}

fn standardise(v: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    let s = if sd > 0.0 { sd } else { 1.0 };
    (v.iter().map(|x| (x - m) / s).collect(), m, s)
}

/// Log-likelihood, gradient and Hessian in `(a0, a1, a2, log sigma)` on the
/// standardised design. Includes the `-log t` Jacobian for events so the value
/// is on the time scale.
fn evaluate(d: &Scaled, theta: &Vector4<f64>) -> (f64, Vector4<f64>, Matrix4<f64>) {
    let sigma = theta[3].exp();
    let mut ll = 0.0;
    let mut g = Vector4::zeros();
    let mut h = Matrix4::zeros();
    for i in 0..d.y.len() {
        let x = [1.0, d.x1[i], d.x2[i]];
        let lp = theta[0] + theta[1] * x[0 + 1] + theta[2] * x[2];
        let z = (d.y[i] - lp) / sigma;
        let p = logistic(z);
        let (dz, d2z) = if d.event[i] {
            ll += -theta[3] + z - 2.0 * softplus(z) - d.y[i];
            (1.0 - 2.0 * p, -2.0 * p * (1.0 - p))
        } else {
            ll += -softplus(z);
            (-p, -p * (1.0 - p))
        };
        for a in 0..3 {
            g[a] += -dz * x[a] / sigma;
            for b in 0..3 {
                h[(a, b)] += d2z * x[a] * x[b] / (sigma * sigma);
            }
            h[(a, 3)] += x[a] / sigma * (d2z * z + dz);
        }
        g[3] += -dz * z - if d.event[i] { 1.0 } else { 0.0 };
        h[(3, 3)] += d2z * z * z + dz * z;
    }
    for a in 0..3 {
        h[(3, a)] = h[(a, 3)];
    }
    (ll, g, h)
}

/// Censored log-logistic AFT maximum likelihood on `{Age * CAG, Age}`.
///
/// Newton-Raphson with step halving on standardised covariates, started from
/// least squares of `log W` on the uncensored subjects.
pub fn aft_fit(cohort: &Cohort, opts: &AftOptions) -> Result<AftFit> {
    if cohort.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let subjects = cohort.subjects();
    let ages: Vec<f64> = subjects.iter().map(|s| s.age_enroll).collect();
    let age_cag: Vec<f64> = subjects.iter().map(|s| s.age_enroll * f64::from(s.cag)).collect();
    let (x1, m1, s1) = standardise(&age_cag);
    let (x2, m2, s2) = standardise(&ages);
    let corr = x1.iter().zip(&x2).map(|(a, b)| a * b).sum::<f64>() / x1.len() as f64;
    if 1.0 - corr.abs() < 1e-10 {
        return Err(Error::RankDeficient("Age*CAG and Age are collinear".into()));
    }
    let data = Scaled {
        y: subjects.iter().map(|s| s.time.ln()).collect(),
        x1,
        x2,
        event: subjects.iter().map(|s| s.event).collect(),
        mean: [m1, m2],
        sd: [s1, s2],
    };

    let mut theta = initial_theta(&data);
    let (mut ll, mut g, mut h) = evaluate(&data, &theta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        if g.norm() < opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let neg_h = -h;
        let step = match neg_h.cholesky() {
            Some(ch) => ch.solve(&g),
            // away from the optimum the Hessian can be indefinite; fall back to
            // a scaled gradient step
            None => g / (neg_h.diagonal().abs().max().max(1.0)),
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = theta + step * scale;
            let (cll, cg, ch) = evaluate(&data, &cand);
            if cll.is_finite() && cll >= ll - 1e-12 * ll.abs() {
                theta = cand;
                ll = cll;
                g = cg;
                h = ch;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // no ascent is possible at working precision
            converged = g.norm() < 1e-6 * (data.y.len() as f64).sqrt();
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "log-logistic AFT fit".into(),
            iterations,
        });
    }

    let c1 = theta[1] / data.sd[0];
    let c2 = theta[2] / data.sd[1];
    let b0 = theta[0] - c1 * data.mean[0] - c2 * data.mean[1];
    let sigma = theta[3].exp();
    let b2 = if c1 != 0.0 && (c2 / c1).is_finite() {
        Some(c2 / c1)
    } else {
        log::warn!("CAP fit has a zero Age*CAG coefficient; the CAG offset b2 is undefined");
        None
    };

    let std_errors = (-h).try_inverse().map(|cov| {
        let mut j = DMatrix::<f64>::zeros(4, 4);
        j[(0, 0)] = 1.0;
        j[(0, 1)] = -data.mean[0] / data.sd[0];
        j[(0, 2)] = -data.mean[1] / data.sd[1];
        j[(1, 1)] = 1.0 / data.sd[0];
        if b2.is_some() {
            j[(2, 1)] = -c2 / (c1 * c1 * data.sd[0]);
            j[(2, 2)] = 1.0 / (c1 * data.sd[1]);
        }
        j[(3, 3)] = sigma;
        let cov = DMatrix::from_iterator(4, 4, cov.iter().copied());
        let out = &j * cov * j.transpose();
        let se = |k: usize| out[(k, k)].max(0.0).sqrt();
        AftStdErrors {
            b0: se(0),
            b1: se(1),
            b2: b2.map(|_| se(2)),
            sigma: se(3),
        }
    });

    Ok(AftFit {
        b0,
        b1: c1,
        b2,
        c1,
        c2,
        sigma,
        loglik: Some(ll),
        iterations,
        std_errors,
    })
}

fn initial_theta(d: &Scaled) -> Vector4<f64> {
    let rows: Vec<usize> = {
        let ev: Vec<usize> = (0..d.y.len()).filter(|&i| d.event[i]).collect();
        if ev.len() >= 4 {
            ev
        } else {
            (0..d.y.len()).collect()
        }
    };
    let x = DMatrix::from_fn(rows.len(), 3, |r, c| match c {
        0 => 1.0,
        1 => d.x1[rows[r]],
        _ => d.x2[rows[r]],
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| d.y[i]));
    let xtx = x.transpose() * &x;
    let beta = xtx
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&(x.transpose() * &y)))
        .unwrap_or_else(|| DVector::from_vec(vec![y.mean(), 0.0, 0.0]));
    let resid = &y - &x * &beta;
    let sd = (resid.norm_squared() / rows.len() as f64).sqrt().max(0.05);
    Vector4::new(beta[0], beta[1], beta[2], (sd * 3f64.sqrt() / std::f64::consts::PI).ln())
}

/// CAP risk score: the negated AFT linear predictor, so larger is riskier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapScore {
    pub id: String,
    pub score: f64,
}

pub fn cap_score(fit: &AftFit, cohort: &Cohort) -> Result<Vec<CapScore>> {
    let b2 = fit.b2.ok_or(Error::UndefinedOffset)?;
    Ok(cohort
        .subjects()
        .iter()
        .map(|s| CapScore {
            id: s.id.clone(),
            score: -(fit.b0 + fit.b1 * s.age_enroll * (f64::from(s.cag) + b2)),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::subject;
    use rand::{Rng, SeedableRng};

    #[test]
    fn cap_transform_values() {
        assert_eq!(cap_transform(40.0, 44), 400.0);
        assert_eq!(cap_transform(30.0, 42), 240.0);
        assert_eq!(cap_transform(55.5, 34), 0.0);
    }

    #[test]
    fn reparametrisation_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let b1: f64 = rng.random_range(-0.02..0.02);
            let b2: f64 = rng.random_range(-40.0..-20.0);
            let age: f64 = rng.random_range(18.0..80.0);
            let cag: f64 = rng.random_range(36.0..60.0);
            let (c1, c2) = (b1, b1 * b2);
            let lhs = b1 * (age * cag) + (b1 * b2) * age;
            let rhs = c1 * (age * cag) + c2 * age;
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn median_at_linear_predictor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let lp: f64 = rng.random_range(-2.0..4.0);
            let sigma: f64 = rng.random_range(0.05..2.0);
            let t: f64 = rng.random_range(0.1..50.0);
            assert!((log_logistic_survival(lp.exp(), lp, sigma) - 0.5).abs() < 1e-12);
            let closed = 1.0 / (1.0 + (t / lp.exp()).powf(1.0 / sigma));
            assert!((log_logistic_survival(t, lp, sigma) - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn score_is_negated_predictor() {
        let fit = AftFit::from_params(&CapParams {
            b0: 4.5,
            b1: -0.0065,
            b2: -34.0,
            sigma: 0.3,
        })
        .unwrap();
        let subjects: Vec<_> = (0..10)
            .map(|i| {
                let mut s = subject(&format!("s{i}"), 1.0, false);
                s.age_enroll = 25.0 + 3.0 * i as f64;
                s.cag = 40 + i as u32;
                s
            })
            .collect();
        let cohort = Cohort::new(subjects, "t").unwrap();
        let scores = cap_score(&fit, &cohort).unwrap();
        for (sc, s) in scores.iter().zip(cohort.subjects()) {
            let expect = -(4.5 - 0.0065 * s.age_enroll * (f64::from(s.cag) - 34.0));
            assert!((sc.score - expect).abs() < 1e-12);
        }
        // older subject with the same CAG is riskier when b1 < 0
        let mut young = subject("y", 1.0, false);
        young.age_enroll = 30.0;
        let mut old = subject("o", 1.0, false);
        old.age_enroll = 50.0;
        let pair = Cohort::new(vec![young, old], "t").unwrap();
        let s = cap_score(&fit, &pair).unwrap();
        assert!(s[1].score > s[0].score);
    }

    #[test]
    fn undefined_offset_is_rejected() {
        let mut fit = AftFit::from_params(&CapParams {
            b0: 1.0,
            b1: 0.0,
            b2: 0.0,
            sigma: 1.0,
        })
        .unwrap();
        fit.b2 = None;
        let cohort = Cohort::new(vec![subject("a", 1.0, true)], "t").unwrap();
        assert!(matches!(cap_score(&fit, &cohort), Err(Error::UndefinedOffset)));
        assert!(AftFit::from_params(&CapParams { b0: 1.0, b1: 1.0, b2: 1.0, sigma: 0.0 }).is_err());
    }

    fn simulated(n: usize, seed: u64) -> Cohort {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let subjects = (0..n)
            .map(|i| {
                let mut s = subject(&format!("s{i}"), 1.0, false);
                s.age_enroll = rng.random_range(20.0..60.0);
                s.cag = rng.random_range(40..52);
                let lp = 4.5 - 0.0065 * s.age_enroll * (f64::from(s.cag) - 34.0);
                let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
                let x = (lp + 0.3 * (u / (1.0 - u)).ln()).exp();
                let c = rng.random_range(1.0..12.0);
                s.time = x.min(c);
                s.event = x <= c;
                s
            })
            .collect();
        Cohort::new(subjects, "sim").unwrap()
    }

    #[test]
    fn duplicated_cohort_gives_same_estimates() {
        let cohort = simulated(300, 3);
        let fit = aft_fit(&cohort, &AftOptions::default()).unwrap();
        let mut doubled: Vec<_> = cohort.subjects().to_vec();
        for s in cohort.subjects() {
            let mut d = s.clone();
            d.id.push_str("_dup");
            doubled.push(d);
        }
        let doubled = Cohort::new(doubled, "dup").unwrap();
        let fit2 = aft_fit(&doubled, &AftOptions::default()).unwrap();
        assert!((fit.b0 - fit2.b0).abs() < 1e-7);
        assert!((fit.c1 - fit2.c1).abs() < 1e-10);
        assert!((fit.c2 - fit2.c2).abs() < 1e-9);
        assert!((fit.sigma - fit2.sigma).abs() < 1e-8);
        assert!((2.0 * fit.loglik.unwrap() - fit2.loglik.unwrap()).abs() < 1e-6);
    }

    #[test]
    fn loglik_is_order_invariant() {
        let cohort = simulated(200, 5);
        let fit = aft_fit(&cohort, &AftOptions::default()).unwrap();
        let mut reversed: Vec<_> = cohort.subjects().to_vec();
        reversed.reverse();
        let fit2 = aft_fit(&Cohort::new(reversed, "r").unwrap(), &AftOptions::default()).unwrap();
        assert!((fit.loglik.unwrap() - fit2.loglik.unwrap()).abs() < 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cohort = simulated(100, 9);
        let subjects = cohort.subjects();
        let (x1, m1, s1) = standardise(&subjects.iter().map(|s| s.age_enroll * f64::from(s.cag)).collect::<Vec<_>>());
        let (x2, m2, s2) = standardise(&subjects.iter().map(|s| s.age_enroll).collect::<Vec<_>>());
        let d = Scaled {
            y: subjects.iter().map(|s| s.time.ln()).collect(),
            x1,
            x2,
            event: subjects.iter().map(|s| s.event).collect(),
            mean: [m1, m2],
            sd: [s1, s2],
        };
        let theta = Vector4::new(1.5, -0.3, 0.2, -0.8);
        let (_, g, h) = evaluate(&d, &theta);
        let eps = 1e-6;
        for k in 0..4 {
            let mut up = theta;
            up[k] += eps;
            let mut dn = theta;
            dn[k] -= eps;
            let (lu, gu, _) = evaluate(&d, &up);
            let (ld, gd, _) = evaluate(&d, &dn);
            assert!(((lu - ld) / (2.0 * eps) - g[k]).abs() < 1e-5 * g[k].abs().max(1.0));
            for j in 0..4 {
                let fd = (gu[j] - gd[j]) / (2.0 * eps);
                assert!((fd - h[(j, k)]).abs() < 1e-4 * h[(j, k)].abs().max(1.0), "h[{j},{k}]");
            }
        }
    }
}

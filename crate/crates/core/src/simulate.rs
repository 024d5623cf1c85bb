//! Synthetic prodromal cohorts with known ground truth.
//!
//! Covariates are calibrated to the overall means of a typical analytic sample
//! (about 3100 subjects, 40-57 CAG repeats). A single latent severity, tied to
//! the CAG-age product, drives TMS upwards and SDMT, Stroop and DCL in their
//! clinical directions so the covariates are realistically correlated. Event
//! times come from one of three truth models; censoring is administrative plus
//! an independent exponential dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aft::cap_transform;
use crate::cohort::{Cohort, Sex, Subject};
use crate::cox::DesignSpec;
use crate::error::{Error, Result};
use crate::langbehn::{LangbehnParams, LOGISTIC_SD};
use crate::stats::{normal_cdf, normal_quantile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateSpec {
    pub age_mean: f64,
    pub age_sd: f64,
    /// Age is truncated symmetrically about its mean, to at most two SDs and
    /// never below this value.
    pub age_min: f64,
    pub cag_mean: f64,
    pub cag_sd: f64,
    pub cag_min: u32,
    pub cag_max: u32,
    /// Correlation between the latent severity and the standardised CAG-age product.
    pub severity_cap_correlation: f64,
    pub tms_mean: f64,
    pub tms_sd: f64,
    pub tms_loading: f64,
    pub sdmt_mean: f64,
    pub sdmt_sd: f64,
    pub sdmt_loading: f64,
    pub stroop_word_mean: f64,
    pub stroop_word_sd: f64,
    pub stroop_color_mean: f64,
    pub stroop_color_sd: f64,
    pub stroop_interference_mean: f64,
    pub stroop_interference_sd: f64,
    pub stroop_loading: f64,
    /// Marginal probabilities of DCL 0..=3.
    pub dcl_probs: [f64; 4],
    pub dcl_loading: f64,
    pub male_prob: f64,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        CovariateSpec {
            age_mean: 38.07,
            age_sd: 10.83,
            age_min: 18.0,
            cag_mean: 43.41,
            cag_sd: 2.43,
            cag_min: 40,
            cag_max: 57,
            severity_cap_correlation: 0.45,
            tms_mean: 4.16,
            tms_sd: 6.38,
            tms_loading: 0.7,
            sdmt_mean: 48.06,
            sdmt_sd: 12.83,
            sdmt_loading: 0.6,
            stroop_word_mean: 90.89,
            stroop_word_sd: 19.38,
            stroop_color_mean: 70.83,
            stroop_color_sd: 15.75,
            stroop_interference_mean: 42.51,
            stroop_interference_sd: 11.89,
            stroop_loading: 0.55,
            dcl_probs: [0.5255, 0.2480, 0.1192, 0.1073],
            dcl_loading: 0.7,
            male_prob: 0.4128,
        }
    }
}

/// Event-time generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthModel {
    /// `log X = b0 + b1 Age (CAG + b2) + sigma eps`, eps standard logistic.
    Aft { b0: f64, b1: f64, b2: f64, sigma: f64 },
    /// Proportional hazards on the MRS design with a Weibull baseline:
    /// `H(t | z) = (t / scale)^shape exp(intercept + beta' z)`.
    CoxMrs {
        beta: Vec<f64>,
        intercept: f64,
        shape: f64,
        scale: f64,
    },
    /// Logistic age at diagnosis. Diagnoses may precede the nominal entry age;
    /// such subjects are enrolled at half their diagnosis age, so the
    /// observation is a plain right-censored age without truncation.
    Langbehn(LangbehnParams),
}

impl TruthModel {
    /// A proportional-hazards truth in which every MRS term matters, with an
    /// intercept placing a subject at the covariate means near the middle of
    /// the risk distribution.
    pub fn mrs_like() -> Self {
        TruthModel::CoxMrs {
            beta: vec![
                0.35, 0.75, 1.1, // DCL1..3
                0.2, -0.012, -0.006, -0.012, -0.035, // TMS, Color, Word, Interference, SDMT
                0.12, 0.035, // CAG, Age
                -0.0016, -0.0012, 0.0028, // TMS^2, CAGxTMS, CAGxAge
            ],
            intercept: -10.0,
            shape: 1.3,
            scale: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensoringSpec {
    /// Administrative end of follow-up, years after enrollment.
    pub horizon: f64,
    /// Exponential dropout hazard per year.
    pub dropout_hazard: f64,
    /// When set, the dropout hazard is calibrated to reach this censoring rate.
    pub target_rate: Option<f64>,
}

impl Default for CensoringSpec {
    fn default() -> Self {
        CensoringSpec {
            horizon: 8.0,
            dropout_hazard: 0.0,
            target_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub covariates: CovariateSpec,
    pub truth: TruthModel,
    #[serde(default)]
    pub censoring: CensoringSpec,
}

/// Seed used for every censoring calibration run.
pub const CALIBRATION_SEED: u64 = 0x00C0_FFEE;
pub const CALIBRATION_N: usize = 20_000;

struct Derived {
    age_lo: f64,
    age_hi: f64,
    cag_cdf: Vec<f64>,
    cap_mean: f64,
    cap_sd: f64,
    tms_mu: f64,
    tms_s: f64,
    dcl_cuts: [f64; 3],
}

/// Probabilities of `lo..=hi` under a normal density evaluated at the integers.
fn discrete_normal(m: f64, s: f64, lo: u32, hi: u32) -> Vec<f64> {
    let w: Vec<f64> = (lo..=hi).map(|k| (-0.5 * ((f64::from(k) - m) / s).powi(2)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn pmf_mean(p: &[f64], lo: u32) -> f64 {
    p.iter().enumerate().map(|(i, q)| q * f64::from(lo + i as u32)).sum()
}

fn validate(spec: &SimSpec) -> Result<()> {
    let c = &spec.covariates;
    let bad = |m: &str| Err(Error::InvalidArgument(format!("simulation spec: {m}")));
    if spec.n == 0 {
        return bad("n must be positive");
    }
    if !(spec.censoring.horizon > 0.0) {
        return bad("censoring horizon must be positive");
    }
    if !(spec.censoring.dropout_hazard >= 0.0 && spec.censoring.dropout_hazard.is_finite()) {
        return bad("dropout hazard must be finite and non-negative");
    }
    if (c.dcl_probs.iter().sum::<f64>() - 1.0).abs() > 1e-6 || c.dcl_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return bad("dcl_probs must be probabilities summing to 1");
    }
    if !(0.0..=1.0).contains(&c.male_prob) {
        return bad("male_prob must be a probability");
    }
    for (name, l) in [
        ("severity_cap_correlation", c.severity_cap_correlation),
        ("tms_loading", c.tms_loading),
        ("sdmt_loading", c.sdmt_loading),
        ("stroop_loading", c.stroop_loading),
        ("dcl_loading", c.dcl_loading),
    ] {
        if !(-1.0..=1.0).contains(&l) {
            return bad(&format!("{name} must lie in [-1, 1]"));
        }
    }
    if c.cag_min > c.cag_max || !(c.cag_sd > 0.0) || !(c.age_sd > 0.0) || !(c.tms_mean > 0.0) {
        return bad("covariate location/scale parameters are invalid");
    }
    if !(c.age_mean > c.age_min) {
        return bad("age_mean must exceed age_min");
    }
    match &spec.truth {
        TruthModel::Aft { sigma, .. } if !(*sigma > 0.0) => bad("AFT sigma must be positive"),
        TruthModel::CoxMrs { beta, shape, scale, .. } => {
            if beta.len() != DesignSpec::mrs().terms.len() {
                return bad("CoxMrs beta must have 13 entries in MRS term order");
            }
            if !(*shape > 0.0 && *scale > 0.0) {
                return bad("Weibull shape and scale must be positive");
            }
            Ok(())
        }
        TruthModel::Langbehn(p) => p.validate(),
        _ => Ok(()),
    }
}

fn derive(c: &CovariateSpec) -> Derived {
    let half = (2.0 * c.age_sd).min(c.age_mean - c.age_min);
    let a = half / c.age_sd;
    let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let age_var = c.age_sd.powi(2) * (1.0 - 2.0 * a * phi / (2.0 * normal_cdf(a) - 1.0));

    // latent location giving the truncated discrete distribution the target mean
    let (mut lo, mut hi) = (f64::from(c.cag_min) - 30.0, f64::from(c.cag_max) + 30.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pmf_mean(&discrete_normal(mid, c.cag_sd, c.cag_min, c.cag_max), c.cag_min) < c.cag_mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let pmf = discrete_normal(0.5 * (lo + hi), c.cag_sd, c.cag_min, c.cag_max);
    let mut acc = 0.0;
    let cag_cdf: Vec<f64> = pmf
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    let (mut e1, mut e2) = (0.0, 0.0);
    for (i, p) in pmf.iter().enumerate() {
        let x = f64::from(c.cag_min + i as u32) - 34.0;
        e1 += p * x;
        e2 += p * x * x;
    }
    let a1 = c.age_mean;
    let a2 = age_var + a1 * a1;
    let cap_mean = a1 * e1;
    let cap_sd = (a2 * e2 - cap_mean * cap_mean).max(1e-12).sqrt();

    let tms_s = (1.0 + (c.tms_sd / c.tms_mean).powi(2)).ln().sqrt();
    let tms_mu = c.tms_mean.ln() - tms_s * tms_s / 2.0;
    let mut cum = 0.0;
    let mut dcl_cuts = [0.0; 3];
    for (k, cut) in dcl_cuts.iter_mut().enumerate() {
        cum += c.dcl_probs[k];
        *cut = if cum <= 0.0 {
            f64::NEG_INFINITY
        } else if cum >= 1.0 {
            f64::INFINITY
        } else {
            normal_quantile(cum)
        };
    }
    Derived {
        age_lo: c.age_mean - half,
        age_hi: c.age_mean + half,
        cag_cdf,
        cap_mean,
        cap_sd,
        tms_mu,
        tms_s,
        dcl_cuts,
    }
}

/// Covariates plus the uniform draws that fix the event and dropout times.
struct Draw {
    subject: Subject,
    event_u: f64,
    dropout_e: f64,
}

fn draw_subject(i: usize, spec: &SimSpec, d: &Derived) -> Draw {
    let c = &spec.covariates;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64);

    let age = loop {
        let a = c.age_mean + c.age_sd * rng.sample::<f64, _>(StandardNormal);
        if (d.age_lo..=d.age_hi).contains(&a) {
            break a;
        }
    };
    let u: f64 = rng.random();
    let cag = c.cag_min + d.cag_cdf.partition_point(|&p| p < u).min(d.cag_cdf.len() - 1) as u32;
    let male = rng.random::<f64>() < c.male_prob;
    let event_u: f64 = rng.random_range(f64::EPSILON..1.0);
    let dropout_e: f64 = rng.sample(Exp1);

    let rho = c.severity_cap_correlation;
    let z_cap = (cap_transform(age, cag) - d.cap_mean) / d.cap_sd;
    let latent = rho * z_cap + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
    let mut linked = |loading: f64| loading * latent + (1.0 - loading * loading).sqrt() * rng.sample::<f64, _>(StandardNormal);

    let tms = (d.tms_mu + d.tms_s * linked(c.tms_loading)).exp();
    let sdmt = (c.sdmt_mean - c.sdmt_sd * linked(c.sdmt_loading)).max(0.0);
    let word = (c.stroop_word_mean - c.stroop_word_sd * linked(c.stroop_loading)).max(0.0);
    let color = (c.stroop_color_mean - c.stroop_color_sd * linked(c.stroop_loading)).max(0.0);
    let interference =
        (c.stroop_interference_mean - c.stroop_interference_sd * linked(c.stroop_loading)).max(0.0);
    let dl = linked(c.dcl_loading);
    let dcl = d.dcl_cuts.iter().filter(|&&cut| dl > cut).count() as u8;

    Draw {
        subject: Subject {
            id: format!("sim{:06}", i + 1),
            age_enroll: age,
            cag,
            dcl: Some(dcl),
            tms: Some(tms),
            sdmt: Some(sdmt),
            stroop_word: Some(word),
            stroop_color: Some(color),
            stroop_interference: Some(interference),
            sex: Some(if male { Sex::Male } else { Sex::Female }),
            time: 0.0,
            event: false,
        },
        event_u,
        dropout_e,
    }
}

fn mrs_row(s: &Subject) -> [f64; 13] {
    let dcl = s.dcl.unwrap_or(0);
    let tms = s.tms.unwrap_or(0.0);
    let cag = f64::from(s.cag);
    [
        f64::from(u8::from(dcl == 1)),
        f64::from(u8::from(dcl == 2)),
        f64::from(u8::from(dcl == 3)),
        tms,
        s.stroop_color.unwrap_or(0.0),
        s.stroop_word.unwrap_or(0.0),
        s.stroop_interference.unwrap_or(0.0),
        s.sdmt.unwrap_or(0.0),
        cag,
        s.age_enroll,
        tms * tms,
        cag * tms,
        cag * s.age_enroll,
    ]
}

/// Applies the truth model and censoring to drawn covariates.
fn realise(draw: &Draw, truth: &TruthModel, cens: &CensoringSpec, dropout_hazard: f64) -> Subject {
    let mut s = draw.subject.clone();
    let u = draw.event_u;
    let follow_c = if dropout_hazard > 0.0 {
        cens.horizon.min(draw.dropout_e / dropout_hazard)
    } else {
        cens.horizon
    };
    match truth {
        TruthModel::Aft { b0, b1, b2, sigma } => {
            let eps = (u / (1.0 - u)).ln();
            let x = (b0 + b1 * s.age_enroll * (f64::from(s.cag) + b2) + sigma * eps).exp();
            s.time = x.min(follow_c).max(1e-9);
            s.event = x <= follow_c;
        }
        TruthModel::CoxMrs {
            beta,
            intercept,
            shape,
            scale,
        } => {
            let lp = intercept + beta.iter().zip(mrs_row(&s)).map(|(b, x)| b * x).sum::<f64>();
            let x = scale * (-(1.0 - u).ln() * (-lp).exp()).powf(1.0 / shape);
            s.time = x.min(follow_c).max(1e-9);
            s.event = x <= follow_c;
        }
        TruthModel::Langbehn(p) => {
            let mu = p.mean_age(s.cag);
            let scale = p.variance(s.cag).sqrt() / LOGISTIC_SD;
            // onset ages below one year are excluded by truncating the draw
            let f1 = 1.0 / (1.0 + (-(1.0 - mu) / scale).exp());
            let v = f1 + (1.0 - f1) * u;
            let x_age = mu + scale * (v / (1.0 - v)).ln();
            let c_age = s.age_enroll + follow_c;
            let w_age = x_age.min(c_age);
            s.age_enroll = s.age_enroll.min(0.5 * w_age);
            s.time = (w_age - s.age_enroll).max(1e-9);
            s.event = x_age <= c_age;
        }
    }
    s
}

fn draw_all(spec: &SimSpec) -> Vec<Draw> {
    let d = derive(&spec.covariates);
    (0..spec.n).into_par_iter().map(|i| draw_subject(i, spec, &d)).collect()
}

fn censoring_rate(draws: &[Draw], spec: &SimSpec, hazard: f64) -> f64 {
    let censored = draws
        .par_iter()
        .filter(|d| !realise(d, &spec.truth, &spec.censoring, hazard).event)
        .count();
    censored as f64 / draws.len() as f64
}

/// Generates a cohort; deterministic given `spec.seed` and independent of the
/// thread count (every subject has its own RNG stream).
pub fn simulate(spec: &SimSpec) -> Result<Cohort> {
    validate(spec)?;
    let hazard = match spec.censoring.target_rate {
        Some(target) => calibrate_censoring(spec, target)?,
        None => spec.censoring.dropout_hazard,
    };
    let draws = draw_all(spec);
    let subjects: Vec<Subject> = draws
        .par_iter()
        .map(|d| realise(d, &spec.truth, &spec.censoring, hazard))
        .collect();
    Cohort::new(subjects, format!("simulated (seed {})", spec.seed))
}

/// Dropout hazard reaching `target` censoring on a calibration sample of
/// 20000 subjects with a fixed seed. Bisection with common random numbers, so
/// the simulated rate is monotone in the hazard.
pub fn calibrate_censoring(spec: &SimSpec, target: f64) -> Result<f64> {
    validate(spec)?;
    if !(0.0..1.0).contains(&target) {
        return Err(Error::InfeasibleCensoring {
            target,
            reason: "target must lie in [0, 1)".into(),
        });
    }
    let mut cal = spec.clone();
    cal.n = CALIBRATION_N;
    cal.seed = CALIBRATION_SEED;
    let draws = draw_all(&cal);
    let base = censoring_rate(&draws, &cal, 0.0);
    if (base - target).abs() <= 0.01 {
        return Ok(0.0);
    }
    if target < base {
        return Err(Error::InfeasibleCensoring {
            target,
            reason: format!("administrative censoring alone gives {base:.4}"),
        });
    }
    let mut hi = 0.01;
    while censoring_rate(&draws, &cal, hi) < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InfeasibleCensoring {
                target,
                reason: "unreachable even with near-immediate dropout".into(),
            });
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let r = censoring_rate(&draws, &cal, mid);
        if (r - target).abs() < 5e-4 {
            return Ok(mid);
        }
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aft_spec(n: usize, seed: u64) -> SimSpec {
        SimSpec {
            n,
            seed,
            covariates: CovariateSpec::default(),
            truth: TruthModel::Aft {
                b0: 4.5,
                b1: -0.0065,
                b2: -34.0,
                sigma: 0.3,
            },
            censoring: CensoringSpec::default(),
        }
    }

    #[test]
    fn deterministic() {
        let a = simulate(&aft_spec(500, 3)).unwrap();
        let b = simulate(&aft_spec(500, 3)).unwrap();
        assert_eq!(a.subjects(), b.subjects());
        let c = simulate(&aft_spec(500, 4)).unwrap();
        assert_ne!(a.subjects(), c.subjects());
    }

    #[test]
    fn no_censoring_mechanism() {
        let mut spec = aft_spec(2000, 1);
        spec.censoring.horizon = f64::INFINITY;
        let cohort = simulate(&spec).unwrap();
        assert_eq!(cohort.censoring_rate(), 0.0);
    }

    #[test]
    fn covariate_means_near_targets() {
        let cohort = simulate(&aft_spec(4000, 8)).unwrap();
        let c = CovariateSpec::default();
        let n = cohort.len() as f64;
        let check = |vals: Vec<f64>, target: f64, sd: f64, name: &str| {
            let m = vals.iter().sum::<f64>() / n;
            assert!((m - target).abs() < 3.0 * sd / n.sqrt(), "{name}: {m} vs {target}");
        };
        let s = cohort.subjects();
        check(s.iter().map(|x| x.age_enroll).collect(), c.age_mean, c.age_sd, "age");
        check(s.iter().map(|x| f64::from(x.cag)).collect(), c.cag_mean, c.cag_sd, "cag");
        check(s.iter().map(|x| x.tms.unwrap()).collect(), c.tms_mean, c.tms_sd, "tms");
        check(s.iter().map(|x| x.sdmt.unwrap()).collect(), c.sdmt_mean, c.sdmt_sd, "sdmt");
        for k in 0..4u8 {
            let p = c.dcl_probs[usize::from(k)];
            check(
                s.iter().map(|x| f64::from(u8::from(x.dcl == Some(k)))).collect(),
                p,
                (p * (1.0 - p)).sqrt(),
                "dcl",
            );
        }
        // severity links: TMS up, SDMT down with the CAG-age product
        let cap: Vec<f64> = s.iter().map(|x| cap_transform(x.age_enroll, x.cag)).collect();
        let corr = |v: Vec<f64>| {
            let (mx, my) = (cap.iter().sum::<f64>() / n, v.iter().sum::<f64>() / n);
            let cov: f64 = cap.iter().zip(&v).map(|(a, b)| (a - mx) * (b - my)).sum();
            let vx: f64 = cap.iter().map(|a| (a - mx).powi(2)).sum();
            let vy: f64 = v.iter().map(|b| (b - my).powi(2)).sum();
            cov / (vx * vy).sqrt()
        };
        assert!(corr(s.iter().map(|x| x.tms.unwrap()).collect()) > 0.1);
        assert!(corr(s.iter().map(|x| x.sdmt.unwrap()).collect()) < -0.1);
    }

    #[test]
    fn calibration_hits_target_and_is_monotone() {
        let spec = aft_spec(5000, 2);
        let h77 = calibrate_censoring(&spec, 0.77).unwrap();
        let h88 = calibrate_censoring(&spec, 0.88).unwrap();
        assert!(h88 > h77);
        let mut s = spec.clone();
        s.censoring.dropout_hazard = h77;
        let rate = simulate(&s).unwrap().censoring_rate();
        assert!((rate - 0.77).abs() < 0.02, "{rate}");
        let mut t = spec.clone();
        t.censoring.target_rate = Some(0.88);
        let rate = simulate(&t).unwrap().censoring_rate();
        assert!((rate - 0.88).abs() < 0.01, "{rate}");
    }

    #[test]
    fn infeasible_target() {
        let spec = aft_spec(100, 1);
        assert!(matches!(calibrate_censoring(&spec, 0.01), Err(Error::InfeasibleCensoring { .. })));
    }

    #[test]
    fn schema_round_trip() {
        let cohort = simulate(&aft_spec(50, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.csv");
        std::fs::write(&path, crate::cohort::to_csv_string(&cohort)).unwrap();
        let back = crate::cohort::ingest_csv(&path, &crate::cohort::ColumnMap::default()).unwrap();
        assert!(back.rejections.is_empty());
        assert_eq!(back.cohort.subjects(), cohort.subjects());
    }
}

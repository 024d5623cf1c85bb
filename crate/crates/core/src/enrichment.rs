//! Trial enrichment planning: Youden-optimal score thresholds, the expected
//! diagnosis rate among enrolled subjects and per-arm sample sizes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::km::km_fit_conditional;
use crate::metrics::{km_roc, RocCurve};
use crate::stats::normal_quantile;

/// Threshold maximising Youden's `J = TPR - FPR` over the curve's points.
/// Ties go to the largest threshold, the most restrictive enrollment.
pub fn optimal_threshold(curve: &RocCurve) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for p in &curve.points {
        let j = p.tpr - p.fpr;
        best = match best {
            Some((q, bj)) if bj > j || (bj == j && q > p.threshold) => Some((q, bj)),
            _ => Some((p.threshold, j)),
        };
    }
    best.ok_or(Error::EmptyGrid)
}

/// `1 - S(t | score > q)` from the Kaplan-Meier curve of the enrolled subjects.
pub fn diagnosis_rate(scores: &[f64], cohort: &Cohort, q: f64, t: f64) -> Result<f64> {
    if scores.len() != cohort.len() {
        return Err(Error::DimensionMismatch {
            expected: cohort.len(),
            actual: scores.len(),
        });
    }
    let enrolled: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > q).collect();
    if enrolled.is_empty() {
        return Err(Error::EmptyEnrollment { threshold: q });
    }
    let sub = cohort.select(&enrolled);
    // beyond the last follow-up of a censored subject the curve is not identified
    let last = sub
        .subjects()
        .iter()
        .max_by(|a, b| a.time.total_cmp(&b.time).then(b.event.cmp(&a.event)))
        .expect("non-empty selection");
    if last.time < t && !last.event {
        return Err(Error::NotEstimable { t });
    }
    Ok(1.0 - km_fit_conditional(&sub, |_| true).eval(t))
}

/// Per-arm size for a two-sided two-proportion z-test with pooled variance
/// under the null:
/// `ceil((z_{1-a/2} sqrt(2 pbar qbar) + z_power sqrt(p1 q1 + p2 q2))^2 / (p1 - p2)^2)`
/// with `p2 = p1 (1 - effect)`.
pub fn per_arm_n(p1: f64, effect: f64, power: f64, alpha: f64) -> Result<u64> {
    if !(p1 > 0.0 && p1 < 1.0) {
        return Err(Error::DegenerateRates(format!("control rate {p1} is outside (0, 1)")));
    }
    if !(effect > 0.0 && effect < 1.0) {
        return Err(Error::DegenerateRates(format!("effect {effect} is outside (0, 1)")));
    }
    if !(power > 0.0 && power < 1.0 && alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("power {power} and alpha {alpha} must lie in (0, 1)")));
    }
    let p2 = p1 * (1.0 - effect);
    let pbar = (p1 + p2) / 2.0;
    let za = normal_quantile(1.0 - alpha / 2.0);
    let zb = normal_quantile(power);
    let num = za * (2.0 * pbar * (1.0 - pbar)).sqrt() + zb * (p1 * (1.0 - p1) + p2 * (1.0 - p2)).sqrt();
    Ok((num * num / (p1 - p2).powi(2)).ceil() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSizeRow {
    pub effect: f64,
    pub treated_rate: f64,
    pub per_arm_n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnrichmentPlan {
    pub model: String,
    pub t: f64,
    pub q_star: f64,
    pub youden: f64,
    pub n_enrolled: usize,
    pub diagnosis_rate: f64,
    pub power: f64,
    pub alpha: f64,
    pub rows: Vec<SampleSizeRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanSettings {
    pub durations: Vec<f64>,
    pub effects: Vec<f64>,
    pub power: f64,
    pub alpha: f64,
}

impl Default for PlanSettings {
    fn default() -> Self {
        PlanSettings {
            durations: vec![2.0, 3.0, 4.0, 5.0],
            effects: vec![0.3, 0.4, 0.5],
            power: 0.8,
            alpha: 0.05,
        }
    }
}

/// One plan per duration; `scores_at(t)` supplies the scores used at duration `t`.
pub fn build_plan_by(
    model: &str,
    mut scores_at: impl FnMut(f64) -> Result<Vec<f64>>,
    cohort: &Cohort,
    settings: &PlanSettings,
) -> Result<Vec<EnrichmentPlan>> {
    let max_time = cohort.max_time();
    settings
        .durations
        .iter()
        .map(|&t| {
            if !(t > 0.0 && t <= max_time) {
                return Err(Error::NotEstimable { t });
            }
            let scores = scores_at(t)?;
            let curve = km_roc(&scores, cohort, t)?;
            let (q_star, youden) = optimal_threshold(&curve)?;
            let rate = diagnosis_rate(&scores, cohort, q_star, t)?;
            let rows = settings
                .effects
                .iter()
                .map(|&e| {
                    Ok(SampleSizeRow {
                        effect: e,
                        treated_rate: rate * (1.0 - e),
                        per_arm_n: per_arm_n(rate, e, settings.power, settings.alpha)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EnrichmentPlan {
                model: model.to_string(),
                t,
                q_star,
                youden,
                n_enrolled: scores.iter().filter(|&&s| s > q_star).count(),
                diagnosis_rate: rate,
                power: settings.power,
                alpha: settings.alpha,
                rows,
            })
        })
        .collect()
}

pub fn build_plan(model: &str, scores: &[f64], cohort: &Cohort, settings: &PlanSettings) -> Result<Vec<EnrichmentPlan>> {
    build_plan_by(model, |_| Ok(scores.to_vec()), cohort, settings)
}

/// Table-shaped CSV: `time,model,threshold,rate` then one `nXX` column per
/// effect size (percent).
pub fn plans_to_csv(plans: &[EnrichmentPlan]) -> String {
    let mut out = String::from("time,model,threshold,rate");
    if let Some(first) = plans.first() {
        for r in &first.rows {
            let _ = write!(out, ",n{}", (r.effect * 100.0).round());
        }
    }
    out.push('\n');
    for p in plans {
        let _ = write!(out, "{},{},{},{}", p.t, p.model, p.q_star, p.diagnosis_rate);
        for r in &p.rows {
            let _ = write!(out, ",{}", r.per_arm_n);
        }
        out.push('\n');
    }
    out
}

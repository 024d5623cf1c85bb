//! Product-limit estimators for event survival `S(t)` and censoring survival `G(c)`.
//!
//! Tie convention: at a time shared by events and censorings, events happen
//! first. For `S` the censored subjects therefore stay in the risk set of the
//! events at that time; for `G` the events leave the risk set before the
//! censorings at that time are counted.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Subject};
use crate::error::{Error, Result};

/// Right-continuous step function with jumps at the distinct "event" times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub n_events: Vec<usize>,
    pub n_subjects: usize,
}

/// Reverse Kaplan-Meier estimate of the censoring survival `G(c) = P(C > c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringKm(pub KmCurve);

impl KmCurve {
    /// The curve of an empty selection. Evaluates to 1 everywhere; callers
    /// weighting it by the selection's sample proportion get 0.
    pub fn empty() -> Self {
        KmCurve {
            times: Vec::new(),
            survival: Vec::new(),
            at_risk: Vec::new(),
            n_events: Vec::new(),
            n_subjects: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_subjects == 0
    }

    /// Product-limit estimate from `(time, is_event)` observations using the
    /// event-first tie rule.
    pub fn from_observations(obs: &[(f64, bool)]) -> Self {
        product_limit(obs, false)
    }

    /// Step-function value at `t`: 1 before the first jump, the value at the
    /// last jump `<= t` afterwards.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// Two-column `time,survival` CSV starting at `(0, 1)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,survival\n0,1\n");
        for (t, s) in self.times.iter().zip(&self.survival) {
            let _ = writeln!(out, "{t},{s}");
        }
        out
    }
}

impl CensoringKm {
    pub fn eval(&self, c: f64) -> f64 {
        self.0.eval(c)
    }

    pub fn curve(&self) -> &KmCurve {
        &self.0
    }
}

/// Shared product-limit routine. `others_first` removes the non-counted
/// observations at a time from the risk set before the counted ones.
///
/// Survival is kept as `anchor * (n - d) / n_anchor`, which telescopes the
/// product over runs of jumps uninterrupted by removals of the other kind.
/// Without such removals the estimate is a single division, so it agrees
/// exactly with the empirical survival function.
fn product_limit(obs: &[(f64, bool)], others_first: bool) -> KmCurve {
    let n = obs.len();
    if n == 0 {
        return KmCurve::empty();
    }
    let mut sorted: Vec<(f64, bool)> = obs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut curve = KmCurve {
        n_subjects: n,
        ..KmCurve::empty()
    };
    let mut remaining = n;
    let mut anchor_s = 1.0_f64;
    let mut anchor_n = n;
    let mut lost_since_anchor = 0usize;
    let mut current = 1.0_f64;

    let mut i = 0;
    while i < n {
        let t = sorted[i].0;
        let mut j = i;
        let mut d = 0usize;
        while j < n && sorted[j].0 == t {
            d += usize::from(sorted[j].1);
            j += 1;
        }
        let group = j - i;
        let others = group - d;
        let at_risk = if others_first { remaining - others } else { remaining };
        if d > 0 {
            if at_risk + lost_since_anchor != anchor_n {
                anchor_s = current;
                anchor_n = at_risk;
                lost_since_anchor = 0;
            }
            lost_since_anchor += d;
            current = anchor_s * (anchor_n - lost_since_anchor) as f64 / anchor_n as f64;
            curve.times.push(t);
            curve.survival.push(current);
            curve.at_risk.push(at_risk);
            curve.n_events.push(d);
        }
        remaining -= group;
        i = j;
    }
    curve
}

fn observations<'a>(subjects: impl Iterator<Item = &'a Subject>) -> Vec<(f64, bool)> {
    subjects.map(|s| (s.time, s.event)).collect()
}

pub fn km_fit(cohort: &Cohort) -> Result<KmCurve> {
    if cohort.is_empty() {
        return Err(Error::EmptyCohort);
    }
    Ok(KmCurve::from_observations(&observations(cohort.subjects().iter())))
}

/// Kaplan-Meier among the subjects satisfying `predicate`; an empty selection
/// yields [`KmCurve::empty`].
pub fn km_fit_conditional(cohort: &Cohort, predicate: impl Fn(&Subject) -> bool) -> KmCurve {
    KmCurve::from_observations(&observations(cohort.subjects().iter().filter(|s| predicate(s))))
}

/// Censoring survival from `(time, event)` observations.
pub fn censoring_from_observations(obs: &[(f64, bool)]) -> CensoringKm {
    let swapped: Vec<(f64, bool)> = obs.iter().map(|&(t, e)| (t, !e)).collect();
    CensoringKm(product_limit(&swapped, true))
}

pub fn censoring_km_fit(cohort: &Cohort) -> Result<CensoringKm> {
    if cohort.is_empty() {
        return Err(Error::EmptyCohort);
    }
    Ok(censoring_from_observations(&observations(cohort.subjects().iter())))
}

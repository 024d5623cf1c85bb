//! Censoring-adjusted discrimination: Uno's C (time-specific and global) and
//! Kaplan-Meier adjusted time-dependent ROC curves.
//!
//! All metrics take plain score slices aligned with the cohort's subject order;
//! larger scores mean higher risk.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::km::{censoring_km_fit, CensoringKm, KmCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ties {
    /// Tied scores count as discordant.
    #[default]
    Strict,
    /// Tied scores count one half.
    Half,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnoCResult {
    pub tau: f64,
    pub value: f64,
    pub n_comparable_pairs: u64,
    /// Events observed at or before `tau`.
    pub n_events: usize,
    /// Fraction of all observed events occurring at or before `tau`.
    pub weight_mass: f64,
}

fn check_alignment(scores: &[f64], cohort: &Cohort) -> Result<()> {
    if scores.len() != cohort.len() {
        return Err(Error::DimensionMismatch {
            expected: cohort.len(),
            actual: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "score for subject `{}` is not finite",
            cohort.subjects()[i].id
        )));
    }
    Ok(())
}

/// Binary indexed tree over score ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks `< rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut acc = 0;
        while i > 0 {
            acc += self.0[i];
            i -= i & i.wrapping_neg();
        }
        acc
    }
}

/// Uno's C at `tau` with a supplied censoring survival estimate.
///
/// A pair `(i, j)` is comparable when `i` is an event, `W_i < W_j` and
/// `W_i < tau`; it carries weight `G(W_i)^-2`. Requires `G(tau-) > 0`, the
/// censoring survival just before `tau`, which bounds every weight used.
pub fn uno_c_with(scores: &[f64], cohort: &Cohort, g: &CensoringKm, tau: f64, ties: Ties) -> Result<UnoCResult> {
    check_alignment(scores, cohort)?;
    let g_tau = g.eval(tau.next_down());
    if !(g_tau > 0.0) {
        return Err(Error::ZeroCensoringSurvival { tau });
    }
    let subjects = cohort.subjects();

    let mut sorted_scores: Vec<f64> = scores.to_vec();
    sorted_scores.sort_by(f64::total_cmp);
    sorted_scores.dedup();
    let rank = |s: f64| sorted_scores.partition_point(|&x| x < s);

    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.sort_by(|&a, &b| subjects[b].time.total_cmp(&subjects[a].time));

    let mut tree = Fenwick::new(sorted_scores.len());
    let mut inserted: u64 = 0;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut pairs: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let t = subjects[order[i]].time;
        let mut j = i;
        while j < order.len() && subjects[order[j]].time == t {
            j += 1;
        }
        if t < tau {
            for &a in &order[i..j] {
                if !subjects[a].event || inserted == 0 {
                    continue;
                }
                let r = rank(scores[a]);
                let below = tree.below(r);
                let concordant = match ties {
                    Ties::Strict => below as f64,
                    Ties::Half => {
                        let equal = tree.below(r + 1) - below;
                        below as f64 + 0.5 * equal as f64
                    }
                };
                let w = g.eval(t).powi(-2);
                num += w * concordant;
                den += w * inserted as f64;
                pairs += inserted;
            }
        }
        for &a in &order[i..j] {
            tree.add(rank(scores[a]));
            inserted += 1;
        }
        i = j;
    }
    if pairs == 0 {
        return Err(Error::NoComparablePairs { tau });
    }
    let total_events = cohort.n_events();
    let n_events = subjects.iter().filter(|s| s.event && s.time <= tau).count();
    Ok(UnoCResult {
        tau,
        value: num / den,
        n_comparable_pairs: pairs,
        n_events,
        weight_mass: if total_events == 0 { 0.0 } else { n_events as f64 / total_events as f64 },
    })
}

/// Uno's C at `tau`, with `G` estimated from `cohort` itself.
pub fn uno_c(scores: &[f64], cohort: &Cohort, tau: f64, ties: Ties) -> Result<UnoCResult> {
    let g = censoring_km_fit(cohort)?;
    uno_c_with(scores, cohort, &g, tau, ties)
}

/// Uno's C over a grid of horizons where the scores may depend on the horizon
/// (Langbehn conditional probabilities). Horizons that are not evaluable are
/// dropped with a warning.
pub fn uno_c_profile_by(
    mut scores_at: impl FnMut(f64) -> Result<Vec<f64>>,
    cohort: &Cohort,
    tau_grid: &[f64],
    ties: Ties,
) -> Result<Vec<UnoCResult>> {
    let g = censoring_km_fit(cohort)?;
    let mut out = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let scores = scores_at(tau)?;
        match uno_c_with(&scores, cohort, &g, tau, ties) {
            Ok(r) => out.push(r),
            Err(e @ (Error::ZeroCensoringSurvival { .. } | Error::NoComparablePairs { .. })) => {
                log::warn!("dropping tau = {tau} from the Uno profile: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(out)
}

pub fn uno_c_profile(scores: &[f64], cohort: &Cohort, tau_grid: &[f64], ties: Ties) -> Result<Vec<UnoCResult>> {
    uno_c_profile_by(|_| Ok(scores.to_vec()), cohort, tau_grid, ties)
}

/// Average of time-specific values weighted by the number of events falling in
/// the interval that ends at each horizon.
pub fn global_uno_c(profile: &[UnoCResult]) -> Result<f64> {
    if profile.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut sorted: Vec<&UnoCResult> = profile.iter().collect();
    sorted.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    let mut prev = 0usize;
    let mut num = 0.0;
    let mut den = 0.0;
    for r in sorted {
        let w = r.n_events.saturating_sub(prev) as f64;
        prev = prev.max(r.n_events);
        num += w * r.value;
        den += w;
    }
    if den == 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok(num / den)
}

pub fn profile_to_csv(profile: &[UnoCResult]) -> String {
    let mut out = String::from("tau,value,n_comparable_pairs,n_events\n");
    for r in profile {
        let _ = writeln!(out, "{},{},{},{}", r.tau, r.value, r.n_comparable_pairs, r.n_events);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub t: f64,
    /// One point per threshold, in increasing threshold order. The first
    /// threshold is `-inf` (everyone positive).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
        }
        out
    }
}

/// Heagerty's Kaplan-Meier adjusted ROC curve at time `t`.
///
/// For each threshold `q` among `-inf` and the distinct scores,
/// `TPR = (1 - S(t | s > q)) P(s > q) / (1 - S(t))` and
/// `FPR = 1 - S(t | s <= q) P(s <= q) / S(t)`, clipped to `[0, 1]`. An empty
/// group contributes 0 to its weighted product.
pub fn km_roc(scores: &[f64], cohort: &Cohort, t: f64) -> Result<RocCurve> {
    check_alignment(scores, cohort)?;
    if cohort.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let subjects = cohort.subjects();
    let n = subjects.len() as f64;
    let mut by_time: Vec<(f64, bool, f64)> = subjects
        .iter()
        .zip(scores)
        .map(|(s, &sc)| (s.time, s.event, sc))
        .collect();
    by_time.sort_by(|a, b| a.0.total_cmp(&b.0));

    let all: Vec<(f64, bool)> = by_time.iter().map(|o| (o.0, o.1)).collect();
    let s_t = KmCurve::from_observations(&all).eval(t);
    if !(s_t > 0.0 && s_t < 1.0) {
        return Err(Error::UndefinedRoc { t, survival: s_t });
    }

    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.insert(0, f64::NEG_INFINITY);

    let mut above = Vec::with_capacity(all.len());
    let mut below = Vec::with_capacity(all.len());
    let points: Vec<RocPoint> = thresholds
        .iter()
        .map(|&q| {
            above.clear();
            below.clear();
            for &(time, event, sc) in &by_time {
                if sc > q {
                    above.push((time, event));
                } else {
                    below.push((time, event));
                }
            }
            let weighted = |group: &[(f64, bool)]| -> (f64, f64) {
                if group.is_empty() {
                    (0.0, 0.0)
                } else {
                    let p = group.len() as f64 / n;
                    let s = KmCurve::from_observations(group).eval(t);
                    ((1.0 - s) * p, s * p)
                }
            };
            let (fail_above, _) = weighted(&above);
            let (_, surv_below) = weighted(&below);
            RocPoint {
                threshold: q,
                tpr: (fail_above / (1.0 - s_t)).clamp(0.0, 1.0),
                fpr: (1.0 - surv_below / s_t).clamp(0.0, 1.0),
            }
        })
        .collect();
    let mut curve = RocCurve { t, points, auc: 0.0 };
    curve.auc = roc_auc(&curve);
    Ok(curve)
}

/// Trapezoidal area traced along the points in threshold order. Points are
/// not re-sorted by FPR: rounding can perturb equal FPRs and reorder them.
pub fn roc_auc(curve: &RocCurve) -> f64 {
    let mut pts: Vec<&RocPoint> = curve.points.iter().collect();
    pts.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    pts.windows(2)
        .map(|w| (w[0].fpr - w[1].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::cohort_of;
    use proptest::prelude::*;

    fn oracle(scores: &[f64], obs: &[(f64, bool)], tau: f64, ties: Ties) -> Option<f64> {
        let g = crate::km::censoring_from_observations(obs);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..obs.len() {
            for j in 0..obs.len() {
                if i != j && obs[i].1 && obs[i].0 < obs[j].0 && obs[i].0 < tau {
                    let w = 1.0 / g.eval(obs[i].0).powi(2);
                    den += w;
                    if scores[i] > scores[j] {
                        num += w;
                    } else if scores[i] == scores[j] && ties == Ties::Half {
                        num += 0.5 * w;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    #[test]
    fn three_subject_example() {
        let cohort = cohort_of(&[(1.0, true), (2.0, true), (3.0, false)]);
        let r = uno_c(&[3.0, 2.0, 1.0], &cohort, 3.0, Ties::Strict).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.n_comparable_pairs, 3);
    }

    #[test]
    fn anticoncordant_and_constant_scores() {
        let cohort = cohort_of(&[(1.0, true), (2.0, true), (3.0, true), (4.0, true)]);
        assert_eq!(uno_c(&[1.0, 2.0, 3.0, 4.0], &cohort, 10.0, Ties::Strict).unwrap().value, 0.0);
        assert_eq!(uno_c(&[1.0; 4], &cohort, 10.0, Ties::Strict).unwrap().value, 0.0);
        assert_eq!(uno_c(&[1.0; 4], &cohort, 10.0, Ties::Half).unwrap().value, 0.5);
    }

    #[test]
    fn errors() {
        let cohort = cohort_of(&[(1.0, false), (2.0, false)]);
        assert!(matches!(uno_c(&[1.0, 2.0], &cohort, 1.5, Ties::Strict), Err(Error::NoComparablePairs { .. })));
        // all censoring mass gone before tau
        let cohort = cohort_of(&[(1.0, true), (2.0, false)]);
        assert!(matches!(uno_c(&[1.0, 2.0], &cohort, 3.0, Ties::Strict), Err(Error::ZeroCensoringSurvival { .. })));
        assert!(matches!(uno_c(&[1.0], &cohort, 3.0, Ties::Strict), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn global_weighting() {
        let mk = |tau, value, n_events| UnoCResult {
            tau,
            value,
            n_comparable_pairs: 1,
            n_events,
            weight_mass: 0.0,
        };
        let g = global_uno_c(&[mk(1.0, 0.9, 2), mk(2.0, 0.8, 3)]).unwrap();
        assert!((g - 2.6 / 3.0).abs() < 1e-15);
        assert_eq!(global_uno_c(&[mk(1.0, 0.7, 4)]).unwrap(), 0.7);
        assert!(matches!(global_uno_c(&[mk(1.0, 0.7, 0)]), Err(Error::ZeroWeights)));
        assert!(global_uno_c(&[]).is_err());
    }

    #[test]
    fn profile_drops_unevaluable_tau() {
        let cohort = cohort_of(&[(1.0, true), (2.0, false), (3.0, true), (4.0, false), (5.0, true)]);
        let scores = [5.0, 1.0, 3.0, 2.0, 0.5];
        let p = uno_c_profile(&scores, &cohort, &[0.5, 2.0, 4.0], Ties::Strict).unwrap();
        assert_eq!(p.iter().map(|r| r.tau).collect::<Vec<_>>(), vec![2.0, 4.0]);
        let single = uno_c_profile(&scores, &cohort, &[4.0], Ties::Strict).unwrap();
        assert_eq!(single[0], uno_c(&scores, &cohort, 4.0, Ties::Strict).unwrap());
        assert!(matches!(uno_c_profile(&scores, &cohort, &[0.5], Ties::Strict), Err(Error::EmptyGrid)));
    }

    #[test]
    fn roc_anchors_and_auc_shapes() {
        let cohort = cohort_of(&[(1.0, true), (2.0, false), (3.0, true), (4.0, false), (5.0, true)]);
        let curve = km_roc(&[5.0, 1.0, 3.0, 2.0, 0.5], &cohort, 3.5).unwrap();
        let first = curve.points.first().unwrap();
        assert_eq!((first.fpr, first.tpr), (1.0, 1.0));
        let last = curve.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (0.0, 0.0));
        let diag = RocCurve {
            t: 1.0,
            points: vec![
                RocPoint { threshold: f64::NEG_INFINITY, fpr: 1.0, tpr: 1.0 },
                RocPoint { threshold: 1.0, fpr: 0.0, tpr: 0.0 },
            ],
            auc: 0.0,
        };
        assert_eq!(roc_auc(&diag), 0.5);
        let mut perfect = diag.clone();
        perfect.points.insert(1, RocPoint { threshold: 0.0, fpr: 0.0, tpr: 1.0 });
        perfect.points.reverse();
        assert_eq!(roc_auc(&perfect), 1.0);
        let constant = km_roc(&[1.0; 5], &cohort, 3.5).unwrap();
        assert_eq!(constant.auc, 0.5);
        assert!(matches!(km_roc(&[1.0; 5], &cohort, 0.5), Err(Error::UndefinedRoc { .. })));
        assert!(curve.to_csv().starts_with("threshold,fpr,tpr\n-inf,1,1\n"));
    }

    fn cohort_strategy() -> impl Strategy<Value = (Vec<(f64, bool)>, Vec<f64>)> {
        (2usize..9).prop_flat_map(|n| {
            (
                prop::collection::vec((1u32..6, any::<bool>()), n),
                prop::collection::vec(0u32..4, n),
            )
                .prop_map(|(o, s)| {
                    (
                        o.into_iter().map(|(t, e)| (f64::from(t), e)).collect(),
                        s.into_iter().map(f64::from).collect(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn matches_pair_enumeration((obs, scores) in cohort_strategy(), tau in 1u32..7) {
            let cohort = cohort_of(&obs);
            let tau = f64::from(tau);
            for ties in [Ties::Strict, Ties::Half] {
                let fast = uno_c(&scores, &cohort, tau, ties);
                let g = crate::km::censoring_from_observations(&obs);
                match oracle(&scores, &obs, tau, ties) {
                    Some(v) if g.eval(tau.next_down()) > 0.0 => prop_assert!((fast.unwrap().value - v).abs() < 1e-12),
                    _ => prop_assert!(fast.is_err()),
                }
            }
        }

        #[test]
        fn bounded_outputs((obs, scores) in cohort_strategy(), t in 1u32..6) {
            let cohort = cohort_of(&obs);
            if let Ok(curve) = km_roc(&scores, &cohort, f64::from(t)) {
                prop_assert!((0.0..=1.0).contains(&curve.auc));
                for p in &curve.points {
                    prop_assert!((0.0..=1.0).contains(&p.tpr) && (0.0..=1.0).contains(&p.fpr));
                }
            }
            if let Ok(r) = uno_c(&scores, &cohort, 6.0, Ties::Half) {
                prop_assert!((0.0..=1.0).contains(&r.value));
            }
        }
    }
}

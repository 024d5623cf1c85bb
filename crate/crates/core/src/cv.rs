//! Event-stratified k-fold cross-validation of the risk models.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::metrics::{global_uno_c, km_roc, uno_c_profile_by, Ties, UnoCResult};
use crate::models::{fit_model, FitSettings, FittedModel, ModelKind, ModelSpec};

/// Fold index per subject, in cohort order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<usize>,
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }
}

/// Shuffles the event and censored strata separately with
/// `ChaCha8Rng::seed_from_u64(seed)` (events first) and deals each round-robin
/// into `k` folds. The censored deal starts where the event deal stopped so
/// fold sizes also differ by at most one.
pub fn make_folds(cohort: &Cohort, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let subjects = cohort.subjects();
    let mut events: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i].event).collect();
    let mut censored: Vec<usize> = (0..subjects.len()).filter(|&i| !subjects[i].event).collect();
    if events.len() < k {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of events ({})",
            events.len()
        )));
    }
    if !censored.is_empty() && censored.len() < k {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of censored subjects ({})",
            censored.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    events.shuffle(&mut rng);
    censored.shuffle(&mut rng);

    let mut folds = vec![0; subjects.len()];
    for (pos, &i) in events.iter().enumerate() {
        folds[i] = pos % k;
    }
    let offset = events.len() % k;
    for (pos, &i) in censored.iter().enumerate() {
        folds[i] = (offset + pos) % k;
    }
    let fold_of = subjects.iter().zip(&folds).map(|(s, &f)| (s.id.clone(), f)).collect();
    Ok(FoldAssignment { k, seed, folds, fold_of })
}

pub struct FoldSplit {
    pub fold: usize,
    pub train: Cohort,
    pub test: Cohort,
}

pub fn fold_splits(cohort: &Cohort, assignment: &FoldAssignment) -> Vec<FoldSplit> {
    (0..assignment.k)
        .map(|fold| FoldSplit {
            fold,
            train: cohort.select(&assignment.train_indices(fold)),
            test: cohort.select(&assignment.test_indices(fold)),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CvSettings {
    pub k: usize,
    pub seed: u64,
    pub tau_grid: Vec<f64>,
    pub roc_times: Vec<f64>,
    pub ties: Ties,
    pub fit: FitSettings,
    /// Select the Langbehn `b2` once on the full cohort instead of repeating the
    /// grid search inside every training fold.
    pub fix_langbehn_b2: bool,
}

impl CvSettings {
    pub fn new(tau_grid: Vec<f64>, roc_times: Vec<f64>) -> Self {
        CvSettings {
            k: 5,
            seed: 0,
            tau_grid,
            roc_times,
            ties: Ties::Strict,
            fit: FitSettings::default(),
            fix_langbehn_b2: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AucEntry {
    pub t: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_test_events: usize,
    pub uno: Vec<UnoCResult>,
    pub global_uno_c: f64,
    pub auc: Vec<AucEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanMetric {
    pub time: f64,
    pub mean: f64,
    pub n_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCv {
    pub model: ModelKind,
    pub folds: Vec<FoldResult>,
    pub failures: Vec<FoldFailure>,
    pub mean_uno_c: Vec<MeanMetric>,
    pub mean_global_uno_c: f64,
    pub mean_auc: Vec<MeanMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub fold_events: Vec<usize>,
    pub fold_sizes: Vec<usize>,
    pub models: Vec<ModelCv>,
}

fn evaluate_fold(model: &FittedModel, split: &FoldSplit, settings: &CvSettings) -> Result<FoldResult> {
    let test = &split.test;
    let uno = uno_c_profile_by(|tau| model.scores(test, tau), test, &settings.tau_grid, settings.ties)?;
    let global = global_uno_c(&uno)?;
    let auc = settings
        .roc_times
        .iter()
        .map(|&t| {
            let auc = model
                .scores(test, t)
                .and_then(|s| km_roc(&s, test, t))
                .map(|c| c.auc)
                .map_err(|e| log::warn!("fold {}: no AUC for {} at t = {t}: {e}", split.fold, model.kind()))
                .ok();
            AucEntry { t, auc }
        })
        .collect();
    Ok(FoldResult {
        fold: split.fold,
        n_train: split.train.len(),
        n_test: test.len(),
        n_test_events: test.n_events(),
        uno,
        global_uno_c: global,
        auc,
    })
}

fn mean_by_time(entries: impl Iterator<Item = (f64, f64)>) -> Vec<MeanMetric> {
    let mut acc: Vec<(f64, f64, usize)> = Vec::new();
    for (t, v) in entries {
        match acc.iter_mut().find(|a| a.0 == t) {
            Some(a) => {
                a.1 += v;
                a.2 += 1;
            }
            None => acc.push((t, v, 1)),
        }
    }
    acc.sort_by(|a, b| a.0.total_cmp(&b.0));
    acc.into_iter()
        .map(|(time, sum, n)| MeanMetric {
            time,
            mean: sum / n as f64,
            n_folds: n,
        })
        .collect()
}

/// Trains each model on k-1 folds and evaluates it on the held-out fold.
/// Censoring weights come from the held-out fold only. Fold failures are
/// recorded and excluded from the means.
pub fn run_cv(cohort: &Cohort, models: &[ModelSpec], settings: &CvSettings) -> Result<CvReport> {
    let assignment = make_folds(cohort, settings.k, settings.seed)?;
    let splits = fold_splits(cohort, &assignment);

    let mut fit = settings.fit.clone();
    if settings.fix_langbehn_b2 && models.iter().any(|m| matches!(m, ModelSpec::Fit(ModelKind::Langbehn))) {
        if let FittedModel::Langbehn { params, .. } = fit_model(ModelKind::Langbehn, cohort, &fit)? {
            fit.langbehn.b2_grid = vec![params.b2];
            fit.langbehn_init = Some(params);
        }
    }

    let tasks: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..splits.len()).map(move |f| (m, f)))
        .collect();
    let outcomes: Vec<Result<FoldResult>> = tasks
        .par_iter()
        .map(|&(m, f)| {
            let split = &splits[f];
            let fitted = models[m].resolve(&split.train, &fit)?;
            evaluate_fold(&fitted, split, settings)
        })
        .collect();

    let mut report_models = Vec::with_capacity(models.len());
    for (m, spec) in models.iter().enumerate() {
        let mut folds = Vec::new();
        let mut failures = Vec::new();
        for (&(tm, f), outcome) in tasks.iter().zip(&outcomes) {
            if tm != m {
                continue;
            }
            match outcome {
                Ok(r) => folds.push(r.clone()),
                Err(e) => {
                    log::warn!("{} failed on fold {f}: {e}", spec.kind());
                    failures.push(FoldFailure {
                        fold: f,
                        error: e.to_string(),
                    });
                }
            }
        }
        if folds.is_empty() {
            return Err(Error::AllFoldsFailed {
                model: spec.kind().label().to_string(),
            });
        }
        let mean_uno_c = mean_by_time(folds.iter().flat_map(|r| r.uno.iter().map(|u| (u.tau, u.value))));
        let mean_auc = mean_by_time(folds.iter().flat_map(|r| r.auc.iter().filter_map(|a| a.auc.map(|v| (a.t, v)))));
        let mean_global_uno_c = folds.iter().map(|r| r.global_uno_c).sum::<f64>() / folds.len() as f64;
        report_models.push(ModelCv {
            model: spec.kind(),
            folds,
            failures,
            mean_uno_c,
            mean_global_uno_c,
            mean_auc,
        });
    }

    Ok(CvReport {
        k: assignment.k,
        seed: assignment.seed,
        fold_events: splits.iter().map(|s| s.test.n_events()).collect(),
        fold_sizes: splits.iter().map(|s| s.test.len()).collect(),
        models: report_models,
    })
}

impl CvReport {
    /// `model,tau,mean,n_folds`: mean time-specific Uno's C across folds.
    pub fn uno_csv(&self) -> String {
        let mut out = String::from("model,tau,mean,n_folds\n");
        for m in &self.models {
            for r in &m.mean_uno_c {
                let _ = writeln!(out, "{},{},{},{}", m.model.label(), r.time, r.mean, r.n_folds);
            }
        }
        out
    }

    /// `model,t,mean,n_folds`: mean Kaplan-Meier ROC AUC across folds.
    pub fn auc_csv(&self) -> String {
        let mut out = String::from("model,t,mean,n_folds\n");
        for m in &self.models {
            for r in &m.mean_auc {
                let _ = writeln!(out, "{},{},{},{}", m.model.label(), r.time, r.mean, r.n_folds);
            }
        }
        out
    }

    pub fn global_csv(&self) -> String {
        let mut out = String::from("model,global_uno_c,n_folds\n");
        for m in &self.models {
            let _ = writeln!(out, "{},{},{}", m.model.label(), m.mean_global_uno_c, m.folds.len());
        }
        out
    }

    /// Fold-level raw values: `model,fold,metric,time,value`.
    pub fn folds_csv(&self) -> String {
        let mut out = String::from("model,fold,metric,time,value\n");
        for m in &self.models {
            for f in &m.folds {
                for u in &f.uno {
                    let _ = writeln!(out, "{},{},uno_c,{},{}", m.model.label(), f.fold, u.tau, u.value);
                }
                for a in &f.auc {
                    if let Some(v) = a.auc {
                        let _ = writeln!(out, "{},{},auc,{},{}", m.model.label(), f.fold, a.t, v);
                    }
                }
                let _ = writeln!(out, "{},{},global_uno_c,,{}", m.model.label(), f.fold, f.global_uno_c);
            }
        }
        out
    }

    pub fn model(&self, kind: ModelKind) -> Option<&ModelCv> {
        self.models.iter().find(|m| m.model == kind)
    }
}

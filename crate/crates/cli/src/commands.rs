use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context as _, Result};
use chrono::{DateTime, Utc};
use serde::Serialize;

use riskcast::cohort::{self, Cohort, CohortSummary, Rejection};
use riskcast::config::{CapConfig, CoxConfig, LangbehnConfig, Mode, ModelsConfig, RunConfig};
use riskcast::cv::{run_cv, CvReport};
use riskcast::enrichment::{build_plan_by, plans_to_csv, EnrichmentPlan};
use riskcast::km::km_fit;
use riskcast::metrics::{global_uno_c, km_roc, profile_to_csv, uno_c_profile_by, UnoCResult};
use riskcast::models::{FittedModel, ModelKind, ModelSpec};
use riskcast::simulate::simulate;
use riskcast::Error;

use crate::output::{fingerprint, sha256_hex, InputFingerprint, OutputDir, RunManifest, Seeds};

pub struct Context {
    pub config: RunConfig,
    pub out: OutputDir,
    started: DateTime<Utc>,
    input: Option<InputFingerprint>,
}

impl Context {
    pub fn new(config: RunConfig, out_dir: PathBuf) -> Result<Self> {
        Ok(Context {
            config,
            out: OutputDir::create(&out_dir)?,
            started: Utc::now(),
            input: None,
        })
    }

    fn load_cohort(&mut self, command: &str) -> Result<(Cohort, usize, Vec<Rejection>)> {
        let input = self
            .config
            .input
            .as_ref()
            .ok_or_else(|| Error::config("input", format!("an input file is required by `{command}`")))?;
        let ingested = cohort::ingest_csv(&input.path, &input.columns)?;
        for r in &ingested.rejections {
            log::warn!("line {}: {}", r.line, r.reason);
        }
        self.input = Some(fingerprint(&input.path)?);
        let f = &self.config.filter;
        let analytic = cohort::filter_analytic(&ingested.cohort, f.cag_min, f.cag_max, f.require_undiagnosed);
        log::info!(
            "{} subjects read, {} rejected, {} in the analytic cohort",
            ingested.cohort.len(),
            ingested.rejections.len(),
            analytic.len()
        );
        if analytic.is_empty() {
            return Err(Error::EmptyCohort.into());
        }
        Ok((analytic, ingested.cohort.len(), ingested.rejections))
    }

    fn resolved_models(&self, specs: &[ModelSpec], cohort: &Cohort) -> Result<Vec<(ModelSpec, FittedModel)>> {
        let settings = self.config.fit_settings();
        specs
            .iter()
            .map(|s| {
                let m = s.resolve(cohort, &settings).with_context(|| format!("resolving {}", s.kind()))?;
                Ok((s.clone(), m))
            })
            .collect()
    }

    /// Writes `manifest_<command>.json` listing every file written so far.
    pub fn finish(mut self, command: &str) -> Result<()> {
        let config_hash = sha256_hex(self.config.to_toml_string()?.as_bytes());
        let manifest = RunManifest::new(
            command,
            config_hash,
            Seeds {
                cv: self.config.cv.seed,
                simulate: self.config.simulate.as_ref().map(|s| s.seed),
            },
            self.input.take(),
            self.started,
            self.out.files(),
        );
        self.out.write_json(&format!("manifest_{command}.json"), &manifest)?;
        Ok(())
    }
}

fn source(spec: &ModelSpec) -> &'static str {
    match spec {
        ModelSpec::Fit(_) => "fit",
        ModelSpec::Published(_) => "published",
    }
}

#[derive(Serialize)]
struct ValidateReport<'a> {
    n_read: usize,
    n_rejected: usize,
    rejections: &'a [Rejection],
    incomplete_covariates: Vec<IncompleteCovariates>,
    summary: &'a CohortSummary,
}

#[derive(Serialize)]
struct IncompleteCovariates {
    model: ModelKind,
    n_subjects: usize,
}

pub fn validate(ctx: &mut Context) -> Result<String> {
    let (cohort, n_read, rejections) = ctx.load_cohort("validate")?;
    let summary = cohort::summarize(&cohort)?;
    let mut incomplete = Vec::new();
    for spec in ctx.config.configured_specs()? {
        let kind = spec.kind();
        let n = cohort
            .subjects()
            .iter()
            .filter(|s| kind.required_covariates().iter().any(|&c| s.covariate(c).is_none()))
            .count();
        if n > 0 {
            log::warn!("{n} subjects lack covariates needed by {kind}");
            incomplete.push(IncompleteCovariates {
                model: kind,
                n_subjects: n,
            });
        }
    }
    let table = summary.to_table();
    ctx.out.write("summary.txt", &table)?;
    ctx.out.write_json(
        "summary.json",
        &ValidateReport {
            n_read,
            n_rejected: rejections.len(),
            rejections: &rejections,
            incomplete_covariates: incomplete,
            summary: &summary,
        },
    )?;
    let mut text = table;
    let _ = writeln!(text, "Rows read: {n_read}, rejected: {}", rejections.len());
    Ok(text)
}

fn published_block(model: &FittedModel) -> Option<ModelsConfig> {
    let mut block = ModelsConfig::default();
    match model {
        FittedModel::Langbehn { params: p, .. } => {
            block.langbehn = Some(LangbehnConfig {
                mode: Mode::Published,
                b0: Some(p.b0),
                b1: Some(p.b1),
                b2: Some(p.b2),
                g0: Some(p.g0),
                g1: Some(p.g1),
                g2: Some(p.g2),
                b2_grid: None,
                init: None,
            })
        }
        FittedModel::Cap(fit) => {
            let p = fit.params()?;
            block.cap = Some(CapConfig {
                mode: Mode::Published,
                b0: Some(p.b0),
                b1: Some(p.b1),
                b2: Some(p.b2),
                sigma: Some(p.sigma),
            })
        }
        FittedModel::Mrs(fit) | FittedModel::Pin(fit) => {
            let cfg = Some(CoxConfig {
                mode: Mode::Published,
                coefficients: Some(fit.coefficients()),
            });
            if model.kind() == ModelKind::Mrs {
                block.mrs = cfg;
            } else {
                block.pin = cfg;
            }
        }
    }
    Some(block)
}

#[derive(Serialize)]
struct ParamsFile {
    models: ModelsConfig,
}

pub fn fit(ctx: &mut Context) -> Result<String> {
    let (cohort, _, _) = ctx.load_cohort("fit")?;
    let specs = ctx.config.model_specs()?;
    let resolved = ctx.resolved_models(&specs, &cohort)?;
    let mut params = ModelsConfig::default();
    let mut text = String::new();
    for (spec, model) in &resolved {
        let kind = spec.kind();
        ctx.out.write_json(&format!("fit_{}.json", kind.key()), model)?;
        match published_block(model) {
            Some(b) => {
                params.langbehn = params.langbehn.or(b.langbehn);
                params.cap = params.cap.or(b.cap);
                params.mrs = params.mrs.or(b.mrs);
                params.pin = params.pin.or(b.pin);
            }
            None => log::warn!("{kind} has no finite CAG offset; it is left out of fitted_params.toml"),
        }
        let _ = writeln!(text, "{kind}: {} ({} subjects)", source(spec), cohort.len());
    }
    let toml = toml::to_string(&ParamsFile { models: params })?;
    ctx.out.write("fitted_params.toml", toml)?;
    Ok(text)
}

pub fn score(ctx: &mut Context) -> Result<String> {
    let (cohort, _, _) = ctx.load_cohort("score")?;
    let specs = ctx.config.model_specs()?;
    let resolved = ctx.resolved_models(&specs, &cohort)?;
    let horizon = ctx.config.evaluation.langbehn_horizon;
    let mut text = String::new();
    for (spec, model) in &resolved {
        let scores = model.scores(&cohort, horizon)?;
        let mut csv = String::from("id,score\n");
        for (s, v) in cohort.subjects().iter().zip(&scores) {
            let _ = writeln!(csv, "{},{v}", s.id);
        }
        ctx.out.write(&format!("scores_{}.csv", spec.kind().key()), csv)?;
        let _ = writeln!(text, "{}: {} scores", spec.kind(), scores.len());
    }
    Ok(text)
}

#[derive(Serialize)]
struct AucAt {
    t: f64,
    auc: f64,
}

#[derive(Serialize)]
struct ModelEvaluation {
    model: ModelKind,
    source: &'static str,
    global_uno_c: f64,
    uno: Vec<UnoCResult>,
    auc: Vec<AucAt>,
}

#[derive(Serialize)]
struct EvaluationReport {
    n: usize,
    n_events: usize,
    censoring_rate: f64,
    tau_grid: Vec<f64>,
    models: Vec<ModelEvaluation>,
}

pub fn roc_file_name(kind: ModelKind, t: f64) -> String {
    format!("roc_{}_t{t}.csv", kind.key())
}

pub fn evaluate(ctx: &mut Context) -> Result<String> {
    let (cohort, _, _) = ctx.load_cohort("evaluate")?;
    let specs = ctx.config.model_specs()?;
    let resolved = ctx.resolved_models(&specs, &cohort)?;
    let grid = ctx.config.tau_grid(&cohort);
    let ties = ctx.config.evaluation.ties;
    ctx.out.write("km.csv", km_fit(&cohort)?.to_csv())?;
    let mut models = Vec::new();
    let mut text = String::new();
    for (spec, model) in &resolved {
        let kind = spec.kind();
        let uno = uno_c_profile_by(|tau| model.scores(&cohort, tau), &cohort, &grid, ties)?;
        let global = global_uno_c(&uno)?;
        ctx.out.write(&format!("uno_{}.csv", kind.key()), profile_to_csv(&uno))?;
        let mut auc = Vec::new();
        for &t in &ctx.config.evaluation.roc_times {
            let curve = km_roc(&model.scores(&cohort, t)?, &cohort, t)?;
            ctx.out.write(&roc_file_name(kind, t), curve.to_csv())?;
            auc.push(AucAt { t, auc: curve.auc });
        }
        let _ = write!(text, "{kind}: global Uno's C {global:.4}");
        for a in &auc {
            let _ = write!(text, ", AUC({}) {:.4}", a.t, a.auc);
        }
        text.push('\n');
        models.push(ModelEvaluation {
            model: kind,
            source: source(spec),
            global_uno_c: global,
            uno,
            auc,
        });
    }
    ctx.out.write_json(
        "report.json",
        &EvaluationReport {
            n: cohort.len(),
            n_events: cohort.n_events(),
            censoring_rate: cohort.censoring_rate(),
            tau_grid: grid,
            models,
        },
    )?;
    Ok(text)
}

pub fn cv(ctx: &mut Context) -> Result<String> {
    let (cohort, _, _) = ctx.load_cohort("cv")?;
    let specs = ctx.config.model_specs()?;
    let settings = ctx.config.cv_settings(&cohort);
    let report: CvReport = run_cv(&cohort, &specs, &settings)?;
    ctx.out.write("cv_uno.csv", report.uno_csv())?;
    ctx.out.write("cv_auc.csv", report.auc_csv())?;
    ctx.out.write("cv_global.csv", report.global_csv())?;
    ctx.out.write("cv_folds.csv", report.folds_csv())?;
    ctx.out.write_json("cv_report.json", &report)?;
    let mut text = format!("{}-fold CV, events per fold {:?}\n", report.k, report.fold_events);
    for m in &report.models {
        let _ = writeln!(
            text,
            "{}: mean global Uno's C {:.4} over {} folds",
            m.model,
            m.mean_global_uno_c,
            m.folds.len()
        );
    }
    Ok(text)
}

pub fn enrich(ctx: &mut Context) -> Result<String> {
    let (cohort, _, _) = ctx.load_cohort("enrich")?;
    let specs = ctx.config.enrichment_models()?;
    if specs.is_empty() {
        return Err(Error::config("enrichment.models", "no model to plan for").into());
    }
    let resolved = ctx.resolved_models(&specs, &cohort)?;
    let settings = ctx.config.plan_settings();
    let mut plans: Vec<EnrichmentPlan> = Vec::new();
    for (spec, model) in &resolved {
        let label = spec.kind().label();
        plans.extend(build_plan_by(label, |t| model.scores(&cohort, t), &cohort, &settings)?);
    }
    plans.sort_by(|a, b| a.t.total_cmp(&b.t));
    let csv = plans_to_csv(&plans);
    ctx.out.write("enrichment.csv", &csv)?;
    ctx.out.write_json("enrichment.json", &plans)?;
    Ok(csv)
}

#[derive(Serialize)]
struct SimulationSummary {
    n: usize,
    n_events: usize,
    censoring_rate: f64,
    seed: u64,
}

pub fn simulate_cmd(ctx: &mut Context) -> Result<String> {
    let spec = ctx
        .config
        .simulate
        .clone()
        .ok_or_else(|| Error::config("simulate", "a [simulate] table is required by `simulate`"))?;
    let cohort = simulate(&spec)?;
    ctx.out.write("simulated.csv", cohort::to_csv_string(&cohort))?;
    let summary = SimulationSummary {
        n: cohort.len(),
        n_events: cohort.n_events(),
        censoring_rate: cohort.censoring_rate(),
        seed: spec.seed,
    };
    ctx.out.write_json("simulated.json", &summary)?;
    Ok(format!(
        "simulated {} subjects, {} events, censoring rate {:.4}\n",
        summary.n, summary.n_events, summary.censoring_rate
    ))
}

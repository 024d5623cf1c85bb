//! Uniform interface over the four risk models: fitting, published-parameter
//! injection and horizon-aware scoring where larger means riskier.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aft::{aft_fit, cap_score, AftFit, AftOptions};
use crate::cohort::{Cohort, Covariate};
use crate::cox::{build_design, cox_fit, linear_predictor, CoxFit, CoxOptions, DesignSpec};
use crate::error::Result;
use crate::langbehn::{langbehn_fit, langbehn_score, LangbehnFit, LangbehnFitOptions, LangbehnParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Langbehn,
    Cap,
    Mrs,
    Pin,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Langbehn, ModelKind::Cap, ModelKind::Mrs, ModelKind::Pin];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Langbehn => "Langbehn",
            ModelKind::Cap => "CAP",
            ModelKind::Mrs => "MRS",
            ModelKind::Pin => "PIN",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            ModelKind::Langbehn => "langbehn",
            ModelKind::Cap => "cap",
            ModelKind::Mrs => "mrs",
            ModelKind::Pin => "pin",
        }
    }

    pub fn design(self) -> Option<DesignSpec> {
        match self {
            ModelKind::Mrs => Some(DesignSpec::mrs()),
            ModelKind::Pin => Some(DesignSpec::pin()),
            _ => None,
        }
    }

    pub fn required_covariates(self) -> &'static [Covariate] {
        use Covariate::*;
        match self {
            ModelKind::Langbehn | ModelKind::Cap => &[Age, Cag],
            ModelKind::Mrs => &[Age, Cag, Dcl, Tms, Sdmt, StroopWord, StroopColor, StroopInterference],
            ModelKind::Pin => &[Age, Cag, Tms, Sdmt],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Fitting controls for every model kind.
#[derive(Debug, Clone, Default)]
pub struct FitSettings {
    pub langbehn: LangbehnFitOptions,
    /// Starting values for the Langbehn optimiser; derived from the data when absent.
    pub langbehn_init: Option<LangbehnParams>,
    pub aft: AftOptions,
    pub cox: CoxOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum FittedModel {
    Langbehn {
        params: LangbehnParams,
        fit: Option<LangbehnFit>,
    },
    Cap(AftFit),
    Mrs(CoxFit),
    Pin(CoxFit),
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Langbehn { .. } => ModelKind::Langbehn,
            FittedModel::Cap(_) => ModelKind::Cap,
            FittedModel::Mrs(_) => ModelKind::Mrs,
            FittedModel::Pin(_) => ModelKind::Pin,
        }
    }

    /// Whether scores change with the evaluation horizon.
    pub fn horizon_dependent(&self) -> bool {
        matches!(self, FittedModel::Langbehn { .. })
    }

    /// Risk scores aligned with `cohort`. Only the Langbehn model uses
    /// `horizon`, scoring the probability of diagnosis within that many years.
    pub fn scores(&self, cohort: &Cohort, horizon: f64) -> Result<Vec<f64>> {
        match self {
            FittedModel::Langbehn { params, .. } => Ok(langbehn_score(params, cohort, horizon)?
                .into_iter()
                .map(|s| s.conditional_probability)
                .collect()),
            FittedModel::Cap(fit) => Ok(cap_score(fit, cohort)?.into_iter().map(|s| s.score).collect()),
            FittedModel::Mrs(fit) | FittedModel::Pin(fit) => {
                let spec = self.kind().design().expect("Cox models have a design");
                linear_predictor(fit, &build_design(&spec, cohort)?)
            }
        }
    }
}

/// Fit `kind` on `cohort`.
pub fn fit_model(kind: ModelKind, cohort: &Cohort, settings: &FitSettings) -> Result<FittedModel> {
    match kind {
        ModelKind::Langbehn => {
            let init = match settings.langbehn_init {
                Some(p) => p,
                None => LangbehnParams::initial_guess(cohort)?,
            };
            let fit = langbehn_fit(cohort, &init, &settings.langbehn)?;
            Ok(FittedModel::Langbehn {
                params: fit.params,
                fit: Some(fit),
            })
        }
        ModelKind::Cap => Ok(FittedModel::Cap(aft_fit(cohort, &settings.aft)?)),
        ModelKind::Mrs | ModelKind::Pin => {
            let spec = kind.design().expect("Cox models have a design");
            let design = build_design(&spec, cohort)?;
            let fit = cox_fit(&design, cohort, &settings.cox)?;
            Ok(if kind == ModelKind::Mrs {
                FittedModel::Mrs(fit)
            } else {
                FittedModel::Pin(fit)
            })
        }
    }
}

/// How a model obtains its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Fit(ModelKind),
    Published(FittedModel),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Fit(k) => *k,
            ModelSpec::Published(m) => m.kind(),
        }
    }

    /// Parameters for scoring, fitting on `train` when required.
    pub fn resolve(&self, train: &Cohort, settings: &FitSettings) -> Result<FittedModel> {
        match self {
            ModelSpec::Fit(k) => fit_model(*k, train, settings),
            ModelSpec::Published(m) => Ok(m.clone()),
        }
    }
}

//! Censoring-aware time-to-diagnosis modelling for prodromal Huntington disease cohorts.
//!
//! The crate fits four risk models (Langbehn logistic age-at-onset, the CAP
//! log-logistic AFT model, and the MRS/PIN Cox models), evaluates their risk
//! stratification with censoring-adjusted metrics (Uno's C, Kaplan-Meier
//! adjusted ROC curves) under event-stratified cross-validation, and plans
//! enriched preventative trials.
//!
//! ```no_run
//! use riskcast::{cohort, cox, metrics};
//!
//! # fn main() -> riskcast::Result<()> {
//! let ingested = cohort::ingest_csv("cohort.csv", &cohort::ColumnMap::default())?;
//! let analytic = cohort::filter_analytic(&ingested.cohort, 40, 57, true);
//!
//! let spec = cox::DesignSpec::pin();
//! let design = cox::build_design(&spec, &analytic)?;
//! let fit = cox::cox_fit(&design, &analytic, &cox::CoxOptions::default())?;
//! let scores = cox::linear_predictor(&fit, &design)?;
//!
//! let c = metrics::uno_c(&scores, &analytic, 5.0, metrics::Ties::Strict)?;
//! println!("Uno's C at 5 years: {:.3}", c.value);
//! # Ok(())
//! # }
//! ```

pub mod aft;
pub mod cohort;
pub mod config;
pub mod cox;
pub mod cv;
pub mod enrichment;
pub mod error;
pub mod km;
pub mod langbehn;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod simulate;
pub mod stats;

pub use cohort::{Cohort, Subject};
pub use error::{Error, Result};
pub use models::{FittedModel, ModelKind};

#[cfg(test)]
pub(crate) mod testutil;

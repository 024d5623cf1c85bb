//! TOML run configuration with strict key checking and published-parameter
//! injection.
//!
//! ```toml
//! [input]
//! path = "cohort.csv"
//!
//! [models.mrs]
//! mode = "fit"
//!
//! [models.pin]
//! mode = "published"
//! coefficients = { TMS = 0.1, SDMT = -0.02, CAP = 0.004 }
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aft::{AftFit, CapParams};
use crate::cohort::{ColumnMap, Cohort};
use crate::cox::{CoxFit, CoxOptions, TieMethod};
use crate::cv::CvSettings;
use crate::enrichment::PlanSettings;
use crate::error::{Error, Result};
use crate::langbehn::{default_b2_grid, LangbehnFitOptions, LangbehnParams};
use crate::metrics::Ties;
use crate::models::{FitSettings, FittedModel, ModelKind, ModelSpec};
use crate::simulate::SimSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fit,
    Published,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub columns: ColumnMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub cag_min: u32,
    pub cag_max: u32,
    pub require_undiagnosed: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            cag_min: 40,
            cag_max: 57,
            require_undiagnosed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangbehnConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g2: Option<f64>,
    /// `b2` values profiled when fitting; 50 log-spaced points on [0.05, 0.5] by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<LangbehnParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoxConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub langbehn: Option<LangbehnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<CapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mrs: Option<CoxConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin: Option<CoxConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Uno's C horizons; yearly from 1 to the largest whole follow-up year when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_grid: Option<Vec<f64>>,
    pub roc_times: Vec<f64>,
    pub ties: Ties,
    pub cox_ties: TieMethod,
    /// Horizon (years) of the Langbehn probability written by `score`.
    pub langbehn_horizon: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            tau_grid: None,
            roc_times: vec![3.0, 5.0],
            ties: Ties::Strict,
            cox_ties: TieMethod::Efron,
            langbehn_horizon: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    /// Pick the Langbehn `b2` once on the full cohort rather than per training fold.
    pub fix_langbehn_b2: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 5,
            seed: 20240101,
            fix_langbehn_b2: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichmentConfig {
    pub durations: Vec<f64>,
    pub effects: Vec<f64>,
    pub power: f64,
    pub alpha: f64,
    /// Models to plan for; the configured ones among CAP, MRS and PIN when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<ModelKind>>,
}

impl Default for EnrichmentConfig {
    fn default() -> Self {
        let p = PlanSettings::default();
        EnrichmentConfig {
            durations: p.durations,
            effects: p.effects,
            power: p.power,
            alpha: p.alpha,
            models: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputConfig>,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub enrichment: EnrichmentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimSpec>,
}

fn require(value: Option<f64>, path: &str) -> Result<f64> {
    match value {
        Some(v) if v.is_finite() => Ok(v),
        Some(v) => Err(Error::config(path, format!("value must be finite, got {v}"))),
        None => Err(Error::config(path, "required with mode = \"published\"")),
    }
}

fn forbid(present: bool, path: &str) -> Result<()> {
    if present {
        Err(Error::config(path, "only valid with mode = \"fit\""))
    } else {
        Ok(())
    }
}

fn forbid_published(present: bool, path: &str) -> Result<()> {
    if present {
        Err(Error::config(path, "only valid with mode = \"published\""))
    } else {
        Ok(())
    }
}

impl LangbehnConfig {
    fn resolve(&self) -> Result<Option<LangbehnParams>> {
        let p = "models.langbehn";
        match self.mode {
            Mode::Published => {
                forbid(self.b2_grid.is_some(), &format!("{p}.b2_grid"))?;
                forbid(self.init.is_some(), &format!("{p}.init"))?;
                let params = LangbehnParams {
                    b0: require(self.b0, &format!("{p}.b0"))?,
                    b1: require(self.b1, &format!("{p}.b1"))?,
                    b2: require(self.b2, &format!("{p}.b2"))?,
                    g0: require(self.g0, &format!("{p}.g0"))?,
                    g1: require(self.g1, &format!("{p}.g1"))?,
                    g2: require(self.g2, &format!("{p}.g2"))?,
                };
                params.validate().map_err(|e| Error::config(p, e.to_string()))?;
                Ok(Some(params))
            }
            Mode::Fit => {
                for (k, v) in [("b0", self.b0), ("b1", self.b1), ("b2", self.b2), ("g0", self.g0), ("g1", self.g1), ("g2", self.g2)] {
                    forbid_published(v.is_some(), &format!("{p}.{k}"))?;
                }
                if let Some(grid) = &self.b2_grid {
                    if grid.is_empty() || grid.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
                        return Err(Error::config(format!("{p}.b2_grid"), "must be a non-empty list of positive values"));
                    }
                }
                Ok(None)
            }
        }
    }
}

impl CapConfig {
    fn resolve(&self) -> Result<Option<AftFit>> {
        let p = "models.cap";
        match self.mode {
            Mode::Published => {
                let params = CapParams {
                    b0: require(self.b0, &format!("{p}.b0"))?,
                    b1: require(self.b1, &format!("{p}.b1"))?,
                    b2: require(self.b2, &format!("{p}.b2"))?,
                    sigma: require(self.sigma, &format!("{p}.sigma"))?,
                };
                AftFit::from_params(&params).map(Some).map_err(|e| Error::config(p, e.to_string()))
            }
            Mode::Fit => {
                for (k, v) in [("b0", self.b0), ("b1", self.b1), ("b2", self.b2), ("sigma", self.sigma)] {
                    forbid_published(v.is_some(), &format!("{p}.{k}"))?;
                }
                Ok(None)
            }
        }
    }
}

impl CoxConfig {
    fn resolve(&self, kind: ModelKind) -> Result<Option<CoxFit>> {
        let p = format!("models.{}", kind.key());
        let spec = kind.design().expect("Cox model");
        match (self.mode, &self.coefficients) {
            (Mode::Published, Some(map)) => {
                for key in map.keys() {
                    if !spec.term_names().contains(&key.as_str()) {
                        return Err(Error::config(
                            format!("{p}.coefficients.{key}"),
                            format!("unknown term; expected one of {}", spec.term_names().join(", ")),
                        ));
                    }
                }
                for name in spec.term_names() {
                    require(map.get(name).copied(), &format!("{p}.coefficients.{name}"))?;
                }
                CoxFit::from_coefficients(&spec, map)
                    .map(Some)
                    .map_err(|e| Error::config(&p, e.to_string()))
            }
            (Mode::Published, None) => Err(Error::config(format!("{p}.coefficients"), "required with mode = \"published\"")),
            (Mode::Fit, Some(_)) => Err(Error::config(format!("{p}.coefficients"), "only valid with mode = \"published\"")),
            (Mode::Fit, None) => Ok(None),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter.cag_min > self.filter.cag_max {
            return Err(Error::config("filter.cag_min", "must not exceed filter.cag_max"));
        }
        let configured: Vec<ModelKind> = self.configured_specs()?.iter().map(|m| m.kind()).collect();
        if let Some(grid) = &self.evaluation.tau_grid {
            check_times(grid, "evaluation.tau_grid")?;
        }
        check_times(&self.evaluation.roc_times, "evaluation.roc_times")?;
        if !(self.evaluation.langbehn_horizon > 0.0) {
            return Err(Error::config("evaluation.langbehn_horizon", "must be positive"));
        }
        if self.cv.k < 2 {
            return Err(Error::config("cv.k", "must be at least 2"));
        }
        let e = &self.enrichment;
        check_times(&e.durations, "enrichment.durations")?;
        if e.effects.is_empty() || e.effects.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::config("enrichment.effects", "each effect must lie in (0, 1)"));
        }
        if !(e.power > 0.0 && e.power < 1.0) {
            return Err(Error::config("enrichment.power", "must lie in (0, 1)"));
        }
        if !(e.alpha > 0.0 && e.alpha < 1.0) {
            return Err(Error::config("enrichment.alpha", "must lie in (0, 1)"));
        }
        if let Some(models) = &e.models {
            for m in models {
                if !configured.contains(m) {
                    return Err(Error::config("enrichment.models", format!("model `{}` is not configured under [models]", m.key())));
                }
            }
        }
        Ok(())
    }

    /// Configured models in the fixed order Langbehn, CAP, MRS, PIN; at least one is required.
    pub fn model_specs(&self) -> Result<Vec<ModelSpec>> {
        let out = self.configured_specs()?;
        if out.is_empty() {
            return Err(Error::config("models", "at least one model must be configured"));
        }
        Ok(out)
    }

    /// Configured models, possibly none.
    pub fn configured_specs(&self) -> Result<Vec<ModelSpec>> {
        let mut out = Vec::new();
        if let Some(c) = &self.models.langbehn {
            out.push(match c.resolve()? {
                Some(params) => ModelSpec::Published(FittedModel::Langbehn { params, fit: None }),
                None => ModelSpec::Fit(ModelKind::Langbehn),
            });
        }
        if let Some(c) = &self.models.cap {
            out.push(match c.resolve()? {
                Some(fit) => ModelSpec::Published(FittedModel::Cap(fit)),
                None => ModelSpec::Fit(ModelKind::Cap),
            });
        }
        for (kind, cfg) in [(ModelKind::Mrs, &self.models.mrs), (ModelKind::Pin, &self.models.pin)] {
            if let Some(c) = cfg {
                out.push(match c.resolve(kind)? {
                    Some(fit) if kind == ModelKind::Mrs => ModelSpec::Published(FittedModel::Mrs(fit)),
                    Some(fit) => ModelSpec::Published(FittedModel::Pin(fit)),
                    None => ModelSpec::Fit(kind),
                });
            }
        }
        Ok(out)
    }

    pub fn fit_settings(&self) -> FitSettings {
        let mut langbehn = LangbehnFitOptions::default();
        let mut init = None;
        if let Some(c) = &self.models.langbehn {
            langbehn.b2_grid = c.b2_grid.clone().unwrap_or_else(default_b2_grid);
            init = c.init;
        }
        FitSettings {
            langbehn,
            langbehn_init: init,
            aft: Default::default(),
            cox: CoxOptions {
                ties: self.evaluation.cox_ties,
                ..Default::default()
            },
        }
    }

    /// The configured grid, or yearly horizons `1..=floor(max follow-up)`.
    pub fn tau_grid(&self, cohort: &Cohort) -> Vec<f64> {
        match &self.evaluation.tau_grid {
            Some(g) => g.clone(),
            None => default_tau_grid(cohort),
        }
    }

    pub fn cv_settings(&self, cohort: &Cohort) -> CvSettings {
        CvSettings {
            k: self.cv.k,
            seed: self.cv.seed,
            tau_grid: self.tau_grid(cohort),
            roc_times: self.evaluation.roc_times.clone(),
            ties: self.evaluation.ties,
            fit: self.fit_settings(),
            fix_langbehn_b2: self.cv.fix_langbehn_b2,
        }
    }

    pub fn plan_settings(&self) -> PlanSettings {
        PlanSettings {
            durations: self.enrichment.durations.clone(),
            effects: self.enrichment.effects.clone(),
            power: self.enrichment.power,
            alpha: self.enrichment.alpha,
        }
    }

    /// Models to plan enrichment for.
    pub fn enrichment_models(&self) -> Result<Vec<ModelSpec>> {
        let specs = self.model_specs()?;
        Ok(match &self.enrichment.models {
            Some(wanted) => specs.into_iter().filter(|s| wanted.contains(&s.kind())).collect(),
            None => specs.into_iter().filter(|s| s.kind() != ModelKind::Langbehn).collect(),
        })
    }

    /// Makes relative paths absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(input) = &mut self.input {
            if input.path.is_relative() {
                input.path = base.join(&input.path);
            }
        }
        if let Some(out) = &mut self.output_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
    }
}

fn check_times(values: &[f64], path: &str) -> Result<()> {
    if values.is_empty() || values.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::config(path, "must be a non-empty list of positive times"));
    }
    Ok(())
}

pub fn default_tau_grid(cohort: &Cohort) -> Vec<f64> {
    let max = cohort.max_time().floor() as u32;
    (1..=max.max(1)).map(f64::from).collect()
}

/// Reads, parses and validates a config file; relative paths inside it are
/// resolved against its directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = RunConfig::from_toml_str(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.resolve_paths(&base);
    Ok(cfg)
}

pub fn save_config(cfg: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cfg.to_toml_string()?).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[input]\npath = \"c.csv\"\n\n[models.cap]\nmode = \"fit\"\n";

    fn pin_block(n: usize) -> String {
        let terms = ["TMS", "SDMT", "CAP"];
        let body: Vec<String> = terms[..n].iter().map(|t| format!("{t} = 0.1")).collect();
        format!("[models.pin]\nmode = \"published\"\n[models.pin.coefficients]\n{}\n", body.join("\n"))
    }

    #[test]
    fn minimal_gets_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.filter, FilterConfig::default());
        assert_eq!(cfg.cv.k, 5);
        assert_eq!(cfg.enrichment.effects, vec![0.3, 0.4, 0.5]);
        assert_eq!(cfg.model_specs().unwrap(), vec![ModelSpec::Fit(ModelKind::Cap)]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_toml_str(&format!("{MINIMAL}\n[cv]\nkk = 3\n")).unwrap_err();
        assert!(e.to_string().contains("kk"), "{e}");
        let e = RunConfig::from_toml_str("[models.foo]\nmode = \"fit\"\n").unwrap_err();
        assert!(e.to_string().contains("foo"), "{e}");
    }

    #[test]
    fn incomplete_published_block_names_term() {
        assert!(RunConfig::from_toml_str(&pin_block(3)).is_ok());
        let e = RunConfig::from_toml_str(&pin_block(2)).unwrap_err();
        assert!(e.to_string().contains("models.pin.coefficients.CAP"), "{e}");
        let mrs: Vec<String> = crate::cox::DesignSpec::mrs().term_names()[..12].iter().map(|t| format!("{t} = 0.0")).collect();
        let text = format!("[models.mrs]\nmode = \"published\"\n[models.mrs.coefficients]\n{}\n", mrs.join("\n"));
        let e = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(e.to_string().contains("CAGxAge"), "{e}");
        let e = RunConfig::from_toml_str("[models.cap]\nmode = \"published\"\nb0 = 1.0\nb1 = 1.0\nb2 = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("models.cap.sigma"), "{e}");
    }

    #[test]
    fn mode_mismatch_rejected() {
        let e = RunConfig::from_toml_str("[models.cap]\nmode = \"fit\"\nb0 = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("models.cap.b0"));
        assert!(RunConfig::from_toml_str("[models.cap]\nmode = \"fit\"\n[cv]\nk = 1\n").is_err());
        assert!(RunConfig::from_toml_str("").unwrap().model_specs().is_err());
    }

    #[test]
    fn round_trip() {
        let text = format!(
            "output_dir = \"out\"\n{MINIMAL}\n[models.langbehn]\nmode = \"published\"\nb0 = 21.5\nb1 = 9.5\nb2 = 0.145\ng0 = 35.5\ng1 = 17.7\ng2 = 0.327\n{}\n[evaluation]\ntau_grid = [1.0, 2.0]\n\n[simulate]\nn = 10\nseed = 3\n[simulate.truth]\nmodel = \"aft\"\nb0 = 4.5\nb1 = -0.0065\nb2 = -34.0\nsigma = 0.3\n",
            pin_block(3)
        );
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        save_config(&cfg, &p).unwrap();
        let mut loaded = load_config(&p).unwrap();
        assert_eq!(loaded.input.as_ref().unwrap().path, dir.path().join("c.csv"));
        loaded.input = cfg.input.clone();
        loaded.output_dir = cfg.output_dir.clone();
        assert_eq!(loaded, cfg);
    }
}

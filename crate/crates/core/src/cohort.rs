//! Right-censored cohort records, CSV ingestion, analytic filtering and the
//! event-stratified baseline summary.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

/// Baseline covariates a model may require.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Age,
    Cag,
    Dcl,
    Tms,
    Sdmt,
    StroopWord,
    StroopColor,
    StroopInterference,
}

impl Covariate {
    pub fn name(self) -> &'static str {
        match self {
            Covariate::Age => "age_enroll",
            Covariate::Cag => "cag",
            Covariate::Dcl => "dcl",
            Covariate::Tms => "tms",
            Covariate::Sdmt => "sdmt",
            Covariate::StroopWord => "stroop_word",
            Covariate::StroopColor => "stroop_color",
            Covariate::StroopInterference => "stroop_interference",
        }
    }
}

/// One observed patient: follow-up time `W`, event indicator and baseline covariates.
///
/// `time` is measured in years from enrollment. Covariates other than age and
/// CAG may be missing; scoring rejects subjects missing what a model needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub age_enroll: f64,
    pub cag: u32,
    pub dcl: Option<u8>,
    pub tms: Option<f64>,
    pub sdmt: Option<f64>,
    pub stroop_word: Option<f64>,
    pub stroop_color: Option<f64>,
    pub stroop_interference: Option<f64>,
    pub sex: Option<Sex>,
    pub time: f64,
    pub event: bool,
}

impl Subject {
    pub fn covariate(&self, c: Covariate) -> Option<f64> {
        match c {
            Covariate::Age => Some(self.age_enroll),
            Covariate::Cag => Some(f64::from(self.cag)),
            Covariate::Dcl => self.dcl.map(f64::from),
            Covariate::Tms => self.tms,
            Covariate::Sdmt => self.sdmt,
            Covariate::StroopWord => self.stroop_word,
            Covariate::StroopColor => self.stroop_color,
            Covariate::StroopInterference => self.stroop_interference,
        }
    }

    pub fn require(&self, c: Covariate) -> Result<f64> {
        self.covariate(c).ok_or_else(|| Error::MissingCovariate {
            subject: self.id.clone(),
            column: c.name().to_string(),
        })
    }

    /// Age at the end of follow-up (diagnosis or censoring).
    pub fn exit_age(&self) -> f64 {
        self.age_enroll + self.time
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.time.is_finite() && self.time > 0.0) {
            return Err(format!("time must be positive, got {}", self.time));
        }
        if !(self.age_enroll.is_finite() && self.age_enroll > 0.0) {
            return Err(format!("age_enroll must be positive, got {}", self.age_enroll));
        }
        if let Some(d) = self.dcl {
            if d > 4 {
                return Err(format!("dcl must be in 0..=4, got {d}"));
            }
        }
        let nonneg = [
            ("tms", self.tms),
            ("sdmt", self.sdmt),
            ("stroop_word", self.stroop_word),
            ("stroop_color", self.stroop_color),
            ("stroop_interference", self.stroop_interference),
        ];
        for (name, v) in nonneg {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(format!("{name} must be non-negative, got {v}"));
                }
            }
        }
        Ok(())
    }
}

/// An ordered set of subjects with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    subjects: Vec<Subject>,
    pub provenance: String,
}

impl Cohort {
    pub fn new(subjects: Vec<Subject>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(subjects.len());
        for s in &subjects {
            s.validate().map_err(|reason| Error::InvalidSubject {
                id: s.id.clone(),
                reason,
            })?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Cohort {
            subjects,
            provenance: provenance.into(),
        })
    }

    pub fn empty(provenance: impl Into<String>) -> Self {
        Cohort {
            subjects: Vec::new(),
            provenance: provenance.into(),
        }
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }

    /// `1 - n_event / n_total`; zero for an empty cohort.
    pub fn censoring_rate(&self) -> f64 {
        if self.subjects.is_empty() {
            return 0.0;
        }
        1.0 - self.n_events() as f64 / self.subjects.len() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.event).collect()
    }

    pub fn max_time(&self) -> f64 {
        self.subjects.iter().map(|s| s.time).fold(0.0, f64::max)
    }

    /// Subset by position, preserving the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> Cohort {
        Cohort {
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Subset by predicate, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&Subject) -> bool) -> Cohort {
        Cohort {
            subjects: self.subjects.iter().filter(|s| keep(s)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Maps each subject field to a CSV header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub id: String,
    pub age_enroll: String,
    pub cag: String,
    pub dcl: String,
    pub tms: String,
    pub sdmt: String,
    pub stroop_word: String,
    pub stroop_color: String,
    pub stroop_interference: String,
    pub sex: String,
    pub time: String,
    pub event: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".into(),
            age_enroll: "age_enroll".into(),
            cag: "cag".into(),
            dcl: "dcl".into(),
            tms: "tms".into(),
            sdmt: "sdmt".into(),
            stroop_word: "stroop_word".into(),
            stroop_color: "stroop_color".into(),
            stroop_interference: "stroop_interference".into(),
            sex: "sex".into(),
            time: "time".into(),
            event: "event".into(),
        }
    }
}

/// A data row that could not be turned into a [`Subject`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    /// 1-based line number in the file (the header is line 1).
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub cohort: Cohort,
    pub rejections: Vec<Rejection>,
}

fn is_missing(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t == "NA"
}

fn parse_opt<T: std::str::FromStr>(raw: Option<&str>, name: &str) -> std::result::Result<Option<T>, String> {
    match raw {
        None => Ok(None),
        Some(r) if is_missing(r) => Ok(None),
        Some(r) => r
            .trim()
            .parse::<T>()
            .map(Some)
            .map_err(|_| format!("cannot parse {name} from `{r}`")),
    }
}

fn parse_req<T: std::str::FromStr>(raw: Option<&str>, name: &str) -> std::result::Result<T, String> {
    parse_opt(raw, name)?.ok_or_else(|| format!("{name} is missing"))
}

fn parse_event(raw: &str) -> std::result::Result<bool, String> {
    match raw.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        r if is_missing(r) => Err("event is missing".into()),
        r => Err(format!("cannot parse event from `{r}`")),
    }
}

fn parse_sex(raw: Option<&str>) -> std::result::Result<Option<Sex>, String> {
    match raw.map(str::trim) {
        None => Ok(None),
        Some(r) if is_missing(r) => Ok(None),
        Some(r) => match r.to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Some(Sex::Male)),
            "female" | "f" => Ok(Some(Sex::Female)),
            _ => Err(format!("cannot parse sex from `{r}`")),
        },
    }
}

/// Reads a cohort from a comma-separated file with a header row.
///
/// Required columns are `id`, `age_enroll`, `cag`, `time` and `event` (under
/// their mapped names); the rest may be absent from the header entirely.
/// Empty fields and `NA` are missing values. Rows that fail to parse, violate
/// a subject invariant or repeat an id are skipped and reported.
pub fn ingest_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<Ingested> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(std::io::BufReader::new(file));
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let id_col = require(&columns.id)?;
    let age_col = require(&columns.age_enroll)?;
    let cag_col = require(&columns.cag)?;
    let time_col = require(&columns.time)?;
    let event_col = require(&columns.event)?;
    let dcl_col = find(&columns.dcl);
    let tms_col = find(&columns.tms);
    let sdmt_col = find(&columns.sdmt);
    let word_col = find(&columns.stroop_word);
    let color_col = find(&columns.stroop_color);
    let inter_col = find(&columns.stroop_interference);
    let sex_col = find(&columns.sex);

    let mut subjects = Vec::new();
    let mut rejections = Vec::new();
    let mut seen = HashSet::new();

    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejections.push(Rejection {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let field = |col: Option<usize>| col.and_then(|c| record.get(c));
        let parsed = (|| -> std::result::Result<Subject, String> {
            let id = field(Some(id_col)).map(str::trim).unwrap_or("");
            if id.is_empty() || id == "NA" {
                return Err("id is missing".into());
            }
            let subject = Subject {
                id: id.to_string(),
                age_enroll: parse_req(field(Some(age_col)), &columns.age_enroll)?,
                cag: parse_req(field(Some(cag_col)), &columns.cag)?,
                dcl: parse_opt(field(dcl_col), &columns.dcl)?,
                tms: parse_opt(field(tms_col), &columns.tms)?,
                sdmt: parse_opt(field(sdmt_col), &columns.sdmt)?,
                stroop_word: parse_opt(field(word_col), &columns.stroop_word)?,
                stroop_color: parse_opt(field(color_col), &columns.stroop_color)?,
                stroop_interference: parse_opt(field(inter_col), &columns.stroop_interference)?,
                sex: parse_sex(field(sex_col))?,
                time: parse_req(field(Some(time_col)), &columns.time)?,
                event: parse_event(field(Some(event_col)).unwrap_or(""))?,
            };
            subject.validate()?;
            Ok(subject)
        })();
        match parsed {
            Ok(s) => {
                if !seen.insert(s.id.clone()) {
                    rejections.push(Rejection {
                        line,
                        reason: format!("duplicate id `{}`", s.id),
                    });
                } else {
                    subjects.push(s);
                }
            }
            Err(reason) => rejections.push(Rejection { line, reason }),
        }
    }

    if subjects.is_empty() {
        return Err(Error::NoValidRows(path.display().to_string()));
    }
    for r in &rejections {
        log::warn!("{}: row on line {} rejected: {}", path.display(), r.line, r.reason);
    }
    Ok(Ingested {
        cohort: Cohort {
            subjects,
            provenance: path.display().to_string(),
        },
        rejections,
    })
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".to_string())
}

/// Serializes a cohort in the default column layout read by [`ingest_csv`].
/// Floats use Rust's shortest round-trip formatting.
pub fn to_csv_string(cohort: &Cohort) -> String {
    let mut out = String::from(
        "id,age_enroll,cag,dcl,tms,sdmt,stroop_word,stroop_color,stroop_interference,sex,time,event\n",
    );
    for s in &cohort.subjects {
        let sex = match s.sex {
            Some(Sex::Male) => "male",
            Some(Sex::Female) => "female",
            None => "NA",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.id,
            s.age_enroll,
            s.cag,
            fmt_opt(s.dcl),
            fmt_opt(s.tms),
            fmt_opt(s.sdmt),
            fmt_opt(s.stroop_word),
            fmt_opt(s.stroop_color),
            fmt_opt(s.stroop_interference),
            sex,
            s.time,
            u8::from(s.event)
        );
    }
    out
}

/// Keeps subjects with `cag_min <= cag <= cag_max` and, when
/// `require_undiagnosed`, a recorded baseline DCL below 4. Subjects with an
/// unknown DCL cannot be confirmed undiagnosed and are dropped in that case.
pub fn filter_analytic(cohort: &Cohort, cag_min: u32, cag_max: u32, require_undiagnosed: bool) -> Cohort {
    cohort.filter(|s| {
        s.cag >= cag_min
            && s.cag <= cag_max
            && (!require_undiagnosed || matches!(s.dcl, Some(d) if d < 4))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSd {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); absent when n < 2.
    pub sd: Option<f64>,
}

impl MeanSd {
    fn of(values: impl Iterator<Item = f64>) -> Option<MeanSd> {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| {
            let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Some(MeanSd { n, mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryCount {
    pub level: String,
    pub count: usize,
    pub percent: f64,
}

fn categories<K: Ord + ToString>(values: impl Iterator<Item = K>, levels: &[K]) -> Vec<CategoryCount>
where
    K: Clone,
{
    let mut counts: BTreeMap<K, usize> = levels.iter().cloned().map(|k| (k, 0)).collect();
    for v in values {
        *counts.entry(v).or_insert(0) += 1;
    }
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(k, count)| CategoryCount {
            level: k.to_string(),
            count,
            percent: if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 },
        })
        .collect()
}

/// Baseline summary of one event stratum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumSummary {
    pub n: usize,
    pub age_enroll: Option<MeanSd>,
    pub cag: Option<MeanSd>,
    pub tms: Option<MeanSd>,
    pub sdmt: Option<MeanSd>,
    pub stroop_word: Option<MeanSd>,
    pub stroop_color: Option<MeanSd>,
    pub stroop_interference: Option<MeanSd>,
    pub sex: Vec<CategoryCount>,
    pub dcl: Vec<CategoryCount>,
}

impl StratumSummary {
    fn of(subjects: &[&Subject]) -> Self {
        let num = |c: Covariate| MeanSd::of(subjects.iter().filter_map(|s| s.covariate(c)));
        let sex_label = |s: Sex| match s {
            Sex::Male => "male".to_string(),
            Sex::Female => "female".to_string(),
        };
        StratumSummary {
            n: subjects.len(),
            age_enroll: num(Covariate::Age),
            cag: num(Covariate::Cag),
            tms: num(Covariate::Tms),
            sdmt: num(Covariate::Sdmt),
            stroop_word: num(Covariate::StroopWord),
            stroop_color: num(Covariate::StroopColor),
            stroop_interference: num(Covariate::StroopInterference),
            sex: categories(
                subjects.iter().filter_map(|s| s.sex.map(sex_label)),
                &["female".to_string(), "male".to_string()],
            ),
            dcl: categories(subjects.iter().filter_map(|s| s.dcl), &[0u8, 1, 2, 3]),
        }
    }

    fn continuous(&self) -> [(&'static str, &Option<MeanSd>); 7] {
        [
            ("age_enroll", &self.age_enroll),
            ("cag", &self.cag),
            ("tms", &self.tms),
            ("sdmt", &self.sdmt),
            ("stroop_word", &self.stroop_word),
            ("stroop_color", &self.stroop_color),
            ("stroop_interference", &self.stroop_interference),
        ]
    }
}

/// Baseline characteristics stratified by event status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortSummary {
    pub n_total: usize,
    pub n_event: usize,
    pub n_censored: usize,
    pub censoring_rate: f64,
    pub censored: StratumSummary,
    pub diagnosed: StratumSummary,
}

pub fn summarize(cohort: &Cohort) -> Result<CohortSummary> {
    if cohort.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let (diag, cens): (Vec<&Subject>, Vec<&Subject>) = cohort.subjects.iter().partition(|s| s.event);
    Ok(CohortSummary {
        n_total: cohort.len(),
        n_event: diag.len(),
        n_censored: cens.len(),
        censoring_rate: cohort.censoring_rate(),
        censored: StratumSummary::of(&cens),
        diagnosed: StratumSummary::of(&diag),
    })
}

impl CohortSummary {
    /// Flat `key = value` report, one statistic per line.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_total = {}", self.n_total);
        let _ = writeln!(out, "n_event = {}", self.n_event);
        let _ = writeln!(out, "n_censored = {}", self.n_censored);
        let _ = writeln!(out, "censoring_rate = {}", self.censoring_rate);
        for (label, stratum) in [("censored", &self.censored), ("diagnosed", &self.diagnosed)] {
            let _ = writeln!(out, "{label}.n = {}", stratum.n);
            for (name, stat) in stratum.continuous() {
                match stat {
                    Some(m) => {
                        let _ = writeln!(out, "{label}.{name}.mean = {}", m.mean);
                        let _ = writeln!(out, "{label}.{name}.sd = {}", fmt_opt(m.sd));
                    }
                    None => {
                        let _ = writeln!(out, "{label}.{name}.mean = NA");
                        let _ = writeln!(out, "{label}.{name}.sd = NA");
                    }
                }
            }
            for (group, cats) in [("sex", &stratum.sex), ("dcl", &stratum.dcl)] {
                for c in cats {
                    let _ = writeln!(out, "{label}.{group}.{}.count = {}", c.level, c.count);
                    let _ = writeln!(out, "{label}.{group}.{}.percent = {}", c.level, c.percent);
                }
            }
        }
        out
    }

    /// Human-readable table: means (SD) for continuous variables and
    /// counts (percent) for categorical ones, censored column first.
    pub fn to_table(&self) -> String {
        fn cell(m: &Option<MeanSd>) -> String {
            match m {
                Some(MeanSd { mean, sd: Some(sd), .. }) => format!("{mean:.2} ({sd:.2})"),
                Some(MeanSd { mean, sd: None, .. }) => format!("{mean:.2} (NA)"),
                None => "NA".to_string(),
            }
        }
        fn cat(c: &CategoryCount) -> String {
            format!("{} ({:.1}%)", c.count, c.percent)
        }
        let mut rows: Vec<(String, String, String)> = vec![
            (
                "Number of patients".into(),
                self.n_censored.to_string(),
                self.n_event.to_string(),
            ),
            ("Age at enrollment".into(), cell(&self.censored.age_enroll), cell(&self.diagnosed.age_enroll)),
            ("Sex".into(), String::new(), String::new()),
        ];
        for (c, d) in self.censored.sex.iter().zip(&self.diagnosed.sex) {
            rows.push((format!("  {}", c.level), cat(c), cat(d)));
        }
        rows.push(("CAG repeats".into(), cell(&self.censored.cag), cell(&self.diagnosed.cag)));
        rows.push(("DCL".into(), String::new(), String::new()));
        for (c, d) in self.censored.dcl.iter().zip(&self.diagnosed.dcl) {
            rows.push((format!("  {}", c.level), cat(c), cat(d)));
        }
        rows.push(("TMS".into(), cell(&self.censored.tms), cell(&self.diagnosed.tms)));
        rows.push(("SDMT".into(), cell(&self.censored.sdmt), cell(&self.diagnosed.sdmt)));
        rows.push(("Stroop word".into(), cell(&self.censored.stroop_word), cell(&self.diagnosed.stroop_word)));
        rows.push(("Stroop color".into(), cell(&self.censored.stroop_color), cell(&self.diagnosed.stroop_color)));
        rows.push((
            "Stroop interference".into(),
            cell(&self.censored.stroop_interference),
            cell(&self.diagnosed.stroop_interference),
        ));

        let mut out = String::new();
        let _ = writeln!(out, "{:<24}{:<24}{:<24}", "Variable", "Undiagnosed (censored)", "Diagnosed");
        for (a, b, c) in rows {
            let _ = writeln!(out, "{a:<24}{b:<24}{c:<24}");
        }
        let _ = writeln!(out, "Censoring rate: {:.4}", self.censoring_rate);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::subject;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "id,age_enroll,cag,dcl,tms,sdmt,stroop_word,stroop_color,stroop_interference,sex,time,event\n";

    #[test]
    fn ingest_three_valid_rows() {
        let f = write_tmp(&format!(
            "{HEADER}a,40,44,0,2,50,90,70,40,female,3.5,1\nb,35.5,42,1,0,55,95,72,44,male,5,0\nc,50,47,2,10,NA,,60,30,NA,1.25,1\n"
        ));
        let got = ingest_csv(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(got.cohort.len(), 3);
        assert!(got.rejections.is_empty());
        let c = &got.cohort.subjects()[2];
        assert_eq!(c.sdmt, None);
        assert_eq!(c.stroop_word, None);
        assert_eq!(c.sex, None);
        assert_eq!(c.time, 1.25);
    }

    #[test]
    fn na_time_is_rejected_with_line_number() {
        let f = write_tmp(&format!(
            "{HEADER}a,40,44,0,2,50,90,70,40,female,3.5,1\nb,35.5,42,1,0,55,95,72,44,male,NA,0\nc,50,47,2,10,45,80,60,30,male,1.25,1\n"
        ));
        let got = ingest_csv(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(got.cohort.len(), 2);
        assert_eq!(got.rejections.len(), 1);
        assert_eq!(got.rejections[0].line, 3);
        assert!(got.rejections[0].reason.contains("time"));
    }

    #[test]
    fn missing_mapped_column_is_an_error() {
        let f = write_tmp("id,age_enroll,cag,event\na,40,44,1\n");
        match ingest_csv(f.path(), &ColumnMap::default()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "time"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn renamed_columns_are_honoured() {
        let f = write_tmp("subject,age,repeats,W,delta\nx,40,44,2.5,1\n");
        let map = ColumnMap {
            id: "subject".into(),
            age_enroll: "age".into(),
            cag: "repeats".into(),
            time: "W".into(),
            event: "delta".into(),
            ..ColumnMap::default()
        };
        let got = ingest_csv(f.path(), &map).unwrap();
        assert_eq!(got.cohort.subjects()[0].cag, 44);
        assert_eq!(got.cohort.subjects()[0].dcl, None);
    }

    #[test]
    fn zero_valid_rows_and_missing_file() {
        let f = write_tmp(&format!("{HEADER}a,40,44,0,2,50,90,70,40,female,-1,1\n"));
        assert!(matches!(ingest_csv(f.path(), &ColumnMap::default()), Err(Error::NoValidRows(_))));
        assert!(matches!(
            ingest_csv("/nonexistent/cohort.csv", &ColumnMap::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let f = write_tmp(&format!(
            "{HEADER}a,40,44,0,2,50,90,70,40,female,3.5,1\na,41,44,0,2,50,90,70,40,female,3.5,0\n"
        ));
        let got = ingest_csv(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(got.cohort.len(), 1);
        assert!(got.rejections[0].reason.contains("duplicate"));
    }

    #[test]
    fn filter_keeps_bounds_and_undiagnosed() {
        let mut subjects = Vec::new();
        for (i, (cag, dcl)) in [(39, Some(0)), (40, Some(3)), (57, Some(1)), (58, Some(0)), (45, Some(4)), (45, None)]
            .into_iter()
            .enumerate()
        {
            let mut s = subject(&format!("s{i}"), 1.0, false);
            s.cag = cag;
            s.dcl = dcl;
            subjects.push(s);
        }
        let cohort = Cohort::new(subjects, "test").unwrap();
        let kept = filter_analytic(&cohort, 40, 57, true);
        let ids: Vec<&str> = kept.subjects().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["s1", "s2"]);
        let loose = filter_analytic(&cohort, 40, 57, false);
        assert_eq!(loose.len(), 4);
        assert!(filter_analytic(&Cohort::empty("e"), 40, 57, true).is_empty());
    }

    #[test]
    fn summary_of_single_subject_has_no_sd() {
        let cohort = Cohort::new(vec![subject("a", 2.0, true)], "one").unwrap();
        let s = summarize(&cohort).unwrap();
        assert_eq!(s.n_total, 1);
        assert_eq!(s.n_event, 1);
        let age = s.diagnosed.age_enroll.as_ref().unwrap();
        assert_eq!(age.mean, 40.0);
        assert_eq!(age.sd, None);
        assert!(s.censored.age_enroll.is_none());
        assert!(matches!(summarize(&Cohort::empty("e")), Err(Error::EmptyCohort)));
    }

    #[test]
    fn summary_percentages_sum_to_100() {
        let subjects: Vec<Subject> = (0..37)
            .map(|i| {
                let mut s = subject(&format!("s{i}"), 1.0 + i as f64, i % 3 == 0);
                s.dcl = Some((i % 4) as u8);
                s.sex = Some(if i % 5 == 0 { Sex::Male } else { Sex::Female });
                s.age_enroll = 30.0 + i as f64;
                s
            })
            .collect();
        let cohort = Cohort::new(subjects, "t").unwrap();
        let s = summarize(&cohort).unwrap();
        assert_eq!(s.n_event + s.n_censored, s.n_total);
        for stratum in [&s.censored, &s.diagnosed] {
            let dcl: f64 = stratum.dcl.iter().map(|c| c.percent).sum();
            let sex: f64 = stratum.sex.iter().map(|c| c.percent).sum();
            assert!((dcl - 100.0).abs() < 0.1);
            assert!((sex - 100.0).abs() < 0.1);
        }
        let kv = s.to_key_value();
        assert!(kv.contains("n_total = 37"));
        assert!(s.to_table().contains("Number of patients"));
        assert_eq!(s.censoring_rate, 1.0 - 13.0 / 37.0);
    }
}

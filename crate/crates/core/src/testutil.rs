use crate::cohort::{Cohort, Sex, Subject};

pub(crate) fn subject(id: &str, time: f64, event: bool) -> Subject {
    Subject {
        id: id.into(),
        age_enroll: 40.0,
        cag: 44,
        dcl: Some(0),
        tms: Some(2.0),
        sdmt: Some(50.0),
        stroop_word: Some(90.0),
        stroop_color: Some(70.0),
        stroop_interference: Some(40.0),
        sex: Some(Sex::Female),
        time,
        event,
    }
}

/// Cohort from `(time, event)` pairs with placeholder covariates.
pub(crate) fn cohort_of(obs: &[(f64, bool)]) -> Cohort {
    let subjects = obs
        .iter()
        .enumerate()
        .map(|(i, &(t, e))| subject(&format!("s{i}"), t, e))
        .collect();
    Cohort::new(subjects, "test").unwrap()
}

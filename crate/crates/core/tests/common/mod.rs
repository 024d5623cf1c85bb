#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskcast::cohort::{Cohort, Sex, Subject};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn subject(id: String, time: f64, event: bool) -> Subject {
    Subject {
        id,
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

pub fn cohort_of(obs: &[(f64, bool)]) -> Cohort {
    let subjects = obs
        .iter()
        .enumerate()
        .map(|(i, &(t, e))| subject(format!("s{i}"), t, e))
        .collect();
    Cohort::new(subjects, "test").unwrap()
}

/// Small cohort on a coarse time grid, so ties in time are common.
pub fn tied_obs(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, bool)> {
    (0..n)
        .map(|_| (f64::from(rng.random_range(1u32..=6)), rng.random_bool(0.6)))
        .collect()
}

/// Continuous times, so no ties.
pub fn continuous_obs(rng: &mut ChaCha8Rng, n: usize, censor_prob: f64) -> Vec<(f64, bool)> {
    (0..n)
        .map(|_| (rng.random_range(0.1..10.0), !rng.random_bool(censor_prob)))
        .collect()
}

/// Cohort with varied covariates and times loosely linked to them.
pub fn varied_cohort(rng: &mut ChaCha8Rng, n: usize) -> Cohort {
    let subjects = (0..n)
        .map(|i| {
            let age: f64 = rng.random_range(20.0..60.0);
            let cag = rng.random_range(40u32..=50);
            let tms: f64 = rng.random_range(0.0..20.0);
            let sdmt: f64 = rng.random_range(20.0..70.0);
            let risk = 0.05 * tms - 0.02 * sdmt + 0.002 * age * (f64::from(cag) - 34.0);
            let time = rng.random_range(0.2..8.0) * (-risk).exp();
            Subject {
                id: format!("v{i}"),
                age_enroll: age,
                cag,
                dcl: Some(rng.random_range(0u8..4)),
                tms: Some(tms),
                sdmt: Some(sdmt),
                stroop_word: Some(rng.random_range(50.0..120.0)),
                stroop_color: Some(rng.random_range(40.0..100.0)),
                stroop_interference: Some(rng.random_range(20.0..70.0)),
                sex: Some(if rng.random_bool(0.4) { Sex::Male } else { Sex::Female }),
                time,
                event: rng.random_bool(0.5),
            }
        })
        .collect();
    Cohort::new(subjects, "varied").unwrap()
}

/// Indices sorting `v` ascending, ties broken by index.
pub fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

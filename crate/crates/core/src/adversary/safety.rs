//! Randomised within-bound rounds: honest scores in one interval, at most
//! `trim_count` adversarial extremes on each side.

use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{trim_count, trimmed_weighted_mean};
use crate::model::{Classification, ReviewStatus, Submission, SubmitterCategory};
use crate::seed::Seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyCase {
    pub theta: f64,
    pub submissions: Vec<Submission>,
    /// Inclusive ordinal range of honest classes.
    pub honest: (usize, usize),
    pub adversaries: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub consensus_score: f64,
    pub honest_low: f64,
    pub honest_high: f64,
    pub holds: bool,
}

fn submission(id: String, c: Classification, rng: &mut impl Rng, order: u32) -> Submission {
    Submission {
        submitter_id: id,
        category: SubmitterCategory::ClinicalLab,
        classification: c,
        review_status: ReviewStatus::SingleSubmitter,
        reputation: rng.random_range(0.0..=1.0),
        confidence: rng.random_range(0.0..=1.0),
        order_index: order,
    }
}

/// Draws `n` in `n_range`, an honest class interval that leaves room on at
/// least one side, and up to `trim_count(n)` adversaries per open side with
/// arbitrary weights.
pub fn random_safety_case(seed: Seed, n_range: std::ops::RangeInclusive<usize>, theta: f64) -> SafetyCase {
    let mut rng = seed.rng();
    let n = rng.random_range(n_range);
    let k = trim_count(n, theta);
    let (lo, hi) = loop {
        let a = rng.random_range(0..5usize);
        let b = rng.random_range(a..5usize);
        if a > 0 || b < 4 {
            break (a, b);
        }
    };
    let low_adv = if lo > 0 { rng.random_range(0..=k) } else { 0 };
    let high_adv = if hi < 4 { rng.random_range(0..=k - low_adv.min(k)) } else { 0 };
    let honest_n = n - low_adv - high_adv;
    let mut subs = Vec::with_capacity(n);
    for _ in 0..low_adv {
        let c = Classification::ALL[rng.random_range(0..lo)];
        subs.push(submission(String::new(), c, &mut rng, 0));
    }
    for _ in 0..high_adv {
        let c = Classification::ALL[rng.random_range(hi + 1..5)];
        subs.push(submission(String::new(), c, &mut rng, 0));
    }
    for _ in 0..honest_n {
        let c = Classification::ALL[rng.random_range(lo..=hi)];
        subs.push(submission(String::new(), c, &mut rng, 0));
    }
    subs.shuffle(&mut rng);
    for (i, s) in subs.iter_mut().enumerate() {
        s.submitter_id = format!("p{i:02}");
        s.order_index = i as u32;
    }
    SafetyCase { theta, submissions: subs, honest: (lo, hi), adversaries: (low_adv, high_adv) }
}

/// Checks that the consensus score lies within the honest interval.
pub fn check_safety(case: &SafetyCase) -> SafetyVerdict {
    let out = trimmed_weighted_mean(&case.submissions, case.theta).expect("non-empty round");
    let honest_low = Classification::ALL[case.honest.0].score();
    let honest_high = Classification::ALL[case.honest.1].score();
    SafetyVerdict {
        consensus_score: out.consensus_score,
        honest_low,
        honest_high,
        holds: (honest_low..=honest_high).contains(&out.consensus_score),
    }
}

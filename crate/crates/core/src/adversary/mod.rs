//! Attack models, the adversarial sweep, the trim-ratio sweep, the strategy
//! ablation, and the executable within-bound safety check.

mod safety;
mod sweep;

pub use safety::{check_safety, random_safety_case, SafetyCase, SafetyVerdict};
pub use sweep::{
    accuracy_csv, run_ablation, run_sweep, run_theta_sweep, AccuracyRow, SweepConfig, CSV_HEADER, SWEEP_FRACTIONS,
    THETA_GRID,
};

use std::fmt;
use std::str::FromStr;

use rand::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{hash_submitter, SUBMITTER_SALT};
use crate::model::{Classification, ConflictRecord, MidpointRule, ReviewStatus, Submission, SubmitterCategory};
use crate::seed::Seed;

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("attack needs {f} submissions but the round has {n}")]
    TooManyAdversaries { f: usize, n: usize },
    #[error("adversary fraction {0} is outside [0, 0.5]")]
    FractionOutOfRange(f64),
    #[error("unknown attack model {0:?}")]
    UnknownModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackModel {
    Sybil,
    Collusion,
    Poisoning,
}

impl AttackModel {
    pub const ALL: [AttackModel; 3] = [AttackModel::Sybil, AttackModel::Collusion, AttackModel::Poisoning];

    pub fn name(self) -> &'static str {
        match self {
            AttackModel::Sybil => "sybil",
            AttackModel::Collusion => "collusion",
            AttackModel::Poisoning => "poisoning",
        }
    }
}

impl fmt::Display for AttackModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackModel {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackModel::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| AttackError::UnknownModel(s.to_string()))
    }
}

/// Class at maximal ordinal distance from `truth`. The only tie (VUS) goes
/// to Benign under `Lower` and Pathogenic under `Upper`.
pub fn adversarial_alternative_with(truth: Classification, tie: MidpointRule) -> Classification {
    match truth.ordinal().cmp(&2) {
        std::cmp::Ordering::Less => Classification::Pathogenic,
        std::cmp::Ordering::Greater => Classification::Benign,
        std::cmp::Ordering::Equal => match tie {
            MidpointRule::Lower => Classification::Benign,
            MidpointRule::Upper => Classification::Pathogenic,
        },
    }
}

pub fn adversarial_alternative(truth: Classification) -> Classification {
    adversarial_alternative_with(truth, MidpointRule::Lower)
}

/// Number of adversaries for fraction `f/n` over `n` honest submissions.
pub fn adversary_count(n: usize, fraction: f64) -> Result<usize, AttackError> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(AttackError::FractionOutOfRange(fraction));
    }
    Ok((fraction * n as f64).round() as usize)
}

/// Appends `f` low-reputation submissions voting for the adversarial
/// alternative. Honest submissions are untouched.
pub fn apply_sybil(record: &ConflictRecord, f: usize, seed: Seed) -> ConflictRecord {
    let mut out = record.clone();
    if f == 0 {
        return out;
    }
    let target = adversarial_alternative(record.ground_truth.classification);
    let mut rng = seed.rng();
    let base = record.submissions.iter().map(|s| s.order_index).max().map_or(0, |m| m + 1);
    for i in 0..f {
        let reputation = rng.random_range(0.20..=0.40);
        let confidence = rng.random_range(0.40..=0.70);
        out.submissions.push(Submission {
            submitter_id: hash_submitter(&format!("sybil/{}/{i}", record.target_id), SUBMITTER_SALT),
            category: SubmitterCategory::Individual,
            classification: target,
            review_status: ReviewStatus::NoAssertionCriteria,
            reputation,
            confidence,
            order_index: base + i as u32,
        });
    }
    out
}

/// Reclassifies the `f` highest-reputation submissions; reputation ties go
/// to the lexicographically smaller submitter id.
pub fn apply_collusion(record: &ConflictRecord, f: usize) -> Result<ConflictRecord, AttackError> {
    let n = record.submissions.len();
    if f > n {
        return Err(AttackError::TooManyAdversaries { f, n });
    }
    let mut out = record.clone();
    let target = adversarial_alternative(record.ground_truth.classification);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (&record.submissions[a], &record.submissions[b]);
        y.reputation.total_cmp(&x.reputation).then_with(|| x.submitter_id.cmp(&y.submitter_id))
    });
    for &i in &idx[..f] {
        out.submissions[i].classification = target;
    }
    Ok(out)
}

/// Samples `f` submissions uniformly without replacement, raises their
/// confidence to the round maximum and reclassifies them.
pub fn apply_poisoning(record: &ConflictRecord, f: usize, seed: Seed) -> Result<ConflictRecord, AttackError> {
    let n = record.submissions.len();
    if f > n {
        return Err(AttackError::TooManyAdversaries { f, n });
    }
    let mut out = record.clone();
    if f == 0 {
        return Ok(out);
    }
    let target = adversarial_alternative(record.ground_truth.classification);
    let max_conf = record.submissions.iter().map(|s| s.confidence).fold(0.0, f64::max);
    let mut rng = seed.rng();
    for i in rand::seq::index::sample(&mut rng, n, f) {
        out.submissions[i].confidence = max_conf;
        out.submissions[i].classification = target;
    }
    Ok(out)
}

/// Applies `model` at fraction `f/n` of the honest submission count.
pub fn apply_attack(
    record: &ConflictRecord,
    model: AttackModel,
    fraction: f64,
    seed: Seed,
) -> Result<ConflictRecord, AttackError> {
    let f = adversary_count(record.submissions.len(), fraction)?;
    match model {
        AttackModel::Sybil => Ok(apply_sybil(record, f, seed)),
        AttackModel::Collusion => apply_collusion(record, f),
        AttackModel::Poisoning => apply_poisoning(record, f, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Adjudication, Classification::*};

    fn record(n: usize) -> ConflictRecord {
        let classes = [Pathogenic, Vus, LikelyPathogenic, Vus, Pathogenic, Vus, LikelyPathogenic, Vus];
        let reps = [0.85, 0.70, 0.55, 0.85, 0.70, 0.55, 0.85, 0.70];
        let confs = [0.70, 0.85, 0.40, 0.55, 0.70, 0.85, 0.40, 0.55];
        let subs = (0..n)
            .map(|i| Submission {
                submitter_id: format!("s{i}"),
                category: SubmitterCategory::ClinicalLab,
                classification: classes[i],
                review_status: ReviewStatus::SingleSubmitter,
                reputation: reps[i],
                confidence: confs[i],
                order_index: i as u32,
            })
            .collect();
        ConflictRecord::new("V1", Adjudication::expert_panel("panel", Pathogenic), subs).unwrap()
    }

    #[test]
    fn alternative_is_maximally_distant() {
        assert_eq!(adversarial_alternative(Pathogenic), Benign);
        assert_eq!(adversarial_alternative(LikelyPathogenic), Benign);
        assert_eq!(adversarial_alternative(Benign), Pathogenic);
        assert_eq!(adversarial_alternative(LikelyBenign), Pathogenic);
        assert_eq!(adversarial_alternative(Vus), Benign);
        assert_eq!(adversarial_alternative_with(Vus, MidpointRule::Upper), Pathogenic);
    }

    #[test]
    fn zero_adversaries_is_identity() {
        let r = record(5);
        for m in AttackModel::ALL {
            assert_eq!(apply_attack(&r, m, 0.0, Seed(1)).unwrap(), r);
        }
    }

    #[test]
    fn sybil_appends_low_weight_votes() {
        let r = record(5);
        let a = apply_sybil(&r, 2, Seed(9));
        assert_eq!(a.submissions.len(), 7);
        assert_eq!(&a.submissions[..5], &r.submissions[..]);
        for s in &a.submissions[5..] {
            assert!((0.20..=0.40).contains(&s.reputation));
            assert!((0.40..=0.70).contains(&s.confidence));
            assert_eq!(s.classification, Benign);
        }
        assert_eq!(apply_sybil(&r, 2, Seed(9)), a);
        assert_eq!(a.ground_truth, r.ground_truth);
    }

    #[test]
    fn collusion_takes_top_reputation_with_id_ties() {
        let r = record(5);
        let a = apply_collusion(&r, 1).unwrap();
        // s0 and s3 share R = 0.85; s0 wins the tie
        assert_eq!(a.submissions[0].classification, Benign);
        assert_eq!(a.submissions[0].reputation, 0.85);
        assert_eq!(a.submissions[0].confidence, 0.70);
        assert_eq!(a.submissions[3].classification, Vus);
        let b = apply_collusion(&r, 2).unwrap();
        assert_eq!(b.submissions[3].classification, Benign);
        assert_eq!(apply_collusion(&r, 2).unwrap(), b);
        assert!(apply_collusion(&r, 6).is_err());
    }

    #[test]
    fn poisoning_saturates_at_f_equals_n() {
        let r = record(5);
        let a = apply_poisoning(&r, 5, Seed(4)).unwrap();
        assert_eq!(a.submissions.len(), 5);
        for s in &a.submissions {
            assert_eq!(s.confidence, 0.85);
            assert_eq!(s.classification, Benign);
        }
        assert!(apply_poisoning(&r, 6, Seed(4)).is_err());
    }

    #[test]
    fn poisoning_selection_is_uniform() {
        let r = record(8);
        let (draws, f) = (10_000u64, 3usize);
        let mut hits = [0u32; 8];
        for t in 0..draws {
            let a = apply_poisoning(&r, f, Seed(79).index(t)).unwrap();
            for (i, (x, y)) in a.submissions.iter().zip(&r.submissions).enumerate() {
                if x != y || x.classification == Benign {
                    hits[i] += 1;
                }
            }
        }
        let p = f as f64 / 8.0;
        let expect = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for h in hits {
            assert!((h as f64 - expect).abs() <= 3.0 * sigma, "{hits:?}");
        }
    }

    #[test]
    fn counts_follow_the_fraction() {
        assert_eq!(adversary_count(10, 0.2).unwrap(), 2);
        assert_eq!(adversary_count(10, 0.5).unwrap(), 5);
        assert_eq!(adversary_count(9, 0.33).unwrap(), 3);
        assert!(adversary_count(10, 0.6).is_err());
        let r = record(6);
        assert_eq!(apply_attack(&r, AttackModel::Sybil, 0.5, Seed(1)).unwrap().submissions.len(), 9);
        assert_eq!(apply_attack(&r, AttackModel::Collusion, 0.5, Seed(1)).unwrap().submissions.len(), 6);
    }
}

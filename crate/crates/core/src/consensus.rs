//! Agreement protocol: conflict detection, trimmed weighted-mean
//! aggregation, the two vote-counting alternatives, and single-round
//! agreement with a virtual-time deadline.
//!
//! The trimmed weighted mean sorts submissions by score under a total order,
//! drops `k` from each end and averages the survivors weighted by
//! `reputation * confidence`. With `k >= f` adversarial extremes per side the
//! result stays inside the honest range.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditEntry, AuditKind, AuditLog};
use crate::model::{Classification, MidpointRule, Submission};
use crate::time::VirtualTime;

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("no submissions to aggregate")]
    Empty,
    #[error("duplicate order index {0}")]
    DuplicateOrderIndex(u32),
    #[error("trim fraction {0} must lie in (0, 0.5)")]
    InvalidTheta(f64),
    #[error("round for {0} closed with no on-time submissions")]
    VoidRound(String),
    #[error("round for {0} is already closed")]
    RoundClosed(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TrimmedWeightedMean,
    SimpleMajority,
    FirstWins,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::TrimmedWeightedMean, Strategy::SimpleMajority, Strategy::FirstWins];

    pub fn short_name(self) -> &'static str {
        match self {
            Strategy::TrimmedWeightedMean => "twm",
            Strategy::SimpleMajority => "sm",
            Strategy::FirstWins => "fw",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Strategy {
    type Err = ConsensusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "twm" | "trimmed_weighted_mean" => Ok(Strategy::TrimmedWeightedMean),
            "sm" | "simple_majority" => Ok(Strategy::SimpleMajority),
            "fw" | "first_wins" => Ok(Strategy::FirstWins),
            _ => Err(ConsensusError::UnknownStrategy(s.to_string())),
        }
    }
}

/// Rounding of `theta * n` when computing the per-side trim count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimRounding {
    #[default]
    Floor,
    Ceil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub theta: f64,
    pub strategy: Strategy,
    #[serde(with = "duration_secs")]
    pub round_timeout: Duration,
    pub trim_rounding: TrimRounding,
    pub midpoint: MidpointRule,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            theta: 0.20,
            strategy: Strategy::TrimmedWeightedMean,
            round_timeout: Duration::from_secs(60),
            trim_rounding: TrimRounding::Floor,
            midpoint: MidpointRule::Lower,
        }
    }
}

impl ConsensusConfig {
    pub fn with_theta(theta: f64) -> Self {
        ConsensusConfig { theta, ..Self::default() }
    }

    pub fn with_strategy(strategy: Strategy) -> Self {
        ConsensusConfig { strategy, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ConsensusError> {
        if !(self.theta > 0.0 && self.theta < 0.5) {
            return Err(ConsensusError::InvalidTheta(self.theta));
        }
        Ok(())
    }

    /// Identifier of this configuration, recorded with every outcome.
    pub fn policy_version(&self) -> String {
        let rounding = match self.trim_rounding {
            TrimRounding::Floor => "floor",
            TrimRounding::Ceil => "ceil",
        };
        format!(
            "consensus/{}/theta={}/{}/timeout={}s",
            self.strategy.short_name(),
            self.theta,
            rounding,
            self.round_timeout.as_secs()
        )
    }

    pub fn aggregate(&self, subs: &[Submission]) -> Result<ConsensusOutcome, ConsensusError> {
        let mut outcome = match self.strategy {
            Strategy::TrimmedWeightedMean => {
                self.validate()?;
                trimmed_weighted_mean_with(subs, self.theta, self.trim_rounding, self.midpoint)?
            }
            Strategy::SimpleMajority => simple_majority(subs)?,
            Strategy::FirstWins => first_wins(subs)?,
        };
        outcome.theta = self.theta;
        outcome.policy_version = self.policy_version();
        Ok(outcome)
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// One party's claim about a target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interpretation {
    pub target_id: String,
    pub classification: Classification,
}

impl Interpretation {
    pub fn new(target_id: impl Into<String>, classification: Classification) -> Self {
        Interpretation { target_id: target_id.into(), classification }
    }
}

pub fn detect_conflict(a: &Interpretation, b: &Interpretation) -> bool {
    a.target_id == b.target_id && a.classification != b.classification
}

// Guards against theta * n landing a hair below an integer (0.15 * 20).
const TRIM_EPS: f64 = 1e-9;

/// Per-side trim count with the default floor rounding.
pub fn trim_count(n: usize, theta: f64) -> usize {
    trim_count_with(n, theta, TrimRounding::Floor)
}

/// `max(1, round(theta * n))`, or 0 when that would leave no survivor.
pub fn trim_count_with(n: usize, theta: f64, rounding: TrimRounding) -> usize {
    let raw = theta * n as f64;
    let rounded = match rounding {
        TrimRounding::Floor => (raw + TRIM_EPS).floor(),
        TrimRounding::Ceil => (raw - TRIM_EPS).ceil(),
    };
    let k = (rounded.max(0.0) as usize).max(1);
    if n > 2 * k {
        k
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubmissionRef {
    pub submitter_id: String,
    pub order_index: u32,
}

impl From<&Submission> for SubmissionRef {
    fn from(s: &Submission) -> Self {
        SubmissionRef { submitter_id: s.submitter_id.clone(), order_index: s.order_index }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEntry {
    pub submitter_id: String,
    pub order_index: u32,
    pub classification: Classification,
    pub score: f64,
    pub reputation: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub submission: SubmissionRef,
    pub weight: f64,
}

/// Result of one aggregation, with every input needed to re-derive it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub strategy: Strategy,
    pub theta: f64,
    pub trim_per_side: usize,
    pub consensus_score: f64,
    pub consensus_class: Classification,
    pub inputs: Vec<InputEntry>,
    pub included: Vec<SubmissionRef>,
    pub trimmed_out: Vec<SubmissionRef>,
    pub weights_used: Vec<WeightEntry>,
    /// Set when `n - 2k < 1` and the untrimmed mean was used.
    pub trim_skipped: bool,
    /// Set when every surviving weight was zero.
    pub zero_weight_fallback: bool,
    pub policy_version: String,
}

impl ConsensusOutcome {
    fn base(strategy: Strategy, subs: &[Submission]) -> Self {
        ConsensusOutcome {
            strategy,
            theta: 0.0,
            trim_per_side: 0,
            consensus_score: 0.0,
            consensus_class: Classification::Vus,
            inputs: subs
                .iter()
                .map(|s| InputEntry {
                    submitter_id: s.submitter_id.clone(),
                    order_index: s.order_index,
                    classification: s.classification,
                    score: s.score(),
                    reputation: s.reputation,
                    confidence: s.confidence,
                })
                .collect(),
            included: Vec::new(),
            trimmed_out: Vec::new(),
            weights_used: Vec::new(),
            trim_skipped: false,
            zero_weight_fallback: false,
            policy_version: String::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outcome serialises")
    }
}

/// Total order used before trimming: score, then weight, then submitter id,
/// then arrival index.
fn sort_for_trim(subs: &[Submission]) -> Vec<&Submission> {
    let mut sorted: Vec<&Submission> = subs.iter().collect();
    sorted.sort_by(|a, b| {
        a.score()
            .total_cmp(&b.score())
            .then(a.weight().total_cmp(&b.weight()))
            .then_with(|| a.submitter_id.cmp(&b.submitter_id))
            .then(a.order_index.cmp(&b.order_index))
    });
    sorted
}

pub fn trimmed_weighted_mean(subs: &[Submission], theta: f64) -> Result<ConsensusOutcome, ConsensusError> {
    trimmed_weighted_mean_with(subs, theta, TrimRounding::Floor, MidpointRule::Lower)
}

pub fn trimmed_weighted_mean_with(
    subs: &[Submission],
    theta: f64,
    rounding: TrimRounding,
    midpoint: MidpointRule,
) -> Result<ConsensusOutcome, ConsensusError> {
    if subs.is_empty() {
        return Err(ConsensusError::Empty);
    }
    let n = subs.len();
    let k = trim_count_with(n, theta, rounding);
    let sorted = sort_for_trim(subs);
    let survivors = &sorted[k..n - k];

    let mut out = ConsensusOutcome::base(Strategy::TrimmedWeightedMean, subs);
    out.theta = theta;
    out.trim_per_side = k;
    out.trim_skipped = k == 0;
    out.trimmed_out = sorted[..k].iter().chain(sorted[n - k..].iter()).map(|s| SubmissionRef::from(*s)).collect();
    out.included = survivors.iter().map(|s| SubmissionRef::from(*s)).collect();
    out.weights_used =
        survivors.iter().map(|s| WeightEntry { submission: SubmissionRef::from(*s), weight: s.weight() }).collect();

    let scores: Vec<f64> = survivors.iter().map(|s| s.score()).collect();
    let weights: Vec<f64> = survivors.iter().map(|s| s.weight()).collect();
    let score = match weighted_mean(&scores, &weights) {
        Some(v) => v,
        None => {
            out.zero_weight_fallback = true;
            let ones = vec![1.0; scores.len()];
            weighted_mean(&scores, &ones).expect("unit weights are positive")
        }
    };
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.consensus_score = score.clamp(lo, hi);
    out.consensus_class =
        Classification::from_score_with(out.consensus_score, midpoint).expect("scores stay on the unit interval");
    Ok(out)
}

/// `sum(w*s) / sum(w)` accumulated left to right in double-double precision,
/// or `None` when the total weight is zero.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Option<f64> {
    debug_assert_eq!(values.len(), weights.len());
    let mut num = DoubleDouble::ZERO;
    let mut den = DoubleDouble::ZERO;
    for (&v, &w) in values.iter().zip(weights) {
        num = num.add(DoubleDouble::product(v, w));
        den = den.add_f64(w);
    }
    if den.hi <= 0.0 {
        return None;
    }
    Some(num.div(den))
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    const ZERO: DoubleDouble = DoubleDouble { hi: 0.0, lo: 0.0 };

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        let err = (a - (s - bb)) + (b - bb);
        (s, err)
    }

    fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        (s, b - (s - a))
    }

    fn product(a: f64, b: f64) -> DoubleDouble {
        let p = a * b;
        let err = a.mul_add(b, -p);
        DoubleDouble { hi: p, lo: err }
    }

    fn add(self, o: DoubleDouble) -> DoubleDouble {
        let (s, e) = Self::two_sum(self.hi, o.hi);
        let (t, f) = Self::two_sum(self.lo, o.lo);
        let (s, e) = Self::fast_two_sum(s, e + t);
        let (hi, lo) = Self::fast_two_sum(s, e + f);
        DoubleDouble { hi, lo }
    }

    fn add_f64(self, b: f64) -> DoubleDouble {
        self.add(DoubleDouble { hi: b, lo: 0.0 })
    }

    fn div(self, d: DoubleDouble) -> f64 {
        let q1 = self.hi / d.hi;
        // remainder = self - q1 * d, exact enough for one correction step
        let p = DoubleDouble::product(q1, d.hi);
        let p = DoubleDouble { hi: p.hi, lo: p.lo + q1 * d.lo };
        let r = self.add(DoubleDouble { hi: -p.hi, lo: -p.lo });
        let q2 = (r.hi + r.lo) / d.hi;
        q1 + q2
    }
}

/// Plurality vote with equal weights; ties go to the less pathogenic label.
pub fn simple_majority(subs: &[Submission]) -> Result<ConsensusOutcome, ConsensusError> {
    if subs.is_empty() {
        return Err(ConsensusError::Empty);
    }
    let mut counts = [0usize; 5];
    for s in subs {
        counts[s.classification.ordinal()] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    // Ascending ordinal scan: the first label reaching the max has the lowest score.
    let winner = Classification::ALL
        .into_iter()
        .find(|c| counts[c.ordinal()] == best)
        .expect("some label has the maximal count");

    let mut ordered: Vec<&Submission> = subs.iter().collect();
    ordered.sort_by(|a, b| a.order_index.cmp(&b.order_index).then_with(|| a.submitter_id.cmp(&b.submitter_id)));
    let mut out = ConsensusOutcome::base(Strategy::SimpleMajority, subs);
    out.consensus_score = winner.score();
    out.consensus_class = winner;
    out.included = ordered.iter().map(|s| SubmissionRef::from(*s)).collect();
    out.weights_used =
        ordered.iter().map(|s| WeightEntry { submission: SubmissionRef::from(*s), weight: 1.0 }).collect();
    Ok(out)
}

/// Keeps the earliest submission's classification.
pub fn first_wins(subs: &[Submission]) -> Result<ConsensusOutcome, ConsensusError> {
    if subs.is_empty() {
        return Err(ConsensusError::Empty);
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in subs {
        if !seen.insert(s.order_index) {
            return Err(ConsensusError::DuplicateOrderIndex(s.order_index));
        }
    }
    let first = subs.iter().min_by_key(|s| s.order_index).expect("non-empty");
    let mut out = ConsensusOutcome::base(Strategy::FirstWins, subs);
    out.consensus_score = first.score();
    out.consensus_class = first.classification;
    out.included = vec![SubmissionRef::from(first)];
    out.weights_used = vec![WeightEntry { submission: SubmissionRef::from(first), weight: 1.0 }];
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedSubmission {
    pub submission: Submission,
    pub arrival: VirtualTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundState {
    Open,
    Closed,
}

/// Single-writer state machine for one agreement round.
#[derive(Debug, Clone)]
pub struct AgreementRound {
    target_id: String,
    deadline: VirtualTime,
    received: Vec<TimedSubmission>,
    late: Vec<TimedSubmission>,
    state: RoundState,
}

impl AgreementRound {
    pub fn open(target_id: impl Into<String>, start: VirtualTime, timeout: Duration) -> Self {
        AgreementRound {
            target_id: target_id.into(),
            deadline: start + timeout,
            received: Vec::new(),
            late: Vec::new(),
            state: RoundState::Open,
        }
    }

    pub fn target_id(&self) -> &str {
        &self.target_id
    }

    pub fn deadline(&self) -> VirtualTime {
        self.deadline
    }

    pub fn state(&self) -> RoundState {
        self.state
    }

    /// Arrivals after the deadline are kept aside for a later round.
    pub fn receive(&mut self, sub: TimedSubmission) -> Result<(), ConsensusError> {
        if self.state == RoundState::Closed {
            return Err(ConsensusError::RoundClosed(self.target_id.clone()));
        }
        if sub.arrival <= self.deadline {
            self.received.push(sub);
        } else {
            self.late.push(sub);
        }
        Ok(())
    }

    pub fn close(&mut self) {
        self.state = RoundState::Closed;
    }

    pub fn on_time(&self) -> Vec<Submission> {
        let mut subs: Vec<&TimedSubmission> = self.received.iter().collect();
        subs.sort_by(|a, b| a.arrival.cmp(&b.arrival).then(a.submission.order_index.cmp(&b.submission.order_index)));
        subs.into_iter().map(|t| t.submission.clone()).collect()
    }

    pub fn late(&self) -> Vec<Submission> {
        self.late.iter().map(|t| t.submission.clone()).collect()
    }

    /// Number of on-time submissions; `n` of the round.
    pub fn n(&self) -> usize {
        self.received.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub outcome: ConsensusOutcome,
    /// Submissions excluded for lateness; they feed the next round.
    pub deferred: Vec<Submission>,
    pub closed_at: VirtualTime,
    pub audit_record_id: u64,
}

/// Runs one round: collects arrivals, closes at the deadline, aggregates the
/// on-time submissions and records the outcome in the audit log.
pub fn run_round(
    target_id: &str,
    arrivals: &[TimedSubmission],
    config: &ConsensusConfig,
    start: VirtualTime,
    agent: &str,
    audit: &mut AuditLog,
) -> Result<RoundResult, ConsensusError> {
    let mut round = AgreementRound::open(target_id, start, config.round_timeout);
    for a in arrivals {
        round.receive(a.clone())?;
    }
    round.close();
    let on_time = round.on_time();
    if on_time.is_empty() {
        return Err(ConsensusError::VoidRound(target_id.to_string()));
    }
    let outcome = config.aggregate(&on_time)?;
    let mut entry = AuditEntry::new(AuditKind::ConsensusRound, "consensusRound", agent)
        .version(outcome.policy_version.clone())
        .at(round.deadline())
        .output(format!("consensus:{target_id}:{}", outcome.consensus_class))
        .detail("target_id", target_id)
        .detail("consensus_score", outcome.consensus_score)
        .detail("trim_per_side", outcome.trim_per_side)
        .detail("late", round.late.len());
    for s in &on_time {
        entry = entry.input(format!(
            "submission:{}#{}:{}:w={}",
            s.submitter_id,
            s.order_index,
            s.classification,
            s.weight()
        ));
    }
    let id = audit.append(entry);
    Ok(RoundResult { outcome, deferred: round.late(), closed_at: round.deadline(), audit_record_id: id })
}

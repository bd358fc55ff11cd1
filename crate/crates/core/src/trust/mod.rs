//! Trust evolution.
//!
//! Scores live in `[0, 1]`. Validation outcomes and other observable events
//! move the score by fixed coefficients; increases saturate at 1 and
//! decreases floor at 0. Trust never gates functionality: a score of 0 does
//! not stop an object from evaluating policies or joining consensus.

mod sim;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditEntry, AuditKind, AuditLog};
use crate::time::VirtualTime;

pub use sim::{
    perturbation_sensitivity, recovery_time, sensitivity_csv, sensitivity_sweep, simulate_trust_trajectory, EventMix,
    PerturbationRow, Recovery, SensitivityConfig, SensitivityRow,
};

#[derive(Debug, Error, PartialEq)]
pub enum TrustError {
    #[error("unknown trust event kind {0:?}")]
    UnknownEventKind(String),
    #[error("time decay needs a non-negative year count, got {0}")]
    NegativeDecay(f64),
    #[error("trust score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("parameter {name} = {value} is outside [0, 1]")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error("event mix probabilities sum to {0}, expected 1")]
    MixNotNormalised(f64),
}

/// Coefficients of the update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustParameters {
    /// Gain on confirmed validation.
    pub alpha: f64,
    /// Penalty for uncertain validation, and per year of decay.
    pub beta: f64,
    /// Multiplicative loss on institutional closure.
    pub gamma: f64,
    /// Penalty on refuted validation.
    pub rho: f64,
    /// Gain when a similar pattern is found.
    pub delta: f64,
}

impl Default for TrustParameters {
    fn default() -> Self {
        TrustParameters { alpha: 0.30, beta: 0.05, gamma: 0.20, rho: 0.40, delta: 0.10 }
    }
}

impl TrustParameters {
    pub const ZERO: TrustParameters = TrustParameters { alpha: 0.0, beta: 0.0, gamma: 0.0, rho: 0.0, delta: 0.0 };

    pub fn validate(&self) -> Result<(), TrustError> {
        for (name, value) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("rho", self.rho),
            ("delta", self.delta),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(TrustError::ParameterOutOfRange { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrustEventKind {
    ValidationConfirmed,
    ValidationRefuted,
    ValidationUncertain,
    SimilarPatternFound,
    TimeDecay { delta_years: f64 },
    InstitutionalClosure,
}

impl TrustEventKind {
    pub fn name(&self) -> &'static str {
        match self {
            TrustEventKind::ValidationConfirmed => "validation_confirmed",
            TrustEventKind::ValidationRefuted => "validation_refuted",
            TrustEventKind::ValidationUncertain => "validation_uncertain",
            TrustEventKind::SimilarPatternFound => "similar_pattern_found",
            TrustEventKind::TimeDecay { .. } => "time_decay",
            TrustEventKind::InstitutionalClosure => "institutional_closure",
        }
    }
}

impl fmt::Display for TrustEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrustEventKind::TimeDecay { delta_years } => write!(f, "time_decay:{delta_years}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for TrustEventKind {
    type Err = TrustError;

    /// Parses `validation_confirmed`, ..., or `time_decay:<years>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(years) = s.strip_prefix("time_decay:") {
            let delta_years: f64 = years.parse().map_err(|_| TrustError::UnknownEventKind(s.to_string()))?;
            return Ok(TrustEventKind::TimeDecay { delta_years });
        }
        match s {
            "validation_confirmed" => Ok(TrustEventKind::ValidationConfirmed),
            "validation_refuted" => Ok(TrustEventKind::ValidationRefuted),
            "validation_uncertain" => Ok(TrustEventKind::ValidationUncertain),
            "similar_pattern_found" => Ok(TrustEventKind::SimilarPatternFound),
            "institutional_closure" => Ok(TrustEventKind::InstitutionalClosure),
            _ => Err(TrustError::UnknownEventKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustEvent {
    #[serde(flatten)]
    pub kind: TrustEventKind,
    /// Originating object or consensus round.
    pub source: String,
}

impl TrustEvent {
    pub fn new(kind: TrustEventKind, source: impl Into<String>) -> Self {
        TrustEvent { kind, source: source.into() }
    }
}

/// Applies one update to a score. Pure arithmetic, no bookkeeping.
pub fn next_score(score: f64, kind: &TrustEventKind, params: &TrustParameters) -> Result<f64, TrustError> {
    let raw = match *kind {
        TrustEventKind::ValidationConfirmed => (score + params.alpha).min(1.0),
        TrustEventKind::ValidationRefuted => score - params.rho,
        TrustEventKind::ValidationUncertain => score - params.beta,
        TrustEventKind::SimilarPatternFound => (score + params.delta).min(1.0),
        TrustEventKind::TimeDecay { delta_years } => {
            if delta_years.is_nan() || delta_years < 0.0 {
                return Err(TrustError::NegativeDecay(delta_years));
            }
            score - params.beta * delta_years
        }
        TrustEventKind::InstitutionalClosure => score * (1.0 - params.gamma),
    };
    Ok(raw.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustHistoryEntry {
    pub event: TrustEvent,
    pub before: f64,
    pub after: f64,
    pub audit_record_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    score: f64,
    last_update: VirtualTime,
    history: Vec<TrustHistoryEntry>,
}

impl TrustState {
    pub fn new(score: f64) -> Result<Self, TrustError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(TrustError::ScoreOutOfRange(score));
        }
        Ok(TrustState { score, last_update: VirtualTime::ZERO, history: Vec::new() })
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn last_update(&self) -> VirtualTime {
        self.last_update
    }

    pub fn history(&self) -> &[TrustHistoryEntry] {
        &self.history
    }

    /// Applies `event`, appends to the history and emits one audit record.
    pub fn apply(
        &mut self,
        owner: &str,
        event: TrustEvent,
        params: &TrustParameters,
        at: VirtualTime,
        audit: &mut AuditLog,
    ) -> Result<f64, TrustError> {
        let before = self.score;
        let after = next_score(before, &event.kind, params)?;
        let id = audit.append(
            AuditEntry::new(AuditKind::TrustUpdate, "updateTrust", owner)
                .version(trust_policy_version(params))
                .at(at)
                .input(format!("event:{}", event.kind))
                .input(format!("source:{}", event.source))
                .output(format!("trust:{owner}"))
                .detail("before", before)
                .detail("after", after),
        );
        self.score = after;
        self.last_update = self.last_update.max(at);
        self.history.push(TrustHistoryEntry { event, before, after, audit_record_id: id });
        Ok(after)
    }
}

pub fn trust_policy_version(p: &TrustParameters) -> String {
    format!("trust/alpha={}/beta={}/gamma={}/rho={}/delta={}", p.alpha, p.beta, p.gamma, p.rho, p.delta)
}

/// Per-object trust states plus the shared audit log.
#[derive(Debug, Clone, Default)]
pub struct TrustRegister {
    params: TrustParameters,
    states: BTreeMap<String, TrustState>,
    audit: AuditLog,
}

impl TrustRegister {
    pub fn new(params: TrustParameters) -> Self {
        TrustRegister { params, states: BTreeMap::new(), audit: AuditLog::new() }
    }

    pub fn params(&self) -> &TrustParameters {
        &self.params
    }

    pub fn register(&mut self, pid: impl Into<String>, initial: f64) -> Result<(), TrustError> {
        self.states.insert(pid.into(), TrustState::new(initial)?);
        Ok(())
    }

    pub fn state(&self, pid: &str) -> Option<&TrustState> {
        self.states.get(pid)
    }

    pub fn score(&self, pid: &str) -> Option<f64> {
        self.states.get(pid).map(TrustState::score)
    }

    /// Updates `pid`, registering it at `default_initial` on first sight.
    pub fn apply(
        &mut self,
        pid: &str,
        event: TrustEvent,
        at: VirtualTime,
        default_initial: f64,
    ) -> Result<f64, TrustError> {
        if !self.states.contains_key(pid) {
            self.register(pid, default_initial)?;
        }
        let state = self.states.get_mut(pid).expect("registered above");
        state.apply(pid, event, &self.params, at, &mut self.audit)
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn audit_mut(&mut self) -> &mut AuditLog {
        &mut self.audit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TrustEventKind::*;

    fn step(t: f64, kind: TrustEventKind) -> f64 {
        next_score(t, &kind, &TrustParameters::default()).unwrap()
    }

    #[test]
    fn update_cases_at_defaults() {
        assert!((step(0.45, ValidationConfirmed) - 0.75).abs() < 1e-12);
        assert_eq!(step(0.90, ValidationConfirmed), 1.0);
        assert_eq!(step(0.30, ValidationRefuted), 0.0);
        assert!((step(0.80, ValidationRefuted) - 0.40).abs() < 1e-12);
        assert!((step(0.50, ValidationUncertain) - 0.45).abs() < 1e-12);
        assert!((step(0.50, SimilarPatternFound) - 0.60).abs() < 1e-12);
        assert_eq!(step(0.95, SimilarPatternFound), 1.0);
        assert!((step(0.50, TimeDecay { delta_years: 2.0 }) - 0.40).abs() < 1e-12);
        assert!((step(0.50, InstitutionalClosure) - 0.40).abs() < 1e-12);
        assert_eq!(step(0.02, ValidationUncertain), 0.0);
    }

    #[test]
    fn negative_decay_is_rejected() {
        assert_eq!(
            next_score(0.5, &TimeDecay { delta_years: -1.0 }, &TrustParameters::default()),
            Err(TrustError::NegativeDecay(-1.0))
        );
    }

    #[test]
    fn unknown_kind_rejected_on_parse() {
        assert_eq!("validation_confirmed".parse::<TrustEventKind>().unwrap(), ValidationConfirmed);
        assert_eq!("time_decay:2.5".parse::<TrustEventKind>().unwrap(), TimeDecay { delta_years: 2.5 });
        assert!(matches!("rumour".parse::<TrustEventKind>(), Err(TrustError::UnknownEventKind(_))));
    }

    #[test]
    fn zero_parameters_are_identity() {
        for kind in [
            ValidationConfirmed,
            ValidationRefuted,
            ValidationUncertain,
            SimilarPatternFound,
            TimeDecay { delta_years: 3.0 },
            InstitutionalClosure,
        ] {
            assert_eq!(next_score(0.37, &kind, &TrustParameters::ZERO).unwrap(), 0.37);
        }
    }

    #[test]
    fn state_keeps_history_and_audits() {
        let mut reg = TrustRegister::new(TrustParameters::default());
        reg.register("obs042", 0.45).unwrap();
        let t = VirtualTime::from_secs(10);
        reg.apply("obs042", TrustEvent::new(ValidationConfirmed, "round:1"), t, 0.5).unwrap();
        reg.apply("obs042", TrustEvent::new(InstitutionalClosure, "registry"), t, 0.5).unwrap();
        let st = reg.state("obs042").unwrap();
        assert_eq!(st.history().len(), 2);
        assert!((st.history()[0].after - 0.75).abs() < 1e-12);
        assert_eq!(st.history()[1].audit_record_id, 1);
        assert_eq!(reg.audit().count(AuditKind::TrustUpdate), 2);
        assert_eq!(st.last_update(), t);
    }

    #[test]
    fn state_rejects_out_of_range_initial_score() {
        assert!(TrustState::new(1.2).is_err());
        assert!(TrustState::new(-0.1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_kind() -> impl Strategy<Value = TrustEventKind> {
            prop_oneof![
                Just(ValidationConfirmed),
                Just(ValidationRefuted),
                Just(ValidationUncertain),
                Just(SimilarPatternFound),
                Just(InstitutionalClosure),
                (0.0f64..20.0).prop_map(|y| TimeDecay { delta_years: y }),
            ]
        }

        fn arb_params() -> impl Strategy<Value = TrustParameters> {
            (0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0)
                .prop_map(|(alpha, beta, gamma, rho, delta)| TrustParameters { alpha, beta, gamma, rho, delta })
        }

        proptest! {
            #[test]
            fn directions(t in 0.0f64..=1.0, kind in arb_kind(), p in arb_params()) {
                let next = next_score(t, &kind, &p).unwrap();
                prop_assert!((0.0..=1.0).contains(&next));
                match kind {
                    ValidationConfirmed | SimilarPatternFound => prop_assert!(next >= t),
                    _ => prop_assert!(next <= t),
                }
            }
        }
    }
}

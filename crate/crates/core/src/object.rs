//! Autonomous objects: an FDO plus policies, an event interface, a
//! communication interface and a trust state.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::ConsensusConfig;
use crate::events::{EventKind, HandlerMap, SubscriptionFilter};
use crate::model::{Classification, FdoRecord, ModelError};
use crate::policy::{self, FieldValue, Fields, Policy, PolicyError};
use crate::trust::{TrustError, TrustState};

#[derive(Debug, Error, PartialEq)]
pub enum ObjectError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error("handler map of {pid} names unknown policy {policy}")]
    UnknownHandlerPolicy { pid: String, policy: String },
    #[error("{pid} declares policy {policy} twice")]
    DuplicatePolicy { pid: String, policy: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventInterface {
    /// Filters the object subscribes with when it joins a bus.
    pub filters: Vec<SubscriptionFilter>,
    pub handlers: HandlerMap,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommInterface {
    pub peer_operations: BTreeSet<String>,
    pub protocol: ConsensusConfig,
}

/// Serialises flat: the FDO fields sit at the top level, so a reader that
/// only knows plain FDO records can still parse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfdoRecord {
    #[serde(flatten)]
    pub fdo: FdoRecord,
    pub policies: Vec<Policy>,
    pub event_interface: EventInterface,
    pub comm_interface: CommInterface,
    pub trust: TrustState,
}

impl AfdoRecord {
    pub fn new(
        fdo: FdoRecord,
        policies: Vec<Policy>,
        event_interface: EventInterface,
        comm_interface: CommInterface,
        trust: TrustState,
    ) -> Result<Self, ObjectError> {
        let rec = AfdoRecord { fdo, policies, event_interface, comm_interface, trust };
        rec.validate()?;
        Ok(rec)
    }

    pub fn pid(&self) -> &str {
        &self.fdo.pid
    }

    pub fn validate(&self) -> Result<(), ObjectError> {
        self.fdo.validate()?;
        let mut seen = BTreeSet::new();
        for p in &self.policies {
            p.validate()?;
            p.check_action(self.fdo.operations.iter().map(String::as_str))?;
            if !seen.insert(p.id.as_str()) {
                return Err(ObjectError::DuplicatePolicy { pid: self.fdo.pid.clone(), policy: p.id.clone() });
            }
        }
        self.event_interface
            .handlers
            .validate(&self.policies)
            .map_err(|policy| ObjectError::UnknownHandlerPolicy { pid: self.fdo.pid.clone(), policy })
    }

    pub fn policy(&self, id: &str) -> Option<&Policy> {
        self.policies.iter().find(|p| p.id == id)
    }

    /// Field view used for condition evaluation: metadata (numeric where it
    /// parses as a number), plus `pid`, `type` and `trustScore`.
    pub fn fields(&self) -> Fields {
        let mut f = Fields::new();
        for (k, v) in &self.fdo.metadata {
            let value = match v.parse::<f64>() {
                Ok(n) if n.is_finite() => FieldValue::Number(n),
                _ => FieldValue::Text(v.clone()),
            };
            f.insert(k.clone(), value);
        }
        f.insert("pid".into(), FieldValue::Text(self.fdo.pid.clone()));
        f.insert("type".into(), FieldValue::Text(self.fdo.fdo_type.clone()));
        f.insert("trustScore".into(), FieldValue::Number(self.trust.score()));
        f
    }

    /// A variant interpretation carrying the consensus-trigger policy, bound
    /// to announcements about its own variant.
    pub fn variant_interpretation(
        pid: impl Into<String>,
        variant_id: &str,
        classification: Classification,
        trust: f64,
    ) -> Result<Self, ObjectError> {
        let fdo = FdoRecord::new(pid, "GeneticVariantInterpretation", ["negotiateClassification"])?
            .with_metadata("variantId", variant_id)
            .with_metadata("classification", classification.label());
        let trigger = policy::consensus_trigger_policy();
        let mut handlers = HandlerMap::default();
        handlers.bind(EventKind::Announce, &trigger.id);
        let filter = SubscriptionFilter::announcements_about(variant_id);
        AfdoRecord::new(
            fdo,
            vec![trigger],
            EventInterface { filters: vec![filter], handlers },
            CommInterface {
                peer_operations: ["negotiateClassification".to_string()].into(),
                protocol: ConsensusConfig::default(),
            },
            TrustState::new(trust)?,
        )
    }

    /// A patient observation carrying the re-validation policy, re-evaluated
    /// on creation, update and trust change.
    pub fn phenotype_observation(pid: &str, trust: f64, match_score: f64) -> Result<Self, ObjectError> {
        let fdo = FdoRecord::new(pid, "PatientPhenotypeObservation", ["seekClinicalValidation"])?
            .with_metadata("phenotypeMatchScore", match_score.to_string());
        let p = policy::observation_policy(pid);
        let mut handlers = HandlerMap::default();
        for kind in [EventKind::Create, EventKind::Update, EventKind::TrustChange] {
            handlers.bind(kind, &p.id);
        }
        AfdoRecord::new(
            fdo,
            vec![p],
            EventInterface { filters: Vec::new(), handlers },
            CommInterface::default(),
            TrustState::new(trust)?,
        )
    }
}

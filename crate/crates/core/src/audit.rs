//! Append-only provenance log.
//!
//! Each record is a flattened activity/entity/agent triple: what was
//! evaluated or decided, which entities went in and came out, which object
//! acted, under which policy version, and when (virtual time).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::time::VirtualTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    PolicyEvaluation,
    TrustUpdate,
    ConsensusRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub id: u64,
    pub kind: AuditKind,
    pub activity: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub agent: String,
    pub policy_version: String,
    pub timestamp: VirtualTime,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, String>,
}

/// Builder for a record that has not been assigned an id yet.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub kind: AuditKind,
    pub activity: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub agent: String,
    pub policy_version: String,
    pub timestamp: VirtualTime,
    pub detail: BTreeMap<String, String>,
}

impl AuditEntry {
    pub fn new(kind: AuditKind, activity: impl Into<String>, agent: impl Into<String>) -> Self {
        AuditEntry {
            kind,
            activity: activity.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            agent: agent.into(),
            policy_version: String::new(),
            timestamp: VirtualTime::ZERO,
            detail: BTreeMap::new(),
        }
    }

    pub fn input(mut self, entity: impl Into<String>) -> Self {
        self.inputs.push(entity.into());
        self
    }

    pub fn output(mut self, entity: impl Into<String>) -> Self {
        self.outputs.push(entity.into());
        self
    }

    pub fn version(mut self, version: impl Into<String>) -> Self {
        self.policy_version = version.into();
        self
    }

    pub fn at(mut self, t: VirtualTime) -> Self {
        self.timestamp = t;
        self
    }

    pub fn detail(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.detail.insert(key.into(), value.to_string());
        self
    }
}

/// Append-only store. Records can be read and exported but never changed.
#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, entry: AuditEntry) -> u64 {
        let id = self.records.len() as u64;
        self.records.push(AuditRecord {
            id,
            kind: entry.kind,
            activity: entry.activity,
            inputs: entry.inputs,
            outputs: entry.outputs,
            agent: entry.agent,
            policy_version: entry.policy_version,
            timestamp: entry.timestamp,
            detail: entry.detail,
        });
        id
    }

    pub fn get(&self, id: u64) -> Option<&AuditRecord> {
        self.records.get(id as usize)
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, kind: AuditKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// One JSON object per line, in append order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("audit record serialises"));
            out.push('\n');
        }
        out
    }
}

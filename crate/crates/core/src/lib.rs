//! Decision stack for autonomous FAIR digital objects.
//!
//! An autonomous object is an ordinary FAIR digital object (PID, type,
//! operations, metadata) extended with three components:
//!
//! * condition/action **policies** with obligations and an audit template
//!   ([`policy`]),
//! * an **event interface** of typed events, subscription filters and a
//!   handler map ([`events`]),
//! * a **communication interface** naming peer operations and the agreement
//!   protocol used for multi-source updates ([`consensus`]).
//!
//! Trust scores evolve through typed events ([`trust`]) and every decision
//! leaves an append-only [`audit`] record.
//!
//! The remaining modules are experiment machinery: a synthetic conflict
//! corpus generator and filter pipeline ([`corpus`]), attack models and
//! accuracy sweeps ([`adversary`]), and a virtual-time multi-node executor
//! with a snapshot equivalence checker ([`simnet`]).
//!
//! Everything is deterministic given a seed: randomness flows from
//! [`seed::Seed`] and time is [`time::VirtualTime`].

pub mod adversary;
pub mod audit;
pub mod consensus;
pub mod corpus;
pub mod events;
pub mod model;
pub mod object;
pub mod policy;
pub mod seed;
pub mod simnet;
pub mod stats;
pub mod time;
pub mod trust;

pub use audit::{AuditKind, AuditLog, AuditRecord};
pub use consensus::{ConsensusConfig, ConsensusOutcome, Strategy};
pub use model::{
    Classification, ConflictRecord, DisagreementBucket, FdoRecord, MajorGroup, Submission, SubmitterCategory,
};
pub use object::AfdoRecord;
pub use policy::Policy;
pub use seed::Seed;
pub use time::VirtualTime;
pub use trust::{TrustEvent, TrustParameters, TrustState};

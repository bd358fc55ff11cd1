//! Virtual-time execution of the object-creation workload in three modes,
//! with a snapshot equivalence checker and a timing report.
//!
//! A coordinator hands records out one at a time. In the distributed modes
//! record `i` goes to node `i mod nodes` and each hand-off costs a round trip
//! plus a fixed coordination charge; the centralised mode creates every
//! record in-process. Snapshot content depends only on the record, so the
//! modes differ only in time-derived fields.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use rand::prelude::*;
use rand_distr::Normal;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;

use crate::consensus::{ConsensusConfig, ConsensusOutcome};
use crate::model::{Classification, ConflictRecord, DisagreementBucket};
use crate::seed::Seed;
use crate::stats::percentile_nearest_rank;
use crate::time::VirtualTime;
use crate::trust::{next_score, TrustEventKind, TrustParameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    Europe,
    UsEast,
    UsWest,
    China,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Europe => "Europe",
            Region::UsEast => "US-East",
            Region::UsWest => "US-West",
            Region::China => "China",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub region: Region,
}

/// Five nodes over four regions.
pub fn default_nodes() -> Vec<NodeSpec> {
    [
        ("eu-1", Region::Europe),
        ("eu-2", Region::Europe),
        ("us-east-1", Region::UsEast),
        ("us-west-1", Region::UsWest),
        ("cn-1", Region::China),
    ]
    .into_iter()
    .map(|(id, region)| NodeSpec { id: id.to_string(), region })
    .collect()
}

/// Cross-region round-trip time, Normal(mean, sd) clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub mean_rtt_ms: f64,
    pub sd_rtt_ms: f64,
    pub seed: Seed,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel { mean_rtt_ms: 144.0, sd_rtt_ms: 55.0, seed: Seed::default().child("latency") }
    }
}

impl LatencyModel {
    pub fn sampler(&self) -> LatencySampler {
        LatencySampler {
            normal: Normal::new(self.mean_rtt_ms, self.sd_rtt_ms).expect("finite, non-negative sd"),
            rng: self.seed.rng(),
        }
    }
}

pub struct LatencySampler {
    normal: Normal<f64>,
    rng: rand_chacha::ChaCha8Rng,
}

impl LatencySampler {
    /// One round trip in fractional milliseconds.
    pub fn sample_ms(&mut self) -> f64 {
        self.normal.sample(&mut self.rng).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    Centralised,
    DistributedNoLatency,
    DistributedWithLatency,
}

impl ExecutionMode {
    pub const ALL: [ExecutionMode; 3] =
        [ExecutionMode::Centralised, ExecutionMode::DistributedNoLatency, ExecutionMode::DistributedWithLatency];

    pub fn name(self) -> &'static str {
        match self {
            ExecutionMode::Centralised => "centralised",
            ExecutionMode::DistributedNoLatency => "distributed_no_latency",
            ExecutionMode::DistributedWithLatency => "distributed_with_latency",
        }
    }
}

impl fmt::Display for ExecutionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Virtual processing charges, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub create_ms: u64,
    pub coordination_ms: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { create_ms: 148, coordination_ms: 423 }
    }
}

/// Virtual timestamp rendered as a fixed-width string, so masking it keeps
/// every later byte offset in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Stamp(pub VirtualTime);

impl Serialize for Stamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:020}", self.0.millis()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperationEntry {
    pub op: String,
    pub at: Stamp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotState {
    pub classification: Classification,
    pub consensus_score: f64,
    pub bucket: DisagreementBucket,
    pub submissions: usize,
    pub policy_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectSnapshot {
    pub pid: String,
    pub fdo_type: String,
    pub state: SnapshotState,
    pub trust_score: f64,
    pub operations: Vec<OperationEntry>,
    pub created_at: Stamp,
}

/// Field names holding time-derived values.
pub const TIME_FIELDS: [&str; 2] = ["at", "created_at"];

impl ObjectSnapshot {
    /// Compact JSON with sorted keys.
    pub fn canonical(&self) -> String {
        let v = serde_json::to_value(self).expect("snapshot serialises");
        serde_json::to_string(&v).expect("value serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Dispatch,
    Receive,
    Created,
    Coordinated,
    Ack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub at: VirtualTime,
    pub node: String,
    pub record: usize,
    pub kind: TraceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub mode: ExecutionMode,
    pub snapshots: Vec<ObjectSnapshot>,
    pub trace: Vec<TraceEvent>,
    pub wall_clock: VirtualTime,
    /// Dispatch-to-acknowledgement time per record, in milliseconds.
    pub per_record_ms: Vec<u64>,
}

impl SimRun {
    pub fn snapshot_lines(&self) -> Vec<String> {
        self.snapshots.iter().map(ObjectSnapshot::canonical).collect()
    }

    pub fn p95_ms(&self) -> u64 {
        let xs: Vec<f64> = self.per_record_ms.iter().map(|&x| x as f64).collect();
        percentile_nearest_rank(&xs, 95.0).map_or(0, |p| p as u64)
    }
}

fn build_snapshot(
    record: &ConflictRecord,
    outcome: &ConsensusOutcome,
    created: VirtualTime,
    settled: VirtualTime,
) -> ObjectSnapshot {
    let trust = record.submissions.iter().map(|s| s.reputation).sum::<f64>() / record.submissions.len() as f64;
    ObjectSnapshot {
        pid: format!("afdo/{}", record.target_id),
        fdo_type: "GeneticVariantInterpretation".into(),
        state: SnapshotState {
            classification: outcome.consensus_class,
            consensus_score: outcome.consensus_score,
            bucket: record.bucket,
            submissions: record.submissions.len(),
            policy_version: outcome.policy_version.clone(),
        },
        trust_score: trust,
        operations: vec![
            OperationEntry { op: "Create".into(), at: Stamp(created) },
            OperationEntry { op: "negotiateClassification".into(), at: Stamp(settled) },
        ],
        created_at: Stamp(created),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Step {
    Dispatch,
    Arrive,
    Create,
    Coordinate,
    Ack,
}

/// Runs the creation workload. `latency` is only consulted in
/// [`ExecutionMode::DistributedWithLatency`]; `None` there uses the default
/// model seeded from `seed`.
pub fn run_workload(
    records: &[ConflictRecord],
    mode: ExecutionMode,
    nodes: &[NodeSpec],
    latency: Option<LatencyModel>,
    costs: CostModel,
    consensus: &ConsensusConfig,
) -> SimRun {
    assert!(!records.is_empty(), "workload needs at least one record");
    assert!(!nodes.is_empty(), "need at least one node");
    let mut sampler = (mode == ExecutionMode::DistributedWithLatency).then(|| latency.unwrap_or_default().sampler());
    let node_of = |i: usize| match mode {
        ExecutionMode::Centralised => "central".to_string(),
        _ => nodes[i % nodes.len()].id.clone(),
    };

    // (time, seq) orders the queue; seq breaks ties in insertion order.
    type Entry = (u64, u64, usize, Step, u64);
    let mut queue: BinaryHeap<Reverse<Entry>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |q: &mut BinaryHeap<_>, t: u64, rec: usize, step: Step, extra: u64| {
        q.push(Reverse((t, seq, rec, step, extra)));
        seq += 1;
    };

    let mut trace = Vec::new();
    let mut created = vec![VirtualTime::ZERO; records.len()];
    let mut settled = vec![VirtualTime::ZERO; records.len()];
    let mut dispatched = vec![0u64; records.len()];
    let mut per_record = vec![0u64; records.len()];
    let mut end = 0u64;
    push(&mut queue, 0, 0, Step::Dispatch, 0);

    while let Some(Reverse((t, _, i, step, extra))) = queue.pop() {
        let at = VirtualTime(t);
        match step {
            Step::Dispatch => {
                dispatched[i] = t;
                trace.push(TraceEvent { at, node: "coordinator".into(), record: i, kind: TraceKind::Dispatch });
                // extra carries the return leg of the sampled round trip
                let (out, back) = match sampler.as_mut() {
                    Some(s) => {
                        let rtt = s.sample_ms().round() as u64;
                        (rtt / 2, rtt - rtt / 2)
                    }
                    None => (0, 0),
                };
                push(&mut queue, t + out, i, Step::Arrive, back);
            }
            Step::Arrive => {
                trace.push(TraceEvent { at, node: node_of(i), record: i, kind: TraceKind::Receive });
                push(&mut queue, t + costs.create_ms, i, Step::Create, extra);
            }
            Step::Create => {
                created[i] = at;
                trace.push(TraceEvent { at, node: node_of(i), record: i, kind: TraceKind::Created });
                let coordination = if mode == ExecutionMode::Centralised { 0 } else { costs.coordination_ms };
                push(&mut queue, t + coordination, i, Step::Coordinate, extra);
            }
            Step::Coordinate => {
                settled[i] = at;
                trace.push(TraceEvent { at, node: node_of(i), record: i, kind: TraceKind::Coordinated });
                push(&mut queue, t + extra, i, Step::Ack, 0);
            }
            Step::Ack => {
                trace.push(TraceEvent { at, node: "coordinator".into(), record: i, kind: TraceKind::Ack });
                per_record[i] = t - dispatched[i];
                end = t;
                if i + 1 < records.len() {
                    push(&mut queue, t, i + 1, Step::Dispatch, 0);
                }
            }
        }
    }

    let snapshots = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let outcome = consensus.aggregate(&r.submissions).expect("validated record");
            build_snapshot(r, &outcome, created[i], settled[i])
        })
        .collect();
    SimRun { mode, snapshots, trace, wall_clock: VirtualTime(end), per_record_ms: per_record }
}

/// Centralised evolution pass: one trust event per object, confirmed when
/// the consensus class matches the plurality class of its submissions and
/// uncertain otherwise.
pub fn evolve(records: &[ConflictRecord], snapshots: &mut [ObjectSnapshot], params: &TrustParameters) {
    for (r, s) in records.iter().zip(snapshots.iter_mut()) {
        let plurality = crate::consensus::simple_majority(&r.submissions).expect("non-empty").consensus_class;
        let kind = if plurality == s.state.classification {
            TrustEventKind::ValidationConfirmed
        } else {
            TrustEventKind::ValidationUncertain
        };
        s.trust_score = next_score(s.trust_score, &kind, params).expect("score in range");
    }
}

/// Replaces every string value stored under a masked key with `*` of the
/// same length, recursively.
fn mask_value(v: &mut Value, mask: &[&str]) {
    match v {
        Value::Object(map) => {
            for (k, x) in map.iter_mut() {
                if mask.contains(&k.as_str()) {
                    if let Value::String(s) = x {
                        *s = "*".repeat(s.chars().count());
                        continue;
                    }
                    *x = Value::Null;
                    continue;
                }
                mask_value(x, mask);
            }
        }
        Value::Array(xs) => xs.iter_mut().for_each(|x| mask_value(x, mask)),
        _ => {}
    }
}

/// Masked canonical form of one serialised snapshot. Unparseable input is
/// returned unchanged so byte comparison still locates the damage.
pub fn masked_bytes(line: &str, mask: &[&str]) -> Vec<u8> {
    match serde_json::from_str::<Value>(line) {
        Ok(mut v) => {
            mask_value(&mut v, mask);
            serde_json::to_vec(&v).expect("value serialises")
        }
        Err(_) => line.as_bytes().to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordComparison {
    pub index: usize,
    pub equal: bool,
    pub first_difference: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub left_count: usize,
    pub right_count: usize,
    pub records: Vec<RecordComparison>,
}

impl EquivalenceReport {
    pub fn all_equal(&self) -> bool {
        self.left_count == self.right_count && self.records.iter().all(|r| r.equal)
    }

    pub fn unequal(&self) -> Vec<&RecordComparison> {
        self.records.iter().filter(|r| !r.equal).collect()
    }
}

fn first_difference(a: &[u8], b: &[u8]) -> Option<usize> {
    a.iter().zip(b).position(|(x, y)| x != y).or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())))
}

/// Byte comparison of serialised snapshots after masking. A count mismatch
/// makes the report fail; the overlapping prefix is still compared.
pub fn compare_snapshots<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B], mask: &[&str]) -> EquivalenceReport {
    let records = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(index, (x, y))| {
            let d = first_difference(&masked_bytes(x.as_ref(), mask), &masked_bytes(y.as_ref(), mask));
            RecordComparison { index, equal: d.is_none(), first_difference: d }
        })
        .collect();
    EquivalenceReport { left_count: a.len(), right_count: b.len(), records }
}

pub const TIMING_HEADER: &str = "mode,records,virtual_wall_clock,p95_per_record";

/// Seconds with millisecond precision.
pub fn timing_csv(runs: &[SimRun]) -> String {
    let mut out = String::from(TIMING_HEADER);
    out.push('\n');
    for r in runs {
        out.push_str(&format!(
            "{},{},{:.3},{:.3}\n",
            r.mode,
            r.snapshots.len(),
            r.wall_clock.millis() as f64 / 1000.0,
            r.p95_ms() as f64 / 1000.0
        ));
    }
    out
}

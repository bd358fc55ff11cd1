//! Condition/action policies with obligations and an audit template.
//!
//! A condition is a conjunction of property clauses over an object's field
//! mapping, optionally compared against an announcement payload. Clause
//! semantics are shared with event subscription filters.

mod duration;
mod turtle;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditEntry, AuditKind, AuditLog};
use crate::seed::Seed;
use crate::time::VirtualTime;

pub use duration::{parse_duration, DurationError, IsoDuration};
pub use turtle::{
    parse_document, parse_policies, parse_policy, serialise_policies, serialise_policy, Annotation, ObjectDescription,
    ParseError, SerialiseError, TurtleDocument, PREFIXES,
};

/// Actions every autonomous object may take besides its declared operations.
pub const BUILTIN_ACTIONS: [&str; 4] = ["ANNOUNCE", "VALIDATE", "RECONCILE", "UPDATETRUST"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid field path {0:?}")]
    InvalidPath(String),
    #[error("rate-limit window must be positive")]
    ZeroWindow,
    #[error("policy {policy} action {action:?} is neither a declared operation nor a built-in action")]
    UndeclaredAction { policy: String, action: String },
    #[error(transparent)]
    Duration(#[from] DurationError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Serialise(#[from] SerialiseError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Number(f64),
    Text(String),
}

impl FieldValue {
    pub fn text(s: impl Into<String>) -> Self {
        FieldValue::Text(s.into())
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            FieldValue::Number(n) => Some(*n),
            FieldValue::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            FieldValue::Text(s) => Some(s),
            FieldValue::Number(_) => None,
        }
    }
}

impl From<f64> for FieldValue {
    fn from(v: f64) -> Self {
        FieldValue::Number(v)
    }
}

impl From<&str> for FieldValue {
    fn from(v: &str) -> Self {
        FieldValue::Text(v.to_string())
    }
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Number(n) => write!(f, "{n}"),
            FieldValue::Text(s) => f.write_str(s),
        }
    }
}

/// Field name to value. Names are local names (`trustScore`, not the full IRI).
pub type Fields = BTreeMap<String, FieldValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Le,
    Ge,
    Lt,
    Gt,
    Eq,
    Ne,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Gt => ">",
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
        }
    }

    fn holds(self, left: &FieldValue, right: &FieldValue) -> bool {
        match (left, right) {
            (FieldValue::Number(a), FieldValue::Number(b)) => match self {
                Comparator::Le => a <= b,
                Comparator::Ge => a >= b,
                Comparator::Lt => a < b,
                Comparator::Gt => a > b,
                Comparator::Eq => a == b,
                Comparator::Ne => a != b,
            },
            (FieldValue::Text(a), FieldValue::Text(b)) => match self {
                Comparator::Eq => a == b,
                Comparator::Ne => a != b,
                _ => false,
            },
            // mixed kinds are never equal
            _ => self == Comparator::Ne,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Constraint {
    Compare {
        cmp: Comparator,
        value: FieldValue,
    },
    /// The field equals the same-named (or given) field of the payload.
    EqualsPayload {
        payload_path: String,
    },
    Not {
        inner: Box<Constraint>,
    },
    /// Field present with any value. Filters only; has no Turtle form.
    Exists,
}

impl Constraint {
    pub fn cmp(cmp: Comparator, value: impl Into<FieldValue>) -> Self {
        Constraint::Compare { cmp, value: value.into() }
    }

    /// `!= value`, written as a negated equality so it has a Turtle form.
    pub fn not_equal(value: impl Into<FieldValue>) -> Self {
        Constraint::negate(Constraint::cmp(Comparator::Eq, value))
    }

    pub fn equals_payload(path: impl Into<String>) -> Self {
        Constraint::EqualsPayload { payload_path: path.into() }
    }

    pub fn negate(inner: Constraint) -> Self {
        Constraint::Not { inner: Box::new(inner) }
    }

    fn payload_paths<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Constraint::EqualsPayload { payload_path } => {
                out.insert(payload_path);
            }
            Constraint::Not { inner } => inner.payload_paths(out),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub path: String,
    pub constraint: Constraint,
}

impl Clause {
    pub fn new(path: impl Into<String>, constraint: Constraint) -> Self {
        Clause { path: path.into(), constraint }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !is_local_name(&self.path) {
            return Err(PolicyError::InvalidPath(self.path.clone()));
        }
        let mut paths = BTreeSet::new();
        self.constraint.payload_paths(&mut paths);
        for p in paths {
            if !is_local_name(p) {
                return Err(PolicyError::InvalidPath(p.to_string()));
            }
        }
        Ok(())
    }
}

pub(crate) fn is_local_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// What happens when a referenced field is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    /// The clause is false.
    #[default]
    Lenient,
    /// Evaluation errors.
    Strict,
}

fn eval_clause_raw(
    clause: &Clause,
    fields: &Fields,
    payload: Option<&Fields>,
    mode: FieldMode,
) -> Result<bool, String> {
    if !is_local_name(&clause.path) {
        return Err(format!("malformed path {:?}", clause.path));
    }
    let Some(value) = fields.get(&clause.path) else {
        return match mode {
            FieldMode::Lenient => Ok(false),
            FieldMode::Strict => Err(format!("missing field {}", clause.path)),
        };
    };
    eval_constraint(&clause.constraint, value, payload, mode)
}

fn eval_constraint(
    c: &Constraint,
    value: &FieldValue,
    payload: Option<&Fields>,
    mode: FieldMode,
) -> Result<bool, String> {
    match c {
        Constraint::Compare { cmp, value: rhs } => Ok(cmp.holds(value, rhs)),
        Constraint::Exists => Ok(true),
        Constraint::EqualsPayload { payload_path } => {
            if !is_local_name(payload_path) {
                return Err(format!("malformed payload path {payload_path:?}"));
            }
            match payload.and_then(|p| p.get(payload_path)) {
                Some(other) => Ok(Comparator::Eq.holds(value, other)),
                None => match mode {
                    FieldMode::Lenient => Err(MISSING_PAYLOAD.to_string()),
                    FieldMode::Strict => Err(format!("missing payload field {payload_path}")),
                },
            }
        }
        Constraint::Not { inner } => match eval_constraint(inner, value, payload, mode) {
            Ok(b) => Ok(!b),
            Err(e) => Err(e),
        },
    }
}

// Sentinel: in lenient mode a missing payload field makes the whole clause
// false, including under negation.
const MISSING_PAYLOAD: &str = "\u{0}missing-payload";

/// Evaluates one clause. `Err` carries a diagnostic.
pub fn eval_clause(
    clause: &Clause,
    fields: &Fields,
    payload: Option<&Fields>,
    mode: FieldMode,
) -> Result<bool, String> {
    match eval_clause_raw(clause, fields, payload, mode) {
        Err(e) if e == MISSING_PAYLOAD => Ok(false),
        other => other,
    }
}

/// Which objects a condition applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum Target {
    Any,
    /// Matches the object whose `pid` field equals this name.
    Node(String),
    /// Matches objects whose `type` field equals this name.
    Class(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub target: Target,
    pub clauses: Vec<Clause>,
}

impl Condition {
    pub fn new(target: Target, clauses: Vec<Clause>) -> Self {
        Condition { target, clauses }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        self.clauses.iter().try_for_each(Clause::validate)
    }

    pub fn evaluate(&self, fields: &Fields, payload: Option<&Fields>, mode: FieldMode) -> ConditionResult {
        let on_target = match &self.target {
            Target::Any => true,
            Target::Node(n) => fields.get("pid").and_then(FieldValue::as_text) == Some(n.as_str()),
            Target::Class(c) => fields.get("type").and_then(FieldValue::as_text) == Some(c.as_str()),
        };
        let mut result = on_target;
        // every clause is evaluated so malformed ones surface even when an
        // earlier clause is already false
        for clause in &self.clauses {
            match eval_clause(clause, fields, payload, mode) {
                Ok(b) => result &= b,
                Err(e) => return ConditionResult::Error(e),
            }
        }
        if result {
            ConditionResult::True
        } else {
            ConditionResult::False
        }
    }

    /// Payload fields the condition reads.
    pub fn payload_paths(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for c in &self.clauses {
            c.constraint.payload_paths(&mut out);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", content = "diagnostic", rename_all = "snake_case")]
pub enum ConditionResult {
    True,
    False,
    Error(String),
}

impl ConditionResult {
    pub fn holds(&self) -> bool {
        matches!(self, ConditionResult::True)
    }

    fn name(&self) -> &'static str {
        match self {
            ConditionResult::True => "true",
            ConditionResult::False => "false",
            ConditionResult::Error(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obligation {
    /// At most one firing per window.
    RateLimit { window: IsoDuration },
    /// Notify an assignee (full IRI) whenever the action fires.
    Notify { assignee: String },
}

impl Obligation {
    pub fn rate_limit(window: IsoDuration) -> Result<Self, PolicyError> {
        if window.is_zero() {
            return Err(PolicyError::ZeroWindow);
        }
        Ok(Obligation::RateLimit { window })
    }

    pub fn notify(assignee: impl Into<String>) -> Self {
        Obligation::Notify { assignee: assignee.into() }
    }
}

/// Skeleton copied into every audit record the policy emits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditTemplate {
    pub activity: String,
    pub outputs: Vec<String>,
}

impl AuditTemplate {
    pub fn for_policy(id: &str) -> Self {
        AuditTemplate { activity: format!("evaluatePolicy:{id}"), outputs: vec![format!("evaluation:{id}")] }
    }
}

pub const DEFAULT_POLICY_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub id: String,
    pub condition: Condition,
    pub action: String,
    pub obligations: Vec<Obligation>,
    pub audit_template: AuditTemplate,
    pub version: String,
}

impl Policy {
    pub fn new(id: impl Into<String>, condition: Condition, action: impl Into<String>) -> Self {
        let id = id.into();
        Policy {
            audit_template: AuditTemplate::for_policy(&id),
            id,
            condition,
            action: action.into(),
            obligations: Vec::new(),
            version: DEFAULT_POLICY_VERSION.to_string(),
        }
    }

    pub fn with_obligation(mut self, o: Obligation) -> Self {
        self.obligations.push(o);
        self
    }

    pub fn with_version(mut self, v: impl Into<String>) -> Self {
        self.version = v.into();
        self
    }

    /// Version tag recorded in audit records.
    pub fn version_tag(&self) -> String {
        format!("policy/{}@{}", self.id, self.version)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        self.condition.validate()?;
        for o in &self.obligations {
            if let Obligation::RateLimit { window } = o {
                if window.is_zero() {
                    return Err(PolicyError::ZeroWindow);
                }
            }
        }
        Ok(())
    }

    /// Checks the action against `operations` plus the built-in actions.
    pub fn check_action<'a, I>(&self, operations: I) -> Result<(), PolicyError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let ok = BUILTIN_ACTIONS.contains(&self.action.as_str()) || operations.into_iter().any(|op| op == self.action);
        if ok {
            Ok(())
        } else {
            Err(PolicyError::UndeclaredAction { policy: self.id.clone(), action: self.action.clone() })
        }
    }
}

/// Rate-limit bookkeeping: firing times per (policy id, object pid).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DutyState {
    firings: BTreeMap<(String, String), Vec<VirtualTime>>,
}

impl DutyState {
    pub fn new() -> Self {
        Self::default()
    }

    /// A firing at `now` is allowed when every earlier firing is at least
    /// `window` away in either direction. Callers may present clocks out of
    /// order, so both directions are checked.
    pub fn allows(&self, policy: &str, pid: &str, window: &IsoDuration, now: VirtualTime) -> bool {
        let w = window.as_millis() as i128;
        self.firings
            .get(&(policy.to_string(), pid.to_string()))
            .is_none_or(|ts| ts.iter().all(|t| now.signed_since(*t).abs() >= w))
    }

    fn record(&mut self, policy: &str, pid: &str, now: VirtualTime) {
        self.firings.entry((policy.to_string(), pid.to_string())).or_default().push(now);
    }

    pub fn firings(&self, policy: &str, pid: &str) -> &[VirtualTime] {
        self.firings.get(&(policy.to_string(), pid.to_string())).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockedBy {
    pub obligation_index: usize,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub policy_id: String,
    pub policy_version: String,
    pub object: String,
    pub condition: ConditionResult,
    pub fired: bool,
    pub action: Option<String>,
    pub blocked_by: Option<BlockedBy>,
    pub notified: Vec<String>,
    pub audit_record_id: u64,
}

/// Evaluates `policy` against an object and optional payload. Emits exactly
/// one audit record whatever the outcome.
pub fn evaluate_policy(
    policy: &Policy,
    fields: &Fields,
    payload: Option<&Fields>,
    now: VirtualTime,
    mode: FieldMode,
    duties: &mut DutyState,
    audit: &mut AuditLog,
) -> PolicyEvaluation {
    let pid = fields.get("pid").and_then(FieldValue::as_text).map(str::to_string);
    let condition = match &pid {
        Some(_) => policy.condition.evaluate(fields, payload, mode),
        None => ConditionResult::Error("object fields carry no pid".to_string()),
    };
    let pid = pid.unwrap_or_default();

    let mut blocked_by = None;
    if condition.holds() {
        for (i, o) in policy.obligations.iter().enumerate() {
            if let Obligation::RateLimit { window } = o {
                if !duties.allows(&policy.id, &pid, window, now) {
                    blocked_by = Some(BlockedBy { obligation_index: i, kind: "rate_limit".to_string() });
                    break;
                }
            }
        }
    }
    let fired = condition.holds() && blocked_by.is_none();
    let mut notified = Vec::new();
    if fired {
        duties.record(&policy.id, &pid, now);
        for o in &policy.obligations {
            if let Obligation::Notify { assignee } = o {
                notified.push(assignee.clone());
            }
        }
    }

    let mut entry = AuditEntry::new(AuditKind::PolicyEvaluation, policy.audit_template.activity.clone(), pid.clone())
        .version(policy.version_tag())
        .at(now)
        .input(format!("object:{pid}"))
        .detail("condition", condition.name())
        .detail("fired", fired);
    if let ConditionResult::Error(e) = &condition {
        entry = entry.detail("error", e);
    }
    if let Some(b) = &blocked_by {
        entry = entry.detail("blocked_by", format!("{}#{}", b.kind, b.obligation_index));
    }
    if payload.is_some() {
        entry = entry.input("payload");
    }
    if fired {
        for out in &policy.audit_template.outputs {
            entry = entry.output(out.clone());
        }
        entry = entry.output(format!("action:{}", policy.action));
        for n in &notified {
            entry = entry.output(format!("notify:{n}"));
        }
    }
    let audit_record_id = audit.append(entry);

    PolicyEvaluation {
        policy_id: policy.id.clone(),
        policy_version: policy.version_tag(),
        object: pid,
        condition,
        fired,
        action: fired.then(|| policy.action.clone()),
        blocked_by,
        notified,
        audit_record_id,
    }
}

/// Re-validation request for an observation whose trust dropped while its
/// phenotype match stays high. Limited to one firing per day.
pub fn observation_policy(pid: &str) -> Policy {
    Policy::new(
        format!("{pid}-policy"),
        Condition::new(
            Target::Node(pid.to_string()),
            vec![
                Clause::new("trustScore", Constraint::cmp(Comparator::Le, 0.5)),
                Clause::new("phenotypeMatchScore", Constraint::cmp(Comparator::Ge, 0.5)),
            ],
        ),
        "seekClinicalValidation",
    )
    .with_obligation(Obligation::RateLimit { window: IsoDuration::days(1) })
}

pub const TRUST_REGISTER_IRI: &str = "http://w3id.org/afdo#TrustRegister";

/// Requests an agreement round when an announcement names the same variant
/// with a different classification, and notifies the trust register.
pub fn consensus_trigger_policy() -> Policy {
    Policy::new(
        "variant-policy",
        Condition::new(
            Target::Class("GeneticVariantInterpretation".to_string()),
            vec![
                Clause::new("variantId", Constraint::equals_payload("variantId")),
                Clause::new("classification", Constraint::negate(Constraint::equals_payload("classification"))),
            ],
        ),
        "negotiateClassification",
    )
    .with_obligation(Obligation::notify(TRUST_REGISTER_IRI))
}

/// One evaluation input: object fields plus an optional payload.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryInput {
    pub fields: Fields,
    pub payload: Option<Fields>,
}

/// Builds `n` seeded inputs probing the thresholds and payload comparisons
/// used by `policies`: values at, just around and far from each constant,
/// missing fields, matching and mismatching payloads, off-target objects.
pub fn generate_battery(policies: &[Policy], n: usize, seed: Seed) -> Vec<BatteryInput> {
    let mut numeric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut textual: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut payload_paths: BTreeSet<&str> = BTreeSet::new();
    let mut pids = vec!["obj-0".to_string()];
    let mut types = vec!["Thing".to_string()];

    fn walk<'a>(
        path: &'a str,
        c: &'a Constraint,
        numeric: &mut BTreeMap<&'a str, Vec<f64>>,
        textual: &mut BTreeMap<&'a str, Vec<String>>,
        payload: &mut BTreeSet<&'a str>,
    ) {
        match c {
            Constraint::Compare { value: FieldValue::Number(v), .. } => numeric.entry(path).or_default().push(*v),
            Constraint::Compare { value: FieldValue::Text(s), .. } => textual.entry(path).or_default().push(s.clone()),
            Constraint::EqualsPayload { payload_path } => {
                payload.insert(payload_path);
                textual.entry(path).or_default();
            }
            Constraint::Not { inner } => walk(path, inner, numeric, textual, payload),
            Constraint::Exists => {
                textual.entry(path).or_default();
            }
        }
    }

    for p in policies {
        match &p.condition.target {
            Target::Node(n) => pids.push(n.clone()),
            Target::Class(c) => types.push(c.clone()),
            Target::Any => {}
        }
        for c in &p.condition.clauses {
            walk(&c.path, &c.constraint, &mut numeric, &mut textual, &mut payload_paths);
        }
    }

    let mut rng = seed.rng();
    let pick_pid = |rng: &mut rand_chacha::ChaCha8Rng| {
        // favour the targeted objects
        if pids.len() > 1 && rng.random_bool(0.85) {
            pids[rng.random_range(1..pids.len())].clone()
        } else {
            pids[0].clone()
        }
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut fields = Fields::new();
        fields.insert("pid".to_string(), FieldValue::Text(pick_pid(&mut rng)));
        let ty = if types.len() > 1 && rng.random_bool(0.85) {
            types[rng.random_range(1..types.len())].clone()
        } else {
            types[0].clone()
        };
        fields.insert("type".to_string(), FieldValue::Text(ty));

        for (path, consts) in &numeric {
            if rng.random_bool(0.08) {
                continue;
            }
            let v = if !consts.is_empty() && rng.random_bool(0.7) {
                let c = consts[rng.random_range(0..consts.len())];
                match rng.random_range(0..5) {
                    0 => c,
                    1 => c - 1e-9,
                    2 => c + 1e-9,
                    3 => c - 0.1,
                    _ => c + 0.1,
                }
            } else {
                rng.random::<f64>()
            };
            fields.insert(path.to_string(), FieldValue::Number(v));
        }
        let pool = ["VUS", "Pathogenic", "Benign", "x1", "x2"];
        for (path, consts) in &textual {
            if numeric.contains_key(path) || rng.random_bool(0.08) {
                continue;
            }
            let v = if !consts.is_empty() && rng.random_bool(0.6) {
                consts[rng.random_range(0..consts.len())].clone()
            } else {
                pool[rng.random_range(0..pool.len())].to_string()
            };
            fields.insert(path.to_string(), FieldValue::Text(v));
        }

        let payload = if payload_paths.is_empty() || rng.random_bool(0.1) {
            None
        } else {
            let mut p = Fields::new();
            for path in &payload_paths {
                if rng.random_bool(0.05) {
                    continue;
                }
                let v = match fields.get(*path) {
                    Some(v) if rng.random_bool(0.5) => v.clone(),
                    _ => FieldValue::Text(pool[rng.random_range(0..pool.len())].to_string()),
                };
                p.insert(path.to_string(), v);
            }
            Some(p)
        };
        out.push(BatteryInput { fields, payload });
    }
    out
}

/// Outcome of one policy on one battery input, in a comparable form.
#[derive(Debug, Clone, PartialEq)]
pub struct Behaviour {
    pub condition: ConditionResult,
    pub fired: bool,
    pub blocked: bool,
    pub notified: Vec<String>,
}

/// Runs the battery in order, one input every `step`, under fresh duty and
/// audit state.
pub fn behaviour_on(
    policy: &Policy,
    battery: &[BatteryInput],
    step: std::time::Duration,
    mode: FieldMode,
) -> Vec<Behaviour> {
    let mut duties = DutyState::new();
    let mut audit = AuditLog::new();
    battery
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let now = VirtualTime::ZERO + step * i as u32;
            let ev = evaluate_policy(policy, &input.fields, input.payload.as_ref(), now, mode, &mut duties, &mut audit);
            Behaviour {
                condition: ev.condition,
                fired: ev.fired,
                blocked: ev.blocked_by.is_some(),
                notified: ev.notified,
            }
        })
        .collect()
}

/// Index of the first battery input on which the two policies behave
/// differently, if any.
pub fn first_behaviour_difference(a: &Policy, b: &Policy, battery: &[BatteryInput]) -> Option<usize> {
    let step = std::time::Duration::from_secs(6 * 3_600);
    for mode in [FieldMode::Lenient, FieldMode::Strict] {
        let x = behaviour_on(a, battery, step, mode);
        let y = behaviour_on(b, battery, step, mode);
        if let Some(i) = x.iter().zip(&y).position(|(p, q)| p != q) {
            return Some(i);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn listing_policy() -> Policy {
        Policy::new(
            "obs042-policy",
            Condition::new(
                Target::Node("obs042".into()),
                vec![
                    Clause::new("trustScore", Constraint::cmp(Comparator::Le, 0.5)),
                    Clause::new("phenotypeMatchScore", Constraint::cmp(Comparator::Ge, 0.5)),
                ],
            ),
            "seekClinicalValidation",
        )
        .with_obligation(Obligation::rate_limit(IsoDuration::days(1)).unwrap())
    }

    fn obs(trust: f64) -> Fields {
        let mut f = Fields::new();
        f.insert("pid".into(), "obs042".into());
        f.insert("trustScore".into(), trust.into());
        f.insert("phenotypeMatchScore".into(), 0.72.into());
        f
    }

    fn eval(p: &Policy, f: &Fields, at: VirtualTime, d: &mut DutyState, a: &mut AuditLog) -> PolicyEvaluation {
        evaluate_policy(p, f, None, at, FieldMode::Lenient, d, a)
    }

    #[test]
    fn fires_on_low_trust_and_audits_every_path() {
        let p = listing_policy();
        let mut duties = DutyState::new();
        let mut audit = AuditLog::new();
        let e = eval(&p, &obs(0.45), VirtualTime::ZERO, &mut duties, &mut audit);
        assert!(e.fired);
        assert_eq!(e.action.as_deref(), Some("seekClinicalValidation"));

        let e = eval(&p, &obs(0.60), VirtualTime::from_secs(10), &mut duties, &mut audit);
        assert!(!e.fired);
        assert_eq!(e.condition, ConditionResult::False);

        let e = eval(&p, &obs(0.45), VirtualTime::from_secs(3_600), &mut duties, &mut audit);
        assert!(!e.fired);
        assert_eq!(e.blocked_by.as_ref().unwrap().kind, "rate_limit");

        let e = eval(&p, &obs(0.45), VirtualTime::from_secs(86_400), &mut duties, &mut audit);
        assert!(e.fired);
        assert_eq!(audit.len(), 4);
        assert_eq!(audit.count(AuditKind::PolicyEvaluation), 4);
        assert_eq!(e.audit_record_id, 3);
    }

    #[test]
    fn zero_trust_does_not_block_evaluation() {
        let p = listing_policy();
        let e = eval(&p, &obs(0.0), VirtualTime::ZERO, &mut DutyState::new(), &mut AuditLog::new());
        assert!(e.fired);
    }

    #[test]
    fn missing_fields_follow_the_mode() {
        let p = listing_policy();
        let mut f = obs(0.2);
        f.remove("phenotypeMatchScore");
        let mut audit = AuditLog::new();
        let e = evaluate_policy(&p, &f, None, VirtualTime::ZERO, FieldMode::Lenient, &mut DutyState::new(), &mut audit);
        assert_eq!(e.condition, ConditionResult::False);
        let e = evaluate_policy(&p, &f, None, VirtualTime::ZERO, FieldMode::Strict, &mut DutyState::new(), &mut audit);
        assert!(matches!(e.condition, ConditionResult::Error(_)));
        assert!(!e.fired);
        assert_eq!(audit.len(), 2);
    }

    #[test]
    fn malformed_path_is_an_error_not_a_firing() {
        let p = Policy::new(
            "bad",
            Condition::new(Target::Any, vec![Clause::new("trust score", Constraint::cmp(Comparator::Le, 1.0))]),
            "VALIDATE",
        );
        assert!(p.validate().is_err());
        let mut audit = AuditLog::new();
        let e = evaluate_policy(
            &p,
            &obs(0.1),
            None,
            VirtualTime::ZERO,
            FieldMode::Lenient,
            &mut DutyState::new(),
            &mut audit,
        );
        assert!(matches!(e.condition, ConditionResult::Error(_)));
        assert!(!e.fired);
        assert_eq!(audit.records()[0].detail.get("condition").map(String::as_str), Some("error"));
    }

    #[test]
    fn payload_equality_and_negation() {
        let cond = Condition::new(
            Target::Class("GeneticVariantInterpretation".into()),
            vec![
                Clause::new("variantId", Constraint::equals_payload("variantId")),
                Clause::new("classification", Constraint::negate(Constraint::equals_payload("classification"))),
            ],
        );
        let mut me = Fields::new();
        me.insert("pid".into(), "v1".into());
        me.insert("type".into(), "GeneticVariantInterpretation".into());
        me.insert("variantId".into(), "VCV1".into());
        me.insert("classification".into(), "Pathogenic".into());
        let mut ann = Fields::new();
        ann.insert("variantId".into(), "VCV1".into());
        ann.insert("classification".into(), "VUS".into());
        assert_eq!(cond.evaluate(&me, Some(&ann), FieldMode::Lenient), ConditionResult::True);
        ann.insert("classification".into(), "Pathogenic".into());
        assert_eq!(cond.evaluate(&me, Some(&ann), FieldMode::Lenient), ConditionResult::False);
        ann.insert("variantId".into(), "VCV2".into());
        ann.insert("classification".into(), "VUS".into());
        assert_eq!(cond.evaluate(&me, Some(&ann), FieldMode::Lenient), ConditionResult::False);
        // no payload at all: negated clause is still false
        assert_eq!(cond.evaluate(&me, None, FieldMode::Lenient), ConditionResult::False);
        assert!(matches!(cond.evaluate(&me, None, FieldMode::Strict), ConditionResult::Error(_)));
    }

    #[test]
    fn action_must_be_declared() {
        let p = listing_policy();
        assert!(p.check_action(["Create", "seekClinicalValidation"]).is_ok());
        assert!(p.check_action(["Create"]).is_err());
        let q = Policy::new("q", Condition::new(Target::Any, vec![]), "ANNOUNCE");
        assert!(q.check_action([]).is_ok());
    }

    #[test]
    fn out_of_order_clocks_still_respect_the_window() {
        let p = listing_policy();
        let mut d = DutyState::new();
        let mut a = AuditLog::new();
        assert!(eval(&p, &obs(0.1), VirtualTime::from_secs(100_000), &mut d, &mut a).fired);
        // earlier clock, within a day of the firing
        assert!(!eval(&p, &obs(0.1), VirtualTime::from_secs(50_000), &mut d, &mut a).fired);
        assert!(eval(&p, &obs(0.1), VirtualTime::from_secs(10_000), &mut d, &mut a).fired);
        assert_eq!(d.firings("obs042-policy", "obs042").len(), 2);
    }

    #[test]
    fn notify_duty_lists_assignee() {
        let p = Policy::new("n", Condition::new(Target::Any, vec![]), "RECONCILE")
            .with_obligation(Obligation::notify("http://w3id.org/afdo#TrustRegister"));
        let e = eval(&p, &obs(0.3), VirtualTime::ZERO, &mut DutyState::new(), &mut AuditLog::new());
        assert_eq!(e.notified, vec!["http://w3id.org/afdo#TrustRegister".to_string()]);
    }

    #[test]
    fn battery_is_seeded_and_probes_both_outcomes() {
        let p = listing_policy();
        let a = generate_battery(std::slice::from_ref(&p), 60, Seed(4));
        assert_eq!(a, generate_battery(std::slice::from_ref(&p), 60, Seed(4)));
        let b = behaviour_on(&p, &a, Duration::from_secs(3_600), FieldMode::Lenient);
        assert!(b.iter().any(|x| x.fired));
        assert!(b.iter().any(|x| x.condition == ConditionResult::False));
        assert!(b.iter().any(|x| x.blocked));
        assert_eq!(first_behaviour_difference(&p, &p, &a), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn at_most_one_firing_per_window(times in prop::collection::vec(0u64..(10 * 86_400), 1..60)) {
                let p = listing_policy();
                let mut d = DutyState::new();
                let mut a = AuditLog::new();
                let mut fired = Vec::new();
                for t in &times {
                    let e = eval(&p, &obs(0.3), VirtualTime::from_secs(*t), &mut d, &mut a);
                    if e.fired {
                        fired.push(*t);
                    }
                }
                prop_assert_eq!(a.len(), times.len());
                fired.sort();
                for w in fired.windows(2) {
                    prop_assert!(w[1] - w[0] >= 86_400);
                }
            }

            #[test]
            fn evaluation_is_pure(trust in 0.0f64..1.0, m in 0.0f64..1.0) {
                let p = listing_policy();
                let mut f = obs(trust);
                f.insert("phenotypeMatchScore".into(), m.into());
                let a = p.condition.evaluate(&f, None, FieldMode::Lenient);
                let b = p.condition.evaluate(&f, None, FieldMode::Lenient);
                prop_assert_eq!(a.clone(), b);
                prop_assert_eq!(a.holds(), trust <= 0.5 && m >= 0.5);
            }
        }
    }
}

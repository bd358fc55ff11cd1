//! Typed events, subscription filters, handler maps and a local bus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::AuditLog;
use crate::object::AfdoRecord;
use crate::policy::{
    eval_clause, evaluate_policy, Clause, Comparator, Constraint, DutyState, FieldMode, FieldValue, Fields, Policy,
    PolicyEvaluation,
};
use crate::time::VirtualTime;
use crate::trust::{TrustEvent, TrustParameters};

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("unknown event kind {0:?}")]
    UnknownKind(String),
    #[error("no object registered under {0}")]
    UnknownObject(String),
    #[error("object {0} is already registered")]
    DuplicateObject(String),
    #[error("no subscription with id {0}")]
    UnknownSubscription(u64),
    #[error(transparent)]
    Trust(#[from] crate::trust::TrustError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Create,
    Update,
    Announce,
    Validate,
    Reconcile,
    TrustChange,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Create,
        EventKind::Update,
        EventKind::Announce,
        EventKind::Validate,
        EventKind::Reconcile,
        EventKind::TrustChange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Create => "Create",
            EventKind::Update => "Update",
            EventKind::Announce => "Announce",
            EventKind::Validate => "Validate",
            EventKind::Reconcile => "Reconcile",
            EventKind::TrustChange => "TrustChange",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| EventError::UnknownKind(s.to_string()))
    }
}

/// Activity-style event. Field names follow the activity vocabulary:
/// `type`, `actor`, `object`, `published`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "type")]
    pub kind: EventKind,
    pub actor: String,
    #[serde(rename = "object")]
    pub payload: Fields,
    pub published: VirtualTime,
}

impl Event {
    pub fn new(kind: EventKind, actor: impl Into<String>, published: VirtualTime) -> Self {
        Event { kind, actor: actor.into(), payload: Fields::new(), published }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<FieldValue>) -> Self {
        self.payload.insert(key.into(), value.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("event serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, EventError> {
        serde_json::from_str(s).map_err(|e| EventError::UnknownKind(e.to_string()))
    }
}

/// Optional kind constraint plus a conjunction of payload clauses.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubscriptionFilter {
    pub kind: Option<EventKind>,
    pub clauses: Vec<Clause>,
}

impl SubscriptionFilter {
    pub fn kind(kind: EventKind) -> Self {
        SubscriptionFilter { kind: Some(kind), clauses: Vec::new() }
    }

    pub fn with(mut self, path: impl Into<String>, constraint: Constraint) -> Self {
        self.clauses.push(Clause::new(path, constraint));
        self
    }

    /// Announcements whose `variantId` equals `variant_id`.
    pub fn announcements_about(variant_id: &str) -> Self {
        SubscriptionFilter::kind(EventKind::Announce).with("variantId", Constraint::cmp(Comparator::Eq, variant_id))
    }

    pub fn matches(&self, event: &Event) -> bool {
        if self.kind.is_some_and(|k| k != event.kind) {
            return false;
        }
        self.clauses.iter().all(|c| eval_clause(c, &event.payload, None, FieldMode::Lenient) == Ok(true))
    }
}

/// Event kind to the ids of the policies it triggers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HandlerMap(pub BTreeMap<EventKind, Vec<String>>);

impl HandlerMap {
    pub fn bind(&mut self, kind: EventKind, policy_id: &str) {
        let ids = self.0.entry(kind).or_default();
        if !ids.iter().any(|p| p == policy_id) {
            ids.push(policy_id.to_string());
        }
    }

    pub fn policies_for(&self, kind: EventKind) -> &[String] {
        self.0.get(&kind).map_or(&[], Vec::as_slice)
    }

    /// `Err` names the first mapped id with no matching policy.
    pub fn validate(&self, policies: &[Policy]) -> Result<(), String> {
        for ids in self.0.values() {
            for id in ids {
                if !policies.iter().any(|p| &p.id == id) {
                    return Err(id.clone());
                }
            }
        }
        Ok(())
    }
}

/// Evaluates exactly the receiver's policies mapped to `event.kind`, in
/// declaration order, with the event payload available to conditions.
pub fn dispatch_to_policies(
    receiver: &AfdoRecord,
    event: &Event,
    mode: FieldMode,
    duties: &mut DutyState,
    audit: &mut AuditLog,
) -> Vec<PolicyEvaluation> {
    let mapped = receiver.event_interface.handlers.policies_for(event.kind);
    if mapped.is_empty() {
        return Vec::new();
    }
    let fields = receiver.fields();
    receiver
        .policies
        .iter()
        .filter(|p| mapped.contains(&p.id))
        .map(|p| evaluate_policy(p, &fields, Some(&event.payload), event.published, mode, duties, audit))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub id: u64,
    pub subscriber: String,
    pub filter: SubscriptionFilter,
}

/// Actions that open an agreement round when a policy fires.
const AGREEMENT_ACTIONS: [&str; 2] = ["negotiateClassification", "RECONCILE"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRequest {
    pub requester: String,
    pub target_id: Option<String>,
    pub event_seq: u64,
    pub policy_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub event_seq: u64,
    pub subscription: u64,
    pub subscriber: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub event_seq: u64,
    pub matched_subscriptions: usize,
    pub delivered_to: Vec<String>,
    pub evaluations_per_subscriber: BTreeMap<String, usize>,
    pub evaluations: Vec<PolicyEvaluation>,
    pub agreement_requests: Vec<AgreementRequest>,
}

impl DeliveryReport {
    pub fn total_evaluations(&self) -> usize {
        self.evaluations.len()
    }
}

/// In-process bus. Publishing is serialised; each subscriber sees events in
/// publish order.
#[derive(Debug, Clone, Default)]
pub struct EventBus {
    objects: BTreeMap<String, AfdoRecord>,
    subscriptions: BTreeMap<u64, Subscription>,
    // kind (None = any kind) -> subscription ids
    index: BTreeMap<Option<EventKind>, BTreeSet<u64>>,
    next_subscription: u64,
    next_event: u64,
    duties: DutyState,
    audit: AuditLog,
    inboxes: BTreeMap<String, Vec<Event>>,
    deliveries: Vec<Delivery>,
    trust_params: TrustParameters,
    pub deliver_to_self: bool,
    pub field_mode: FieldMode,
}

impl EventBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, object: AfdoRecord) -> Result<(), EventError> {
        let pid = object.pid().to_string();
        if self.objects.contains_key(&pid) {
            return Err(EventError::DuplicateObject(pid));
        }
        self.objects.insert(pid, object);
        Ok(())
    }

    /// Registers the object and subscribes it with each filter of its event
    /// interface.
    pub fn join(&mut self, object: AfdoRecord) -> Result<Vec<u64>, EventError> {
        let pid = object.pid().to_string();
        let filters = object.event_interface.filters.clone();
        self.register(object)?;
        filters.into_iter().map(|f| self.subscribe(&pid, f)).collect()
    }

    pub fn object(&self, pid: &str) -> Option<&AfdoRecord> {
        self.objects.get(pid)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn subscribe(&mut self, subscriber: &str, filter: SubscriptionFilter) -> Result<u64, EventError> {
        if !self.objects.contains_key(subscriber) {
            return Err(EventError::UnknownObject(subscriber.to_string()));
        }
        let id = self.next_subscription;
        self.next_subscription += 1;
        self.index.entry(filter.kind).or_default().insert(id);
        self.subscriptions.insert(id, Subscription { id, subscriber: subscriber.to_string(), filter });
        Ok(id)
    }

    pub fn unsubscribe(&mut self, id: u64) -> Result<(), EventError> {
        let sub = self.subscriptions.remove(&id).ok_or(EventError::UnknownSubscription(id))?;
        if let Some(ids) = self.index.get_mut(&sub.filter.kind) {
            ids.remove(&id);
        }
        Ok(())
    }

    pub fn publish(&mut self, event: Event) -> DeliveryReport {
        let seq = self.next_event;
        self.next_event += 1;

        let mut candidates: BTreeSet<u64> = BTreeSet::new();
        for key in [Some(event.kind), None] {
            if let Some(ids) = self.index.get(&key) {
                candidates.extend(ids);
            }
        }
        let mut report = DeliveryReport { event_seq: seq, ..Default::default() };
        // subscriber -> first matching subscription
        let mut receivers: BTreeMap<String, u64> = BTreeMap::new();
        for id in candidates {
            let sub = &self.subscriptions[&id];
            if !self.deliver_to_self && sub.subscriber == event.actor {
                continue;
            }
            if sub.filter.matches(&event) {
                report.matched_subscriptions += 1;
                receivers.entry(sub.subscriber.clone()).or_insert(id);
            }
        }

        for (subscriber, subscription) in receivers {
            self.inboxes.entry(subscriber.clone()).or_default().push(event.clone());
            self.deliveries.push(Delivery { event_seq: seq, subscription, subscriber: subscriber.clone() });
            let receiver = &self.objects[&subscriber];
            let evals = dispatch_to_policies(receiver, &event, self.field_mode, &mut self.duties, &mut self.audit);
            for e in &evals {
                if e.fired && e.action.as_deref().is_some_and(|a| AGREEMENT_ACTIONS.contains(&a)) {
                    report.agreement_requests.push(AgreementRequest {
                        requester: subscriber.clone(),
                        target_id: event
                            .payload
                            .get("variantId")
                            .or_else(|| event.payload.get("target_id"))
                            .map(|v| v.to_string()),
                        event_seq: seq,
                        policy_id: e.policy_id.clone(),
                    });
                }
            }
            report.evaluations_per_subscriber.insert(subscriber.clone(), evals.len());
            report.delivered_to.push(subscriber);
            report.evaluations.extend(evals);
        }
        report
    }

    /// Applies a trust event to a registered object, re-evaluates its own
    /// trust-change policies, then announces the change on the bus.
    pub fn apply_trust(
        &mut self,
        pid: &str,
        event: TrustEvent,
        at: VirtualTime,
    ) -> Result<(Vec<PolicyEvaluation>, DeliveryReport), EventError> {
        let params = self.trust_params;
        let obj = self.objects.get_mut(pid).ok_or_else(|| EventError::UnknownObject(pid.to_string()))?;
        let score = obj.trust.apply(pid, event, &params, at, &mut self.audit)?;
        let change = Event::new(EventKind::TrustChange, pid, at).with("pid", pid).with("trustScore", score);
        let obj = &self.objects[pid];
        let own = dispatch_to_policies(obj, &change, self.field_mode, &mut self.duties, &mut self.audit);
        let report = self.publish(change);
        Ok((own, report))
    }

    pub fn inbox(&self, pid: &str) -> &[Event] {
        self.inboxes.get(pid).map_or(&[], Vec::as_slice)
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn duties(&self) -> &DutyState {
        &self.duties
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::AuditKind;
    use crate::model::Classification;
    use crate::trust::TrustEventKind;

    fn variant(pid: &str, vid: &str, c: Classification) -> AfdoRecord {
        AfdoRecord::variant_interpretation(pid, vid, c, 0.7).unwrap()
    }

    fn announce(actor: &str, vid: &str, c: Classification) -> Event {
        Event::new(EventKind::Announce, actor, VirtualTime::from_secs(1))
            .with("variantId", vid)
            .with("classification", c.label())
    }

    #[test]
    fn kinds_parse_and_reject_unknown() {
        for k in EventKind::ALL {
            assert_eq!(k.name().parse::<EventKind>().unwrap(), k);
        }
        assert!("Delete".parse::<EventKind>().is_err());
        assert!(Event::from_json(r#"{"type":"Like","actor":"a","object":{},"published":0}"#).is_err());
    }

    #[test]
    fn event_json_uses_activity_field_names() {
        let e = announce("a", "X", Classification::Vus);
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["type"], "Announce");
        assert_eq!(v["object"]["variantId"], "X");
        assert_eq!(Event::from_json(&e.to_json()).unwrap(), e);
    }

    #[test]
    fn filters() {
        let f = SubscriptionFilter::announcements_about("X");
        assert!(f.matches(&announce("a", "X", Classification::Vus)));
        assert!(!f.matches(&announce("a", "Y", Classification::Vus)));
        let any = SubscriptionFilter::kind(EventKind::Announce).with("variantId", Constraint::Exists);
        assert!(any.matches(&announce("a", "Y", Classification::Vus)));
        assert!(!any.matches(&Event::new(EventKind::Announce, "a", VirtualTime::ZERO)));
        assert!(!any.matches(&Event::new(EventKind::Update, "a", VirtualTime::ZERO).with("variantId", "Y")));
    }

    #[test]
    fn selective_delivery_and_conflict_trigger() {
        let mut bus = EventBus::new();
        bus.join(variant("a", "X", Classification::Pathogenic)).unwrap();
        bus.join(variant("b", "Y", Classification::Pathogenic)).unwrap();
        bus.join(variant("c", "Z", Classification::Vus)).unwrap();
        let r = bus.publish(announce("lab", "X", Classification::Vus));
        assert_eq!(r.matched_subscriptions, 1);
        assert_eq!(r.delivered_to, vec!["a".to_string()]);
        assert_eq!(r.total_evaluations(), 1);
        assert_eq!(r.agreement_requests.len(), 1);
        assert_eq!(r.agreement_requests[0].target_id.as_deref(), Some("X"));
        assert_eq!(r.evaluations[0].notified.len(), 1);

        // same classification: delivered and evaluated, no round requested
        let r = bus.publish(announce("lab", "X", Classification::Pathogenic));
        assert_eq!(r.total_evaluations(), 1);
        assert!(r.agreement_requests.is_empty());
        assert_eq!(bus.audit().count(AuditKind::PolicyEvaluation), 2);
    }

    #[test]
    fn self_delivery_is_suppressed_by_default() {
        let mut bus = EventBus::new();
        bus.join(variant("a", "X", Classification::Pathogenic)).unwrap();
        bus.join(variant("b", "X", Classification::Vus)).unwrap();
        let r = bus.publish(announce("a", "X", Classification::Pathogenic));
        assert_eq!(r.delivered_to, vec!["b".to_string()]);
        bus.deliver_to_self = true;
        let r = bus.publish(announce("a", "X", Classification::Pathogenic));
        assert_eq!(r.delivered_to, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn one_delivery_per_subscriber_and_fifo() {
        let mut bus = EventBus::new();
        bus.join(variant("a", "X", Classification::Pathogenic)).unwrap();
        bus.subscribe("a", SubscriptionFilter::kind(EventKind::Announce)).unwrap();
        let r = bus.publish(announce("lab", "X", Classification::Vus));
        assert_eq!(r.matched_subscriptions, 2);
        assert_eq!(r.delivered_to.len(), 1);
        assert_eq!(bus.inbox("a").len(), 1);
        bus.publish(announce("lab", "X", Classification::Benign));
        let inbox = bus.inbox("a");
        assert_eq!(inbox[1].payload["classification"], FieldValue::from("Benign"));
    }

    #[test]
    fn unsubscribe_stops_delivery() {
        let mut bus = EventBus::new();
        let ids = bus.join(variant("a", "X", Classification::Pathogenic)).unwrap();
        bus.unsubscribe(ids[0]).unwrap();
        let r = bus.publish(announce("lab", "X", Classification::Vus));
        assert!(r.delivered_to.is_empty());
        assert!(bus.unsubscribe(ids[0]).is_err());
    }

    #[test]
    fn empty_mapping_evaluates_nothing() {
        let mut bus = EventBus::new();
        bus.register(variant("a", "X", Classification::Pathogenic)).unwrap();
        bus.subscribe("a", SubscriptionFilter::kind(EventKind::Update)).unwrap();
        let r = bus.publish(Event::new(EventKind::Update, "lab", VirtualTime::ZERO));
        assert_eq!(r.delivered_to.len(), 1);
        assert_eq!(r.total_evaluations(), 0);
        assert!(bus.audit().is_empty());
        assert_eq!(bus.deliveries().len(), 1);
    }

    #[test]
    fn trust_change_reevaluates_observation_policy() {
        let mut bus = EventBus::new();
        bus.register(AfdoRecord::phenotype_observation("obs042", 0.75, 0.72).unwrap()).unwrap();
        let (own, _) = bus
            .apply_trust(
                "obs042",
                TrustEvent::new(TrustEventKind::ValidationRefuted, "round:1"),
                VirtualTime::from_secs(5),
            )
            .unwrap();
        assert_eq!(own.len(), 1);
        assert!(own[0].fired);
        assert_eq!(bus.object("obs042").unwrap().trust.score(), 0.35);
        assert_eq!(bus.audit().count(AuditKind::TrustUpdate), 1);
        assert_eq!(bus.audit().count(AuditKind::PolicyEvaluation), 1);
    }

    #[test]
    fn evaluation_count_ignores_corpus_size() {
        let count = |n: usize| {
            let mut bus = EventBus::new();
            for i in 0..n {
                let vid = if i < 3 { "TARGET".to_string() } else { format!("V{i}") };
                bus.join(variant(&format!("obj{i:05}"), &vid, Classification::Pathogenic)).unwrap();
            }
            bus.publish(announce("lab", "TARGET", Classification::Benign)).total_evaluations()
        };
        assert_eq!(count(100), 3);
        assert_eq!(count(100), count(1000));
    }
}

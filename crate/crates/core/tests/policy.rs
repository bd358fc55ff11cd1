use afdo_core::audit::{AuditKind, AuditLog};
use afdo_core::policy::{
    evaluate_policy, first_behaviour_difference, generate_battery, observation_policy, DutyState, FieldMode,
    FieldValue, Fields,
};
use afdo_core::policy::{parse_document, parse_policies, serialise_policy};
use afdo_core::{Seed, VirtualTime};
use proptest::prelude::*;

const OBSERVATION: &str = include_str!("fixtures/observation_policy.ttl");
const VARIANT: &str = include_str!("fixtures/variant_policy.ttl");

#[test]
fn fixtures_round_trip_to_equivalent_behaviour() {
    for text in [OBSERVATION, VARIANT] {
        let parsed = parse_policies(text).unwrap();
        assert_eq!(parsed.len(), 1);
        let p = &parsed[0];
        let once = serialise_policy(p).unwrap();
        let again = parse_policies(&once).unwrap();
        assert_eq!(again.len(), 1);
        assert_eq!(&again[0], p);
        assert_eq!(serialise_policy(&again[0]).unwrap(), once);

        let battery = generate_battery(&parsed, 60, Seed(42));
        assert!(battery.len() >= 45);
        assert_eq!(first_behaviour_difference(p, &again[0], &battery), None);
    }
}

#[test]
fn battery_exercises_both_outcomes() {
    for text in [OBSERVATION, VARIANT] {
        let ps = parse_policies(text).unwrap();
        let battery = generate_battery(&ps, 60, Seed(7));
        let fired = battery
            .iter()
            .filter(|b| ps[0].condition.evaluate(&b.fields, b.payload.as_ref(), FieldMode::Lenient).holds())
            .count();
        assert!(fired > 0 && fired < battery.len(), "{fired}/{}", battery.len());
    }
}

#[test]
fn fixture_object_satisfies_its_own_policy() {
    let doc = parse_document(OBSERVATION).unwrap();
    let obj = doc.objects.iter().find(|o| o.id.ends_with("obs042")).unwrap();
    let p = &doc.policies[0];
    let mut duties = DutyState::new();
    let mut audit = AuditLog::new();
    let ev = evaluate_policy(p, &obj.fields(), None, VirtualTime::ZERO, FieldMode::Lenient, &mut duties, &mut audit);
    assert!(ev.fired);
    assert_eq!(ev.action.as_deref(), Some("seekClinicalValidation"));
}

#[test]
fn mutated_policy_is_told_apart() {
    let p = parse_policies(OBSERVATION).unwrap().remove(0);
    let mutated = parse_policies(&OBSERVATION.replace("sh:maxInclusive 0.5", "sh:maxInclusive 0.4")).unwrap().remove(0);
    let battery = generate_battery(std::slice::from_ref(&p), 60, Seed(42));
    assert!(first_behaviour_difference(&p, &mutated, &battery).is_some());
}

fn observation_fields(trust: f64) -> Fields {
    let mut f = Fields::new();
    f.insert("pid".into(), FieldValue::text("obs042"));
    f.insert("type".into(), FieldValue::text("PatientPhenotypeObservation"));
    f.insert("trustScore".into(), FieldValue::Number(trust));
    f.insert("phenotypeMatchScore".into(), FieldValue::Number(0.72));
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rate_limit_holds_under_any_interleaving(
        times in prop::collection::vec(0u64..(5 * 86_400_000), 1..40),
        trusts in prop::collection::vec(0.0f64..1.0, 40),
    ) {
        let p = observation_policy("obs042");
        let mut duties = DutyState::new();
        let mut audit = AuditLog::new();
        let mut fired = Vec::new();
        for (i, &t) in times.iter().enumerate() {
            let ev = evaluate_policy(&p, &observation_fields(trusts[i]), None, VirtualTime(t), FieldMode::Lenient, &mut duties, &mut audit);
            if ev.fired {
                fired.push(t);
            }
        }
        prop_assert_eq!(audit.count(AuditKind::PolicyEvaluation), times.len());
        for (i, a) in fired.iter().enumerate() {
            for b in &fired[i + 1..] {
                prop_assert!(a.abs_diff(*b) >= 86_400_000);
            }
        }
    }
}

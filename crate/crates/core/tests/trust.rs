use afdo_core::stats::median;
use afdo_core::trust::{
    next_score, recovery_time, simulate_trust_trajectory, EventMix, TrustEventKind, TrustParameters,
};
use afdo_core::Seed;
use proptest::prelude::*;
use rand::Rng;

use TrustEventKind::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn update_rule_at_defaults() {
    let p = TrustParameters::default();
    let cases = [
        (0.5, ValidationConfirmed, 0.8),
        (0.9, ValidationConfirmed, 1.0),
        (0.5, ValidationRefuted, 0.1),
        (0.3, ValidationRefuted, 0.0),
        (0.5, ValidationUncertain, 0.45),
        (0.02, ValidationUncertain, 0.0),
        (0.5, SimilarPatternFound, 0.6),
        (0.95, SimilarPatternFound, 1.0),
        (0.5, TimeDecay { delta_years: 2.0 }, 0.4),
        (0.5, TimeDecay { delta_years: 0.0 }, 0.5),
        (0.5, InstitutionalClosure, 0.4),
        (1.0, InstitutionalClosure, 0.8),
        (0.0, InstitutionalClosure, 0.0),
    ];
    for (t, kind, want) in cases {
        let got = next_score(t, &kind, &p).unwrap();
        assert!(close(got, want), "{kind} from {t}: {got} != {want}");
    }
    assert!(next_score(0.5, &TimeDecay { delta_years: -1.0 }, &p).is_err());
}

#[test]
fn observation_example_trajectory() {
    // refuted once, then confirmed twice
    let traj = simulate_trust_trajectory(
        0.75,
        &[ValidationRefuted, ValidationConfirmed, ValidationConfirmed],
        &TrustParameters::default(),
    )
    .unwrap();
    let want = [0.75, 0.35, 0.65, 0.95];
    assert!(traj.iter().zip(want).all(|(a, b)| close(*a, b)), "{traj:?}");
}

fn random_kind(rng: &mut impl Rng) -> TrustEventKind {
    match rng.random_range(0..6) {
        0 => ValidationConfirmed,
        1 => ValidationRefuted,
        2 => ValidationUncertain,
        3 => SimilarPatternFound,
        4 => TimeDecay { delta_years: rng.random_range(0.0..30.0) },
        _ => InstitutionalClosure,
    }
}

#[test]
fn ten_thousand_sequences_stay_in_unit_interval() {
    let p = TrustParameters::default();
    for i in 0..10_000 {
        let mut rng = Seed(6).index(i).rng();
        let len = rng.random_range(1..60);
        let schedule: Vec<_> = (0..len).map(|_| random_kind(&mut rng)).collect();
        let traj = simulate_trust_trajectory(rng.random(), &schedule, &p).unwrap();
        assert!(traj.iter().all(|t| (0.0..=1.0).contains(t)), "sequence {i}");
    }
}

#[test]
fn recovery_is_faster_with_larger_alpha() {
    let mix = EventMix::default();
    let med = |alpha: f64| {
        let p = TrustParameters { alpha, gamma: 0.10, ..TrustParameters::default() };
        let xs: Vec<f64> =
            (0..30).map(|r| recovery_time(1.0, &mix, &p, Seed(42).index(r), 10_000).unwrap().events() as f64).collect();
        median(&xs).unwrap()
    };
    let (a, b, c) = (med(0.10), med(0.30), med(0.50));
    assert!(a >= b && b >= c, "{a} {b} {c}");
}

proptest! {
    #[test]
    fn any_parameters_keep_scores_bounded(
        alpha in 0.0f64..=1.0, beta in 0.0f64..=1.0, gamma in 0.0f64..=1.0,
        rho in 0.0f64..=1.0, delta in 0.0f64..=1.0,
        t in 0.0f64..=1.0, seed in any::<u64>(),
    ) {
        let p = TrustParameters { alpha, beta, gamma, rho, delta };
        let mut rng = Seed(seed).rng();
        let schedule: Vec<_> = (0..30).map(|_| random_kind(&mut rng)).collect();
        for s in simulate_trust_trajectory(t, &schedule, &p).unwrap() {
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn gains_never_lower_and_losses_never_raise(t in 0.0f64..=1.0) {
        let p = TrustParameters::default();
        for k in [ValidationConfirmed, SimilarPatternFound] {
            prop_assert!(next_score(t, &k, &p).unwrap() >= t);
        }
        for k in [ValidationRefuted, ValidationUncertain, InstitutionalClosure, TimeDecay { delta_years: 1.0 }] {
            prop_assert!(next_score(t, &k, &p).unwrap() <= t);
        }
    }
}

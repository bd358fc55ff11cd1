//! Discrete-event simulator for the trust arithmetic in isolation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{next_score, TrustError, TrustEventKind, TrustParameters};
use crate::seed::Seed;
use crate::stats;

/// Folds the update rule over `schedule`; the result starts with `initial`
/// and has one entry per event after it.
pub fn simulate_trust_trajectory(
    initial: f64,
    schedule: &[TrustEventKind],
    params: &TrustParameters,
) -> Result<Vec<f64>, TrustError> {
    if !(0.0..=1.0).contains(&initial) {
        return Err(TrustError::ScoreOutOfRange(initial));
    }
    let mut out = Vec::with_capacity(schedule.len() + 1);
    out.push(initial);
    let mut t = initial;
    for kind in schedule {
        t = next_score(t, kind, params)?;
        out.push(t);
    }
    Ok(out)
}

/// Probabilities of each event kind drawn after a closure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventMix {
    pub confirmed: f64,
    pub refuted: f64,
    pub uncertain: f64,
    pub similar_pattern: f64,
    pub time_decay: f64,
    /// Years elapsed per drawn decay event.
    pub decay_years: f64,
}

impl Default for EventMix {
    fn default() -> Self {
        EventMix {
            confirmed: 0.30,
            refuted: 0.10,
            uncertain: 0.40,
            similar_pattern: 0.20,
            time_decay: 0.0,
            decay_years: 1.0,
        }
    }
}

impl EventMix {
    pub fn only(kind: TrustEventKind) -> Self {
        let mut m = EventMix {
            confirmed: 0.0,
            refuted: 0.0,
            uncertain: 0.0,
            similar_pattern: 0.0,
            time_decay: 0.0,
            decay_years: 1.0,
        };
        match kind {
            TrustEventKind::ValidationConfirmed => m.confirmed = 1.0,
            TrustEventKind::ValidationRefuted => m.refuted = 1.0,
            TrustEventKind::ValidationUncertain => m.uncertain = 1.0,
            TrustEventKind::SimilarPatternFound => m.similar_pattern = 1.0,
            TrustEventKind::TimeDecay { delta_years } => {
                m.time_decay = 1.0;
                m.decay_years = delta_years;
            }
            // closures are injected, never drawn
            TrustEventKind::InstitutionalClosure => {}
        }
        m
    }

    pub fn validate(&self) -> Result<(), TrustError> {
        let sum = self.confirmed + self.refuted + self.uncertain + self.similar_pattern + self.time_decay;
        let parts = [self.confirmed, self.refuted, self.uncertain, self.similar_pattern, self.time_decay];
        if (sum - 1.0).abs() > 1e-9 || parts.iter().any(|p| *p < 0.0) {
            return Err(TrustError::MixNotNormalised(sum));
        }
        if self.decay_years < 0.0 {
            return Err(TrustError::NegativeDecay(self.decay_years));
        }
        Ok(())
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> TrustEventKind {
        let u: f64 = rng.random();
        let table = [
            (self.confirmed, TrustEventKind::ValidationConfirmed),
            (self.refuted, TrustEventKind::ValidationRefuted),
            (self.uncertain, TrustEventKind::ValidationUncertain),
            (self.similar_pattern, TrustEventKind::SimilarPatternFound),
        ];
        let mut acc = 0.0;
        for (p, kind) in table {
            acc += p;
            if u < acc {
                return kind;
            }
        }
        if self.time_decay > 0.0 {
            TrustEventKind::TimeDecay { delta_years: self.decay_years }
        } else {
            // u landed in the rounding gap above the last non-zero bucket
            table.iter().rev().find(|(p, _)| *p > 0.0).map(|(_, k)| *k).unwrap_or(TrustEventKind::ValidationUncertain)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "events", rename_all = "snake_case")]
pub enum Recovery {
    Recovered(u32),
    /// Did not recover within the cap.
    Censored(u32),
}

impl Recovery {
    /// Event count, with censored runs counted at the cap.
    pub fn events(self) -> u32 {
        match self {
            Recovery::Recovered(n) | Recovery::Censored(n) => n,
        }
    }

    pub fn is_censored(self) -> bool {
        matches!(self, Recovery::Censored(_))
    }
}

/// Events needed to climb back to the pre-closure score after one injected
/// institutional closure.
pub fn recovery_time(
    initial: f64,
    mix: &EventMix,
    params: &TrustParameters,
    seed: Seed,
    cap: u32,
) -> Result<Recovery, TrustError> {
    mix.validate()?;
    if !(0.0..=1.0).contains(&initial) {
        return Err(TrustError::ScoreOutOfRange(initial));
    }
    let mut rng = seed.rng();
    let mut t = next_score(initial, &TrustEventKind::InstitutionalClosure, params)?;
    if t >= initial {
        return Ok(Recovery::Recovered(0));
    }
    for count in 1..=cap {
        t = next_score(t, &mix.draw(&mut rng), params)?;
        if t >= initial {
            return Ok(Recovery::Recovered(count));
        }
    }
    Ok(Recovery::Censored(cap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub mix: EventMix,
    pub replicates: usize,
    pub initial: f64,
    /// Events drawn after the closure before reading the final score.
    pub horizon: usize,
    pub cap: u32,
    pub seed: Seed,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            alphas: vec![0.10, 0.30, 0.50],
            betas: vec![0.01, 0.05, 0.10],
            gammas: vec![0.10, 0.20, 0.30],
            mix: EventMix::default(),
            replicates: 30,
            initial: 1.0,
            horizon: 100,
            cap: 10_000,
            seed: Seed::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub median_recovery: f64,
    pub ks_distance: f64,
    pub censored: usize,
}

pub(crate) struct CellStats {
    pub median_recovery: f64,
    pub finals: Vec<f64>,
    pub censored: usize,
}

/// Replicate `r` uses the same seeds in every cell, so cells differ only by
/// their parameters.
pub(crate) fn run_cell(cfg: &SensitivityConfig, params: &TrustParameters) -> Result<CellStats, TrustError> {
    let mut recoveries = Vec::with_capacity(cfg.replicates);
    let mut finals = Vec::with_capacity(cfg.replicates);
    let mut censored = 0;
    for r in 0..cfg.replicates {
        let rep = cfg.seed.index(r as u64);
        let rec = recovery_time(cfg.initial, &cfg.mix, params, rep.child("recovery"), cfg.cap)?;
        censored += rec.is_censored() as usize;
        recoveries.push(rec.events() as f64);

        let mut rng = rep.child("final").rng();
        let mut t = next_score(cfg.initial, &TrustEventKind::InstitutionalClosure, params)?;
        for _ in 0..cfg.horizon {
            t = next_score(t, &cfg.mix.draw(&mut rng), params)?;
        }
        finals.push(t);
    }
    Ok(CellStats { median_recovery: stats::median(&recoveries).unwrap_or(0.0), finals, censored })
}

/// Median recovery and KS distance of the final-score distribution against
/// the default-parameter cell, over the `alphas x betas x gammas` grid.
pub fn sensitivity_sweep(cfg: &SensitivityConfig) -> Result<Vec<SensitivityRow>, TrustError> {
    let defaults = TrustParameters::default();
    let reference = run_cell(cfg, &defaults)?;
    let mut rows = Vec::new();
    for &alpha in &cfg.alphas {
        for &beta in &cfg.betas {
            for &gamma in &cfg.gammas {
                let params = TrustParameters { alpha, beta, gamma, ..defaults };
                params.validate()?;
                let cell = run_cell(cfg, &params)?;
                let ks = if cfg.replicates == 0 {
                    0.0
                } else {
                    stats::ks_distance(&cell.finals, &reference.finals).expect("non-empty samples")
                };
                rows.push(SensitivityRow {
                    alpha,
                    beta,
                    gamma,
                    median_recovery: cell.median_recovery,
                    ks_distance: ks,
                    censored: cell.censored,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub parameter: String,
    /// Largest relative change of median recovery at +/- the perturbation, in percent.
    pub recovery_change_pct: f64,
    pub ks_distance: f64,
}

/// Perturbs alpha, beta and gamma one at a time by `+/- fraction` around the
/// defaults.
pub fn perturbation_sensitivity(cfg: &SensitivityConfig, fraction: f64) -> Result<Vec<PerturbationRow>, TrustError> {
    let defaults = TrustParameters::default();
    let base = run_cell(cfg, &defaults)?;
    let mut rows = Vec::new();
    for name in ["alpha", "beta", "gamma"] {
        let mut worst_change: f64 = 0.0;
        let mut worst_ks: f64 = 0.0;
        for sign in [-1.0, 1.0] {
            let mut p = defaults;
            let slot = match name {
                "alpha" => &mut p.alpha,
                "beta" => &mut p.beta,
                _ => &mut p.gamma,
            };
            *slot *= 1.0 + sign * fraction;
            let cell = run_cell(cfg, &p)?;
            let change = if base.median_recovery > 0.0 {
                100.0 * (cell.median_recovery - base.median_recovery).abs() / base.median_recovery
            } else {
                0.0
            };
            worst_change = worst_change.max(change);
            if cfg.replicates > 0 {
                worst_ks = worst_ks.max(stats::ks_distance(&cell.finals, &base.finals).expect("non-empty"));
            }
        }
        rows.push(PerturbationRow {
            parameter: name.to_string(),
            recovery_change_pct: worst_change,
            ks_distance: worst_ks,
        });
    }
    Ok(rows)
}

pub fn sensitivity_csv(rows: &[SensitivityRow]) -> String {
    let mut out = String::from("alpha,beta,gamma,median_recovery,ks_distance\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.alpha, r.beta, r.gamma, r.median_recovery, r.ks_distance));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use TrustEventKind::*;

    #[test]
    fn trajectories() {
        let p = TrustParameters::default();
        assert_eq!(simulate_trust_trajectory(0.6, &[], &p).unwrap(), vec![0.6]);
        let traj = simulate_trust_trajectory(1.0, &[InstitutionalClosure, ValidationConfirmed], &p).unwrap();
        assert_eq!(traj.len(), 3);
        assert_eq!(traj[0], 1.0);
        assert!((traj[1] - 0.8).abs() < 1e-12);
        assert_eq!(traj[2], 1.0);
        let again = simulate_trust_trajectory(1.0, &[InstitutionalClosure, ValidationConfirmed], &p).unwrap();
        assert_eq!(traj, again);
    }

    #[test]
    fn recovery_edge_cases() {
        let p = TrustParameters::default();
        let confirmed = EventMix::only(ValidationConfirmed);
        assert_eq!(recovery_time(1.0, &confirmed, &p, Seed(1), 100).unwrap(), Recovery::Recovered(1));
        let refuted = EventMix::only(ValidationRefuted);
        assert_eq!(recovery_time(1.0, &refuted, &p, Seed(1), 500).unwrap(), Recovery::Censored(500));
        // closure of a zero score changes nothing
        assert_eq!(recovery_time(0.0, &refuted, &p, Seed(1), 5).unwrap(), Recovery::Recovered(0));
    }

    #[test]
    fn mix_must_be_normalised() {
        let m = EventMix { confirmed: 0.5, ..EventMix::default() };
        assert!(matches!(m.validate(), Err(TrustError::MixNotNormalised(_))));
        assert!(recovery_time(1.0, &m, &TrustParameters::default(), Seed(1), 10).is_err());
    }

    #[test]
    fn draws_follow_the_mix() {
        let m = EventMix::default();
        let mut rng = Seed(3).rng();
        let n = 20_000;
        let confirmed = (0..n).filter(|_| m.draw(&mut rng) == ValidationConfirmed).count();
        let frac = confirmed as f64 / n as f64;
        assert!((frac - 0.30).abs() < 0.015, "{frac}");
    }

    #[test]
    fn default_cell_has_zero_ks_against_itself() {
        let cfg = SensitivityConfig {
            alphas: vec![0.30],
            betas: vec![0.05],
            gammas: vec![0.20],
            replicates: 20,
            ..SensitivityConfig::default()
        };
        let rows = sensitivity_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].ks_distance, 0.0);
        let csv = sensitivity_csv(&rows);
        assert!(csv.starts_with("alpha,beta,gamma,median_recovery,ks_distance\n"));
    }

    #[test]
    fn higher_alpha_recovers_no_slower() {
        let cfg = SensitivityConfig {
            alphas: vec![0.10, 0.50],
            betas: vec![0.05],
            gammas: vec![0.20],
            replicates: 30,
            ..SensitivityConfig::default()
        };
        let rows = sensitivity_sweep(&cfg).unwrap();
        assert!(rows[1].median_recovery <= rows[0].median_recovery);
    }

    #[test]
    fn alpha_moves_recovery_most_under_small_perturbations() {
        let cfg = SensitivityConfig { replicates: 200, ..SensitivityConfig::default() };
        let rows = perturbation_sensitivity(&cfg, 0.20).unwrap();
        let change = |name: &str| rows.iter().find(|r| r.parameter == name).unwrap().recovery_change_pct;
        assert!(change("alpha") > 0.0);
        assert!(change("alpha") >= change("beta"), "{rows:?}");
        assert!(change("alpha") >= change("gamma"), "{rows:?}");
    }
}

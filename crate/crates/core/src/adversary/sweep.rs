//! Accuracy sweeps over attack models, adversary fractions, strategies and
//! trim ratios.
//!
//! Perturbations share random numbers across models and strategies: the
//! attack for (fraction, trial, record) is drawn from the same sub-seed
//! whichever model or strategy consumes it. Each cell aggregates
//! sequentially; cells run in parallel and are emitted in key order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_attack, AttackError, AttackModel};
use crate::consensus::{ConsensusConfig, Strategy};
use crate::model::{ConflictRecord, DisagreementBucket};
use crate::seed::Seed;
use crate::stats::bootstrap_ci;

pub const SWEEP_FRACTIONS: [f64; 7] = [0.0, 0.10, 0.15, 0.20, 0.25, 0.33, 0.50];
pub const THETA_GRID: [f64; 7] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.40];

pub const CSV_HEADER: &str = "model,fraction,strategy,theta,bucket,n_records,accuracy,ci_low,ci_high";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub models: Vec<AttackModel>,
    pub fractions: Vec<f64>,
    pub strategies: Vec<Strategy>,
    /// Trim ratios evaluated for the trimmed weighted mean. Other strategies
    /// ignore trimming and run once.
    pub thetas: Vec<f64>,
    pub trials: usize,
    pub resamples: usize,
    pub seed: Seed,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            models: AttackModel::ALL.to_vec(),
            fractions: SWEEP_FRACTIONS.to_vec(),
            strategies: Strategy::ALL.to_vec(),
            thetas: vec![0.20],
            trials: 10,
            resamples: 1000,
            seed: Seed::default(),
        }
    }
}

/// One cell of a sweep, ablation or trim-ratio table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    /// Attack model name, or `none`.
    pub model: String,
    pub fraction: f64,
    pub strategy: Strategy,
    /// `None` for strategies that do not trim.
    pub theta: Option<f64>,
    /// Bucket name, or `overall`.
    pub bucket: String,
    pub n_records: usize,
    pub trials: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl AccuracyRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6}",
            self.model,
            self.fraction,
            self.strategy.short_name(),
            self.theta.map(|t| t.to_string()).unwrap_or_default(),
            self.bucket,
            self.n_records,
            self.accuracy,
            self.ci_low,
            self.ci_high
        )
    }

    fn key(&self) -> String {
        format!(
            "{}/{}/{}/{}/{}",
            self.model,
            self.fraction,
            self.strategy.short_name(),
            self.theta.map(|t| t.to_string()).unwrap_or_default(),
            self.bucket
        )
    }
}

pub fn accuracy_csv(rows: &[AccuracyRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

fn config_for(strategy: Strategy, theta: Option<f64>) -> ConsensusConfig {
    ConsensusConfig { strategy, theta: theta.unwrap_or(ConsensusConfig::default().theta), ..ConsensusConfig::default() }
}

/// 1.0 when the strategy reproduces the adjudicated class.
fn hit(record: &ConflictRecord, cfg: &ConsensusConfig) -> f64 {
    let out = cfg.aggregate(&record.submissions).expect("records are non-empty and validated");
    f64::from(u8::from(out.consensus_class == record.ground_truth.classification))
}

#[allow(clippy::too_many_arguments)]
fn summarise(
    model: &str,
    fraction: f64,
    strategy: Strategy,
    theta: Option<f64>,
    bucket: &str,
    trials: usize,
    per_record: &[f64],
    resamples: usize,
    seed: Seed,
) -> AccuracyRow {
    let mut row = AccuracyRow {
        model: model.to_string(),
        fraction,
        strategy,
        theta,
        bucket: bucket.to_string(),
        n_records: per_record.len(),
        trials,
        accuracy: f64::NAN,
        ci_low: f64::NAN,
        ci_high: f64::NAN,
    };
    if !per_record.is_empty() {
        let ci = bootstrap_ci(per_record, resamples, 0.95, seed.child(&row.key())).expect("valid bootstrap input");
        row.accuracy = ci.mean;
        row.ci_low = ci.lower;
        row.ci_high = ci.upper;
    }
    row
}

/// Overall plus one row per bucket present in the corpus.
#[allow(clippy::too_many_arguments)]
fn stratified(
    corpus: &[ConflictRecord],
    per_record: &[f64],
    model: &str,
    fraction: f64,
    strategy: Strategy,
    theta: Option<f64>,
    trials: usize,
    resamples: usize,
    seed: Seed,
) -> Vec<AccuracyRow> {
    let mut rows = vec![summarise(model, fraction, strategy, theta, "overall", trials, per_record, resamples, seed)];
    for bucket in DisagreementBucket::ALL {
        let vals: Vec<f64> =
            corpus.iter().zip(per_record).filter(|(r, _)| r.bucket == bucket).map(|(_, v)| *v).collect();
        if !vals.is_empty() {
            rows.push(summarise(model, fraction, strategy, theta, bucket.name(), trials, &vals, resamples, seed));
        }
    }
    rows
}

/// Seed of the perturbation applied to `record` in `trial` at `fraction`.
pub fn attack_seed(seed: Seed, fraction: f64, trial: usize, record: usize) -> Seed {
    seed.child("attack").child(&fraction.to_string()).index(trial as u64).index(record as u64)
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    model: AttackModel,
    fraction: f64,
    strategy: Strategy,
    theta: Option<f64>,
}

fn cells(cfg: &SweepConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &model in &cfg.models {
        for &fraction in &cfg.fractions {
            for &strategy in &cfg.strategies {
                let thetas: Vec<Option<f64>> = if strategy == Strategy::TrimmedWeightedMean {
                    cfg.thetas.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                for theta in thetas {
                    out.push(Cell { model, fraction, strategy, theta });
                }
            }
        }
    }
    out
}

/// Mean accuracy per record over `trials` perturbations.
fn cell_accuracy(corpus: &[ConflictRecord], cell: Cell, trials: usize, seed: Seed) -> Result<Vec<f64>, AttackError> {
    let cfg = config_for(cell.strategy, cell.theta);
    corpus
        .iter()
        .enumerate()
        .map(|(ri, record)| {
            let mut sum = 0.0;
            for t in 0..trials {
                let attacked =
                    apply_attack(record, cell.model, cell.fraction, attack_seed(seed, cell.fraction, t, ri))?;
                sum += hit(&attacked, &cfg);
            }
            Ok(sum / trials as f64)
        })
        .collect()
}

/// Runs every (model, fraction, strategy, theta) cell and reports overall
/// and per-bucket accuracy with percentile bootstrap intervals.
pub fn run_sweep(corpus: &[ConflictRecord], cfg: &SweepConfig) -> Result<Vec<AccuracyRow>, AttackError> {
    assert!(!corpus.is_empty(), "sweep needs a non-empty corpus");
    assert!(cfg.trials > 0, "sweep needs at least one trial");
    for &f in &cfg.fractions {
        if !(0.0..=0.5).contains(&f) {
            return Err(AttackError::FractionOutOfRange(f));
        }
    }
    let results: Vec<Result<Vec<AccuracyRow>, AttackError>> = cells(cfg)
        .into_par_iter()
        .map(|cell| {
            let per_record = cell_accuracy(corpus, cell, cfg.trials, cfg.seed)?;
            Ok(stratified(
                corpus,
                &per_record,
                cell.model.name(),
                cell.fraction,
                cell.strategy,
                cell.theta,
                cfg.trials,
                cfg.resamples,
                cfg.seed.child("bootstrap"),
            ))
        })
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

fn unattacked(
    corpus: &[ConflictRecord],
    strategy: Strategy,
    theta: Option<f64>,
    resamples: usize,
    seed: Seed,
) -> Vec<AccuracyRow> {
    let cfg = config_for(strategy, theta);
    let per_record: Vec<f64> = corpus.iter().map(|r| hit(r, &cfg)).collect();
    stratified(corpus, &per_record, "none", 0.0, strategy, theta, 1, resamples, seed.child("bootstrap"))
}

/// The three strategies on the unattacked corpus, overall and per bucket.
pub fn run_ablation(corpus: &[ConflictRecord], resamples: usize, seed: Seed) -> Vec<AccuracyRow> {
    assert!(!corpus.is_empty(), "ablation needs a non-empty corpus");
    Strategy::ALL
        .into_par_iter()
        .map(|s| {
            let theta = (s == Strategy::TrimmedWeightedMean).then_some(ConsensusConfig::default().theta);
            unattacked(corpus, s, theta, resamples, seed)
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Trimmed weighted mean on the unattacked corpus for each trim ratio.
pub fn run_theta_sweep(corpus: &[ConflictRecord], thetas: &[f64], resamples: usize, seed: Seed) -> Vec<AccuracyRow> {
    assert!(!corpus.is_empty(), "theta sweep needs a non-empty corpus");
    thetas
        .par_iter()
        .map(|&t| unattacked(corpus, Strategy::TrimmedWeightedMean, Some(t), resamples, seed))
        .collect::<Vec<_>>()
        .concat()
}

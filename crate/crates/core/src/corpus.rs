//! Conflict corpora: the raw-row filter pipeline, reputation and confidence
//! assignment, submitter hashing, and a seeded synthetic generator.
//!
//! Raw rows are read from a tab-delimited file with one line per
//! submission and this header:
//!
//! ```text
//! variant_id    submitter    category    classification    review_status    no_assertion_criteria
//! ```
//!
//! `no_assertion_criteria` is `0` or `1`; a variant is flagged when any of
//! its lines carries `1`. Lines sharing a `variant_id` form one row, in file
//! order.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_distr::Geometric;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    classify_bucket, Adjudication, Classification, ConflictRecord, DisagreementBucket, ModelError, ReviewStatus,
    Submission, SubmitterCategory,
};
use crate::seed::Seed;

/// Project salt for submitter hashing. Hash input is salt then name.
pub const SUBMITTER_SALT: &str = "afdo-2026";

pub const TSV_HEADER: &str = "variant_id\tsubmitter\tcategory\tclassification\treview_status\tno_assertion_criteria";

/// Bucket sizes of the reference dataset, in `DisagreementBucket::ALL` order.
pub const REFERENCE_BUCKET_COUNTS: [usize; 4] = [1744, 1918, 65, 187];
pub const REFERENCE_MEAN_SUBMISSIONS: f64 = 8.5;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("expert-panel submissions are ground truth, not consensus inputs")]
    ExpertPanelInput,
    #[error("review status {0} has no confidence mapping")]
    NoConfidence(&'static str),
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {message}")]
    Tsv { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn assign_reputation(category: SubmitterCategory) -> Result<f64, CorpusError> {
    match category {
        SubmitterCategory::ClinicalLab => Ok(0.85),
        SubmitterCategory::ResearchLab => Ok(0.70),
        SubmitterCategory::Individual => Ok(0.55),
        SubmitterCategory::ExpertPanel => Err(CorpusError::ExpertPanelInput),
    }
}

pub fn assign_confidence(status: ReviewStatus) -> Result<f64, CorpusError> {
    match status {
        ReviewStatus::MultipleSubmittersNoConflicts => Ok(0.85),
        ReviewStatus::SingleSubmitter => Ok(0.70),
        ReviewStatus::ConflictingInterpretations => Ok(0.55),
        ReviewStatus::NoAssertionCriteria => Ok(0.40),
        s => Err(CorpusError::NoConfidence(s.name())),
    }
}

/// First eight hex digits of `SHA-256(salt || name)`.
pub fn hash_submitter(name: &str, salt: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(name.as_bytes());
    hex::encode(&h.finalize()[..4])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSubmission {
    pub submitter: String,
    pub category: SubmitterCategory,
    pub classification: Classification,
    pub review_status: ReviewStatus,
}

impl RawSubmission {
    pub fn is_expert(&self) -> bool {
        self.category == SubmitterCategory::ExpertPanel || self.review_status.is_expert()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawVariantRow {
    pub variant_id: String,
    pub submissions: Vec<RawSubmission>,
    pub no_assertion_criteria: bool,
}

impl RawVariantRow {
    pub fn has_expert_panel(&self) -> bool {
        self.submissions.iter().any(RawSubmission::is_expert)
    }

    fn distinct_submitters(&self) -> usize {
        self.submissions.iter().map(|s| s.submitter.as_str()).collect::<BTreeSet<_>>().len()
    }

    /// Non-expert submissions, minus any from the adjudicating submitter.
    fn consensus_inputs(&self) -> Vec<&RawSubmission> {
        let panel = self.submissions.iter().find(|s| s.is_expert()).map(|s| s.submitter.as_str());
        self.submissions.iter().filter(|s| !s.is_expert() && Some(s.submitter.as_str()) != panel).collect()
    }
}

pub fn parse_raw_tsv(text: &str) -> Result<Vec<RawVariantRow>, CorpusError> {
    let mut rows: Vec<RawVariantRow> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == TSV_HEADER => {}
        _ => return Err(CorpusError::Tsv { line: 1, message: "missing or unexpected header".into() }),
    }
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| CorpusError::Tsv { line: i + 1, message };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(err(format!("expected 6 columns, found {}", cols.len())));
        }
        let sub = RawSubmission {
            submitter: cols[1].to_string(),
            category: cols[2].parse().map_err(|e: ModelError| err(e.to_string()))?,
            classification: cols[3].parse().map_err(|e: ModelError| err(e.to_string()))?,
            review_status: cols[4].parse().map_err(|e: ModelError| err(e.to_string()))?,
        };
        let flagged = match cols[5].trim() {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("no_assertion_criteria must be 0 or 1, got {other:?}"))),
        };
        let at = *index.entry(cols[0].to_string()).or_insert_with(|| {
            rows.push(RawVariantRow {
                variant_id: cols[0].to_string(),
                submissions: Vec::new(),
                no_assertion_criteria: false,
            });
            rows.len() - 1
        });
        rows[at].submissions.push(sub);
        rows[at].no_assertion_criteria |= flagged;
    }
    Ok(rows)
}

pub fn write_raw_tsv(rows: &[RawVariantRow]) -> String {
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for r in rows {
        for s in &r.submissions {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.variant_id,
                s.submitter,
                s.category.name(),
                s.classification.label(),
                s.review_status.name(),
                u8::from(r.no_assertion_criteria)
            ));
        }
    }
    out
}

/// Variants remaining after each stage: input, then stages 1 to 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub total: usize,
    pub distinct_submitters: usize,
    pub expert_panel: usize,
    pub non_expert_inputs: usize,
    pub disagreement: usize,
}

impl StageCounts {
    pub fn as_array(&self) -> [usize; 5] {
        [self.total, self.distinct_submitters, self.expert_panel, self.non_expert_inputs, self.disagreement]
    }
}

/// Applies the four inclusion filters in order:
///
/// 1. at least two distinct submitters;
/// 2. an expert-panel adjudication is present;
/// 3. at least two non-expert submissions from distinct submitters;
/// 4. the non-expert submissions span two or more major groups and the
///    variant is not flagged as lacking assertion criteria.
///
/// The first expert-panel submission becomes the held-out ground truth.
/// Submitter names are hashed with [`SUBMITTER_SALT`].
pub fn filter_pipeline(rows: &[RawVariantRow]) -> Result<(Vec<ConflictRecord>, StageCounts), CorpusError> {
    let mut counts = StageCounts { total: rows.len(), ..Default::default() };
    let mut out = Vec::new();
    for row in rows {
        if row.distinct_submitters() < 2 {
            continue;
        }
        counts.distinct_submitters += 1;
        let Some(panel) = row.submissions.iter().find(|s| s.is_expert()) else {
            continue;
        };
        counts.expert_panel += 1;
        let inputs = row.consensus_inputs();
        let distinct: BTreeSet<&str> = inputs.iter().map(|s| s.submitter.as_str()).collect();
        if distinct.len() < 2 {
            continue;
        }
        counts.non_expert_inputs += 1;
        let groups: BTreeSet<_> = inputs.iter().map(|s| s.classification.group()).collect();
        if groups.len() < 2 || row.no_assertion_criteria {
            continue;
        }
        counts.disagreement += 1;

        let submissions = inputs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(Submission {
                    submitter_id: hash_submitter(&s.submitter, SUBMITTER_SALT),
                    category: s.category,
                    classification: s.classification,
                    review_status: s.review_status,
                    reputation: assign_reputation(s.category)?,
                    confidence: assign_confidence(s.review_status)?,
                    order_index: i as u32,
                })
            })
            .collect::<Result<Vec<_>, CorpusError>>()?;
        let truth = Adjudication {
            submitter_id: hash_submitter(&panel.submitter, SUBMITTER_SALT),
            category: SubmitterCategory::ExpertPanel,
            classification: panel.classification,
            review_status: panel.review_status,
        };
        out.push(ConflictRecord::new(row.variant_id.clone(), truth, submissions)?);
    }
    Ok((out, counts))
}

/// Raw form of a record, with hashed ids standing in for names.
pub fn to_raw_row(record: &ConflictRecord) -> RawVariantRow {
    let mut submissions: Vec<RawSubmission> = record
        .submissions
        .iter()
        .map(|s| RawSubmission {
            submitter: s.submitter_id.clone(),
            category: s.category,
            classification: s.classification,
            review_status: s.review_status,
        })
        .collect();
    submissions.push(RawSubmission {
        submitter: record.ground_truth.submitter_id.clone(),
        category: SubmitterCategory::ExpertPanel,
        classification: record.ground_truth.classification,
        review_status: record.ground_truth.review_status,
    });
    RawVariantRow { variant_id: record.target_id.clone(), submissions, no_assertion_criteria: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMix {
    pub clinical_lab: f64,
    pub research_lab: f64,
    pub individual: f64,
}

impl Default for CategoryMix {
    fn default() -> Self {
        CategoryMix { clinical_lab: 0.422, research_lab: 0.118, individual: 0.460 }
    }
}

impl CategoryMix {
    const CATEGORIES: [SubmitterCategory; 3] =
        [SubmitterCategory::ClinicalLab, SubmitterCategory::ResearchLab, SubmitterCategory::Individual];

    fn weights(&self) -> [f64; 3] {
        [self.clinical_lab, self.research_lab, self.individual]
    }
}

/// Knobs of the synthetic submission model. None of these are measured
/// quantities; they only shape the generated conflicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionModel {
    /// Probability that a submitter reports the adjudicated class, by
    /// category (clinical, research, individual).
    pub agreement: [f64; 3],
    /// Decay of error probability with ordinal distance from the truth.
    pub error_decay: f64,
    /// Review-status mix: multiple/no-conflicts, single, conflicting, none.
    pub review_mix: [f64; 4],
    /// Ground-truth weights over the five classes, per bucket.
    pub truth_weights: [[f64; 5]; 4],
}

impl Default for SubmissionModel {
    fn default() -> Self {
        SubmissionModel {
            agreement: [0.55, 0.45, 0.40],
            error_decay: 1.0,
            review_mix: [0.20, 0.50, 0.10, 0.20],
            truth_weights: [
                [0.0, 0.0, 0.45, 0.25, 0.30],
                [0.30, 0.30, 0.40, 0.0, 0.0],
                [0.35, 0.15, 0.0, 0.15, 0.35],
                [0.20, 0.20, 0.20, 0.20, 0.20],
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub total_records: usize,
    pub bucket_counts: BTreeMap<DisagreementBucket, usize>,
    pub mean_submissions: f64,
    pub min_submissions: usize,
    pub max_submissions: usize,
    pub category_mix: CategoryMix,
    pub model: SubmissionModel,
    pub seed: Seed,
}

impl CorpusSpec {
    /// Reference bucket proportions scaled by `scale`, rounded by largest
    /// remainder so the total is `round(3914 * scale)`.
    pub fn scaled(scale: f64, seed: Seed) -> Result<Self, CorpusError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(CorpusError::InvalidSpec(format!("scale must be positive, got {scale}")));
        }
        let reference: usize = REFERENCE_BUCKET_COUNTS.iter().sum();
        let total = (reference as f64 * scale).round() as usize;
        let exact: Vec<f64> =
            REFERENCE_BUCKET_COUNTS.iter().map(|&c| c as f64 * total as f64 / reference as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let short = total - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        Ok(CorpusSpec {
            total_records: total,
            bucket_counts: DisagreementBucket::ALL.into_iter().zip(counts).collect(),
            mean_submissions: REFERENCE_MEAN_SUBMISSIONS,
            min_submissions: 2,
            max_submissions: 64,
            category_mix: CategoryMix::default(),
            model: SubmissionModel::default(),
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidSpec(m));
        let sum: usize = self.bucket_counts.values().sum();
        if sum != self.total_records {
            return bad(format!("bucket counts sum to {sum}, expected {}", self.total_records));
        }
        if self.total_records == 0 {
            return bad("corpus must have at least one record".into());
        }
        let mix = self.category_mix.weights();
        if mix.iter().any(|w| w.is_nan() || *w < 0.0) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("category mix {mix:?} must be non-negative and sum to 1"));
        }
        if self.min_submissions < 2 {
            return bad("records need at least two submissions".into());
        }
        for (bucket, &n) in &self.bucket_counts {
            let need = bucket.groups().len();
            if n > 0 && self.max_submissions < need {
                return bad(format!(
                    "bucket {bucket} spans {need} groups but records hold at most {} submissions",
                    self.max_submissions
                ));
            }
        }
        let (lo, hi) = (self.min_submissions as f64, self.max_submissions as f64);
        if !(self.mean_submissions >= lo && self.mean_submissions <= hi) {
            return bad(format!("mean submissions {} is outside [{lo}, {hi}]", self.mean_submissions));
        }
        let m = &self.model;
        if m.agreement.iter().any(|p| !(0.0..=1.0).contains(p)) || m.error_decay < 0.0 {
            return bad("agreement probabilities must lie in [0, 1]".into());
        }
        if m.review_mix.iter().any(|w| *w < 0.0) || m.review_mix.iter().sum::<f64>() <= 0.0 {
            return bad("review mix must have positive total weight".into());
        }
        for (i, bucket) in DisagreementBucket::ALL.into_iter().enumerate() {
            let allowed = bucket.classes();
            let w = m.truth_weights[i];
            let ok = Classification::ALL.iter().all(|c| allowed.contains(c) || w[c.ordinal()] == 0.0)
                && w.iter().all(|x| *x >= 0.0)
                && w.iter().sum::<f64>() > 0.0;
            if !ok {
                return bad(format!("truth weights for {bucket} must be non-negative, in-span and not all zero"));
            }
        }
        Ok(())
    }
}

/// Draws per-record submission counts from a shifted geometric with the
/// target mean, then nudges single records up or down until the total is
/// exactly `round(mean * n)` (or as close as the floors and cap allow).
fn submission_counts(spec: &CorpusSpec, floors: &[usize]) -> Vec<usize> {
    let (min, max) = (spec.min_submissions, spec.max_submissions);
    let p = 1.0 / (spec.mean_submissions - min as f64 + 1.0);
    let geo = Geometric::new(p).expect("p in (0, 1]");
    let mut rng = spec.seed.child("counts").rng();
    let mut counts: Vec<usize> = floors.iter().map(|&f| (min + geo.sample(&mut rng) as usize).clamp(f, max)).collect();
    let target = (spec.mean_submissions * counts.len() as f64).round() as usize;
    let target = target.clamp(floors.iter().sum(), max * counts.len());
    let mut total: usize = counts.iter().sum();
    while total != target {
        let i = rng.random_range(0..counts.len());
        if total < target {
            if counts[i] < max {
                counts[i] += 1;
                total += 1;
            }
        } else if counts[i] > floors[i] {
            counts[i] -= 1;
            total -= 1;
        }
    }
    counts
}

fn pick_class(
    rng: &mut impl Rng,
    truth: Classification,
    allowed: &[Classification],
    agree: f64,
    decay: f64,
) -> Classification {
    if rng.random_bool(agree) {
        return truth;
    }
    let others: Vec<Classification> = allowed.iter().copied().filter(|c| *c != truth).collect();
    let w: Vec<f64> =
        others.iter().map(|c| (-decay * (c.ordinal() as f64 - truth.ordinal() as f64).abs()).exp()).collect();
    others[WeightedIndex::new(&w).expect("positive weights").sample(rng)]
}

fn generate_record(spec: &CorpusSpec, index: usize, bucket: DisagreementBucket, n: usize) -> ConflictRecord {
    let mut rng = spec.seed.child("record").index(index as u64).rng();
    let m = &spec.model;
    let b = DisagreementBucket::ALL.iter().position(|x| *x == bucket).expect("known bucket");
    let allowed = bucket.classes();
    let truth = Classification::ALL[WeightedIndex::new(m.truth_weights[b]).expect("validated").sample(&mut rng)];

    let cat_dist = WeightedIndex::new(spec.category_mix.weights()).expect("validated");
    let review_dist = WeightedIndex::new(m.review_mix).expect("validated");
    const REVIEW: [ReviewStatus; 4] = [
        ReviewStatus::MultipleSubmittersNoConflicts,
        ReviewStatus::SingleSubmitter,
        ReviewStatus::ConflictingInterpretations,
        ReviewStatus::NoAssertionCriteria,
    ];

    let target_id = format!("SYN{:09}", index + 1);
    let mut subs: Vec<Submission> = (0..n)
        .map(|i| {
            let ci = cat_dist.sample(&mut rng);
            let category = CategoryMix::CATEGORIES[ci];
            let review_status = REVIEW[review_dist.sample(&mut rng)];
            Submission {
                submitter_id: hash_submitter(&format!("{target_id}/submitter-{i}"), SUBMITTER_SALT),
                category,
                classification: pick_class(&mut rng, truth, &allowed, m.agreement[ci], m.error_decay),
                review_status,
                reputation: assign_reputation(category).expect("non-expert"),
                confidence: assign_confidence(review_status).expect("mapped status"),
                order_index: i as u32,
            }
        })
        .collect();

    // Force the bucket's group span: every missing group takes over a
    // submission whose group is otherwise represented.
    for &group in bucket.groups() {
        if subs.iter().any(|s| s.classification.group() == group) {
            continue;
        }
        let donors: Vec<usize> = (0..subs.len())
            .filter(|&i| {
                let g = subs[i].classification.group();
                subs.iter().filter(|s| s.classification.group() == g).count() > 1
            })
            .collect();
        let i = donors[rng.random_range(0..donors.len())];
        let members = group.members();
        subs[i].classification = members[rng.random_range(0..members.len())];
    }

    let truth = Adjudication::expert_panel(hash_submitter(&format!("{target_id}/panel"), SUBMITTER_SALT), truth);
    let rec = ConflictRecord::new(target_id, truth, subs).expect("generator emits valid records");
    debug_assert_eq!(rec.bucket, bucket);
    rec
}

/// Generates the corpus described by `spec`. Records are interleaved across
/// buckets by a seeded shuffle; ids follow output order.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<ConflictRecord>, CorpusError> {
    spec.validate()?;
    let mut buckets: Vec<DisagreementBucket> =
        spec.bucket_counts.iter().flat_map(|(b, &n)| std::iter::repeat_n(*b, n)).collect();
    buckets.shuffle(&mut spec.seed.child("order").rng());
    let floors: Vec<usize> = buckets.iter().map(|b| b.groups().len().max(spec.min_submissions)).collect();
    let counts = submission_counts(spec, &floors);
    let records =
        buckets.iter().zip(&counts).enumerate().map(|(i, (b, &n))| generate_record(spec, i, *b, n)).collect::<Vec<_>>();
    for r in &records {
        classify_bucket(&r.submissions)?;
    }
    Ok(records)
}

/// Record counts per bucket.
pub fn bucket_histogram(records: &[ConflictRecord]) -> BTreeMap<DisagreementBucket, usize> {
    let mut out = BTreeMap::new();
    for r in records {
        *out.entry(r.bucket).or_insert(0) += 1;
    }
    out
}

pub fn mean_submissions(records: &[ConflictRecord]) -> f64 {
    let total: usize = records.iter().map(|r| r.submissions.len()).sum();
    total as f64 / records.len().max(1) as f64
}

//! Records of the object model and the shared value types used by every
//! other module: classifications on the five-level ACMG scale, submissions,
//! conflict records, and plain FDO records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("unknown classification label {0:?}")]
    UnknownClassification(String),
    #[error("unknown submitter category {0:?}")]
    UnknownCategory(String),
    #[error("unknown review status {0:?}")]
    UnknownReviewStatus(String),
    #[error("submissions span a single major group; not a conflict")]
    NotAConflict,
    #[error("conflict record {0} needs at least two distinct submitters")]
    TooFewSubmitters(String),
    #[error("conflict record {0}: ground truth submitter also appears among submissions")]
    GroundTruthLeak(String),
    #[error("{field} = {value} is outside [0, 1]")]
    WeightOutOfRange { field: &'static str, value: f64 },
    #[error("persistent identifier must be non-empty")]
    EmptyPid,
    #[error("FDO {pid} is missing mandatory operation {op}")]
    MissingOperation { pid: String, op: &'static str },
    #[error("malformed record: {0}")]
    Malformed(String),
}

/// Five-level ordinal scale. Variant order is ordinal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Classification {
    Benign,
    LikelyBenign,
    Vus,
    LikelyPathogenic,
    Pathogenic,
}

/// How an exact midpoint between two scale values is binned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MidpointRule {
    /// Resolve toward the less pathogenic label.
    #[default]
    Lower,
    Upper,
}

impl Classification {
    pub const ALL: [Classification; 5] = [
        Classification::Benign,
        Classification::LikelyBenign,
        Classification::Vus,
        Classification::LikelyPathogenic,
        Classification::Pathogenic,
    ];

    pub fn score(self) -> f64 {
        match self {
            Classification::Benign => 0.0,
            Classification::LikelyBenign => 0.25,
            Classification::Vus => 0.5,
            Classification::LikelyPathogenic => 0.75,
            Classification::Pathogenic => 1.0,
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Classification> {
        Self::ALL.get(i).copied()
    }

    /// Nearest scale label, exact midpoints resolved toward the lower score.
    pub fn from_score(s: f64) -> Result<Classification, ModelError> {
        Self::from_score_with(s, MidpointRule::Lower)
    }

    pub fn from_score_with(s: f64, rule: MidpointRule) -> Result<Classification, ModelError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(ModelError::ScoreOutOfRange(s));
        }
        // Scale values are multiples of 1/4, so s * 4 is exact for them and
        // the midpoints land exactly on .5.
        let x = s * 4.0;
        let below = x.floor();
        let frac = x - below;
        let idx = if frac < 0.5 {
            below
        } else if frac > 0.5 {
            below + 1.0
        } else {
            match rule {
                MidpointRule::Lower => below,
                MidpointRule::Upper => below + 1.0,
            }
        };
        Ok(Self::ALL[(idx as usize).min(4)])
    }

    pub fn group(self) -> MajorGroup {
        match self {
            Classification::Benign | Classification::LikelyBenign => MajorGroup::BenignSide,
            Classification::Vus => MajorGroup::Uncertain,
            Classification::LikelyPathogenic | Classification::Pathogenic => MajorGroup::PathogenicSide,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Classification::Benign => "Benign",
            Classification::LikelyBenign => "LikelyBenign",
            Classification::Vus => "VUS",
            Classification::LikelyPathogenic => "LikelyPathogenic",
            Classification::Pathogenic => "Pathogenic",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn normalise_label(s: &str) -> String {
    s.chars().filter(|c| !matches!(c, ' ' | '_' | '-' | '/')).flat_map(char::to_lowercase).collect()
}

impl FromStr for Classification {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalise_label(s).as_str() {
            "benign" | "b" => Ok(Classification::Benign),
            "likelybenign" | "lb" => Ok(Classification::LikelyBenign),
            "vus" | "uncertainsignificance" => Ok(Classification::Vus),
            "likelypathogenic" | "lp" => Ok(Classification::LikelyPathogenic),
            "pathogenic" | "p" => Ok(Classification::Pathogenic),
            _ => Err(ModelError::UnknownClassification(s.to_string())),
        }
    }
}

impl Serialize for Classification {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Classification {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The three major pathogenicity groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MajorGroup {
    BenignSide,
    Uncertain,
    PathogenicSide,
}

impl MajorGroup {
    pub fn members(self) -> &'static [Classification] {
        match self {
            MajorGroup::BenignSide => &[Classification::Benign, Classification::LikelyBenign],
            MajorGroup::Uncertain => &[Classification::Vus],
            MajorGroup::PathogenicSide => &[Classification::LikelyPathogenic, Classification::Pathogenic],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DisagreementBucket {
    #[serde(rename = "PLP_vs_VUS")]
    PlpVsVus,
    #[serde(rename = "VUS_vs_LBB")]
    VusVsLbb,
    #[serde(rename = "PLP_vs_LBB")]
    PlpVsLbb,
    #[serde(rename = "ThreeGroupSpan")]
    ThreeGroupSpan,
}

impl DisagreementBucket {
    pub const ALL: [DisagreementBucket; 4] = [
        DisagreementBucket::PlpVsVus,
        DisagreementBucket::VusVsLbb,
        DisagreementBucket::PlpVsLbb,
        DisagreementBucket::ThreeGroupSpan,
    ];

    pub fn groups(self) -> &'static [MajorGroup] {
        use MajorGroup::*;
        match self {
            DisagreementBucket::PlpVsVus => &[Uncertain, PathogenicSide],
            DisagreementBucket::VusVsLbb => &[BenignSide, Uncertain],
            DisagreementBucket::PlpVsLbb => &[BenignSide, PathogenicSide],
            DisagreementBucket::ThreeGroupSpan => &[BenignSide, Uncertain, PathogenicSide],
        }
    }

    pub fn from_groups(groups: &BTreeSet<MajorGroup>) -> Result<Self, ModelError> {
        use MajorGroup::*;
        let has = |g| groups.contains(&g);
        match (has(BenignSide), has(Uncertain), has(PathogenicSide)) {
            (true, true, true) => Ok(DisagreementBucket::ThreeGroupSpan),
            (false, true, true) => Ok(DisagreementBucket::PlpVsVus),
            (true, true, false) => Ok(DisagreementBucket::VusVsLbb),
            (true, false, true) => Ok(DisagreementBucket::PlpVsLbb),
            _ => Err(ModelError::NotAConflict),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DisagreementBucket::PlpVsVus => "PLP_vs_VUS",
            DisagreementBucket::VusVsLbb => "VUS_vs_LBB",
            DisagreementBucket::PlpVsLbb => "PLP_vs_LBB",
            DisagreementBucket::ThreeGroupSpan => "ThreeGroupSpan",
        }
    }

    /// Classes a submission or adjudication may take inside this bucket.
    pub fn classes(self) -> Vec<Classification> {
        self.groups().iter().flat_map(|g| g.members().iter().copied()).collect()
    }
}

impl fmt::Display for DisagreementBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn classify_bucket(submissions: &[Submission]) -> Result<DisagreementBucket, ModelError> {
    let groups: BTreeSet<MajorGroup> = submissions.iter().map(|s| s.classification.group()).collect();
    DisagreementBucket::from_groups(&groups)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitterCategory {
    ClinicalLab,
    ResearchLab,
    Individual,
    ExpertPanel,
}

impl SubmitterCategory {
    pub fn name(self) -> &'static str {
        match self {
            SubmitterCategory::ClinicalLab => "clinical_lab",
            SubmitterCategory::ResearchLab => "research_lab",
            SubmitterCategory::Individual => "individual",
            SubmitterCategory::ExpertPanel => "expert_panel",
        }
    }
}

impl FromStr for SubmitterCategory {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalise_label(s).as_str() {
            "clinicallab" => Ok(SubmitterCategory::ClinicalLab),
            "researchlab" => Ok(SubmitterCategory::ResearchLab),
            "individual" => Ok(SubmitterCategory::Individual),
            "expertpanel" => Ok(SubmitterCategory::ExpertPanel),
            _ => Err(ModelError::UnknownCategory(s.to_string())),
        }
    }
}

/// ClinVar review status of a single submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReviewStatus {
    MultipleSubmittersNoConflicts,
    SingleSubmitter,
    ConflictingInterpretations,
    NoAssertionCriteria,
    ReviewedByExpertPanel,
    PracticeGuideline,
}

impl ReviewStatus {
    pub fn name(self) -> &'static str {
        match self {
            ReviewStatus::MultipleSubmittersNoConflicts => "criteria_provided_multiple_submitters_no_conflicts",
            ReviewStatus::SingleSubmitter => "criteria_provided_single_submitter",
            ReviewStatus::ConflictingInterpretations => "criteria_provided_conflicting_interpretations",
            ReviewStatus::NoAssertionCriteria => "no_assertion_criteria_provided",
            ReviewStatus::ReviewedByExpertPanel => "reviewed_by_expert_panel",
            ReviewStatus::PracticeGuideline => "practice_guideline",
        }
    }

    pub fn is_expert(self) -> bool {
        matches!(self, ReviewStatus::ReviewedByExpertPanel | ReviewStatus::PracticeGuideline)
    }
}

impl FromStr for ReviewStatus {
    type Err = ModelError;

    /// Accepts both the ClinVar prose form ("criteria provided, single
    /// submitter") and the snake_case form used in corpus files.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).flat_map(char::to_lowercase).collect();
        match key.as_str() {
            "criteriaprovidedmultiplesubmittersnoconflicts" => Ok(ReviewStatus::MultipleSubmittersNoConflicts),
            "criteriaprovidedsinglesubmitter" => Ok(ReviewStatus::SingleSubmitter),
            "criteriaprovidedconflictinginterpretations" => Ok(ReviewStatus::ConflictingInterpretations),
            "noassertioncriteriaprovided" => Ok(ReviewStatus::NoAssertionCriteria),
            "reviewedbyexpertpanel" => Ok(ReviewStatus::ReviewedByExpertPanel),
            "practiceguideline" => Ok(ReviewStatus::PracticeGuideline),
            _ => Err(ModelError::UnknownReviewStatus(s.to_string())),
        }
    }
}

impl Serialize for ReviewStatus {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ReviewStatus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One participant's classification: the unit of consensus input.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub submitter_id: String,
    pub category: SubmitterCategory,
    pub classification: Classification,
    pub review_status: ReviewStatus,
    /// Reputation of the submitter, in `[0, 1]`.
    pub reputation: f64,
    /// Confidence of this submission, in `[0, 1]`.
    pub confidence: f64,
    /// Arrival rank; used by the first-wins strategy.
    pub order_index: u32,
}

impl Submission {
    pub fn score(&self) -> f64 {
        self.classification.score()
    }

    pub fn weight(&self) -> f64 {
        self.reputation * self.confidence
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, value) in [("R", self.reputation), ("conf", self.confidence)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ModelError::WeightOutOfRange { field, value });
            }
        }
        Ok(())
    }
}

/// Held-out expert-panel classification for a conflict record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    #[serde(rename = "submitter_hash")]
    pub submitter_id: String,
    pub category: SubmitterCategory,
    pub classification: Classification,
    pub review_status: ReviewStatus,
}

impl Adjudication {
    pub fn expert_panel(submitter_id: impl Into<String>, classification: Classification) -> Self {
        Adjudication {
            submitter_id: submitter_id.into(),
            category: SubmitterCategory::ExpertPanel,
            classification,
            review_status: ReviewStatus::ReviewedByExpertPanel,
        }
    }
}

/// A target with disagreeing submissions and a held-out adjudication.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictRecord {
    pub target_id: String,
    pub hgvs: Option<String>,
    pub gene: Option<String>,
    pub ground_truth: Adjudication,
    pub submissions: Vec<Submission>,
    pub bucket: DisagreementBucket,
}

impl ConflictRecord {
    pub fn new(
        target_id: impl Into<String>,
        ground_truth: Adjudication,
        submissions: Vec<Submission>,
    ) -> Result<Self, ModelError> {
        let target_id = target_id.into();
        let distinct: BTreeSet<&str> = submissions.iter().map(|s| s.submitter_id.as_str()).collect();
        if distinct.len() < 2 {
            return Err(ModelError::TooFewSubmitters(target_id));
        }
        if distinct.contains(ground_truth.submitter_id.as_str()) {
            return Err(ModelError::GroundTruthLeak(target_id));
        }
        for s in &submissions {
            s.validate()?;
        }
        let bucket = classify_bucket(&submissions)?;
        Ok(ConflictRecord { target_id, hgvs: None, gene: None, ground_truth, submissions, bucket })
    }

    /// One line of the line-delimited corpus format.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("conflict record serialises")
    }

    pub fn from_json_line(line: &str) -> Result<Self, ModelError> {
        serde_json::from_str(line).map_err(|e| ModelError::Malformed(e.to_string()))
    }
}

pub fn write_jsonl(records: &[ConflictRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

pub fn read_jsonl(text: &str) -> Result<Vec<ConflictRecord>, ModelError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            ConflictRecord::from_json_line(l).map_err(|e| ModelError::Malformed(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

// Wire layout: field names follow the published conflict-record example.
// Submission order in the array is the arrival order.

#[derive(Serialize, Deserialize)]
struct SubmissionWire {
    submitter_hash: String,
    category: SubmitterCategory,
    classification: Classification,
    review_status: ReviewStatus,
    #[serde(rename = "R")]
    reputation: f64,
    conf: f64,
}

#[derive(Serialize, Deserialize)]
struct ConflictRecordWire {
    variant_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hgvs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gene: Option<String>,
    ground_truth: Adjudication,
    submissions: Vec<SubmissionWire>,
}

impl Serialize for ConflictRecord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut subs: Vec<&Submission> = self.submissions.iter().collect();
        subs.sort_by_key(|x| x.order_index);
        ConflictRecordWire {
            variant_id: self.target_id.clone(),
            hgvs: self.hgvs.clone(),
            gene: self.gene.clone(),
            ground_truth: self.ground_truth.clone(),
            submissions: subs
                .into_iter()
                .map(|x| SubmissionWire {
                    submitter_hash: x.submitter_id.clone(),
                    category: x.category,
                    classification: x.classification,
                    review_status: x.review_status,
                    reputation: x.reputation,
                    conf: x.confidence,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConflictRecord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = ConflictRecordWire::deserialize(d)?;
        let submissions = w
            .submissions
            .into_iter()
            .enumerate()
            .map(|(i, x)| Submission {
                submitter_id: x.submitter_hash,
                category: x.category,
                classification: x.classification,
                review_status: x.review_status,
                reputation: x.reputation,
                confidence: x.conf,
                order_index: i as u32,
            })
            .collect();
        let mut rec =
            ConflictRecord::new(w.variant_id, w.ground_truth, submissions).map_err(serde::de::Error::custom)?;
        rec.hgvs = w.hgvs;
        rec.gene = w.gene;
        Ok(rec)
    }
}

pub const MANDATORY_OPERATIONS: [&str; 4] = ["Create", "Retrieve", "Update", "Delete"];

/// Plain FAIR digital object: PID, type, declared operations, metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdoRecord {
    pub pid: String,
    pub fdo_type: String,
    pub operations: BTreeSet<String>,
    pub metadata: BTreeMap<String, String>,
}

impl FdoRecord {
    /// Creates a record declaring the mandatory operations plus `extra`.
    pub fn new<I, S>(pid: impl Into<String>, fdo_type: impl Into<String>, extra: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut operations: BTreeSet<String> = MANDATORY_OPERATIONS.iter().map(|s| s.to_string()).collect();
        operations.extend(extra.into_iter().map(Into::into));
        let rec = FdoRecord { pid: pid.into(), fdo_type: fdo_type.into(), operations, metadata: BTreeMap::new() };
        rec.validate()?;
        Ok(rec)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.pid.is_empty() {
            return Err(ModelError::EmptyPid);
        }
        for op in MANDATORY_OPERATIONS {
            if !self.operations.contains(op) {
                return Err(ModelError::MissingOperation { pid: self.pid.clone(), op });
            }
        }
        Ok(())
    }
}

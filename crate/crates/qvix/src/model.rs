//! Core data model shared by every stage of the pipeline: task and instance
//! descriptions, pre-question sets with provenance, composed prompt bundles,
//! and per-instance / per-run result types.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{QvixError, Result};

/// What kind of answer the task expects. Controls option rendering and
/// which answer-extraction strategies apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Multiple choice with per-instance options, rendered as lettered choices.
    VqaMultichoice,
    /// Closed-set label prediction; options come from a label schema,
    /// usually shortlisted per image.
    Classification,
    /// Three-way entailment over an image/hypothesis pair.
    Entailment,
}

/// Whether pre-questions are generated once per dataset or once per instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PregenPolicy {
    PerDataset,
    PerInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    /// Task-level instruction slotted into prompts. May be empty for tasks
    /// whose per-instance query already carries the full question.
    #[serde(default)]
    pub task_instruction: String,
    pub pregen_policy: PregenPolicy,
    /// Full label set for closed-set tasks. Required for classification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_schema: Option<Vec<String>>,
    /// Tag keys to break accuracy down by, in report order.
    #[serde(default)]
    pub breakdown_keys: Vec<String>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.task_id.trim().is_empty() {
            return Err(QvixError::Invalid("task_id must be non-empty".into()));
        }
        if self.kind == TaskKind::Classification {
            match &self.label_schema {
                Some(labels) if !labels.is_empty() => {
                    if labels.iter().any(|l| l.trim().is_empty()) {
                        return Err(QvixError::Invalid(format!(
                            "task `{}` has an empty label in its schema",
                            self.task_id
                        )));
                    }
                }
                _ => {
                    return Err(QvixError::Invalid(format!(
                        "classification task `{}` requires a non-empty label_schema",
                        self.task_id
                    )));
                }
            }
        }
        if self.breakdown_keys.iter().any(|k| k.trim().is_empty()) {
            return Err(QvixError::Invalid(format!(
                "task `{}` has an empty breakdown key",
                self.task_id
            )));
        }
        Ok(())
    }
}

/// One evaluation item: an image plus a textual query and its gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    /// Image reference; relative paths are resolved against the manifest
    /// directory at load time.
    pub image_ref: String,
    /// The main question. May be empty for classification tasks where the
    /// task instruction is the whole question.
    #[serde(default)]
    pub query: String,
    /// Candidate answers for multiple-choice instances.
    #[serde(default)]
    pub options: Option<Vec<String>>,
    pub gold: String,
    /// Free-form tags (category, grade band, ...) used for breakdowns.
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

/// Hard cap on lettered options: choices are labelled (A)..(Z).
pub const MAX_LETTERED_OPTIONS: usize = 26;

impl Instance {
    pub fn validate(&self, kind: TaskKind) -> Result<()> {
        if self.instance_id.trim().is_empty() {
            return Err(QvixError::Invalid("instance_id must be non-empty".into()));
        }
        if self.image_ref.trim().is_empty() {
            return Err(QvixError::Invalid(format!(
                "instance `{}` has no image reference",
                self.instance_id
            )));
        }
        if self.gold.trim().is_empty() {
            return Err(QvixError::Invalid(format!(
                "instance `{}` has an empty gold answer",
                self.instance_id
            )));
        }
        if kind == TaskKind::VqaMultichoice {
            let options = self.options.as_deref().unwrap_or_default();
            if options.is_empty() {
                return Err(QvixError::Invalid(format!(
                    "multichoice instance `{}` has no options",
                    self.instance_id
                )));
            }
            if options.len() > MAX_LETTERED_OPTIONS {
                return Err(QvixError::Invalid(format!(
                    "instance `{}` has {} options; at most {} are supported",
                    self.instance_id,
                    options.len(),
                    MAX_LETTERED_OPTIONS
                )));
            }
            if options.iter().any(|o| o.trim().is_empty()) {
                return Err(QvixError::Invalid(format!(
                    "instance `{}` has an empty option",
                    self.instance_id
                )));
            }
            if !options.contains(&self.gold) {
                return Err(QvixError::Invalid(format!(
                    "instance `{}`: gold answer is not among the options",
                    self.instance_id
                )));
            }
        }
        Ok(())
    }
}

/// Version tag for the pre-question generation prompt wording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateVersion {
    #[serde(rename = "v0")]
    V0,
    #[serde(rename = "v1")]
    V1,
    #[serde(rename = "v2")]
    V2,
    #[serde(rename = "v3")]
    V3,
}

impl TemplateVersion {
    pub const ALL: [TemplateVersion; 4] = [Self::V0, Self::V1, Self::V2, Self::V3];
}

impl fmt::Display for TemplateVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::V0 => "v0",
            Self::V1 => "v1",
            Self::V2 => "v2",
            Self::V3 => "v3",
        };
        f.write_str(s)
    }
}

impl FromStr for TemplateVersion {
    type Err = QvixError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "v0" => Ok(Self::V0),
            "v1" => Ok(Self::V1),
            "v2" => Ok(Self::V2),
            "v3" => Ok(Self::V3),
            other => Err(QvixError::UnknownVersion(other.to_string())),
        }
    }
}

/// How the pre-questions were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PregenMode {
    /// The evaluated model writes its own pre-questions.
    SelfGenerated,
    /// A separate generator endpoint writes them.
    ExternalLlm,
}

/// What a pre-question set was generated for.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PregenScope {
    Dataset { task_id: String },
    Instance { instance_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PregenProvenance {
    pub generator_endpoint_id: String,
    pub prompt_version: TemplateVersion,
    pub seed: u64,
    pub mode: PregenMode,
}

/// An ordered set of exploratory pre-questions plus where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreQuestionSet {
    pub questions: Vec<String>,
    pub m: usize,
    pub scope: PregenScope,
    pub provenance: PregenProvenance,
}

impl PreQuestionSet {
    pub fn new(
        questions: Vec<String>,
        scope: PregenScope,
        provenance: PregenProvenance,
    ) -> Result<Self> {
        if questions.is_empty() {
            return Err(QvixError::Invalid(
                "a pre-question set needs at least one question".into(),
            ));
        }
        if questions.iter().any(|q| q.trim().is_empty()) {
            return Err(QvixError::Invalid(
                "pre-question sets must not contain blank questions".into(),
            ));
        }
        let m = questions.len();
        Ok(Self {
            questions,
            m,
            scope,
            provenance,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
}

/// One content part of a chat turn. At most one image per bundle, and the
/// image always precedes any text in its turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Text(String),
    /// Image reference (path); resolved and inlined at request time.
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub role: Role,
    pub parts: Vec<Part>,
}

/// Decoding parameters attached to a prompt bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Request-level sampling seed, forwarded to backends that accept one.
    pub seed: Option<u64>,
}

impl Sampling {
    /// Greedy decoding for answer/reasoning calls.
    pub fn reasoning() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 512,
            seed: None,
        }
    }

    /// Stochastic decoding for pre-question generation.
    pub fn generation(seed: u64) -> Self {
        Self {
            temperature: 1.0,
            max_tokens: 512,
            seed: Some(seed),
        }
    }
}

/// A fully composed request: ordered chat segments plus sampling parameters.
/// This is the unit handed to the model gateway and the unit fingerprinted
/// for caching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub segments: Vec<Segment>,
    pub sampling: Sampling,
}

impl PromptBundle {
    /// Single user turn with an optional leading image and one part per
    /// text block.
    pub fn user_turn(image: Option<&str>, blocks: Vec<String>, sampling: Sampling) -> Self {
        let mut parts = Vec::with_capacity(blocks.len() + 1);
        if let Some(image) = image {
            parts.push(Part::Image(image.to_string()));
        }
        parts.extend(blocks.into_iter().map(Part::Text));
        Self {
            segments: vec![Segment {
                role: Role::User,
                parts,
            }],
            sampling,
        }
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn image_ref(&self) -> Option<&str> {
        self.segments.iter().flat_map(|s| &s.parts).find_map(|p| match p {
            Part::Image(path) => Some(path.as_str()),
            Part::Text(_) => None,
        })
    }

    /// All text parts in order, joined with blank lines. This is the exact
    /// text a text-only endpoint receives and the text mock matchers see.
    pub fn joined_text(&self) -> String {
        let blocks: Vec<&str> = self
            .segments
            .iter()
            .flat_map(|s| &s.parts)
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image(_) => None,
            })
            .collect();
        blocks.join("\n\n")
    }

    /// Canonical JSON encoding; used for byte-level comparisons in tests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("prompt bundles always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(QvixError::Invalid("prompt bundle has no segments".into()));
        }
        let mut images = 0usize;
        for segment in &self.segments {
            if segment.parts.is_empty() {
                return Err(QvixError::Invalid("prompt segment has no parts".into()));
            }
            for (i, part) in segment.parts.iter().enumerate() {
                if let Part::Image(_) = part {
                    images += 1;
                    if i != 0 {
                        return Err(QvixError::Invalid(
                            "an image part must come before any text in its turn".into(),
                        ));
                    }
                }
            }
        }
        if images > 1 {
            return Err(QvixError::Invalid(format!(
                "prompt bundle carries {images} images; at most one is allowed"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Qvix,
    Baseline,
    Cot,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Qvix => "qvix",
            Self::Baseline => "baseline",
            Self::Cot => "cot",
        };
        f.write_str(s)
    }
}

impl FromStr for Condition {
    type Err = QvixError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "qvix" => Ok(Self::Qvix),
            "baseline" => Ok(Self::Baseline),
            "cot" => Ok(Self::Cot),
            other => Err(QvixError::Config(format!(
                "unknown condition `{other}` (expected qvix, baseline, or cot)"
            ))),
        }
    }
}

/// Outcome for one instance in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub instance_id: String,
    pub condition: Condition,
    pub raw_response: String,
    /// Intermediate rationale, present only for two-stage runs.
    pub rationale: Option<String>,
    /// Extracted answer; `None` means the response did not map to exactly
    /// one option (an abstention).
    pub extracted: Option<String>,
    pub correct: bool,
    /// Fingerprints of the requests issued for this instance, in call order.
    pub request_fingerprints: Vec<String>,
    pub tags: BTreeMap<String, String>,
    /// Populated when the instance failed with an endpoint or pipeline
    /// error; such instances score as incorrect.
    pub error: Option<String>,
}

/// Accuracy over the subset of verdicts sharing one tag value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownCell {
    pub key: String,
    pub value: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Mean and sample standard deviation of per-trial accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub trial_accuracies: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    /// Snapshot of the resolved run configuration.
    pub config: serde_json::Value,
    pub task_id: String,
    pub condition: Condition,
    /// Instances in the manifest before sampling.
    pub manifest_size: usize,
    /// Instances evaluated in each trial.
    pub evaluated_per_trial: usize,
    pub trials: usize,
    /// Percentage of correct verdicts pooled over all trials, full precision.
    pub overall_accuracy: f64,
    /// Unweighted mean of the breakdown-cell accuracies (falls back to the
    /// overall accuracy when there are no breakdown cells).
    pub macro_average: f64,
    pub breakdown: Vec<BreakdownCell>,
    /// Present when trials > 1.
    pub trial_stats: Option<TrialStats>,
    pub abstentions: usize,
    pub instance_errors: usize,
    /// Fraction of shortlisted instances whose gold label survived the
    /// shortlist; classification runs only.
    pub shortlist_recall: Option<f64>,
    pub verdicts: Vec<Verdict>,
}

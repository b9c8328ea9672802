//! Converters from upstream dataset dumps to the manifest format.
//!
//! Each adapter returns a `(TaskSpec, Vec<ManifestRow>)` pair ready for
//! `corpus::write_manifest`. Image paths in the rows are built from a
//! caller-supplied prefix, which should be the path from the output
//! manifest's directory to the dataset's image root.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::corpus::{ManifestRow, ENTAILMENT_OPTIONS};
use crate::error::{QvixError, Result};
use crate::model::{PregenPolicy, TaskKind, TaskSpec};

fn join_prefix(prefix: &str, rest: &str) -> String {
    let prefix = prefix.trim_end_matches('/');
    if prefix.is_empty() {
        rest.to_string()
    } else {
        format!("{prefix}/{rest}")
    }
}

#[derive(Debug, Deserialize)]
struct ScienceQaProblem {
    question: String,
    choices: Vec<String>,
    answer: usize,
    #[serde(default)]
    image: Option<String>,
    split: String,
    #[serde(default)]
    subject: String,
    #[serde(default)]
    grade: String,
}

fn subject_tag(subject: &str) -> String {
    match subject {
        "natural science" => "NAT".to_string(),
        "social science" => "SOC".to_string(),
        "language science" => "LAN".to_string(),
        other => other.to_string(),
    }
}

fn grade_tag(grade: &str) -> String {
    let digits: String = grade.chars().filter(char::is_ascii_digit).collect();
    match digits.parse::<u32>() {
        Ok(n) if (1..=6).contains(&n) => "G1-6".to_string(),
        Ok(n) if (7..=12).contains(&n) => "G7-12".to_string(),
        _ => grade.to_string(),
    }
}

/// Convert a ScienceQA `problems.json` dump: keeps the requested split,
/// drops text-only problems, and tags each row with its subject and
/// grade band for the report breakdown. Images are expected at
/// `<prefix>/<split>/<problem-id>/<image-file>`, the dump's own layout.
pub fn adapt_scienceqa(
    problems_json: &str,
    images_prefix: &str,
    split: &str,
) -> Result<(TaskSpec, Vec<ManifestRow>)> {
    let problems: BTreeMap<String, ScienceQaProblem> = serde_json::from_str(problems_json)
        .map_err(|e| QvixError::Invalid(format!("problems.json: {e}")))?;
    let mut rows = Vec::new();
    for (id, problem) in &problems {
        if problem.split != split {
            continue;
        }
        let Some(image_file) = problem.image.as_deref().filter(|f| !f.is_empty()) else {
            continue;
        };
        let answer = problem.choices.get(problem.answer).ok_or_else(|| {
            QvixError::Invalid(format!(
                "problem `{id}`: answer index {} out of range for {} choices",
                problem.answer,
                problem.choices.len()
            ))
        })?;
        let mut tags = BTreeMap::new();
        if !problem.subject.is_empty() {
            tags.insert("subject".to_string(), subject_tag(&problem.subject));
        }
        if !problem.grade.is_empty() {
            tags.insert("grade".to_string(), grade_tag(&problem.grade));
        }
        rows.push(ManifestRow {
            id: id.clone(),
            image: join_prefix(images_prefix, &format!("{split}/{id}/{image_file}")),
            query: problem.question.clone(),
            options: Some(problem.choices.clone()),
            answer: answer.clone(),
            tags,
        });
    }
    if rows.is_empty() {
        return Err(QvixError::Invalid(format!(
            "no problems with images in split `{split}`"
        )));
    }
    let spec = TaskSpec {
        task_id: "scienceqa".to_string(),
        kind: TaskKind::VqaMultichoice,
        // Each problem carries its own full question; no shared instruction.
        task_instruction: String::new(),
        pregen_policy: PregenPolicy::PerInstance,
        label_schema: None,
        breakdown_keys: vec!["subject".to_string(), "grade".to_string()],
    };
    Ok((spec, rows))
}

/// Task identity for a classification dataset: id plus the instruction the
/// prompts open with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationSpec {
    pub task_id: String,
    pub instruction: String,
}

/// Built-in classification presets. The instruction is overridable at the
/// CLI for datasets not listed here (or to reproduce a historical wording
/// exactly).
pub fn classification_preset(name: &str) -> Result<ClassificationSpec> {
    let (task_id, instruction) = match name {
        "flowers102" => ("flowers102", "What breed is the flower in the image?"),
        "pet" => ("pet", "What breed is the pet in the image?"),
        "aircraft" => ("aircraft", "What is the aircraft in the image?"),
        other => {
            return Err(QvixError::Config(format!(
                "unknown classification preset `{other}` (expected flowers102, pet, or aircraft)"
            )))
        }
    };
    Ok(ClassificationSpec {
        task_id: task_id.to_string(),
        instruction: instruction.to_string(),
    })
}

/// Convert a `path,label` listing (one image per line, first comma splits)
/// into a classification manifest. The label schema is the given list, or
/// the listing's labels in first-appearance order when none is supplied.
pub fn adapt_classification(
    listing: &str,
    spec: &ClassificationSpec,
    labels: Option<&[String]>,
) -> Result<(TaskSpec, Vec<ManifestRow>)> {
    let mut rows = Vec::new();
    let mut seen_labels: Vec<String> = Vec::new();
    for (index, line) in listing.lines().enumerate() {
        let line_no = index + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (path, label) = line.split_once(',').ok_or_else(|| {
            QvixError::Invalid(format!("listing line {line_no}: expected `path,label`"))
        })?;
        let (path, label) = (path.trim(), label.trim());
        if path.is_empty() || label.is_empty() {
            return Err(QvixError::Invalid(format!(
                "listing line {line_no}: empty path or label"
            )));
        }
        if !seen_labels.iter().any(|l| l == label) {
            seen_labels.push(label.to_string());
        }
        rows.push(ManifestRow {
            id: path.to_string(),
            image: path.to_string(),
            query: String::new(),
            options: None,
            answer: label.to_string(),
            tags: BTreeMap::new(),
        });
    }
    if rows.is_empty() {
        return Err(QvixError::Invalid("listing has no rows".into()));
    }
    let schema: Vec<String> = match labels {
        Some(list) => {
            for row in &rows {
                if !list.contains(&row.answer) {
                    return Err(QvixError::Invalid(format!(
                        "image `{}` has label `{}` which is not in the label file",
                        row.id, row.answer
                    )));
                }
            }
            list.to_vec()
        }
        None => seen_labels,
    };
    let task_spec = TaskSpec {
        task_id: spec.task_id.clone(),
        kind: TaskKind::Classification,
        task_instruction: spec.instruction.clone(),
        pregen_policy: PregenPolicy::PerDataset,
        label_schema: Some(schema),
        breakdown_keys: vec![],
    };
    Ok((task_spec, rows))
}

#[derive(Debug, Deserialize)]
struct SnliVePair {
    #[serde(rename = "pairID")]
    pair_id: String,
    #[serde(rename = "Flickr30K_ID")]
    flickr_id: String,
    sentence2: String,
    gold_label: String,
}

pub const SNLI_VE_INSTRUCTION: &str = "Predict whether the image semantically entails the textual hypothesis, choose the answer from entailment, neutral, contradiction.";

/// Convert SNLI-VE pairs (JSONL) to an entailment manifest. The hypothesis
/// becomes the per-instance query; images resolve to
/// `<prefix>/<Flickr30K_ID>.jpg`. Pairs without one of the three gold
/// labels (annotator no-consensus rows) are skipped.
pub fn adapt_snli_ve(
    pairs_jsonl: &str,
    images_prefix: &str,
) -> Result<(TaskSpec, Vec<ManifestRow>)> {
    let mut rows = Vec::new();
    for (index, line) in pairs_jsonl.lines().enumerate() {
        let line_no = index + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let pair: SnliVePair = serde_json::from_str(line)
            .map_err(|e| QvixError::Invalid(format!("pairs line {line_no}: {e}")))?;
        if !ENTAILMENT_OPTIONS.contains(&pair.gold_label.as_str()) {
            continue;
        }
        rows.push(ManifestRow {
            id: pair.pair_id,
            image: join_prefix(images_prefix, &format!("{}.jpg", pair.flickr_id)),
            query: pair.sentence2,
            options: None,
            answer: pair.gold_label,
            tags: BTreeMap::new(),
        });
    }
    if rows.is_empty() {
        return Err(QvixError::Invalid("no labelled pairs found".into()));
    }
    let spec = TaskSpec {
        task_id: "snli_ve".to_string(),
        kind: TaskKind::Entailment,
        task_instruction: SNLI_VE_INSTRUCTION.to_string(),
        pregen_policy: PregenPolicy::PerDataset,
        label_schema: None,
        breakdown_keys: vec![],
    };
    Ok((spec, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scienceqa_filters_splits_and_text_only_problems() {
        let problems = r#"{
            "1": {"question": "Which is a mammal?", "choices": ["frog", "whale"], "answer": 1,
                  "image": "image.png", "split": "test", "subject": "natural science",
                  "grade": "grade3", "topic": "biology"},
            "2": {"question": "No image here", "choices": ["a", "b"], "answer": 0,
                  "image": null, "split": "test", "subject": "social science", "grade": "grade8"},
            "3": {"question": "Wrong split", "choices": ["a", "b"], "answer": 0,
                  "image": "image.png", "split": "train", "subject": "language science", "grade": "grade2"},
            "4": {"question": "Which word?", "choices": ["x", "y", "z"], "answer": 2,
                  "image": "image.png", "split": "test", "subject": "language science", "grade": "grade11"}
        }"#;
        let (spec, rows) = adapt_scienceqa(problems, "../images", "test").unwrap();
        assert_eq!(spec.kind, TaskKind::VqaMultichoice);
        assert_eq!(spec.pregen_policy, PregenPolicy::PerInstance);
        assert_eq!(spec.breakdown_keys, vec!["subject", "grade"]);
        assert!(spec.task_instruction.is_empty());
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].id, "1");
        assert_eq!(rows[0].image, "../images/test/1/image.png");
        assert_eq!(rows[0].answer, "whale");
        assert_eq!(rows[0].tags["subject"], "NAT");
        assert_eq!(rows[0].tags["grade"], "G1-6");
        assert_eq!(rows[1].tags["subject"], "LAN");
        assert_eq!(rows[1].tags["grade"], "G7-12");
    }

    #[test]
    fn scienceqa_rejects_out_of_range_answers() {
        let problems = r#"{
            "1": {"question": "q", "choices": ["a"], "answer": 3,
                  "image": "image.png", "split": "test", "subject": "", "grade": ""}
        }"#;
        assert!(adapt_scienceqa(problems, "img", "test").is_err());
        assert!(adapt_scienceqa(r#"{}"#, "img", "test").is_err());
    }

    #[test]
    fn classification_listing_builds_schema_in_first_appearance_order() {
        let listing = "jpg/rose_01.jpg,rose\njpg/tulip_01.jpg,tulip\n\njpg/rose_02.jpg,rose\n";
        let preset = classification_preset("flowers102").unwrap();
        let (spec, rows) = adapt_classification(listing, &preset, None).unwrap();
        assert_eq!(spec.kind, TaskKind::Classification);
        assert_eq!(spec.pregen_policy, PregenPolicy::PerDataset);
        assert_eq!(spec.task_instruction, "What breed is the flower in the image?");
        assert_eq!(spec.label_schema.as_deref().unwrap(), ["rose", "tulip"]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].id, "jpg/rose_01.jpg");
        assert_eq!(rows[0].image, "jpg/rose_01.jpg");
        assert_eq!(rows[0].answer, "rose");
    }

    #[test]
    fn classification_validates_rows_against_an_explicit_label_file() {
        let preset = classification_preset("pet").unwrap();
        assert_eq!(preset.instruction, "What breed is the pet in the image?");
        let labels: Vec<String> = vec!["beagle".into(), "sphynx".into()];
        let (spec, _) =
            adapt_classification("a.jpg,beagle", &preset, Some(&labels)).unwrap();
        // Explicit schema keeps its own order and the full label set.
        assert_eq!(spec.label_schema.as_deref().unwrap(), ["beagle", "sphynx"]);
        assert!(adapt_classification("a.jpg,papillon", &preset, Some(&labels)).is_err());
        assert!(classification_preset("cars").is_err());
    }

    #[test]
    fn snli_ve_skips_unlabelled_pairs_and_derives_image_names() {
        let pairs = concat!(
            r#"{"pairID": "p1", "Flickr30K_ID": "4705", "sentence2": "A dog runs.", "gold_label": "entailment"}"#,
            "\n",
            r#"{"pairID": "p2", "Flickr30K_ID": "4706", "sentence2": "Aliens land.", "gold_label": "-"}"#,
            "\n",
            r#"{"pairID": "p3", "Flickr30K_ID": "4707", "sentence2": "A cat sleeps.", "gold_label": "contradiction"}"#,
        );
        let (spec, rows) = adapt_snli_ve(pairs, "images/").unwrap();
        assert_eq!(spec.kind, TaskKind::Entailment);
        assert_eq!(spec.pregen_policy, PregenPolicy::PerDataset);
        assert!(spec.task_instruction.starts_with("Predict whether the image"));
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].id, "p1");
        assert_eq!(rows[0].image, "images/4705.jpg");
        assert_eq!(rows[0].query, "A dog runs.");
        assert_eq!(rows[1].answer, "contradiction");
    }
}

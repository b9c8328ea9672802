//! Answer extraction and scoring. Free-form model replies are mapped onto
//! the option list by a fixed ladder of strategies; anything that does not
//! resolve to exactly one option is an abstention, which scores as
//! incorrect but is counted separately.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{QvixError, Result};
use crate::model::{BreakdownCell, TaskKind, TrialStats, Verdict};

/// Canonical answer form: casefolded, punctuation stripped, whitespace
/// collapsed to single spaces.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .chars()
        .flat_map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().collect::<Vec<char>>()
            } else {
                vec![' ']
            }
        })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionStrategy {
    /// Whole response equals one option, after normalization.
    ExactOption,
    /// Option letters: `(A)`, `A.`, `A)`, `Answer: A`, a leading or bare
    /// capital letter. Multiple-choice tasks only, since only their prompts
    /// letter the options.
    LetteredOption,
    /// Exactly one option's text appears in the response on word boundaries.
    LabelKeyword,
    /// Substring containment with no boundary requirement, for agglutinated
    /// outputs; the strictly longest matching option wins.
    LongestOptionSubstring,
}

/// The strategy ladder, applied in order. A strategy either resolves to one
/// option (stop: answer), finds several (stop: abstain), or defers to the
/// next rank.
#[derive(Debug, Clone)]
pub struct ExtractionRule {
    pub strategies: Vec<ExtractionStrategy>,
}

impl Default for ExtractionRule {
    fn default() -> Self {
        Self {
            strategies: vec![
                ExtractionStrategy::ExactOption,
                ExtractionStrategy::LetteredOption,
                ExtractionStrategy::LabelKeyword,
                ExtractionStrategy::LongestOptionSubstring,
            ],
        }
    }
}

enum StrategyOutcome {
    Hit(usize),
    Ambiguous,
    NoHit,
}

impl ExtractionRule {
    pub fn extract(&self, raw: &str, options: &[String], kind: TaskKind) -> Option<String> {
        if options.is_empty() {
            return None;
        }
        let normalized_options: Vec<String> = options.iter().map(|o| normalize(o)).collect();
        let normalized_raw = normalize(raw);
        for strategy in &self.strategies {
            let outcome = match strategy {
                ExtractionStrategy::ExactOption => {
                    exact_option(&normalized_raw, &normalized_options)
                }
                ExtractionStrategy::LetteredOption => {
                    if kind == TaskKind::VqaMultichoice {
                        lettered_option(raw, options.len())
                    } else {
                        StrategyOutcome::NoHit
                    }
                }
                ExtractionStrategy::LabelKeyword => {
                    label_keyword(&normalized_raw, &normalized_options)
                }
                ExtractionStrategy::LongestOptionSubstring => {
                    longest_substring(&normalized_raw, &normalized_options)
                }
            };
            match outcome {
                StrategyOutcome::Hit(index) => return Some(options[index].clone()),
                StrategyOutcome::Ambiguous => return None,
                StrategyOutcome::NoHit => continue,
            }
        }
        None
    }
}

/// Map a reply onto one option using the default strategy ladder; `None`
/// is an abstention.
pub fn extract_answer(raw: &str, options: &[String], kind: TaskKind) -> Option<String> {
    ExtractionRule::default().extract(raw, options, kind)
}

fn exact_option(normalized_raw: &str, normalized_options: &[String]) -> StrategyOutcome {
    if normalized_raw.is_empty() {
        return StrategyOutcome::NoHit;
    }
    let hits: Vec<usize> = normalized_options
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.is_empty() && o.as_str() == normalized_raw)
        .map(|(i, _)| i)
        .collect();
    match hits.len() {
        0 => StrategyOutcome::NoHit,
        1 => StrategyOutcome::Hit(hits[0]),
        _ => StrategyOutcome::Ambiguous,
    }
}

fn letter_regexes() -> &'static [Regex; 4] {
    static REGEXES: OnceLock<[Regex; 4]> = OnceLock::new();
    REGEXES.get_or_init(|| {
        [
            // (A) or (a)
            Regex::new(r"\(([A-Za-z])\)").unwrap(),
            // A.  A)  A:  — uppercase only; lowercase would collide with
            // abbreviations like "e.g."
            Regex::new(r"\b([A-Z])[.):]").unwrap(),
            // Answer: A / answer is b / Answer (B) — the marker makes even a
            // lowercase letter unambiguous.
            Regex::new(r"(?i)\banswer(?:\s+is)?[:\s\-]\s*\(?([A-Za-z])\)?(?:[^A-Za-z0-9]|$)")
                .unwrap(),
            // Leading bare letter: "A" or "A dog ...".
            Regex::new(r"^\s*([A-Za-z])(?:[^A-Za-z0-9]|$)").unwrap(),
        ]
    })
}

fn bare_upper_regex() -> &'static Regex {
    static REGEX: OnceLock<Regex> = OnceLock::new();
    // A lone capital letter on word boundaries anywhere in the reply.
    REGEX.get_or_init(|| Regex::new(r"\b([A-Z])\b").unwrap())
}

fn lettered_option(raw: &str, option_count: usize) -> StrategyOutcome {
    let mut letters: BTreeSet<char> = BTreeSet::new();
    for regex in letter_regexes() {
        for captures in regex.captures_iter(raw) {
            let letter = captures[1].chars().next().unwrap().to_ascii_uppercase();
            letters.insert(letter);
        }
    }
    for captures in bare_upper_regex().captures_iter(raw) {
        letters.insert(captures[1].chars().next().unwrap());
    }
    // A single lowercase letter as the entire reply also counts.
    let trimmed = raw.trim();
    if trimmed.len() == 1 {
        let c = trimmed.chars().next().unwrap();
        if c.is_ascii_alphabetic() {
            letters.insert(c.to_ascii_uppercase());
        }
    }
    // Letters beyond the option range carry no signal (e.g. a bare "I" in
    // a four-option question is almost certainly the pronoun).
    let valid: Vec<usize> = letters
        .into_iter()
        .map(|c| (c as u8 - b'A') as usize)
        .filter(|&i| i < option_count)
        .collect();
    match valid.len() {
        0 => StrategyOutcome::NoHit,
        1 => StrategyOutcome::Hit(valid[0]),
        _ => StrategyOutcome::Ambiguous,
    }
}

/// True when `needle` occurs in `haystack` flanked by spaces or string ends.
/// Both are already normalized, so a space is the only separator.
fn contains_on_boundaries(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    for (pos, _) in haystack.match_indices(needle) {
        let before_ok = pos == 0 || haystack.as_bytes()[pos - 1] == b' ';
        let end = pos + needle.len();
        let after_ok = end == haystack.len() || haystack.as_bytes()[end] == b' ';
        if before_ok && after_ok {
            return true;
        }
    }
    false
}

fn label_keyword(normalized_raw: &str, normalized_options: &[String]) -> StrategyOutcome {
    let hits: Vec<usize> = normalized_options
        .iter()
        .enumerate()
        .filter(|(_, o)| contains_on_boundaries(normalized_raw, o))
        .map(|(i, _)| i)
        .collect();
    match hits.len() {
        0 => StrategyOutcome::NoHit,
        1 => StrategyOutcome::Hit(hits[0]),
        _ => StrategyOutcome::Ambiguous,
    }
}

fn longest_substring(normalized_raw: &str, normalized_options: &[String]) -> StrategyOutcome {
    let hits: Vec<(usize, usize)> = normalized_options
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.is_empty() && normalized_raw.contains(o.as_str()))
        .map(|(i, o)| (i, o.len()))
        .collect();
    let Some(&max_len) = hits.iter().map(|(_, len)| len).max() else {
        return StrategyOutcome::NoHit;
    };
    let longest: Vec<usize> = hits
        .iter()
        .filter(|(_, len)| *len == max_len)
        .map(|(i, _)| *i)
        .collect();
    match longest.len() {
        1 => StrategyOutcome::Hit(longest[0]),
        _ => StrategyOutcome::Ambiguous,
    }
}

/// An extracted answer is correct when it matches the gold answer after
/// normalization. Abstentions are always incorrect.
pub fn judge(extracted: Option<&str>, gold: &str) -> bool {
    extracted.is_some_and(|answer| normalize(answer) == normalize(gold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregates {
    pub total: usize,
    pub correct: usize,
    /// Percentage at full precision; rounding happens at render time only.
    pub overall_accuracy: f64,
    /// Unweighted mean over breakdown cells; equals the overall accuracy
    /// when no cells exist.
    pub macro_average: f64,
    pub breakdown: Vec<BreakdownCell>,
    pub abstentions: usize,
    pub instance_errors: usize,
}

/// Pool verdicts into overall accuracy plus per-tag breakdown cells.
/// Cells are ordered by `breakdown_keys`, then by first appearance of each
/// tag value in verdict order.
pub fn aggregate(verdicts: &[Verdict], breakdown_keys: &[String]) -> Result<Aggregates> {
    if verdicts.is_empty() {
        return Err(QvixError::Invalid("cannot aggregate zero verdicts".into()));
    }
    let total = verdicts.len();
    let correct = verdicts.iter().filter(|v| v.correct).count();
    let abstentions = verdicts
        .iter()
        .filter(|v| v.error.is_none() && v.extracted.is_none())
        .count();
    let instance_errors = verdicts.iter().filter(|v| v.error.is_some()).count();
    let overall_accuracy = percentage(correct, total);

    let mut breakdown: Vec<BreakdownCell> = Vec::new();
    for key in breakdown_keys {
        let mut values_in_order: Vec<String> = Vec::new();
        for verdict in verdicts {
            if let Some(value) = verdict.tags.get(key) {
                if !values_in_order.iter().any(|v| v == value) {
                    values_in_order.push(value.clone());
                }
            }
        }
        for value in values_in_order {
            let subset: Vec<&Verdict> = verdicts
                .iter()
                .filter(|v| v.tags.get(key) == Some(&value))
                .collect();
            let cell_correct = subset.iter().filter(|v| v.correct).count();
            breakdown.push(BreakdownCell {
                key: key.clone(),
                value,
                total: subset.len(),
                correct: cell_correct,
                accuracy: percentage(cell_correct, subset.len()),
            });
        }
    }
    let macro_average = if breakdown.is_empty() {
        overall_accuracy
    } else {
        breakdown.iter().map(|c| c.accuracy).sum::<f64>() / breakdown.len() as f64
    };

    Ok(Aggregates {
        total,
        correct,
        overall_accuracy,
        macro_average,
        breakdown,
        abstentions,
        instance_errors,
    })
}

fn percentage(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

/// Mean and sample standard deviation (n-1 denominator) of per-trial
/// accuracies. A single trial has zero spread by definition.
pub fn trial_stats(accuracies: &[f64]) -> Result<TrialStats> {
    if accuracies.is_empty() {
        return Err(QvixError::Invalid("trial_stats needs at least one trial".into()));
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let std_dev = if accuracies.len() == 1 {
        0.0
    } else {
        let sum_sq: f64 = accuracies.iter().map(|a| (a - mean).powi(2)).sum();
        (sum_sq / (n - 1.0)).sqrt()
    };
    Ok(TrialStats {
        trial_accuracies: accuracies.to_vec(),
        mean,
        std_dev,
    })
}

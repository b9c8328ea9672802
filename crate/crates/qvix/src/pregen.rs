//! Pre-question generation: ask the generator model for m exploratory
//! questions, parse its numbered list, and cache the result per
//! (task, scope, prompt version, m, endpoint, seed) key.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{QvixError, Result};
use crate::gateway::{Gateway, ResponseCache};
use crate::hash::canonical_value_hash;
use crate::model::{
    PreQuestionSet, PregenMode, PregenProvenance, PregenScope, Sampling, TemplateVersion,
};
use crate::prompt::render_pregen_prompt;

/// Regeneration attempts after the first try when the generator's output
/// cannot be parsed.
pub const REGEN_RETRIES: u32 = 2;

/// Seed offset between regeneration attempts. Large so that per-trial seeds
/// (small consecutive integers) can never collide with a retry seed.
const RETRY_SEED_STRIDE: u64 = 1_000_000;

/// Cache identity of one pre-question set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PregenKey {
    pub task_id: String,
    pub scope: PregenScope,
    pub template_version: TemplateVersion,
    pub m: usize,
    pub generator_endpoint_id: String,
    pub seed: u64,
}

impl PregenKey {
    /// Stable content hash; used as the cache filename.
    pub fn stable_hash(&self) -> String {
        let scope = match &self.scope {
            PregenScope::Dataset { task_id } => json!({"dataset": task_id}),
            PregenScope::Instance { instance_id } => json!({"instance": instance_id}),
        };
        canonical_value_hash(&json!({
            "task_id": self.task_id,
            "scope": scope,
            "template_version": self.template_version.to_string(),
            "m": self.m,
            "generator_endpoint_id": self.generator_endpoint_id,
            "seed": self.seed,
        }))
    }
}

fn question_line_regex() -> &'static Regex {
    static REGEX: OnceLock<Regex> = OnceLock::new();
    REGEX.get_or_init(|| {
        // Optional non-word junk (bullets, emphasis), an optional label,
        // the index, a separator, then the question text.
        Regex::new(
            r"(?i)^\W*(?:pre[\s-]*question|preliminary\s+question|question)?\s*(\d{1,3})\s*[*_]*\s*[:.)\-]\s*(\S.*)$",
        )
        .unwrap()
    })
}

/// Parse a generator reply into exactly `expected_m` questions.
///
/// Accepts `Pre-question 3: ...`, `Preliminary Question 3: ...`, bare
/// `3. ...` / `3) ...`, and bulleted or emphasised variants; surrounding
/// prose is ignored. Indices outside 1..=m are dropped (oversupply keeps
/// the first m), duplicates are malformed, and missing indices are a
/// shortfall reported with the count found.
pub fn parse_pre_questions(raw: &str, expected_m: usize) -> Result<Vec<String>> {
    if expected_m == 0 {
        return Err(QvixError::Invalid("expected_m must be at least 1".into()));
    }
    let mut found: Vec<(usize, String)> = Vec::new();
    for line in raw.lines() {
        let Some(captures) = question_line_regex().captures(line) else {
            continue;
        };
        let index: usize = captures[1]
            .parse()
            .map_err(|_| QvixError::MalformedOutput(format!("unparseable index in `{line}`")))?;
        if found.iter().any(|(i, _)| *i == index) {
            return Err(QvixError::MalformedOutput(format!(
                "duplicate pre-question index {index}"
            )));
        }
        found.push((index, captures[2].trim().to_string()));
    }
    found.retain(|(i, _)| (1..=expected_m).contains(i));
    if found.len() < expected_m {
        return Err(QvixError::ParseShortfall {
            found: found.len(),
            expected: expected_m,
        });
    }
    found.sort_by_key(|(i, _)| *i);
    Ok(found.into_iter().map(|(_, text)| text).collect())
}

/// Generates pre-question sets through the gateway, with per-key caching
/// and single-flight so one key is only ever generated once per run.
pub struct PreQuestionEngine<'g> {
    gateway: &'g Gateway,
    cache: ResponseCache,
    mode: PregenMode,
    regen_retries: u32,
}

impl<'g> PreQuestionEngine<'g> {
    pub fn new(gateway: &'g Gateway, mode: PregenMode) -> Self {
        Self {
            gateway,
            cache: ResponseCache::in_memory(),
            mode,
            regen_retries: REGEN_RETRIES,
        }
    }

    /// Persist generated sets under `dir` (one JSON file per key hash).
    pub fn with_cache_dir(mut self, dir: &Path) -> Result<Self> {
        self.cache = ResponseCache::at_dir(dir)?;
        Ok(self)
    }

    #[cfg(test)]
    fn with_regen_retries(mut self, retries: u32) -> Self {
        self.regen_retries = retries;
        self
    }

    /// Generate a fresh set (no cache): render the generation prompt, call
    /// the generator, parse. Unparseable output triggers regeneration with
    /// a shifted request seed, up to the retry budget; endpoint failures
    /// propagate immediately (the gateway already retried transport-level
    /// problems).
    pub fn generate(
        &self,
        key: &PregenKey,
        task_instruction: &str,
        query: &str,
    ) -> Result<PreQuestionSet> {
        let prompt = render_pregen_prompt(key.template_version, task_instruction, query, key.m)?;
        let mut last_parse_error = None;
        for attempt in 0..=self.regen_retries {
            let request_seed = key.seed + RETRY_SEED_STRIDE * u64::from(attempt);
            let sampling = Sampling::generation(request_seed);
            let reply =
                self.gateway
                    .complete_text(&key.generator_endpoint_id, &prompt, &sampling)?;
            match parse_pre_questions(&reply.text, key.m) {
                Ok(questions) => {
                    let provenance = PregenProvenance {
                        generator_endpoint_id: key.generator_endpoint_id.clone(),
                        prompt_version: key.template_version,
                        seed: key.seed,
                        mode: self.mode,
                    };
                    return PreQuestionSet::new(questions, key.scope.clone(), provenance);
                }
                Err(error) => last_parse_error = Some(error),
            }
        }
        Err(last_parse_error.expect("at least one attempt always runs"))
    }

    /// Cached variant: at most one generation per key, even under
    /// concurrent callers; later calls replay the stored set.
    pub fn get_or_generate(
        &self,
        key: &PregenKey,
        task_instruction: &str,
        query: &str,
    ) -> Result<PreQuestionSet> {
        let stored = self.cache.get_or_compute(&key.stable_hash(), || {
            let set = self.generate(key, task_instruction, query)?;
            Ok(serde_json::to_string(&set)?)
        })?;
        serde_json::from_str(&stored).map_err(|e| {
            QvixError::MalformedOutput(format!(
                "corrupt cached pre-question set for key {}: {e}",
                key.stable_hash()
            ))
        })
    }
}

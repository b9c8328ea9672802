//! Dataset manifests: a JSONL file whose first line is the task spec and
//! whose remaining lines are instances, with image paths relative to the
//! manifest's directory. Also home of the seeded subset sampler.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{QvixError, Result};
use crate::model::{Instance, TaskKind, TaskSpec};
use crate::rng::SplitMix64;

/// Fixed option set for entailment tasks; instances need not list options.
pub const ENTAILMENT_OPTIONS: [&str; 3] = ["entailment", "neutral", "contradiction"];

/// On-disk instance row. Field names follow the manifest format, not the
/// in-memory `Instance` type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

impl From<ManifestRow> for Instance {
    fn from(row: ManifestRow) -> Self {
        Instance {
            instance_id: row.id,
            image_ref: row.image,
            query: row.query,
            options: row.options,
            gold: row.answer,
            tags: row.tags,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub task_spec: TaskSpec,
    pub instances: Vec<Instance>,
    /// Directory the manifest was loaded from; image paths resolve against it.
    pub root: PathBuf,
}

impl Manifest {
    /// Absolute path of an instance's image. Absolute `image_ref`s pass
    /// through unchanged (`Path::join` replaces on absolute components).
    pub fn resolve_image(&self, instance: &Instance) -> PathBuf {
        self.root.join(&instance.image_ref)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

fn manifest_error(line: usize, message: impl Into<String>) -> QvixError {
    QvixError::Manifest {
        line,
        message: message.into(),
    }
}

/// Parse and validate a manifest. Checks schema per task kind, rejects
/// duplicate ids, and verifies every referenced image file exists.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (header_line, header) = lines
        .next()
        .ok_or_else(|| manifest_error(1, "manifest is empty"))?;
    let task_spec: TaskSpec = serde_json::from_str(header)
        .map_err(|e| manifest_error(header_line, format!("bad task spec: {e}")))?;
    task_spec
        .validate()
        .map_err(|e| manifest_error(header_line, e.to_string()))?;

    let mut instances = Vec::new();
    let mut seen_ids = HashSet::new();
    for (line, raw) in lines {
        let row: ManifestRow = serde_json::from_str(raw)
            .map_err(|e| manifest_error(line, format!("bad instance row: {e}")))?;
        let instance: Instance = row.into();
        instance
            .validate(task_spec.kind)
            .map_err(|e| manifest_error(line, e.to_string()))?;
        validate_gold_for_kind(&task_spec, &instance)
            .map_err(|e| manifest_error(line, e.to_string()))?;
        if !seen_ids.insert(instance.instance_id.clone()) {
            return Err(manifest_error(
                line,
                format!("duplicate instance id `{}`", instance.instance_id),
            ));
        }
        let image_path = root.join(&instance.image_ref);
        if !image_path.is_file() {
            return Err(manifest_error(
                line,
                format!("image not found: {}", image_path.display()),
            ));
        }
        instances.push(instance);
    }
    if instances.is_empty() {
        return Err(manifest_error(header_line, "manifest has no instances"));
    }
    Ok(Manifest {
        task_spec,
        instances,
        root,
    })
}

/// Closed-set tasks must have gold answers inside their answer space; for
/// multichoice that check lives in `Instance::validate`.
fn validate_gold_for_kind(task_spec: &TaskSpec, instance: &Instance) -> Result<()> {
    match task_spec.kind {
        TaskKind::VqaMultichoice => Ok(()),
        TaskKind::Classification => {
            let schema = task_spec.label_schema.as_deref().unwrap_or_default();
            if schema.contains(&instance.gold) {
                Ok(())
            } else {
                Err(QvixError::Invalid(format!(
                    "instance `{}`: gold label `{}` is not in the label schema",
                    instance.instance_id, instance.gold
                )))
            }
        }
        TaskKind::Entailment => {
            if ENTAILMENT_OPTIONS.contains(&instance.gold.as_str()) {
                Ok(())
            } else {
                Err(QvixError::Invalid(format!(
                    "instance `{}`: gold `{}` is not an entailment label",
                    instance.instance_id, instance.gold
                )))
            }
        }
    }
}

/// Serialize a manifest (header plus rows) as JSONL.
pub fn write_manifest(path: &Path, task_spec: &TaskSpec, rows: &[ManifestRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(task_spec)?);
    out.push('\n');
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Draw `n` distinct instances with a seeded partial Fisher-Yates shuffle,
/// returned in manifest order. Asking for more than the manifest holds
/// returns everything.
///
/// The draw must stay stable across releases — it is part of the
/// reproducibility contract — so the algorithm is fixed: seed SplitMix64
/// with `seed`; for i in 0..n swap index i with `i + next_u64() % (len-i)`;
/// keep the first n indices, sorted ascending.
pub fn sample(manifest: &Manifest, n: usize, seed: u64) -> Vec<Instance> {
    let len = manifest.instances.len();
    if n >= len {
        return manifest.instances.clone();
    }
    let mut indices: Vec<usize> = (0..len).collect();
    let mut rng = SplitMix64::new(seed);
    for i in 0..n {
        let j = i + rng.next_below((len - i) as u64) as usize;
        indices.swap(i, j);
    }
    let mut selected: Vec<usize> = indices[..n].to_vec();
    selected.sort_unstable();
    selected
        .into_iter()
        .map(|i| manifest.instances[i].clone())
        .collect()
}

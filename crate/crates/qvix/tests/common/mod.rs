//! Shared fixtures for the integration suites: tiny image files, manifest
//! builders, mock-backed harnesses, and a base run configuration.

#![allow(dead_code)] // each integration target uses a different subset

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::Engine;

use qvix::corpus::{write_manifest, ManifestRow};
use qvix::gateway::mock::{MockBackend, MockScriptFile};
use qvix::gateway::{Clock, EndpointConfig, EndpointKind, Limits, ManualClock};
use qvix::model::{Condition, PregenPolicy, TaskKind, TaskSpec};
use qvix::runner::{EndpointsSection, Harness, RunConfig};

/// Smallest valid PNG (1x1); enough for image loading and hashing.
pub const TINY_PNG_B64: &str =
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNkYPhfDwAChwGA60e6kgAAAABJRU5ErkJggg==";

pub fn write_png(dir: &Path, name: &str) -> PathBuf {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(TINY_PNG_B64)
        .unwrap();
    let path = dir.join(name);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(&path, bytes).unwrap();
    path
}

/// Mock endpoints never throttle or back off for real: generous windows and
/// a 1 ms backoff base keep even fault-injection tests instant.
fn test_limits() -> Limits {
    Limits {
        max_in_flight: 64,
        requests_per_minute: 1_000_000,
        max_retries: 3,
        backoff_base_ms: 1,
        timeout_ms: 60_000,
    }
}

pub fn chat_endpoint(id: &str) -> EndpointConfig {
    EndpointConfig {
        endpoint_id: id.to_string(),
        base_url: "mock://".to_string(),
        model: format!("{id}-model"),
        api_key_env: None,
        kind: EndpointKind::Chat,
        limits: test_limits(),
    }
}

pub fn embed_endpoint(id: &str) -> EndpointConfig {
    EndpointConfig {
        kind: EndpointKind::Embed,
        ..chat_endpoint(id)
    }
}

/// Harness on a scripted backend plus the backend itself, so tests can
/// assert call counts and inspect logged requests.
pub fn mock_pair(script_json: &str) -> (Harness, Arc<MockBackend>) {
    let clock: Arc<dyn Clock> = Arc::new(ManualClock::new());
    let file = MockScriptFile::from_json_str(script_json).expect("fixture scripts are valid");
    let backend = Arc::new(MockBackend::new(file).with_clock(Arc::clone(&clock)));
    let harness = Harness::new(backend.clone()).with_clock(clock);
    (harness, backend)
}

pub fn vqa_spec(task_id: &str, policy: PregenPolicy, instruction: &str) -> TaskSpec {
    TaskSpec {
        task_id: task_id.to_string(),
        kind: TaskKind::VqaMultichoice,
        task_instruction: instruction.to_string(),
        pregen_policy: policy,
        label_schema: None,
        breakdown_keys: vec![],
    }
}

pub fn classification_spec(task_id: &str, instruction: &str, labels: &[&str]) -> TaskSpec {
    TaskSpec {
        task_id: task_id.to_string(),
        kind: TaskKind::Classification,
        task_instruction: instruction.to_string(),
        pregen_policy: PregenPolicy::PerDataset,
        label_schema: Some(labels.iter().map(|l| l.to_string()).collect()),
        breakdown_keys: vec![],
    }
}

pub fn vqa_row(index: usize, options: &[&str], answer: &str) -> ManifestRow {
    ManifestRow {
        id: format!("i{index}"),
        image: format!("img/i{index}.png"),
        query: format!("Probe question {index}?"),
        options: Some(options.iter().map(|o| o.to_string()).collect()),
        answer: answer.to_string(),
        tags: BTreeMap::new(),
    }
}

/// Write a manifest and one tiny PNG per row under `dir`; returns the
/// manifest path.
pub fn write_fixture_manifest(dir: &Path, spec: &TaskSpec, rows: &[ManifestRow]) -> PathBuf {
    for row in rows {
        write_png(dir, &row.image);
    }
    let path = dir.join("manifest.jsonl");
    write_manifest(&path, spec, rows).unwrap();
    path
}

/// Baseline-condition config pointing at `manifest`, writing under
/// `workspace`. Tests adjust fields from here.
pub fn base_config(manifest: &Path, workspace: &Path) -> RunConfig {
    RunConfig {
        manifest: manifest.to_path_buf(),
        condition: Condition::Baseline,
        pregen_mode: qvix::model::PregenMode::ExternalLlm,
        template_version: qvix::model::TemplateVersion::V0,
        m: 4,
        sample_n: 1000,
        seed: 0,
        trials: 1,
        parallelism: 1,
        endpoints: EndpointsSection {
            reasoner: chat_endpoint("reasoner"),
            generator: None,
            embedder: None,
        },
        shortlist: None,
        workspace: workspace.to_path_buf(),
        run_id: None,
        cache_responses: true,
    }
}

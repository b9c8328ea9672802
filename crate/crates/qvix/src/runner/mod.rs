//! Experiment orchestration: resolve a run configuration, sample the
//! manifest, drive every instance through the selected condition, and
//! persist records plus a report under the run workspace.

pub mod report;

pub use report::{render_ablation_table, render_report, ReportFormat};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::corpus::{load_manifest, sample, Manifest, ENTAILMENT_OPTIONS};
use crate::error::{QvixError, Result};
use crate::gateway::http::HttpBackend;
use crate::gateway::mock::{MockBackend, MockScriptFile};
use crate::gateway::{Backend, Clock, EndpointConfig, Gateway, ResponseCache, SystemClock};
use crate::hash::canonical_value_hash;
use crate::model::{
    Condition, Instance, PreQuestionSet, PregenMode, PregenPolicy, PregenScope, RunReport,
    TaskKind, TaskSpec, TemplateVersion, Verdict,
};
use crate::pregen::{PreQuestionEngine, PregenKey};
use crate::prompt::{
    render_baseline_prompt, render_cot_answer_prompt, render_cot_rationale_prompt,
    render_reasoning_prompt,
};
use crate::scoring::{aggregate, extract_answer, judge, trial_stats};
use crate::shortlist::{
    shortlist_labels, EmbeddingStore, EndpointSource, SidecarSource, VectorSource,
    DEFAULT_LABEL_TEMPLATE, DEFAULT_TOP_K,
};

/// Endpoints by role. The reasoner answers; the generator writes
/// pre-questions (external mode only); the embedder backs classification
/// shortlists when no sidecar is configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointsSection {
    pub reasoner: EndpointConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<EndpointConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<EndpointConfig>,
}

/// Label shortlisting for classification tasks. Vectors come from a
/// sidecar file (resolved relative to the manifest directory) when one is
/// given, otherwise from the embedder endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortlistSection {
    #[serde(default = "default_top_k")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<PathBuf>,
    #[serde(default = "default_label_template")]
    pub label_template: String,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_label_template() -> String {
    DEFAULT_LABEL_TEMPLATE.to_string()
}

fn default_condition() -> Condition {
    Condition::Qvix
}

fn default_pregen_mode() -> PregenMode {
    PregenMode::ExternalLlm
}

fn default_template_version() -> TemplateVersion {
    TemplateVersion::V0
}

fn default_m() -> usize {
    4
}

fn default_sample_n() -> usize {
    1000
}

fn default_trials() -> usize {
    1
}

fn default_parallelism() -> usize {
    1
}

fn default_workspace() -> PathBuf {
    PathBuf::from("runs")
}

fn default_true() -> bool {
    true
}

/// Everything one run needs; serializable so the exact configuration can be
/// snapshotted into the run directory and hashed into a run id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_condition")]
    pub condition: Condition,
    #[serde(default = "default_pregen_mode")]
    pub pregen_mode: PregenMode,
    #[serde(default = "default_template_version")]
    pub template_version: TemplateVersion,
    /// Number of pre-questions requested per set.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Evaluation subset size; the whole manifest when it is smaller.
    #[serde(default = "default_sample_n")]
    pub sample_n: usize,
    /// Master seed: sampling uses it directly, trial t generates
    /// pre-questions with seed + t.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub endpoints: EndpointsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortlist: Option<ShortlistSection>,
    #[serde(default = "default_workspace")]
    pub workspace: PathBuf,
    /// Explicit run id; derived from the config hash when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    /// Cache greedy chat responses on disk under the run directory.
    #[serde(default = "default_true")]
    pub cache_responses: bool,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QvixError::Config(format!("{}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| QvixError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Structural checks that don't need the manifest.
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(QvixError::Config("m must be at least 1".into()));
        }
        if self.sample_n == 0 {
            return Err(QvixError::Config("sample_n must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(QvixError::Config("trials must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(QvixError::Config("parallelism must be at least 1".into()));
        }
        if let Some(shortlist) = &self.shortlist {
            if shortlist.k == 0 {
                return Err(QvixError::Config("shortlist k must be at least 1".into()));
            }
        }
        if self.condition == Condition::Qvix
            && self.pregen_mode == PregenMode::ExternalLlm
            && self.endpoints.generator.is_none()
        {
            return Err(QvixError::Config(
                "external pre-question generation needs endpoints.generator".into(),
            ));
        }
        Ok(())
    }

    /// Checks that depend on the task being run.
    fn validate_for(&self, spec: &TaskSpec) -> Result<()> {
        if spec.kind == TaskKind::Classification {
            let shortlist = self.shortlist.as_ref().ok_or_else(|| {
                QvixError::Config(
                    "classification tasks need a shortlist section (sidecar or embedder)".into(),
                )
            })?;
            if shortlist.sidecar.is_none() && self.endpoints.embedder.is_none() {
                return Err(QvixError::Config(
                    "shortlist needs either a sidecar file or endpoints.embedder".into(),
                ));
            }
        }
        Ok(())
    }

    /// Deterministic id derived from the full configuration, so re-running
    /// the same config lands in the same directory (and reuses its caches).
    pub fn derived_run_id(&self) -> String {
        let value = serde_json::to_value(self).expect("run configs always serialize");
        format!("run-{}", &canonical_value_hash(&value)[..12])
    }

    fn resolved_run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| self.derived_run_id())
    }

    /// All endpoints referenced by the config, deduplicated by id. The same
    /// id may appear in several roles only with identical settings.
    fn endpoint_set(&self) -> Result<Vec<EndpointConfig>> {
        let mut by_id: BTreeMap<String, EndpointConfig> = BTreeMap::new();
        let roles = [
            Some(&self.endpoints.reasoner),
            self.endpoints.generator.as_ref(),
            self.endpoints.embedder.as_ref(),
        ];
        for endpoint in roles.into_iter().flatten() {
            match by_id.get(&endpoint.endpoint_id) {
                Some(existing) if existing == endpoint => {}
                Some(_) => {
                    return Err(QvixError::Config(format!(
                        "endpoint id `{}` is reused with different settings",
                        endpoint.endpoint_id
                    )))
                }
                None => {
                    by_id.insert(endpoint.endpoint_id.clone(), endpoint.clone());
                }
            }
        }
        Ok(by_id.into_values().collect())
    }

    fn generator_endpoint_id(&self) -> Result<String> {
        match self.pregen_mode {
            PregenMode::SelfGenerated => Ok(self.endpoints.reasoner.endpoint_id.clone()),
            PregenMode::ExternalLlm => self
                .endpoints
                .generator
                .as_ref()
                .map(|e| e.endpoint_id.clone())
                .ok_or_else(|| {
                    QvixError::Config(
                        "external pre-question generation needs endpoints.generator".into(),
                    )
                }),
        }
    }
}

/// Run driver bound to a backend (live HTTP or a scripted mock) and clock.
pub struct Harness {
    backend: Arc<dyn Backend>,
    clock: Arc<dyn Clock>,
}

impl Harness {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            clock: Arc::new(SystemClock::new()),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Live harness speaking to real endpoints.
    pub fn http() -> Result<Self> {
        Ok(Self::new(Arc::new(HttpBackend::new()?)))
    }

    /// Offline harness replaying a mock script file.
    pub fn mock_from_script(path: &Path) -> Result<Self> {
        let file = MockScriptFile::from_path(path)?;
        Ok(Self::new(Arc::new(MockBackend::new(file))))
    }

    /// Execute one full run and return its report. Side effects, all under
    /// `workspace/<run-id>/`: `config.json`, `records.jsonl` (one verdict
    /// per line, trial-major, in sampled order), `report.json`,
    /// `report.md`, plus the `cache/` and `pregen/` directories.
    pub fn run_experiment(&self, config: &RunConfig) -> Result<RunReport> {
        config.validate()?;
        let manifest = load_manifest(&config.manifest)?;
        let spec = manifest.task_spec.clone();
        config.validate_for(&spec)?;

        let run_id = config.resolved_run_id();
        let run_dir = config.workspace.join(&run_id);
        std::fs::create_dir_all(&run_dir)?;
        // The snapshot pins the id even when it was derived, so replaying
        // the file targets this same run directory.
        let mut snapshot = config.clone();
        snapshot.run_id = Some(run_id.clone());
        std::fs::write(
            run_dir.join("config.json"),
            serde_json::to_string_pretty(&snapshot)?,
        )?;

        let mut gateway = Gateway::new(
            config.endpoint_set()?,
            Arc::clone(&self.backend),
            Arc::clone(&self.clock),
        )?;
        if config.cache_responses {
            gateway = gateway.with_response_cache(ResponseCache::at_dir(run_dir.join("cache"))?);
        }
        let engine = PreQuestionEngine::new(&gateway, config.pregen_mode)
            .with_cache_dir(&run_dir.join("pregen"))?;

        let sampled = resolve_sample(&manifest, config);
        let (options_by_instance, shortlist_recall) =
            resolve_options(&gateway, &manifest, config, &sampled)?;

        let generator_id = if config.condition == Condition::Qvix {
            Some(config.generator_endpoint_id()?)
        } else {
            None
        };

        let mut all_verdicts: Vec<Verdict> = Vec::with_capacity(sampled.len() * config.trials);
        let mut trial_accuracies = Vec::with_capacity(config.trials);
        for trial in 0..config.trials {
            let context = TrialContext {
                gateway: &gateway,
                engine: &engine,
                spec: &spec,
                condition: config.condition,
                reasoner_id: &config.endpoints.reasoner.endpoint_id,
                generator_id: generator_id.as_deref(),
                template_version: config.template_version,
                m: config.m,
                generation_seed: config.seed + trial as u64,
            };
            let verdicts = parallel_map(sampled.len(), config.parallelism, |i| {
                evaluate_instance(&context, &sampled[i], &options_by_instance[i])
            });
            let correct = verdicts.iter().filter(|v| v.correct).count();
            trial_accuracies.push(100.0 * correct as f64 / verdicts.len() as f64);
            all_verdicts.extend(verdicts);
        }

        let mut records = String::new();
        for verdict in &all_verdicts {
            records.push_str(&serde_json::to_string(verdict)?);
            records.push('\n');
        }
        std::fs::write(run_dir.join("records.jsonl"), records)?;

        let aggregates = aggregate(&all_verdicts, &spec.breakdown_keys)?;
        let stats = if config.trials > 1 {
            Some(trial_stats(&trial_accuracies)?)
        } else {
            None
        };
        let report = RunReport {
            run_id,
            config: serde_json::to_value(&snapshot)?,
            task_id: spec.task_id.clone(),
            condition: config.condition,
            manifest_size: manifest.len(),
            evaluated_per_trial: sampled.len(),
            trials: config.trials,
            overall_accuracy: aggregates.overall_accuracy,
            macro_average: aggregates.macro_average,
            breakdown: aggregates.breakdown,
            trial_stats: stats,
            abstentions: aggregates.abstentions,
            instance_errors: aggregates.instance_errors,
            shortlist_recall,
            verdicts: all_verdicts,
        };
        std::fs::write(
            run_dir.join("report.json"),
            render_report(&report, ReportFormat::Json),
        )?;
        std::fs::write(
            run_dir.join("report.md"),
            render_report(&report, ReportFormat::Markdown),
        )?;
        Ok(report)
    }

    /// Generate (or replay) pre-question sets for a config without running
    /// any reasoning — useful to inspect sets or warm the cache a later run
    /// with the same config will hit.
    pub fn pregen_only(&self, config: &RunConfig) -> Result<Vec<PreQuestionSet>> {
        config.validate()?;
        let manifest = load_manifest(&config.manifest)?;
        let spec = manifest.task_spec.clone();

        let run_dir = config.workspace.join(config.resolved_run_id());
        std::fs::create_dir_all(&run_dir)?;
        let gateway = Gateway::new(
            config.endpoint_set()?,
            Arc::clone(&self.backend),
            Arc::clone(&self.clock),
        )?;
        let engine = PreQuestionEngine::new(&gateway, config.pregen_mode)
            .with_cache_dir(&run_dir.join("pregen"))?;
        let generator_id = config.generator_endpoint_id()?;

        let targets: Vec<(PregenScope, String)> = match spec.pregen_policy {
            PregenPolicy::PerDataset => vec![(
                PregenScope::Dataset {
                    task_id: spec.task_id.clone(),
                },
                String::new(),
            )],
            PregenPolicy::PerInstance => resolve_sample(&manifest, config)
                .into_iter()
                .map(|instance| {
                    (
                        PregenScope::Instance {
                            instance_id: instance.instance_id.clone(),
                        },
                        instance.query,
                    )
                })
                .collect(),
        };
        let mut sets = Vec::with_capacity(targets.len());
        for (scope, query) in targets {
            let key = PregenKey {
                task_id: spec.task_id.clone(),
                scope,
                template_version: config.template_version,
                m: config.m,
                generator_endpoint_id: generator_id.clone(),
                seed: config.seed,
            };
            sets.push(engine.get_or_generate(&key, &spec.task_instruction, &query)?);
        }
        Ok(sets)
    }

    /// Re-run the same config once per pre-question count.
    pub fn ablate_m(&self, base: &RunConfig, ms: &[usize]) -> Result<Vec<RunReport>> {
        if ms.is_empty() {
            return Err(QvixError::Config("ablation needs at least one m value".into()));
        }
        ms.iter()
            .map(|&m| {
                let mut config = base.clone();
                config.m = m;
                config.run_id = None;
                self.run_experiment(&config)
            })
            .collect()
    }

    /// Re-run the same config once per generation-prompt version.
    pub fn ablate_prompt_version(
        &self,
        base: &RunConfig,
        versions: &[TemplateVersion],
    ) -> Result<Vec<RunReport>> {
        if versions.is_empty() {
            return Err(QvixError::Config(
                "ablation needs at least one prompt version".into(),
            ));
        }
        versions
            .iter()
            .map(|&version| {
                let mut config = base.clone();
                config.template_version = version;
                config.run_id = None;
                self.run_experiment(&config)
            })
            .collect()
    }
}

/// Sampled subset with image references resolved to absolute paths.
fn resolve_sample(manifest: &Manifest, config: &RunConfig) -> Vec<Instance> {
    sample(manifest, config.sample_n, config.seed)
        .into_iter()
        .map(|mut instance| {
            let resolved = manifest.resolve_image(&instance);
            instance.image_ref = resolved.to_string_lossy().into_owned();
            instance
        })
        .collect()
}

/// The option list each instance is prompted with. Multichoice uses the
/// instance's own options, entailment the fixed three-way labels, and
/// classification a shortlist of the label schema ranked against the image.
/// A failed shortlist becomes a per-instance error, not a run failure.
/// Returns the options plus, for classification, the gold-label recall of
/// the shortlists (misses and failures both count against it).
#[allow(clippy::type_complexity)]
fn resolve_options(
    gateway: &Gateway,
    manifest: &Manifest,
    config: &RunConfig,
    sampled: &[Instance],
) -> Result<(Vec<std::result::Result<Vec<String>, String>>, Option<f64>)> {
    let spec = &manifest.task_spec;
    match spec.kind {
        TaskKind::VqaMultichoice => Ok((
            sampled
                .iter()
                .map(|i| Ok(i.options.clone().unwrap_or_default()))
                .collect(),
            None,
        )),
        TaskKind::Entailment => {
            let fixed: Vec<String> = ENTAILMENT_OPTIONS.iter().map(|s| s.to_string()).collect();
            Ok((sampled.iter().map(|_| Ok(fixed.clone())).collect(), None))
        }
        TaskKind::Classification => {
            let shortlist = config
                .shortlist
                .as_ref()
                .expect("validate_for guarantees a shortlist section");
            let schema = spec
                .label_schema
                .as_ref()
                .expect("classification specs always carry a schema");
            let source: Box<dyn VectorSource> = match &shortlist.sidecar {
                Some(sidecar) => Box::new(SidecarSource::new(EmbeddingStore::from_sidecar(
                    &manifest.root.join(sidecar),
                )?)),
                None => {
                    let embedder = config.endpoints.embedder.as_ref().expect(
                        "validate_for guarantees an embedder when there is no sidecar",
                    );
                    Box::new(EndpointSource::new(
                        gateway,
                        &embedder.endpoint_id,
                        &shortlist.label_template,
                    ))
                }
            };
            let mut options = Vec::with_capacity(sampled.len());
            let mut gold_hits = 0usize;
            for instance in sampled {
                match shortlist_labels(&instance.image_ref, schema, shortlist.k, source.as_ref())
                {
                    Ok(labels) => {
                        if labels.contains(&instance.gold) {
                            gold_hits += 1;
                        }
                        options.push(Ok(labels));
                    }
                    Err(error) => options.push(Err(error.to_string())),
                }
            }
            let recall = gold_hits as f64 / sampled.len() as f64;
            Ok((options, Some(recall)))
        }
    }
}

struct TrialContext<'a> {
    gateway: &'a Gateway,
    engine: &'a PreQuestionEngine<'a>,
    spec: &'a TaskSpec,
    condition: Condition,
    reasoner_id: &'a str,
    generator_id: Option<&'a str>,
    template_version: TemplateVersion,
    m: usize,
    generation_seed: u64,
}

/// Elicit the raw answer text for one instance under the trial's condition.
/// Fingerprints of every reasoner request go into `fingerprints` in call
/// order; the two-stage condition also surfaces its intermediate rationale.
fn answer_text(
    context: &TrialContext,
    instance: &Instance,
    options: &[String],
    fingerprints: &mut Vec<String>,
    rationale: &mut Option<String>,
) -> Result<String> {
    match context.condition {
        Condition::Baseline => {
            let bundle = render_baseline_prompt(instance, context.spec, options)?;
            let reply = context.gateway.complete_multimodal(context.reasoner_id, &bundle)?;
            fingerprints.push(reply.fingerprint);
            Ok(reply.text)
        }
        Condition::Qvix => {
            let (scope, query) = match context.spec.pregen_policy {
                PregenPolicy::PerDataset => (
                    PregenScope::Dataset {
                        task_id: context.spec.task_id.clone(),
                    },
                    String::new(),
                ),
                PregenPolicy::PerInstance => (
                    PregenScope::Instance {
                        instance_id: instance.instance_id.clone(),
                    },
                    instance.query.clone(),
                ),
            };
            let key = PregenKey {
                task_id: context.spec.task_id.clone(),
                scope,
                template_version: context.template_version,
                m: context.m,
                generator_endpoint_id: context
                    .generator_id
                    .expect("qvix runs always resolve a generator")
                    .to_string(),
                seed: context.generation_seed,
            };
            let set = context
                .engine
                .get_or_generate(&key, &context.spec.task_instruction, &query)?;
            let bundle =
                render_reasoning_prompt(instance, context.spec, &set.questions, options)?;
            let reply = context.gateway.complete_multimodal(context.reasoner_id, &bundle)?;
            fingerprints.push(reply.fingerprint);
            Ok(reply.text)
        }
        Condition::Cot => {
            let stage_one = render_cot_rationale_prompt(instance, context.spec, options)?;
            let first = context.gateway.complete_multimodal(context.reasoner_id, &stage_one)?;
            fingerprints.push(first.fingerprint);
            // An empty rationale fails stage two and scores as an error.
            let stage_two =
                render_cot_answer_prompt(instance, context.spec, options, &first.text)?;
            *rationale = Some(first.text);
            let second = context.gateway.complete_multimodal(context.reasoner_id, &stage_two)?;
            fingerprints.push(second.fingerprint);
            Ok(second.text)
        }
    }
}

/// Evaluate one instance to a verdict. Failures anywhere in the pipeline
/// (shortlist, generation, endpoint, composition) become error verdicts
/// that score as incorrect; they never abort the run.
fn evaluate_instance(
    context: &TrialContext,
    instance: &Instance,
    options: &std::result::Result<Vec<String>, String>,
) -> Verdict {
    let mut fingerprints = Vec::new();
    let mut rationale = None;
    let outcome = options
        .as_ref()
        .map_err(|message| QvixError::Invalid(message.clone()))
        .and_then(|options| {
            answer_text(context, instance, options, &mut fingerprints, &mut rationale)
                .map(|raw| (raw, options))
        });
    match outcome {
        Ok((raw, options)) => {
            let extracted = extract_answer(&raw, options, context.spec.kind);
            let correct = judge(extracted.as_deref(), &instance.gold);
            Verdict {
                instance_id: instance.instance_id.clone(),
                condition: context.condition,
                raw_response: raw,
                rationale,
                extracted,
                correct,
                request_fingerprints: fingerprints,
                tags: instance.tags.clone(),
                error: None,
            }
        }
        Err(error) => Verdict {
            instance_id: instance.instance_id.clone(),
            condition: context.condition,
            raw_response: String::new(),
            rationale,
            extracted: None,
            correct: false,
            request_fingerprints: fingerprints,
            tags: instance.tags.clone(),
            error: Some(error.to_string()),
        },
    }
}

/// Apply `f` to every index with a fixed-size worker pool, preserving input
/// order in the output. Work is pulled from a shared counter, so results
/// never depend on which worker ran which index.
fn parallel_map<T, F>(count: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if count == 0 {
        return Vec::new();
    }
    let workers = workers.clamp(1, count);
    if workers == 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..count).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= count {
                    break;
                }
                let value = f(index);
                *slots[index].lock().unwrap() = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .unwrap()
                .expect("every index below count is visited exactly once")
        })
        .collect()
}

//! Staged orchestration with content-addressed caching.
//!
//! Each stage writes into its own directory under the output root:
//!
//! ```text
//! out/
//!   run_manifest.json
//!   classify/   stage.json classifications.jsonl outcome.json
//!   assess/     stage.json estimates.jsonl outcome.json
//!   partition/  stage.json partition.json
//!   report/     stage.json bundle.json <event>_<cell>_<tag>.txt ...
//!   evaluate/   stage.json metrics.json
//! ```
//!
//! A stage's cache key hashes its config slice, its raw inputs and the
//! artifact digest of the stages it reads. A stage is reused only when the
//! key in its `stage.json` matches and its files still hash to the recorded
//! digest.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classification::{classify_corpus, ClassifyError, ClassifyOptions, SaClassification};
use crate::corpus::{
    parse_corpus, parse_schema, CorpusError, EventError, EventMeta, Schema, SchemaError, Tweet, DEFAULT_SCHEMA,
};
use crate::evaluation::{evaluate_event, EmbeddingConfig, Embedder, EvalError, EventMetrics};
use crate::gateway::{
    BackendConfig, BackendKind, ChatBackend, CompletionRequest, CompletionResponse, GatewayError, RepairLevel,
};
use crate::partition::{partition_corpus, PartitionManifest, QuadrantTag, ThresholdError, Thresholds};
use crate::prompts;
use crate::proxy::{self, ProxyError, ProxyTable};
use crate::reporting::{generate_reports, ReportBundle, ReportError, ReportOptions, ReportStatus};
use crate::uncertainty::{assess_corpus, AssessError, AssessItem, SamplingOptions, UncertaintyEstimate, DEFAULT_TEMPERATURES};

pub const MANIFEST_FILE: &str = "run_manifest.json";
const STAGE_FILE: &str = "stage.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Classify,
    Assess,
    Partition,
    Report,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Classify, Stage::Assess, Stage::Partition, Stage::Report, Stage::Evaluate];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Classify => "classify",
            Stage::Assess => "assess",
            Stage::Partition => "partition",
            Stage::Report => "report",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn upstream(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|s| *s == self).expect("listed");
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Thresholds(#[from] ThresholdError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Assess(#[from] AssessError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("stage {required_by} needs a valid {stage} cache; run {stage} first")]
    MissingPrerequisite { stage: Stage, required_by: Stage },
    #[error("stage {stage} failed: {reason}")]
    StageFailed { stage: Stage, reason: String },
    #[error("cached artifact in {path} is unreadable: {reason}")]
    CorruptArtifact { path: PathBuf, reason: String },
    #[error("no readable run manifest at {path}")]
    MissingManifest { path: PathBuf },
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "Config",
            PipelineError::Io { .. } => "Io",
            PipelineError::Corpus(_) => "Corpus",
            PipelineError::Schema(_) => "Schema",
            PipelineError::Proxy(_) => "Proxy",
            PipelineError::Event(_) => "Event",
            PipelineError::Thresholds(_) => "Thresholds",
            PipelineError::Gateway(_) => "Gateway",
            PipelineError::Classify(_) => "Classify",
            PipelineError::Assess(_) => "Assess",
            PipelineError::Report(_) => "Report",
            PipelineError::Eval(_) => "Eval",
            PipelineError::MissingPrerequisite { .. } => "MissingPrerequisite",
            PipelineError::StageFailed { .. } => "StageFailed",
            PipelineError::CorruptArtifact { .. } => "CorruptArtifact",
            PipelineError::MissingManifest { .. } => "MissingManifest",
        }
    }

    /// Machine-readable form for error reports on stderr.
    pub fn to_json(&self) -> Value {
        let mut v = json!({"error": self.kind(), "message": self.to_string()});
        match self {
            PipelineError::MissingPrerequisite { stage, required_by } => {
                v["stage"] = json!(stage);
                v["required_by"] = json!(required_by);
            }
            PipelineError::StageFailed { stage, .. } => v["stage"] = json!(stage),
            PipelineError::MissingManifest { path } | PipelineError::CorruptArtifact { path, .. } | PipelineError::Io { path, .. } => {
                v["path"] = json!(path)
            }
            _ => {}
        }
        v
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_temperatures() -> Vec<f64> {
    DEFAULT_TEMPERATURES.to_vec()
}
fn default_repeats() -> u32 {
    1
}
fn default_batch() -> usize {
    10
}
fn default_bin_width() -> f64 {
    10.0
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_cap() -> usize {
    200
}

/// Run configuration, usually read from TOML. Relative paths resolve against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Explicit event metadata; overrides the bundled event's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<EventMeta>,
    /// Key of a bundled event and proxy table, e.g. `"fukushima_2021"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundled_event: Option<String>,
    pub corpus_path: PathBuf,
    /// Defaults to the bundled six-category schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_path: Option<PathBuf>,
    /// Defaults to the bundled table of `bundled_event`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_path: Option<PathBuf>,
    #[serde(default = "BackendConfig::mock")]
    pub backend: BackendConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    /// Samples per temperature; total samples per post is
    /// `temperatures.len() * repeats_per_temperature`.
    #[serde(default = "default_repeats")]
    pub repeats_per_temperature: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub repair_level: RepairLevel,
    /// Skip assessment of posts classified into no category.
    #[serde(default)]
    pub drop_unlabeled: bool,
    /// Most posts per report prompt.
    #[serde(default = "default_cap")]
    pub report_cap: usize,
    #[serde(default)]
    pub report_temperature: f64,
}

impl RunConfig {
    /// A mock-backed config over the given corpus and bundled event.
    pub fn new(corpus_path: impl Into<PathBuf>, bundled_event: &str, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            event: None,
            bundled_event: Some(bundled_event.to_string()),
            corpus_path: corpus_path.into(),
            schema_path: None,
            proxy_path: None,
            backend: BackendConfig::mock(),
            embedding: EmbeddingConfig::default(),
            temperatures: default_temperatures(),
            repeats_per_temperature: default_repeats(),
            batch_size: default_batch(),
            thresholds: Thresholds::default(),
            bin_width: default_bin_width(),
            output_dir: output_dir.into(),
            repair_level: RepairLevel::default(),
            drop_unlabeled: false,
            report_cap: default_cap(),
            report_temperature: 0.0,
        }
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus_path);
        fix(&mut self.output_dir);
        for p in [&mut self.schema_path, &mut self.proxy_path, &mut self.backend.fixture_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    /// Applies `SITREP_ENDPOINT`, `SITREP_MODEL`, `SITREP_API_KEY`,
    /// `SITREP_EMBED_ENDPOINT` and `SITREP_EMBED_MODEL` to live backends.
    pub fn apply_env(&mut self) {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if self.backend.kind == BackendKind::Live {
            if let Some(v) = var("SITREP_ENDPOINT") {
                self.backend.endpoint = Some(v);
            }
            if let Some(v) = var("SITREP_MODEL") {
                self.backend.model_name = Some(v);
            }
            if self.backend.api_key_env.is_none() && var("SITREP_API_KEY").is_some() {
                self.backend.api_key_env = Some("SITREP_API_KEY".into());
            }
        }
        if self.embedding.kind == BackendKind::Live {
            if let Some(v) = var("SITREP_EMBED_ENDPOINT") {
                self.embedding.endpoint = Some(v);
            }
            if let Some(v) = var("SITREP_EMBED_MODEL") {
                self.embedding.model_name = Some(v);
            }
            if self.embedding.api_key_env.is_none() && var("SITREP_API_KEY").is_some() {
                self.embedding.api_key_env = Some("SITREP_API_KEY".into());
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.into()));
        if self.event.is_none() && self.bundled_event.is_none() {
            return bad("either event or bundled_event is required");
        }
        if self.proxy_path.is_none() && self.bundled_event.is_none() {
            return bad("either proxy_path or bundled_event is required");
        }
        if let Some(key) = &self.bundled_event {
            if !proxy::BUNDLED.iter().any(|b| b.key == key) {
                return Err(PipelineError::Config(format!("unknown bundled_event {key:?}")));
            }
        }
        if self.temperatures.is_empty() {
            return bad("temperatures must not be empty");
        }
        if self.temperatures.iter().any(|t| !(0.0..=2.0).contains(t)) {
            return bad("temperatures must lie in [0, 2]");
        }
        if self.repeats_per_temperature == 0 {
            return bad("repeats_per_temperature must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.report_cap == 0 {
            return bad("report_cap must be at least 1");
        }
        if !(self.bin_width > 0.0 && self.bin_width <= 100.0) {
            return Err(EvalError::InvalidBinWidth(self.bin_width).into());
        }
        self.thresholds.validate()?;
        self.backend.validate()?;
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.temperatures.len() * self.repeats_per_temperature as usize
    }
}

/// Loaded raw inputs plus their digests.
struct Inputs {
    event: EventMeta,
    corpus: Vec<Tweet>,
    corpus_digest: String,
    schema: Schema,
    schema_digest: String,
    proxy: ProxyTable,
    proxy_digest: String,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs, PipelineError> {
    let bundled = cfg.bundled_event.as_deref().and_then(proxy::bundled);
    let event = match (&cfg.event, &bundled) {
        (Some(e), _) => e.clone(),
        (None, Some((e, _))) => e.clone(),
        (None, None) => return Err(PipelineError::Config("no event metadata".into())),
    };
    event.validate()?;
    let schema_text = match &cfg.schema_path {
        Some(p) => read(p)?,
        None => DEFAULT_SCHEMA.to_string(),
    };
    let schema = parse_schema(&schema_text)?;
    let corpus_text = read(&cfg.corpus_path)?;
    let corpus = parse_corpus(&corpus_text, &schema)?;
    let proxy_text = match &cfg.proxy_path {
        Some(p) => read(p)?,
        None => {
            let key = cfg.bundled_event.as_deref().unwrap_or_default();
            proxy::BUNDLED.iter().find(|b| b.key == key).expect("validated").table.to_string()
        }
    };
    let proxy = ProxyTable::parse(&proxy_text, &event)?;
    Ok(Inputs {
        event,
        corpus,
        corpus_digest: digest(corpus_text.as_bytes()),
        schema,
        schema_digest: digest(schema_text.as_bytes()),
        proxy,
        proxy_digest: digest(proxy_text.as_bytes()),
    })
}

/// Digest of every file in `dir` except `stage.json`, by sorted name.
fn dir_digest(dir: &Path) -> Result<String, PipelineError> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != STAGE_FILE)
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for n in names {
        let path = dir.join(&n);
        h.update(n.as_bytes());
        h.update([0]);
        h.update(std::fs::read(&path).map_err(io_err(&path))?);
        h.update([0]);
    }
    Ok(hex::encode(h.finalize()))
}

fn key_of(stage: Stage, parts: Value) -> String {
    let text = serde_json::to_string(&json!({"stage": stage, "parts": parts})).expect("json");
    digest(text.as_bytes())
}

fn backend_slice(cfg: &BackendConfig) -> Result<Value, PipelineError> {
    let fixtures = match &cfg.fixture_dir {
        Some(d) if d.is_dir() => Some(dir_digest(d)?),
        Some(d) => Some(format!("missing:{}", d.display())),
        None => None,
    };
    Ok(json!({
        "kind": cfg.kind,
        "endpoint": cfg.endpoint,
        "model": cfg.model_name,
        "synthetic": cfg.synthetic,
        "fixtures": fixtures,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageInfo {
    pub stage: Stage,
    pub content_hash: String,
    pub artifact_digest: String,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub content_hash: String,
    pub artifact_digest: String,
    pub cache_hit: bool,
    pub counts: BTreeMap<String, usize>,
    pub wall_clock_secs: f64,
    #[serde(default)]
    pub cost: StageCost,
}

/// Chat backend traffic of one stage execution. Zero on a cache hit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCost {
    pub backend_calls: u64,
    pub failed_calls: u64,
    /// Absent unless every successful call reported token counts.
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Default)]
struct Meter {
    calls: AtomicU64,
    failed: AtomicU64,
    prompt: AtomicU64,
    completion: AtomicU64,
    unreported: AtomicBool,
}

impl Meter {
    fn take(&self) -> StageCost {
        let calls = self.calls.swap(0, Ordering::SeqCst);
        let failed = self.failed.swap(0, Ordering::SeqCst);
        let prompt = self.prompt.swap(0, Ordering::SeqCst);
        let completion = self.completion.swap(0, Ordering::SeqCst);
        let reported = !self.unreported.swap(false, Ordering::SeqCst) && calls > failed;
        StageCost {
            backend_calls: calls,
            failed_calls: failed,
            prompt_tokens: reported.then_some(prompt),
            completion_tokens: reported.then_some(completion),
        }
    }
}

struct Metered {
    inner: Arc<dyn ChatBackend>,
    meter: Arc<Meter>,
}

impl ChatBackend for Metered {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let m = &self.meter;
        m.calls.fetch_add(1, Ordering::SeqCst);
        let result = self.inner.complete(request);
        match &result {
            Ok(r) => match r.usage {
                Some(u) => {
                    m.prompt.fetch_add(u.prompt_tokens, Ordering::SeqCst);
                    m.completion.fetch_add(u.completion_tokens, Ordering::SeqCst);
                }
                None => m.unreported.store(true, Ordering::SeqCst),
            },
            Err(_) => {
                m.failed.fetch_add(1, Ordering::SeqCst);
            }
        }
        result
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub event: String,
    /// Config as run, without `output_dir`.
    pub config: Value,
    pub sample_count: usize,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ClassifyArtifact {
    unprocessed: Vec<String>,
    failed_batches: usize,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct AssessArtifact {
    unprocessed: Vec<String>,
    dropped_unlabeled: Vec<String>,
    degraded: usize,
    calls: usize,
    failed_calls: usize,
    warnings: Vec<String>,
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut out = String::new();
    for i in items {
        out.push_str(&serde_json::to_string(i).expect("serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("serializes") + "\n";
    std::fs::write(path, text).map_err(io_err(path))
}

fn corrupt(path: &Path, reason: impl fmt::Display) -> PipelineError {
    PipelineError::CorruptArtifact {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| corrupt(path, e)))
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_str(&read(path)?).map_err(|e| corrupt(path, e))
}

/// Artifacts produced or loaded so far in a run.
#[derive(Default)]
struct State {
    classifications: Option<Vec<SaClassification>>,
    estimates: Option<Vec<UncertaintyEstimate>>,
    partition: Option<PartitionManifest>,
    bundle: Option<ReportBundle>,
    metrics: Option<EventMetrics>,
    digests: HashMap<Stage, String>,
    warnings: Vec<String>,
}

/// Runs stages against a configuration. Backends are built from the config
/// on first use unless injected.
pub struct Pipeline {
    config: RunConfig,
    backend: Option<Arc<dyn ChatBackend>>,
    embedder: Option<Arc<dyn Embedder>>,
    meter: Arc<Meter>,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Self {
        Pipeline {
            config,
            backend: None,
            embedder: None,
            meter: Arc::default(),
        }
    }

    pub fn with_backend(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn backend(&mut self) -> Result<Arc<dyn ChatBackend>, PipelineError> {
        if self.backend.is_none() {
            self.backend = Some(self.config.backend.build()?);
        }
        Ok(Arc::new(Metered {
            inner: self.backend.clone().expect("set above"),
            meter: self.meter.clone(),
        }))
    }

    fn embedder(&mut self) -> Result<Arc<dyn Embedder>, PipelineError> {
        if self.embedder.is_none() {
            self.embedder = Some(Arc::from(self.config.embedding.build()?));
        }
        Ok(self.embedder.clone().expect("set above"))
    }

    /// Runs every stage.
    pub fn run_all(&mut self) -> Result<RunSummary, PipelineError> {
        self.run(&Stage::ALL.into_iter().collect())
    }

    /// Runs the requested stages in order. Stages before the last requested
    /// one that are not requested must already be cached.
    pub fn run(&mut self, stages: &BTreeSet<Stage>) -> Result<RunSummary, PipelineError> {
        self.config.validate()?;
        let last = *stages
            .iter()
            .max()
            .ok_or_else(|| PipelineError::Config("no stages requested".into()))?;
        let inputs = load_inputs(&self.config)?;
        let out = self.config.output_dir.clone();
        std::fs::create_dir_all(&out).map_err(io_err(&out))?;
        let backend_slice = backend_slice(&self.config.backend)?;
        let mut state = State::default();
        let mut records = Vec::new();

        for stage in Stage::ALL.into_iter().take_while(|s| *s <= last) {
            let started = Instant::now();
            let dir = out.join(stage.as_str());
            let key = self.stage_key(stage, &inputs, &backend_slice, &state);
            let cached = cached_info(&dir, &key);
            self.meter.take();
            let (info, hit) = match cached {
                Some(info) => {
                    self.load_stage(stage, &dir, &mut state)?;
                    (info, true)
                }
                None if stages.contains(&stage) => {
                    if dir.exists() {
                        std::fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
                    }
                    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                    let counts = self.execute(stage, &dir, &inputs, &mut state)?;
                    let info = StageInfo {
                        stage,
                        content_hash: key,
                        artifact_digest: dir_digest(&dir)?,
                        counts,
                    };
                    write_json(&dir.join(STAGE_FILE), &info)?;
                    (info, false)
                }
                None => {
                    let required_by = *stages.iter().find(|s| **s > stage).expect("last is requested");
                    return Err(PipelineError::MissingPrerequisite {
                        stage: required_by.upstream().expect("not the first stage"),
                        required_by,
                    });
                }
            };
            if let Some(n) = info.counts.get("unprocessed").filter(|n| **n > 0) {
                state.warnings.push(format!("{stage}: {n} posts unprocessed"));
            }
            if let Some(n) = info.counts.get("failed").filter(|n| **n > 0) {
                state.warnings.push(format!("{stage}: {n} reports failed"));
            }
            if let Some(n) = info.counts.get("degraded").filter(|n| **n > 0) {
                state.warnings.push(format!("{stage}: {n} estimates built from fewer samples than configured"));
            }
            state.digests.insert(stage, info.artifact_digest.clone());
            records.push(StageRecord {
                stage,
                content_hash: info.content_hash,
                artifact_digest: info.artifact_digest,
                cache_hit: hit,
                counts: info.counts,
                wall_clock_secs: started.elapsed().as_secs_f64(),
                cost: self.meter.take(),
            });
        }

        let mut config = serde_json::to_value(&self.config).expect("config serializes");
        config.as_object_mut().expect("object").remove("output_dir");
        let manifest = RunManifest {
            event: inputs.event.name.clone(),
            config,
            sample_count: self.config.sample_count(),
            stages: records,
        };
        write_json(&out.join(MANIFEST_FILE), &manifest)?;
        Ok(RunSummary {
            manifest,
            warnings: state.warnings,
        })
    }

    fn stage_key(&self, stage: Stage, inputs: &Inputs, backend: &Value, state: &State) -> String {
        let c = &self.config;
        let up = |s: Stage| state.digests.get(&s).cloned();
        let parts = match stage {
            Stage::Classify => json!({
                "corpus": inputs.corpus_digest,
                "schema": inputs.schema_digest,
                "backend": backend,
                "batch_size": c.batch_size,
                "repair_level": c.repair_level,
                "template": digest(format!("{}{}{}", prompts::CLASSIFY_SYSTEM, prompts::CLASSIFY_USER, prompts::FORMATTING_RULES).as_bytes()),
            }),
            Stage::Assess => json!({
                "classify": up(Stage::Classify),
                "corpus": inputs.corpus_digest,
                "proxy": inputs.proxy_digest,
                "event": inputs.event,
                "backend": backend,
                "temperatures": c.temperatures,
                "repeats": c.repeats_per_temperature,
                "batch_size": c.batch_size,
                "repair_level": c.repair_level,
                "drop_unlabeled": c.drop_unlabeled,
                "template": digest(format!("{}{}{}", prompts::ASSESS_SYSTEM, prompts::ASSESS_USER, prompts::FORMATTING_RULES).as_bytes()),
            }),
            Stage::Partition => json!({
                "assess": up(Stage::Assess),
                "thresholds": c.thresholds,
            }),
            Stage::Report => json!({
                "assess": up(Stage::Assess),
                "partition": up(Stage::Partition),
                "corpus": inputs.corpus_digest,
                "event": inputs.event,
                "backend": backend,
                "cap": c.report_cap,
                "temperature": c.report_temperature,
                "template": digest(format!("{}{}", prompts::REPORT_SYSTEM, prompts::REPORT_USER).as_bytes()),
            }),
            Stage::Evaluate => json!({
                "assess": up(Stage::Assess),
                "report": up(Stage::Report),
                "bin_width": c.bin_width,
                "embedding": {
                    "kind": c.embedding.kind,
                    "endpoint": c.embedding.endpoint,
                    "model": c.embedding.model_name,
                    "dimension": c.embedding.dimension,
                },
            }),
        };
        key_of(stage, parts)
    }

    fn load_stage(&self, stage: Stage, dir: &Path, state: &mut State) -> Result<(), PipelineError> {
        match stage {
            Stage::Classify => state.classifications = Some(read_jsonl(&dir.join("classifications.jsonl"))?),
            Stage::Assess => state.estimates = Some(read_jsonl(&dir.join("estimates.jsonl"))?),
            Stage::Partition => state.partition = Some(read_json(&dir.join("partition.json"))?),
            Stage::Report => {
                state.bundle = Some(ReportBundle::read_from(dir).map_err(|e| corrupt(dir, e))?);
            }
            Stage::Evaluate => state.metrics = Some(read_json(&dir.join("metrics.json"))?),
        }
        Ok(())
    }

    fn execute(
        &mut self,
        stage: Stage,
        dir: &Path,
        inputs: &Inputs,
        state: &mut State,
    ) -> Result<BTreeMap<String, usize>, PipelineError> {
        let c = self.config.clone();
        let mut counts = BTreeMap::new();
        match stage {
            Stage::Classify => {
                let backend = self.backend()?;
                let opts = ClassifyOptions {
                    batch_size: c.batch_size,
                    repair_level: c.repair_level,
                    temperature: 0.0,
                    max_in_flight: c.backend.max_in_flight,
                };
                let out = classify_corpus(&inputs.corpus, &inputs.schema, backend.as_ref(), &opts);
                if out.classified.is_empty() {
                    return Err(PipelineError::StageFailed {
                        stage,
                        reason: format!(
                            "no post was classified ({} of {} batches failed)",
                            out.failed_batches,
                            inputs.corpus.len().div_ceil(c.batch_size)
                        ),
                    });
                }
                write_jsonl(&dir.join("classifications.jsonl"), &out.classified)?;
                write_json(
                    &dir.join("outcome.json"),
                    &ClassifyArtifact {
                        unprocessed: out.unprocessed.clone(),
                        failed_batches: out.failed_batches,
                        warnings: out.warnings.clone(),
                    },
                )?;
                counts.insert("input".into(), inputs.corpus.len());
                counts.insert("classified".into(), out.classified.len());
                counts.insert("unprocessed".into(), out.unprocessed.len());
                counts.insert(
                    "unlabeled".into(),
                    out.classified.iter().filter(|x| x.categories.is_empty()).count(),
                );
                state.classifications = Some(out.classified);
            }
            Stage::Assess => {
                let backend = self.backend()?;
                let classes = state.classifications.as_ref().expect("classify ran first");
                let by_id: HashMap<&str, &SaClassification> = classes.iter().map(|x| (x.tweet_id.as_str(), x)).collect();
                let mut dropped = Vec::new();
                let mut items = Vec::new();
                for t in &inputs.corpus {
                    let Some(cls) = by_id.get(t.id.as_str()) else { continue };
                    if c.drop_unlabeled && cls.categories.is_empty() {
                        dropped.push(t.id.clone());
                        continue;
                    }
                    items.push(AssessItem {
                        tweet: t,
                        classification: cls,
                    });
                }
                let opts = SamplingOptions {
                    temperatures: c.temperatures.clone(),
                    repeats_per_temperature: c.repeats_per_temperature,
                    repair_level: c.repair_level,
                    max_in_flight: c.backend.max_in_flight,
                };
                let out = assess_corpus(
                    &items,
                    |m| inputs.proxy.summary_for(m),
                    &inputs.event,
                    backend.as_ref(),
                    c.batch_size,
                    &opts,
                )?;
                if out.estimates.is_empty() {
                    return Err(PipelineError::StageFailed {
                        stage,
                        reason: format!("no post received a usable assessment ({} calls failed)", out.failed_calls),
                    });
                }
                let degraded = out.estimates.iter().filter(|e| e.degraded).count();
                write_jsonl(&dir.join("estimates.jsonl"), &out.estimates)?;
                write_json(
                    &dir.join("outcome.json"),
                    &AssessArtifact {
                        unprocessed: out.unprocessed.clone(),
                        dropped_unlabeled: dropped.clone(),
                        degraded,
                        calls: out.calls,
                        failed_calls: out.failed_calls,
                        warnings: out.warnings.clone(),
                    },
                )?;
                counts.insert("input".into(), items.len());
                counts.insert("estimates".into(), out.estimates.len());
                counts.insert("unprocessed".into(), out.unprocessed.len());
                counts.insert("dropped_unlabeled".into(), dropped.len());
                counts.insert("degraded".into(), degraded);
                counts.insert("calls".into(), out.calls);
                state.estimates = Some(out.estimates);
            }
            Stage::Partition => {
                let estimates = state.estimates.as_ref().expect("assess ran first");
                let manifest = partition_corpus(estimates, &c.thresholds);
                write_json(&dir.join("partition.json"), &manifest)?;
                for (tag, n) in &manifest.counts {
                    counts.insert(tag.to_string(), *n);
                }
                state.partition = Some(manifest);
            }
            Stage::Report => {
                let backend = self.backend()?;
                let opts = ReportOptions {
                    cap: c.report_cap,
                    temperature: c.report_temperature,
                    max_in_flight: c.backend.max_in_flight,
                };
                let bundle = generate_reports(
                    &inputs.event,
                    &inputs.corpus,
                    state.estimates.as_ref().expect("assess ran first"),
                    state.partition.as_ref().expect("partition ran first"),
                    backend.as_ref(),
                    &opts,
                )?;
                let (generated, skipped, failed) = (
                    bundle.count(ReportStatus::Generated),
                    bundle.count(ReportStatus::Skipped),
                    bundle.count(ReportStatus::Failed),
                );
                if generated == 0 && failed > 0 {
                    return Err(PipelineError::StageFailed {
                        stage,
                        reason: format!("all {failed} report requests failed"),
                    });
                }
                bundle.write_to(dir)?;
                counts.insert("cells".into(), bundle.cells().len());
                counts.insert("generated".into(), generated);
                counts.insert("skipped".into(), skipped);
                counts.insert("failed".into(), failed);
                state.bundle = Some(bundle);
            }
            Stage::Evaluate => {
                let embedder = self.embedder()?;
                let metrics = evaluate_event(
                    state.estimates.as_ref().expect("assess ran first"),
                    state.bundle.as_ref().expect("report ran first"),
                    embedder.as_ref(),
                    c.bin_width,
                )?;
                write_json(&dir.join("metrics.json"), &metrics)?;
                counts.insert("cells".into(), metrics.cells.len());
                counts.insert("excluded".into(), metrics.excluded.len());
                state.metrics = Some(metrics);
            }
        }
        Ok(counts)
    }
}

/// The cached stage info when `dir` holds a complete artifact for `key`.
fn cached_info(dir: &Path, key: &str) -> Option<StageInfo> {
    let info: StageInfo = serde_json::from_str(&std::fs::read_to_string(dir.join(STAGE_FILE)).ok()?).ok()?;
    (info.content_hash == key && dir_digest(dir).ok()? == info.artifact_digest).then_some(info)
}

/// Renders a fixed-layout text summary of a finished run.
pub fn inspect(output_dir: &Path) -> Result<String, PipelineError> {
    let path = output_dir.join(MANIFEST_FILE);
    let missing = || PipelineError::MissingManifest { path: path.clone() };
    let manifest: RunManifest = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .ok_or_else(missing)?;

    let mut s = String::new();
    writeln!(s, "event: {}", manifest.event).unwrap();
    writeln!(s, "samples per post: {}", manifest.sample_count).unwrap();
    writeln!(s).unwrap();
    writeln!(s, "{:<10} {:<6} {:<12} {:>9} {:>6} {:>10}", "stage", "cache", "hash", "seconds", "calls", "tokens").unwrap();
    for r in &manifest.stages {
        writeln!(
            s,
            "{:<10} {:<6} {:<12} {:>9.3} {:>6} {:>10}",
            r.stage.as_str(),
            if r.cache_hit { "hit" } else { "miss" },
            &r.content_hash[..12.min(r.content_hash.len())],
            r.wall_clock_secs,
            r.cost.backend_calls,
            match (r.cost.prompt_tokens, r.cost.completion_tokens) {
                (Some(p), Some(c)) => (p + c).to_string(),
                _ => "-".into(),
            }
        )
        .unwrap();
    }

    let partition: Option<PartitionManifest> = read_json(&output_dir.join("partition/partition.json")).ok();
    if let Some(p) = &partition {
        writeln!(s).unwrap();
        let t = &p.thresholds;
        let op = if t.inclusive { ">=" } else { ">" };
        writeln!(
            s,
            "quadrants (high: l {op} {}, c {op} {})",
            t.likert_boundary, t.confidence_boundary
        )
        .unwrap();
        for tag in QuadrantTag::QUADRANTS {
            writeln!(s, "  {tag}: {}", p.counts.get(&tag).copied().unwrap_or(0)).unwrap();
        }
    }

    if let Ok(bundle) = ReportBundle::read_from(&output_dir.join("report")) {
        for cell in bundle.cells() {
            writeln!(s).unwrap();
            writeln!(s, "cell {cell}").unwrap();
            for tag in QuadrantTag::ALL {
                let Some(r) = bundle.get(cell, tag) else { continue };
                let status = match r.status {
                    ReportStatus::Generated => "generated",
                    ReportStatus::Skipped => "skipped",
                    ReportStatus::Failed => "failed",
                };
                writeln!(s, "  {tag}: {} ({status})", r.tweet_count).unwrap();
            }
        }
        writeln!(s).unwrap();
        writeln!(
            s,
            "reports: {} generated, {} skipped, {} failed",
            bundle.count(ReportStatus::Generated),
            bundle.count(ReportStatus::Skipped),
            bundle.count(ReportStatus::Failed)
        )
        .unwrap();
    }

    if let Ok(m) = read_json::<EventMetrics>(&output_dir.join("evaluate/metrics.json")) {
        writeln!(s).unwrap();
        writeln!(s, "H(L) = {:.4} bits", m.likert_entropy_bits).unwrap();
        writeln!(
            s,
            "H(C) = {:.4} bits (bin width {})",
            m.confidence_entropy_bits, m.distribution.bin_width
        )
        .unwrap();
    }
    Ok(s)
}

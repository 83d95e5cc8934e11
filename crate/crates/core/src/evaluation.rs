//! Entropy of the uncertainty distribution and embedding-based report
//! metrics.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::gateway::{api_key_from_env, join_endpoint, BackendKind, GatewayError, HttpJson};
use crate::partition::QuadrantTag;
use crate::reporting::{ReportBundle, ReportStatus};
use crate::uncertainty::UncertaintyEstimate;

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no uncertainty estimates to summarize")]
    EmptyEstimates,
    #[error("bin width {0} must be in (0, 100]")]
    InvalidBinWidth(f64),
    #[error("not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least two reports, got {0}")]
    TooFewReports(usize),
    #[error("need at least two sentences, got {0}")]
    TooFewSentences(usize),
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy_bits(probabilities: &[f64]) -> Result<f64, EvalError> {
    if probabilities.is_empty() {
        return Err(EvalError::NotADistribution("empty".into()));
    }
    if let Some(p) = probabilities.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(EvalError::NotADistribution(format!("entry {p}")));
    }
    let sum: f64 = probabilities.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(EvalError::NotADistribution(format!("sums to {sum}")));
    }
    let h: f64 = probabilities
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.log2())
        .sum();
    Ok(h.max(0.0))
}

/// Empirical distributions of the aggregated scores. Likert has five bins;
/// confidence has `ceil(100 / bin_width)` half-open bins with the last one
/// closed at 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyDistribution {
    pub total: usize,
    pub bin_width: f64,
    pub likert_counts: [usize; 5],
    pub confidence_counts: Vec<usize>,
}

pub fn confidence_bin(confidence: f64, bin_width: f64) -> usize {
    let bins = (100.0 / bin_width).ceil() as usize;
    ((confidence.clamp(0.0, 100.0) / bin_width).floor() as usize).min(bins - 1)
}

pub fn build_distribution(estimates: &[UncertaintyEstimate], bin_width: f64) -> Result<UncertaintyDistribution, EvalError> {
    if !(bin_width > 0.0 && bin_width <= 100.0) {
        return Err(EvalError::InvalidBinWidth(bin_width));
    }
    if estimates.is_empty() {
        return Err(EvalError::EmptyEstimates);
    }
    let mut likert_counts = [0; 5];
    let mut confidence_counts = vec![0; (100.0 / bin_width).ceil() as usize];
    for e in estimates {
        likert_counts[(e.likert.clamp(1, 5) - 1) as usize] += 1;
        confidence_counts[confidence_bin(e.confidence, bin_width)] += 1;
    }
    Ok(UncertaintyDistribution {
        total: estimates.len(),
        bin_width,
        likert_counts,
        confidence_counts,
    })
}

fn normalize(counts: &[usize], total: usize) -> Vec<f64> {
    counts.iter().map(|c| *c as f64 / total as f64).collect()
}

impl UncertaintyDistribution {
    pub fn likert_probabilities(&self) -> Vec<f64> {
        normalize(&self.likert_counts, self.total)
    }

    pub fn confidence_probabilities(&self) -> Vec<f64> {
        normalize(&self.confidence_counts, self.total)
    }

    pub fn likert_entropy(&self) -> f64 {
        entropy_bits(&self.likert_probabilities()).expect("counts normalize")
    }

    pub fn confidence_entropy(&self) -> f64 {
        entropy_bits(&self.confidence_probabilities()).expect("counts normalize")
    }
}

/// Turns texts into fixed-length vectors.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError>;
    fn id(&self) -> String;
}

/// Offline embedder: signed feature hashing of lowercase words and padded
/// character trigrams. Deterministic and dependency-free.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dimension: usize,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder { dimension: 256 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl MockEmbedder {
    fn add(&self, v: &mut [f64], feature: &str, weight: f64) {
        let h = fnv1a(feature.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % self.dimension as u64) as usize] += sign * weight;
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension.max(1)];
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            self.add(&mut v, &format!("w:{word}"), 1.0);
            let padded: Vec<char> = format!(" {word} ").chars().collect();
            for tri in padded.windows(3) {
                self.add(&mut v, &format!("c:{}", tri.iter().collect::<String>()), 0.5);
            }
        }
        v
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn id(&self) -> String {
        format!("mock-embed:{}", self.dimension)
    }
}

/// Client for the `/embeddings` JSON protocol.
#[derive(Clone)]
pub struct LiveEmbedder {
    http: HttpJson,
    url: String,
    model: String,
}

impl LiveEmbedder {
    pub fn from_config(config: &EmbeddingConfig) -> Result<Self, EvalError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| GatewayError::InvalidConfig("live embedder needs an endpoint".into()))?;
        let model = config
            .model_name
            .clone()
            .ok_or_else(|| GatewayError::InvalidConfig("live embedder needs a model_name".into()))?;
        Ok(LiveEmbedder {
            http: HttpJson::new(
                Duration::from_secs(config.timeout_secs),
                api_key_from_env(config.api_key_env.as_deref()),
                config.max_retries,
                Duration::from_millis(500),
            ),
            url: join_endpoint(endpoint, "/embeddings"),
            model,
        })
    }
}

impl Embedder for LiveEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let reply = self.http.post(&self.url, &json!({"model": self.model, "input": texts}))?;
        let data = reply
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| EvalError::Embedding("response has no data array".into()))?;
        let mut out = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let vec: Option<Vec<f64>> = item
                .get("embedding")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(Value::as_f64).collect());
            match (out.get_mut(idx), vec) {
                (Some(slot), Some(v)) => *slot = Some(v),
                _ => return Err(EvalError::Embedding(format!("bad embedding entry {pos}"))),
            }
        }
        out.into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| EvalError::Embedding("fewer embeddings than inputs".into()))
    }

    fn id(&self) -> String {
        format!("live-embed:{}@{}", self.model, self.url)
    }
}

fn default_dimension() -> usize {
    256
}
fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Vector length for the mock embedder.
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: None,
            api_key_env: None,
            dimension: default_dimension(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
        }
    }
}

impl EmbeddingConfig {
    pub fn build(&self) -> Result<Box<dyn Embedder>, EvalError> {
        Ok(match self.kind {
            BackendKind::Mock => Box::new(MockEmbedder {
                dimension: self.dimension.max(1),
            }),
            BackendKind::Live => Box::new(LiveEmbedder::from_config(self)?),
        })
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine over all unordered pairs.
pub fn mean_pairwise_cosine(vectors: &[Vec<f64>]) -> Result<f64, EvalError> {
    if vectors.len() < 2 {
        return Err(EvalError::TooFewSentences(vectors.len()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            sum += cosine(&vectors[i], &vectors[j])?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Mean pairwise cosine between a report's sentences. Undefined below two
/// sentences.
pub fn internal_consistency(sentences: &[String], embedder: &dyn Embedder) -> Result<f64, EvalError> {
    if sentences.len() < 2 {
        return Err(EvalError::TooFewSentences(sentences.len()));
    }
    mean_pairwise_cosine(&embedder.embed(sentences)?)
}

/// Symmetric cosine matrix over reports, rows ordered by tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub tags: Vec<QuadrantTag>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn get(&self, a: QuadrantTag, b: QuadrantTag) -> Option<f64> {
        let i = self.tags.iter().position(|t| *t == a)?;
        let j = self.tags.iter().position(|t| *t == b)?;
        Some(self.values[i][j])
    }
}

pub fn cross_report_similarity(
    reports: &[(QuadrantTag, &str)],
    embedder: &dyn Embedder,
) -> Result<SimilarityMatrix, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports(reports.len()));
    }
    let mut ordered = reports.to_vec();
    ordered.sort_by_key(|(t, _)| *t);
    let texts: Vec<String> = ordered.iter().map(|(_, b)| b.to_string()).collect();
    let vectors = embedder.embed(&texts)?;
    let n = vectors.len();
    let mut values = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = cosine(&vectors[i], &vectors[j])?;
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(SimilarityMatrix {
        tags: ordered.into_iter().map(|(t, _)| t).collect(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub grid_cell: String,
    /// Absent when fewer than two reports were generated for the cell.
    pub similarity: Option<SimilarityMatrix>,
    /// `null` when a report has fewer than two sentences.
    pub internal_consistency: BTreeMap<QuadrantTag, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSummary {
    pub generated: usize,
    pub mean_internal_consistency: Option<f64>,
    pub mean_similarity_to_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub grid_cell: String,
    pub quadrant: QuadrantTag,
    pub status: ReportStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub event: String,
    pub embedder: String,
    pub distribution: UncertaintyDistribution,
    pub likert_probabilities: Vec<f64>,
    pub confidence_probabilities: Vec<f64>,
    pub likert_entropy_bits: f64,
    pub confidence_entropy_bits: f64,
    pub cells: Vec<CellMetrics>,
    pub per_tag: BTreeMap<QuadrantTag, TagSummary>,
    pub excluded: Vec<Excluded>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Computes all metrics for one event. Reports that were skipped or failed
/// are listed under `excluded` and enter no metric.
pub fn evaluate_event(
    estimates: &[UncertaintyEstimate],
    bundle: &ReportBundle,
    embedder: &dyn Embedder,
    bin_width: f64,
) -> Result<EventMetrics, EvalError> {
    let distribution = build_distribution(estimates, bin_width)?;
    let mut cells = Vec::new();
    let mut ic_by_tag: BTreeMap<QuadrantTag, Vec<f64>> = BTreeMap::new();
    let mut sim_by_tag: BTreeMap<QuadrantTag, Vec<f64>> = BTreeMap::new();
    let mut generated: BTreeMap<QuadrantTag, usize> = BTreeMap::new();
    let mut excluded = Vec::new();

    for cell in bundle.cells() {
        let mut bodies = Vec::new();
        let mut ic = BTreeMap::new();
        for tag in QuadrantTag::ALL {
            let Some(r) = bundle.get(cell, tag) else { continue };
            if r.status != ReportStatus::Generated {
                excluded.push(Excluded {
                    grid_cell: cell.to_string(),
                    quadrant: tag,
                    status: r.status,
                });
                continue;
            }
            *generated.entry(tag).or_default() += 1;
            bodies.push((tag, r.body.as_str()));
            let value = match internal_consistency(&r.sentences, embedder) {
                Ok(v) => Some(v),
                Err(EvalError::TooFewSentences(_)) | Err(EvalError::ZeroVector) => None,
                Err(e) => return Err(e),
            };
            if let Some(v) = value {
                ic_by_tag.entry(tag).or_default().push(v);
            }
            ic.insert(tag, value);
        }
        let similarity = match cross_report_similarity(&bodies, embedder) {
            Ok(m) => Some(m),
            Err(EvalError::TooFewReports(_)) | Err(EvalError::ZeroVector) => None,
            Err(e) => return Err(e),
        };
        if let Some(m) = &similarity {
            for tag in QuadrantTag::QUADRANTS {
                if let Some(v) = m.get(tag, QuadrantTag::Baseline) {
                    sim_by_tag.entry(tag).or_default().push(v);
                }
            }
        }
        cells.push(CellMetrics {
            grid_cell: cell.to_string(),
            similarity,
            internal_consistency: ic,
        });
    }

    let per_tag = QuadrantTag::ALL
        .into_iter()
        .map(|tag| {
            let summary = TagSummary {
                generated: generated.get(&tag).copied().unwrap_or(0),
                mean_internal_consistency: ic_by_tag.get(&tag).and_then(|v| mean(v)),
                mean_similarity_to_baseline: sim_by_tag.get(&tag).and_then(|v| mean(v)),
            };
            (tag, summary)
        })
        .collect();

    Ok(EventMetrics {
        event: bundle.event.clone(),
        embedder: embedder.id(),
        likert_probabilities: distribution.likert_probabilities(),
        confidence_probabilities: distribution.confidence_probabilities(),
        likert_entropy_bits: distribution.likert_entropy(),
        confidence_entropy_bits: distribution.confidence_entropy(),
        distribution,
        cells,
        per_tag,
        excluded,
    })
}

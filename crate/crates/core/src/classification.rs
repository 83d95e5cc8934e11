//! Zero-shot multi-label classification of posts into the SA schema.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{canonicalize, Schema, Tweet};
use crate::exec::bounded_map;
use crate::gateway::{parse_json_records, ChatBackend, CompletionRequest, GatewayError, Record, RepairLevel};
use crate::prompts::{self, BlockExtras};

pub const REQUIRED_FIELDS: [&str; 5] = ["index", "tweet_id", "tweet_text", "situational_categories", "rationales"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaClassification {
    pub tweet_id: String,
    pub categories: BTreeSet<String>,
    pub rationales: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("classification batch is empty")]
    EmptyBatch,
    #[error("batch of {size} exceeds the limit of {limit}")]
    BatchTooLarge { size: usize, limit: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    pub batch_size: usize,
    pub repair_level: RepairLevel,
    pub temperature: f64,
    pub max_in_flight: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            batch_size: 10,
            repair_level: RepairLevel::StripNoise,
            temperature: 0.0,
            max_in_flight: 4,
        }
    }
}

/// Result of classifying a batch or corpus. `classified` and `unprocessed`
/// partition the input ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassifyOutcome {
    pub classified: Vec<SaClassification>,
    pub unprocessed: Vec<String>,
    pub warnings: Vec<String>,
    pub failed_batches: usize,
}

impl ClassifyOutcome {
    fn merge(&mut self, other: ClassifyOutcome) {
        self.classified.extend(other.classified);
        self.unprocessed.extend(other.unprocessed);
        self.warnings.extend(other.warnings);
        self.failed_batches += other.failed_batches;
    }

    fn sort(&mut self) {
        self.classified.sort_by(|a, b| a.tweet_id.cmp(&b.tweet_id));
        self.unprocessed.sort();
    }
}

pub fn build_classification_prompt(
    tweets: &[Tweet],
    schema: &Schema,
    max_batch: usize,
) -> Result<CompletionRequest, ClassifyError> {
    if tweets.is_empty() {
        return Err(ClassifyError::EmptyBatch);
    }
    if tweets.len() > max_batch {
        return Err(ClassifyError::BatchTooLarge {
            size: tweets.len(),
            limit: max_batch,
        });
    }
    let posts = tweets
        .iter()
        .enumerate()
        .map(|(i, t)| prompts::render_post(i, t, &BlockExtras::default()))
        .collect::<Vec<_>>()
        .join("\n\n");
    let user = prompts::fill(
        prompts::CLASSIFY_USER,
        &[
            ("SCHEMA", &prompts::render_schema(schema)),
            ("POSTS", &posts),
            ("FORMATTING_RULES", prompts::FORMATTING_RULES.trim_end()),
        ],
    );
    Ok(CompletionRequest::new(prompts::CLASSIFY_SYSTEM, user))
}

/// Reads an id that a model may have emitted as a string or a number.
pub(crate) fn record_id(record: &Record) -> Option<String> {
    match record.get("tweet_id")? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn string_list(v: &Value) -> Option<Vec<String>> {
    v.as_array()?.iter().map(|x| x.as_str().map(str::to_string)).collect()
}

fn interpret(record: &Record, schema: &Schema, warnings: &mut Vec<String>) -> Result<SaClassification, String> {
    let tweet_id = record_id(record).ok_or("tweet_id is not a string")?;
    let raw_cats = string_list(&record["situational_categories"]).ok_or("situational_categories is not a list of strings")?;
    let rationales = string_list(&record["rationales"]).ok_or("rationales is not a list of strings")?;
    let mut categories = BTreeSet::new();
    for raw in raw_cats {
        let name = canonicalize(&raw);
        if schema.contains(&name) {
            categories.insert(name);
        } else {
            warnings.push(format!("tweet {tweet_id}: dropped unknown category {raw:?}"));
        }
    }
    Ok(SaClassification {
        tweet_id,
        categories,
        rationales,
    })
}

/// Classifies one batch with a single completion call. Records that fail to
/// parse or name an id outside the batch leave their posts unprocessed.
pub fn classify_batch(
    tweets: &[Tweet],
    schema: &Schema,
    backend: &dyn ChatBackend,
    options: &ClassifyOptions,
) -> Result<ClassifyOutcome, ClassifyError> {
    let request = build_classification_prompt(tweets, schema, options.batch_size)?
        .with_temperature(options.temperature);
    let response = backend.complete(&request)?;
    let mut outcome = ClassifyOutcome::default();
    let mut found: BTreeMap<String, SaClassification> = BTreeMap::new();
    match parse_json_records(&response.text, &REQUIRED_FIELDS, options.repair_level) {
        Err(e) => outcome.warnings.push(format!("batch output rejected: {e}")),
        Ok(records) => {
            for rec in records {
                let rec = match rec {
                    Ok(r) => r,
                    Err(e) => {
                        outcome.warnings.push(format!("record rejected: {e}"));
                        continue;
                    }
                };
                match interpret(&rec, schema, &mut outcome.warnings) {
                    Err(reason) => outcome.warnings.push(format!("record rejected: {reason}")),
                    Ok(c) if !tweets.iter().any(|t| t.id == c.tweet_id) => {
                        outcome.warnings.push(format!("record names unknown tweet {:?}", c.tweet_id))
                    }
                    Ok(c) if found.contains_key(&c.tweet_id) => {
                        outcome.warnings.push(format!("duplicate record for tweet {:?} ignored", c.tweet_id))
                    }
                    Ok(c) => {
                        found.insert(c.tweet_id.clone(), c);
                    }
                }
            }
        }
    }
    for t in tweets {
        match found.remove(&t.id) {
            Some(c) => outcome.classified.push(c),
            None => outcome.unprocessed.push(t.id.clone()),
        }
    }
    outcome.sort();
    Ok(outcome)
}

/// Classifies a whole corpus in batches. A batch whose completion call fails
/// contributes its posts to `unprocessed` and counts in `failed_batches`.
pub fn classify_corpus(
    tweets: &[Tweet],
    schema: &Schema,
    backend: &dyn ChatBackend,
    options: &ClassifyOptions,
) -> ClassifyOutcome {
    let batches: Vec<&[Tweet]> = tweets.chunks(options.batch_size.max(1)).collect();
    let results = bounded_map(&batches, options.max_in_flight, |batch| {
        classify_batch(batch, schema, backend, options).unwrap_or_else(|e| ClassifyOutcome {
            unprocessed: batch.iter().map(|t| t.id.clone()).collect(),
            warnings: vec![format!("batch starting at tweet {} failed: {e}", batch[0].id)],
            failed_batches: 1,
            ..Default::default()
        })
    });
    let mut outcome = ClassifyOutcome::default();
    for r in results {
        outcome.merge(r);
    }
    outcome.sort();
    outcome
}

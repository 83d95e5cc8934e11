//! Proxy-conditioned plausibility and confidence elicitation.
//!
//! Each batch of posts from one MMI region is sent once per sampling
//! temperature. Every post gets a Likert plausibility (1–5), a confidence
//! (0–100), a discrepancy label and a rationale per sample. [`aggregate`]
//! folds a post's samples into one estimate: the Likert mean rounded half up,
//! and the plain mean of confidences.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::classification::{record_id, SaClassification};
use crate::corpus::{EventMeta, Mmi, Tweet};
use crate::exec::bounded_map;
use crate::gateway::{parse_json_records, ChatBackend, CompletionRequest, GatewayError, Record, RepairLevel};
use crate::prompts::{self, BlockExtras};
use crate::proxy::ProxySummary;

pub const REQUIRED_FIELDS: [&str; 7] = [
    "index",
    "tweet_id",
    "situational_categories",
    "likert_plausibility",
    "confidence",
    "discrepancy_assessment",
    "reason_alignment",
];

pub const DEFAULT_TEMPERATURES: [f64; 3] = [0.5, 1.0, 1.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discrepancy {
    Misclassification,
    Noise,
    None,
}

impl Discrepancy {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "misclassification" => Some(Discrepancy::Misclassification),
            "noise" => Some(Discrepancy::Noise),
            "none" => Some(Discrepancy::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySample {
    pub tweet_id: String,
    /// 1-based position in the sampling schedule.
    pub sample_index: u32,
    pub temperature: f64,
    pub likert: u8,
    pub confidence: f64,
    pub discrepancy: Discrepancy,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    pub tweet_id: String,
    pub likert: u8,
    pub confidence: f64,
    pub sample_count: usize,
    /// Fewer samples than scheduled were usable.
    pub degraded: bool,
    pub samples: Vec<UncertaintySample>,
}

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no samples to aggregate")]
    NoSamples,
    #[error("samples belong to different tweets ({0:?} and {1:?})")]
    MixedTweetIds(String, String),
}

/// `round(sum / n)` with ties going up, in exact integer arithmetic.
pub fn round_half_up_mean(sum: u64, n: u64) -> u64 {
    (2 * sum + n) / (2 * n)
}

/// Folds one post's samples into an estimate. The result does not depend on
/// sample order: confidences are summed in sorted order.
pub fn aggregate(samples: &[UncertaintySample]) -> Result<UncertaintyEstimate, AggregateError> {
    let first = samples.first().ok_or(AggregateError::NoSamples)?;
    if let Some(other) = samples.iter().find(|s| s.tweet_id != first.tweet_id) {
        return Err(AggregateError::MixedTweetIds(first.tweet_id.clone(), other.tweet_id.clone()));
    }
    let n = samples.len() as u64;
    let likert_sum: u64 = samples.iter().map(|s| s.likert as u64).sum();
    let likert = round_half_up_mean(likert_sum, n).clamp(1, 5) as u8;
    let mut confidences: Vec<f64> = samples.iter().map(|s| s.confidence).collect();
    confidences.sort_by(f64::total_cmp);
    let confidence = confidences.iter().sum::<f64>() / n as f64;
    let mut ordered = samples.to_vec();
    ordered.sort_by(|a, b| {
        a.sample_index
            .cmp(&b.sample_index)
            .then(a.temperature.total_cmp(&b.temperature))
    });
    Ok(UncertaintyEstimate {
        tweet_id: first.tweet_id.clone(),
        likert,
        confidence,
        sample_count: samples.len(),
        degraded: false,
        samples: ordered,
    })
}

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("assessment batch is empty")]
    EmptyBatch,
    #[error("batch mixes MMI regions {0} and {1}")]
    MixedRegionBatch(Mmi, Mmi),
    #[error("proxy summary is for region {summary}, batch is {batch}")]
    SummaryMismatch { summary: Mmi, batch: Mmi },
    #[error("no sampling temperatures configured")]
    NoTemperatures,
    #[error(transparent)]
    Proxy(#[from] crate::proxy::ProxyError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A post together with its classification, ready for assessment.
#[derive(Debug, Clone, Copy)]
pub struct AssessItem<'a> {
    pub tweet: &'a Tweet,
    pub classification: &'a SaClassification,
}

fn time_span(batch: &[AssessItem<'_>]) -> String {
    let fmt = |t: &chrono::DateTime<chrono::Utc>| t.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true);
    let min = batch.iter().map(|i| i.tweet.timestamp).min().expect("non-empty");
    let max = batch.iter().map(|i| i.tweet.timestamp).max().expect("non-empty");
    if min == max {
        format!("{} (UTC)", fmt(&min))
    } else {
        format!("{} to {} (UTC)", fmt(&min), fmt(&max))
    }
}

pub fn build_assessment_prompt(
    batch: &[AssessItem<'_>],
    summary: &ProxySummary,
    event: &EventMeta,
) -> Result<CompletionRequest, AssessError> {
    let first = batch.first().ok_or(AssessError::EmptyBatch)?;
    let region = first.tweet.mmi_region;
    if let Some(other) = batch.iter().find(|i| i.tweet.mmi_region != region) {
        return Err(AssessError::MixedRegionBatch(region, other.tweet.mmi_region));
    }
    if summary.mmi != region {
        return Err(AssessError::SummaryMismatch {
            summary: summary.mmi,
            batch: region,
        });
    }
    let posts = batch
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let extras = BlockExtras {
                time: true,
                categories: Some(item.classification.categories.iter().map(String::as_str).collect()),
                uncertainty: None,
            };
            prompts::render_post(i, item.tweet, &extras)
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    let user = prompts::fill(
        prompts::ASSESS_USER,
        &[
            ("EVENT", &event.name),
            ("MMI", region.as_str()),
            ("TIME", &time_span(batch)),
            ("SUMMARY", &summary.rendered_text),
            ("POSTS", &posts),
            ("FORMATTING_RULES", prompts::FORMATTING_RULES.trim_end()),
        ],
    );
    Ok(CompletionRequest::new(prompts::ASSESS_SYSTEM, user))
}

#[derive(Debug, Clone)]
pub struct SamplingOptions {
    pub temperatures: Vec<f64>,
    pub repeats_per_temperature: u32,
    pub repair_level: RepairLevel,
    pub max_in_flight: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions {
            temperatures: DEFAULT_TEMPERATURES.to_vec(),
            repeats_per_temperature: 1,
            repair_level: RepairLevel::StripNoise,
            max_in_flight: 4,
        }
    }
}

impl SamplingOptions {
    /// `(sample_index, temperature)` pairs, 1-based.
    pub fn schedule(&self) -> Vec<(u32, f64)> {
        let reps = self.repeats_per_temperature.max(1);
        self.temperatures
            .iter()
            .enumerate()
            .flat_map(|(ti, &t)| (0..reps).map(move |r| (ti as u32 * reps + r + 1, t)))
            .collect()
    }

    pub fn sample_count(&self) -> usize {
        self.temperatures.len() * self.repeats_per_temperature.max(1) as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleOutcome {
    pub samples: Vec<UncertaintySample>,
    /// `(tweet_id, sample_index)` pairs with no usable answer after the retry.
    pub missing: Vec<(String, u32)>,
    pub warnings: Vec<String>,
    pub failed_calls: usize,
}

fn as_likert(v: &Value) -> Option<u8> {
    let f = v.as_f64()?;
    (f.fract() == 0.0 && (1.0..=5.0).contains(&f)).then_some(f as u8)
}

fn as_confidence(v: &Value) -> Option<f64> {
    let f = v.as_f64()?;
    (f.is_finite() && (0.0..=100.0).contains(&f)).then_some(f)
}

fn interpret(rec: &Record, sample_index: u32, temperature: f64) -> Result<UncertaintySample, String> {
    let tweet_id = record_id(rec).ok_or("tweet_id is not a string")?;
    let likert = as_likert(&rec["likert_plausibility"])
        .ok_or_else(|| format!("tweet {tweet_id}: likert_plausibility {} not an integer in 1..=5", rec["likert_plausibility"]))?;
    let confidence = as_confidence(&rec["confidence"])
        .ok_or_else(|| format!("tweet {tweet_id}: confidence {} not in [0, 100]", rec["confidence"]))?;
    let discrepancy = rec["discrepancy_assessment"]
        .as_str()
        .and_then(Discrepancy::parse)
        .ok_or_else(|| format!("tweet {tweet_id}: unknown discrepancy {}", rec["discrepancy_assessment"]))?;
    let rationale = match &rec["reason_alignment"] {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    Ok(UncertaintySample {
        tweet_id,
        sample_index,
        temperature,
        likert,
        confidence,
        discrepancy,
        rationale,
    })
}

/// One completion call; returns accepted samples keyed by tweet id.
fn sample_once(
    items: &[AssessItem<'_>],
    summary: &ProxySummary,
    event: &EventMeta,
    backend: &dyn ChatBackend,
    (sample_index, temperature): (u32, f64),
    level: RepairLevel,
    warnings: &mut Vec<String>,
) -> Result<BTreeMap<String, UncertaintySample>, AssessError> {
    let mut request = build_assessment_prompt(items, summary, event)?.with_temperature(temperature);
    request.seed_hint = Some(sample_index as u64);
    let response = backend.complete(&request)?;
    let mut accepted = BTreeMap::new();
    let records = match parse_json_records(&response.text, &REQUIRED_FIELDS, level) {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("sample {sample_index}: output rejected: {e}"));
            return Ok(accepted);
        }
    };
    for rec in records {
        let sample = rec
            .map_err(|e| e.to_string())
            .and_then(|r| interpret(&r, sample_index, temperature));
        match sample {
            Err(reason) => warnings.push(format!("sample {sample_index}: record rejected: {reason}")),
            Ok(s) if !items.iter().any(|i| i.tweet.id == s.tweet_id) => {
                warnings.push(format!("sample {sample_index}: record names unknown tweet {:?}", s.tweet_id))
            }
            Ok(s) => {
                accepted.entry(s.tweet_id.clone()).or_insert(s);
            }
        }
    }
    Ok(accepted)
}

/// Samples every post in `batch` once per scheduled temperature. Posts
/// whose record is missing or out of range are re-asked once, alone with the
/// other rejects from the same call.
pub fn sample_assessments(
    batch: &[AssessItem<'_>],
    summary: &ProxySummary,
    event: &EventMeta,
    backend: &dyn ChatBackend,
    options: &SamplingOptions,
) -> Result<SampleOutcome, AssessError> {
    if options.temperatures.is_empty() {
        return Err(AssessError::NoTemperatures);
    }
    build_assessment_prompt(batch, summary, event)?;
    let schedule = options.schedule();
    let per_sample = bounded_map(&schedule, options.max_in_flight, |&slot| {
        let mut out = SampleOutcome::default();
        let mut accepted = match sample_once(batch, summary, event, backend, slot, options.repair_level, &mut out.warnings) {
            Ok(a) => a,
            Err(e) => {
                out.warnings.push(format!("sample {}: {e}", slot.0));
                out.failed_calls += 1;
                out.missing = batch.iter().map(|i| (i.tweet.id.clone(), slot.0)).collect();
                return out;
            }
        };
        let retry: Vec<AssessItem<'_>> = batch
            .iter()
            .filter(|i| !accepted.contains_key(&i.tweet.id))
            .copied()
            .collect();
        if !retry.is_empty() {
            match sample_once(&retry, summary, event, backend, slot, options.repair_level, &mut out.warnings) {
                Ok(more) => accepted.extend(more),
                Err(e) => {
                    out.warnings.push(format!("sample {} retry: {e}", slot.0));
                    out.failed_calls += 1;
                }
            }
        }
        for item in batch {
            match accepted.remove(&item.tweet.id) {
                Some(s) => out.samples.push(s),
                None => out.missing.push((item.tweet.id.clone(), slot.0)),
            }
        }
        out
    });
    let mut outcome = SampleOutcome::default();
    for o in per_sample {
        outcome.samples.extend(o.samples);
        outcome.missing.extend(o.missing);
        outcome.warnings.extend(o.warnings);
        outcome.failed_calls += o.failed_calls;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssessOutcome {
    /// Sorted by tweet id.
    pub estimates: Vec<UncertaintyEstimate>,
    pub unprocessed: Vec<String>,
    pub warnings: Vec<String>,
    pub calls: usize,
    pub failed_calls: usize,
}

/// Assesses every classified post: groups by region, batches, samples and
/// aggregates. Posts with at least one usable sample get an estimate.
pub fn assess_corpus<F>(
    items: &[AssessItem<'_>],
    summary_for: F,
    event: &EventMeta,
    backend: &dyn ChatBackend,
    batch_size: usize,
    options: &SamplingOptions,
) -> Result<AssessOutcome, AssessError>
where
    F: Fn(Mmi) -> Result<ProxySummary, crate::proxy::ProxyError>,
{
    if options.temperatures.is_empty() {
        return Err(AssessError::NoTemperatures);
    }
    let mut by_region: BTreeMap<Mmi, Vec<AssessItem<'_>>> = BTreeMap::new();
    for item in items {
        by_region.entry(item.tweet.mmi_region).or_default().push(*item);
    }
    let expected = options.sample_count();
    let mut outcome = AssessOutcome::default();
    let mut samples: BTreeMap<String, Vec<UncertaintySample>> = BTreeMap::new();
    let inner = SamplingOptions {
        max_in_flight: 1,
        ..options.clone()
    };
    let mut jobs = Vec::new();
    for (region, group) in &by_region {
        let summary = summary_for(*region)?;
        for chunk in group.chunks(batch_size.max(1)) {
            jobs.push((chunk.to_vec(), summary.clone()));
        }
    }
    let results = bounded_map(&jobs, options.max_in_flight, |(chunk, summary)| {
        sample_assessments(chunk, summary, event, backend, &inner)
    });
    for result in results {
        let r = result?;
        outcome.warnings.extend(r.warnings);
        outcome.failed_calls += r.failed_calls;
        for s in r.samples {
            samples.entry(s.tweet_id.clone()).or_default().push(s);
        }
    }
    outcome.calls = jobs.len() * expected;
    let assessed: BTreeSet<&str> = samples.keys().map(String::as_str).collect();
    outcome.unprocessed = items
        .iter()
        .map(|i| i.tweet.id.as_str())
        .filter(|id| !assessed.contains(id))
        .map(str::to_string)
        .collect();
    outcome.unprocessed.sort();
    for (_, s) in samples {
        let mut est = aggregate(&s).expect("grouped by id, non-empty");
        est.degraded = est.sample_count < expected;
        outcome.estimates.push(est);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_timestamp;
    use crate::gateway::{CompletionResponse, MockBackend, Synthetic};
    use crate::proxy;
    use std::sync::Mutex;
    use std::time::Duration;

    fn sample(id: &str, k: u32, likert: u8, confidence: f64) -> UncertaintySample {
        UncertaintySample {
            tweet_id: id.into(),
            sample_index: k,
            temperature: 0.5 * k as f64,
            likert,
            confidence,
            discrepancy: Discrepancy::None,
            rationale: String::new(),
        }
    }

    fn tweet(id: &str, mmi: Mmi) -> Tweet {
        Tweet {
            id: id.into(),
            text: format!("post {id}"),
            mmi_region: mmi,
            grid_cell: "g".into(),
            timestamp: parse_timestamp("2021-02-13T14:20:00Z").unwrap(),
            sa_labels: Default::default(),
        }
    }

    fn class(id: &str) -> SaClassification {
        SaClassification {
            tweet_id: id.into(),
            categories: ["affected_people".to_string()].into(),
            rationales: vec![],
        }
    }

    #[test]
    fn aggregate_examples() {
        let e = aggregate(&[sample("a", 1, 4, 80.0), sample("a", 2, 5, 90.0), sample("a", 3, 5, 100.0)]).unwrap();
        assert_eq!((e.likert, e.confidence, e.sample_count), (5, 90.0, 3));
        let e = aggregate(&[sample("a", 1, 3, 1.0), sample("a", 2, 3, 1.0), sample("a", 3, 3, 1.0)]).unwrap();
        assert_eq!(e.likert, 3);
        let e = aggregate(&[sample("a", 1, 2, 0.0), sample("a", 2, 3, 0.0)]).unwrap();
        assert_eq!(e.likert, 3);
    }

    #[test]
    fn aggregate_errors() {
        assert_eq!(aggregate(&[]), Err(AggregateError::NoSamples));
        assert!(matches!(
            aggregate(&[sample("a", 1, 2, 0.0), sample("b", 2, 3, 0.0)]),
            Err(AggregateError::MixedTweetIds(..))
        ));
    }

    #[test]
    fn schedule_defaults() {
        let o = SamplingOptions::default();
        assert_eq!(o.schedule(), vec![(1, 0.5), (2, 1.0), (3, 1.5)]);
        let o = SamplingOptions {
            repeats_per_temperature: 2,
            ..o
        };
        assert_eq!(o.sample_count(), 6);
        assert_eq!(o.schedule()[3], (4, 1.0));
    }

    #[test]
    fn prompt_contents_and_region_rule() {
        let (event, table) = proxy::bundled("fukushima_2021").unwrap();
        let t1 = tweet("a", Mmi::VI);
        let t2 = tweet("b", Mmi::VII);
        let c = class("a");
        let summary = table.summary_for(Mmi::VI).unwrap();
        let req = build_assessment_prompt(&[AssessItem { tweet: &t1, classification: &c }], &summary, &event).unwrap();
        assert!(req.user_text.contains("A tweet may be plausible even if it contradicts the proxy"));
        assert!(req.user_text.contains("plausibly representative of real-world conditions"));
        assert!(req.user_text.contains("- 5 = highly plausible"));
        assert!(req.user_text.contains("Region: VI"));
        assert!(req.user_text.contains("population exposed: 1,862k"));
        assert!(req.user_text.contains("situational_categories: affected_people"));
        let mixed = [
            AssessItem { tweet: &t1, classification: &c },
            AssessItem { tweet: &t2, classification: &c },
        ];
        assert!(matches!(
            build_assessment_prompt(&mixed, &summary, &event),
            Err(AssessError::MixedRegionBatch(Mmi::VI, Mmi::VII))
        ));
        assert!(matches!(build_assessment_prompt(&[], &summary, &event), Err(AssessError::EmptyBatch)));
    }

    #[test]
    fn unlabeled_posts_carry_marker() {
        let (event, table) = proxy::bundled("fukushima_2021").unwrap();
        let t = tweet("a", Mmi::V);
        let c = SaClassification {
            tweet_id: "a".into(),
            categories: Default::default(),
            rationales: vec![],
        };
        let req = build_assessment_prompt(
            &[AssessItem { tweet: &t, classification: &c }],
            &table.summary_for(Mmi::V).unwrap(),
            &event,
        )
        .unwrap();
        assert!(req.user_text.contains(prompts::NO_LABELS));
    }

    #[test]
    fn four_tweets_three_temperatures() {
        let (event, table) = proxy::bundled("haiti_2021").unwrap();
        let tweets: Vec<_> = (0..4).map(|i| tweet(&format!("t{i}"), Mmi::VII)).collect();
        let classes: Vec<_> = (0..4).map(|i| class(&format!("t{i}"))).collect();
        let items: Vec<_> = tweets
            .iter()
            .zip(&classes)
            .map(|(t, c)| AssessItem { tweet: t, classification: c })
            .collect();
        let mock = MockBackend::synthetic(Synthetic::Heuristic);
        let out = sample_assessments(
            &items,
            &table.summary_for(Mmi::VII).unwrap(),
            &event,
            &mock,
            &SamplingOptions::default(),
        )
        .unwrap();
        assert_eq!(out.samples.len(), 12);
        assert!(out.missing.is_empty());
        let temps: BTreeSet<_> = out.samples.iter().map(|s| (s.temperature * 10.0) as u32).collect();
        assert_eq!(temps.into_iter().collect::<Vec<_>>(), [5, 10, 15]);
    }

    /// Answers from a queue of scripted outputs and records each request.
    struct Scripted {
        outputs: Mutex<Vec<String>>,
        seen: Mutex<Vec<CompletionRequest>>,
    }

    impl ChatBackend for Scripted {
        fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
            self.seen.lock().unwrap().push(req.clone());
            let text = self.outputs.lock().unwrap().remove(0);
            Ok(CompletionResponse {
                text,
                backend_id: "scripted".into(),
                latency: Duration::ZERO,
                usage: None,
            })
        }
        fn id(&self) -> String {
            "scripted".into()
        }
    }

    fn answer(id: &str, likert: i64, confidence: f64) -> String {
        serde_json::json!([{
            "index": 0, "tweet_id": id, "situational_categories": [],
            "likert_plausibility": likert, "confidence": confidence,
            "discrepancy_assessment": "none", "reason_alignment": "r"
        }])
        .to_string()
    }

    #[test]
    fn out_of_range_likert_is_retried_once() {
        let (event, table) = proxy::bundled("haiti_2021").unwrap();
        let t = tweet("a", Mmi::VII);
        let c = class("a");
        let items = [AssessItem { tweet: &t, classification: &c }];
        let backend = Scripted {
            outputs: Mutex::new(vec![answer("a", 6, 50.0), answer("a", 4, 100.0)]),
            seen: Mutex::new(vec![]),
        };
        let opts = SamplingOptions {
            temperatures: vec![0.5],
            ..Default::default()
        };
        let out = sample_assessments(&items, &table.summary_for(Mmi::VII).unwrap(), &event, &backend, &opts).unwrap();
        assert_eq!(backend.seen.lock().unwrap().len(), 2);
        assert_eq!(out.samples.len(), 1);
        assert_eq!((out.samples[0].likert, out.samples[0].confidence), (4, 100.0));
        assert!(out.warnings.iter().any(|w| w.contains("likert_plausibility 6")));
    }

    #[test]
    fn second_rejection_marks_missing() {
        let (event, table) = proxy::bundled("haiti_2021").unwrap();
        let t = tweet("a", Mmi::VII);
        let c = class("a");
        let items = [AssessItem { tweet: &t, classification: &c }];
        let backend = Scripted {
            outputs: Mutex::new(vec![answer("a", 0, 50.0), answer("a", 3, 101.0)]),
            seen: Mutex::new(vec![]),
        };
        let opts = SamplingOptions {
            temperatures: vec![1.0],
            ..Default::default()
        };
        let out = sample_assessments(&items, &table.summary_for(Mmi::VII).unwrap(), &event, &backend, &opts).unwrap();
        assert!(out.samples.is_empty());
        assert_eq!(out.missing, vec![("a".to_string(), 1)]);
    }

    #[test]
    fn constant_backend_gives_point_mass() {
        let (event, table) = proxy::bundled("napa_2014").unwrap();
        let tweets: Vec<_> = (0..7)
            .map(|i| tweet(&format!("t{i}"), if i % 2 == 0 { Mmi::VI } else { Mmi::VIII }))
            .collect();
        let classes: Vec<_> = tweets.iter().map(|t| class(&t.id)).collect();
        let items: Vec<_> = tweets
            .iter()
            .zip(&classes)
            .map(|(t, c)| AssessItem { tweet: t, classification: c })
            .collect();
        let mock = MockBackend::synthetic(Synthetic::Constant {
            likert: 4,
            confidence: 100.0,
        });
        let out = assess_corpus(&items, |m| table.summary_for(m), &event, &mock, 3, &SamplingOptions::default()).unwrap();
        assert_eq!(out.estimates.len(), 7);
        assert!(out.estimates.iter().all(|e| e.likert == 4 && e.confidence == 100.0 && !e.degraded));
        assert!(out.unprocessed.is_empty());
    }
}

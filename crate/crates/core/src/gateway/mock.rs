use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{BackendConfig, ChatBackend, CompletionRequest, CompletionResponse, GatewayError};
use crate::prompts::{self, PromptPost};

/// What the mock answers when no fixture matches a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Synthetic {
    /// Fixtures only; an unmatched request is an error.
    None,
    /// Keyword classification, hash-derived assessments, extractive reports.
    #[default]
    Heuristic,
    /// As `Heuristic`, but every assessment returns the same pair.
    Constant { likert: u8, confidence: f64 },
}

/// Hex SHA-256 over system text, user text and temperature (3 decimals).
/// Fixture files are named by this hash or mapped to it by `manifest.json`.
pub fn request_hash(request: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    h.update(request.system_text.as_bytes());
    h.update([0]);
    h.update(request.user_text.as_bytes());
    h.update([0]);
    h.update(format!("{:.3}", request.temperature).as_bytes());
    hex::encode(h.finalize())
}

fn hash64(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Deterministic stand-in for a model.
#[derive(Debug, Clone)]
pub struct MockBackend {
    fixture_dir: Option<PathBuf>,
    /// hash → fixture file name
    named: HashMap<String, String>,
    synthetic: Synthetic,
}

impl MockBackend {
    pub fn new(fixture_dir: Option<PathBuf>, synthetic: Synthetic) -> Result<Self, GatewayError> {
        let mut named = HashMap::new();
        if let Some(dir) = &fixture_dir {
            let manifest = dir.join("manifest.json");
            if manifest.exists() {
                let text = std::fs::read_to_string(&manifest)
                    .map_err(|e| GatewayError::InvalidConfig(format!("{}: {e}", manifest.display())))?;
                let by_name: HashMap<String, String> = serde_json::from_str(&text)
                    .map_err(|e| GatewayError::InvalidConfig(format!("{}: {e}", manifest.display())))?;
                for (name, hash) in by_name {
                    named.insert(hash, name);
                }
            }
        }
        Ok(MockBackend {
            fixture_dir,
            named,
            synthetic,
        })
    }

    pub fn synthetic(synthetic: Synthetic) -> Self {
        MockBackend {
            fixture_dir: None,
            named: HashMap::new(),
            synthetic,
        }
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        Self::new(config.fixture_dir.clone(), config.synthetic.clone())
    }

    fn fixture(&self, dir: &Path, hash: &str) -> Option<String> {
        let name = self.named.get(hash).map(String::as_str).unwrap_or(hash);
        std::fs::read_to_string(dir.join(format!("{name}.txt"))).ok()
    }

    fn respond(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let hash = request_hash(request);
        if let Some(text) = self.fixture_dir.as_deref().and_then(|d| self.fixture(d, &hash)) {
            return Ok(text);
        }
        let constant = match &self.synthetic {
            Synthetic::None => return Err(GatewayError::MissingFixture(hash)),
            Synthetic::Heuristic => None,
            Synthetic::Constant { likert, confidence } => Some((*likert, *confidence)),
        };
        let posts = prompts::parse_posts(&request.user_text);
        let system = request.system_text.as_str();
        if system == prompts::CLASSIFY_SYSTEM {
            Ok(synthetic_classification(&posts, &request.user_text))
        } else if system == prompts::ASSESS_SYSTEM {
            Ok(synthetic_assessment(&posts, request.temperature, constant))
        } else if system == prompts::REPORT_SYSTEM {
            Ok(synthetic_report(&posts, &request.user_text))
        } else {
            Err(GatewayError::MissingFixture(hash))
        }
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        let start = Instant::now();
        let text = self.respond(request)?;
        Ok(CompletionResponse {
            text,
            backend_id: self.id(),
            latency: start.elapsed(),
            usage: None,
        })
    }

    fn id(&self) -> String {
        let fixtures = self
            .fixture_dir
            .as_ref()
            .map(|d| d.display().to_string())
            .unwrap_or_else(|| "-".into());
        format!("mock:{}:{fixtures}", serde_json::to_string(&self.synthetic).expect("serializes"))
    }
}

const LEXICON: &[(&str, &[&str])] = &[
    (
        "caution_advice",
        &["warning", "advice", "stay away", "prepare", "be careful", "aftershock", "evacuat", "tip"],
    ),
    (
        "affected_people",
        &["injur", "trapped", "missing", "dead", "killed", "death", "hurt", "casualt"],
    ),
    (
        "infrastructure_utilities",
        &[
            "damage", "collaps", "power", "outage", "road", "bridge", "building", "water main", "gas", "crack",
            "train", "closed",
        ],
    ),
    (
        "needs_donations",
        &["donat", "volunteer", "relief", "fundrais", "supplies", "shelter"],
    ),
    (
        "weather_environment",
        &["rain", "weather", "landslide", "wind", "storm", "snow", "tsunami", "fire"],
    ),
    (
        "response_recovery",
        &["rescue", "responder", "cleanup", "repair", "official", "government", "crews", "restored"],
    ),
];

fn schema_names(user_text: &str) -> Vec<String> {
    user_text
        .lines()
        .filter_map(|l| l.strip_prefix("- "))
        .filter_map(|l| l.split_once(": ").map(|(n, _)| n.to_string()))
        .filter(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'))
        .collect()
}

fn synthetic_classification(posts: &[PromptPost], user_text: &str) -> String {
    let allowed = schema_names(user_text);
    let records: Vec<_> = posts
        .iter()
        .map(|p| {
            let lower = p.text.to_lowercase();
            let mut cats = Vec::new();
            let mut rationales = Vec::new();
            for (cat, words) in LEXICON {
                if !allowed.iter().any(|a| a == cat) {
                    continue;
                }
                if let Some(w) = words.iter().find(|w| lower.contains(*w)) {
                    cats.push(*cat);
                    let start = lower.find(w).expect("found above");
                    let end = lower[start..]
                        .find(|c: char| c.is_whitespace() || c == ',' || c == '.')
                        .map(|e| start + e)
                        .unwrap_or(lower.len());
                    // Lowercasing can shift byte offsets for non-ASCII text.
                    let span = p.text.get(start..end).unwrap_or(w);
                    rationales.push(span.to_string());
                }
            }
            json!({
                "index": p.index,
                "tweet_id": p.tweet_id,
                "tweet_text": p.text,
                "situational_categories": cats,
                "rationales": rationales,
            })
        })
        .collect();
    serde_json::to_string(&records).expect("serializes")
}

fn synthetic_assessment(posts: &[PromptPost], temperature: f64, constant: Option<(u8, f64)>) -> String {
    let temp = format!("{temperature:.3}");
    let records: Vec<_> = posts
        .iter()
        .map(|p| {
            let (likert, confidence) = constant.unwrap_or_else(|| {
                let base = hash64(&[&p.tweet_id, &p.text]);
                let jitter = hash64(&[&p.tweet_id, &p.text, &temp]);
                let mut likert = 1 + (base % 5) as i64;
                if temperature >= 1.0 {
                    likert += (jitter % 3) as i64 - 1;
                }
                let likert = likert.clamp(1, 5) as u8;
                let spread = (temperature * 10.0).round() as i64;
                let conf = 20 + 5 * ((base >> 8) % 17) as i64 + (((jitter >> 8) % 3) as i64 - 1) * spread;
                (likert, conf.clamp(0, 100) as f64)
            });
            let discrepancy = match (likert, hash64(&[&p.tweet_id]) % 2) {
                (3..=5, _) => "none",
                (_, 0) => "noise",
                _ => "misclassification",
            };
            json!({
                "index": p.index,
                "tweet_id": p.tweet_id,
                "situational_categories": p.categories.clone().unwrap_or_default(),
                "likert_plausibility": likert,
                "confidence": confidence,
                "discrepancy_assessment": discrepancy,
                "reason_alignment": format!("Synthetic assessment at temperature {temp}."),
            })
        })
        .collect();
    serde_json::to_string(&records).expect("serializes")
}

fn clause(text: &str) -> String {
    let flat: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let short: String = flat.chars().take(140).collect();
    short.trim_end_matches(['.', '!', '?', ' ']).to_string()
}

fn synthetic_report(posts: &[PromptPost], user_text: &str) -> String {
    let event = prompts::context_value(user_text, "Event").unwrap_or("the event");
    let cell = prompts::context_value(user_text, "Location").unwrap_or("this area");
    let count = prompts::context_value(user_text, "Number of Tweets").unwrap_or("0");
    let mut sentences = vec![format!(
        "Situation report for {event} at location {cell}, based on {count} social media posts."
    )];
    for p in posts.iter().take(5) {
        let mut s = format!("Posts report that {}", clause(&p.text));
        if let Some((l, c)) = p.uncertainty {
            s.push_str(&format!(
                ", assessed at plausibility {l} of 5 with {}% confidence",
                prompts::format_confidence(c)
            ));
        }
        s.push('.');
        sentences.push(s);
    }
    let scored: Vec<_> = posts.iter().filter_map(|p| p.uncertainty).collect();
    if scored.is_empty() {
        sentences.push("These claims have not been checked against external impact estimates.".into());
    } else {
        let n = scored.len() as f64;
        let mean_l = scored.iter().map(|(l, _)| *l as f64).sum::<f64>() / n;
        let mean_c = scored.iter().map(|(_, c)| c).sum::<f64>() / n;
        sentences.push(format!(
            "Across these posts mean plausibility is {mean_l:.1} of 5 and mean confidence is {mean_c:.0}%."
        ));
    }
    sentences.join(" ")
}

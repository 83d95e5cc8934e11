//! Tweet corpus, situational-awareness schema and event metadata.
//!
//! The corpus file is line-delimited JSON, one post per line:
//!
//! ```text
//! {"id":"t1","text":"...","mmi_region":"VI","grid_cell":"c-12","timestamp":"2021-02-13T14:20:00Z"}
//! ```
//!
//! `sa_labels` is optional and, when present, is validated against the schema.
//! Blank lines are skipped; any other malformed line aborts the load.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SCHEMA: &str = include_str!("../data/schema.jsonl");

/// Modified Mercalli intensity level, I through X.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mmi {
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
    VIII,
    IX,
    X,
}

impl Mmi {
    pub const ALL: [Mmi; 10] = [
        Mmi::I,
        Mmi::II,
        Mmi::III,
        Mmi::IV,
        Mmi::V,
        Mmi::VI,
        Mmi::VII,
        Mmi::VIII,
        Mmi::IX,
        Mmi::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mmi::I => "I",
            Mmi::II => "II",
            Mmi::III => "III",
            Mmi::IV => "IV",
            Mmi::V => "V",
            Mmi::VI => "VI",
            Mmi::VII => "VII",
            Mmi::VIII => "VIII",
            Mmi::IX => "IX",
            Mmi::X => "X",
        }
    }

    /// Numeric level, 1 for I up to 10 for X.
    pub fn level(self) -> u8 {
        self as u8 + 1
    }
}

impl fmt::Display for Mmi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not an MMI level in I..X: {0:?}")]
pub struct InvalidMmi(pub String);

impl FromStr for Mmi {
    type Err = InvalidMmi;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Mmi::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| InvalidMmi(s.to_string()))
    }
}

impl Serialize for Mmi {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Mmi {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Canonical category token: lowercase ASCII alphanumerics joined by single
/// underscores. `"Needs & Donations"` becomes `needs_donations`.
pub fn canonicalize(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_sep = false;
    for ch in name.chars() {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaCategory {
    pub name: String,
    pub description: String,
}

/// Ordered list of situational-awareness categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema(Vec<SaCategory>);

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("duplicate category {0:?}")]
    DuplicateCategory(String),
    #[error("schema is empty")]
    EmptySchema,
    #[error("schema line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("reading schema: {0}")]
    Io(#[from] std::io::Error),
}

impl Schema {
    /// Builds a schema from raw pairs, canonicalizing names.
    pub fn new(categories: Vec<SaCategory>) -> Result<Self, SchemaError> {
        if categories.is_empty() {
            return Err(SchemaError::EmptySchema);
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(categories.len());
        for c in categories {
            let name = canonicalize(&c.name);
            if name.is_empty() {
                return Err(SchemaError::Malformed {
                    line: out.len() + 1,
                    reason: format!("category name {:?} has no alphanumeric characters", c.name),
                });
            }
            if !seen.insert(name.clone()) {
                return Err(SchemaError::DuplicateCategory(name));
            }
            out.push(SaCategory {
                name,
                description: c.description.trim().to_string(),
            });
        }
        Ok(Schema(out))
    }

    /// The bundled six-category earthquake schema.
    pub fn default_earthquake() -> Self {
        parse_schema(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }

    pub fn categories(&self) -> &[SaCategory] {
        &self.0
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|c| c.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.iter().any(|c| c.name == name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Parses schema text: one `{"name": ..., "description": ...}` object per line.
pub fn parse_schema(text: &str) -> Result<Schema, SchemaError> {
    let mut cats = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cat: SaCategory = serde_json::from_str(line).map_err(|e| SchemaError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        cats.push(cat);
    }
    Schema::new(cats)
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema, SchemaError> {
    parse_schema(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub text: String,
    pub mmi_region: Mmi,
    pub grid_cell: String,
    #[serde(with = "utc_seconds")]
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub sa_labels: BTreeSet<String>,
}

/// Fixed RFC 3339 rendering (`...Z`, seconds precision unless sub-second
/// digits are present) so persisted corpora are byte-stable.
pub mod utc_seconds {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_timestamp(&s).map_err(serde::de::Error::custom)
    }
}

/// Accepts RFC 3339 with any offset, or a naive `YYYY-MM-DD HH:MM:SS` read as UTC.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(format!("unparseable timestamp {s:?}"))
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate tweet id {0:?}")]
    DuplicateId(String),
    #[error("corpus contains no records")]
    EmptyCorpus,
    #[error("reading corpus: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
struct RawTweet {
    id: Option<String>,
    text: Option<String>,
    mmi_region: Option<String>,
    grid_cell: Option<String>,
    timestamp: Option<String>,
    #[serde(default)]
    sa_labels: Option<Vec<String>>,
}

fn record(line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

fn convert(line: usize, raw: RawTweet, schema: &Schema) -> Result<Tweet, CorpusError> {
    let id = raw.id.filter(|s| !s.trim().is_empty()).ok_or_else(|| record(line, "missing or empty id"))?;
    let text = raw
        .text
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| record(line, "missing or empty text"))?;
    let mmi_region = raw
        .mmi_region
        .ok_or_else(|| record(line, "missing mmi_region"))?
        .parse::<Mmi>()
        .map_err(|e| record(line, e.to_string()))?;
    let grid_cell = raw
        .grid_cell
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| record(line, "missing or empty grid_cell"))?;
    let timestamp = parse_timestamp(&raw.timestamp.ok_or_else(|| record(line, "missing timestamp"))?)
        .map_err(|e| record(line, e))?;
    let mut sa_labels = BTreeSet::new();
    for label in raw.sa_labels.unwrap_or_default() {
        let name = canonicalize(&label);
        if !schema.contains(&name) {
            return Err(record(line, format!("label {label:?} not in schema")));
        }
        sa_labels.insert(name);
    }
    Ok(Tweet {
        id,
        text,
        mmi_region,
        grid_cell,
        timestamp,
        sa_labels,
    })
}

/// Parses corpus text. Input order is preserved.
pub fn parse_corpus(text: &str, schema: &Schema) -> Result<Vec<Tweet>, CorpusError> {
    let mut seen = HashSet::new();
    let mut tweets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTweet = serde_json::from_str(line).map_err(|e| record(i + 1, e.to_string()))?;
        let tweet = convert(i + 1, raw, schema)?;
        if !seen.insert(tweet.id.clone()) {
            return Err(CorpusError::DuplicateId(tweet.id));
        }
        tweets.push(tweet);
    }
    if tweets.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(tweets)
}

pub fn load_corpus(path: impl AsRef<Path>, schema: &Schema) -> Result<Vec<Tweet>, CorpusError> {
    parse_corpus(&std::fs::read_to_string(path)?, schema)
}

/// Serializes a corpus in the same line-delimited format `parse_corpus` reads.
pub fn corpus_to_string(tweets: &[Tweet]) -> String {
    let mut out = String::new();
    for t in tweets {
        out.push_str(&serde_json::to_string(t).expect("tweet serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: impl AsRef<Path>, tweets: &[Tweet]) -> std::io::Result<()> {
    std::fs::write(path, corpus_to_string(tweets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMeta {
    pub name: String,
    pub start_date: NaiveDate,
    pub epicenter: String,
    pub magnitude: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("event name is empty")]
    EmptyName,
    #[error("magnitude must be positive, got {0}")]
    NonPositiveMagnitude(f64),
}

impl EventMeta {
    pub fn validate(&self) -> Result<(), EventError> {
        if self.name.trim().is_empty() {
            return Err(EventError::EmptyName);
        }
        if !(self.magnitude > 0.0) {
            return Err(EventError::NonPositiveMagnitude(self.magnitude));
        }
        Ok(())
    }
}

//! Event-level impact proxy, indexed by MMI.
//!
//! Tables are CSV with header
//! `mmi,perceived_shaking,damage_resistant,damage_vulnerable,population_exposed`.
//! Population uses the source tables' display convention: `"1,862k"` is 1 862 000,
//! `-` means no data reported.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EventMeta, Mmi, Tweet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyRecord {
    pub mmi: Mmi,
    pub perceived_shaking: String,
    pub damage_resistant: String,
    pub damage_vulnerable: String,
    pub population_exposed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxyTable {
    event: String,
    records: BTreeMap<Mmi, ProxyRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxySummary {
    pub event: String,
    pub mmi: Mmi,
    pub rendered_text: String,
}

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("proxy table has no row for MMI {0}")]
    MissingMmiLevel(Mmi),
    #[error("row {row}: unparseable population {value:?}")]
    UnparseablePopulation { row: usize, value: String },
    #[error("row {row}: MMI {mmi} listed twice")]
    DuplicateMmi { row: usize, mmi: Mmi },
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("no proxy row for region {0}")]
    UnknownRegion(Mmi),
    #[error("reading proxy table: {0}")]
    Io(#[from] std::io::Error),
}

/// Parses a population cell. `-` (or empty) is absent.
pub fn parse_population(cell: &str) -> Option<Option<u64>> {
    let t = cell.trim();
    if t.is_empty() || t == "-" {
        return Some(None);
    }
    let (digits, scale) = match t.strip_suffix(['k', 'K']) {
        Some(d) => (d, 1000),
        None => (t, 1),
    };
    let digits: String = digits.chars().filter(|c| *c != ',').collect();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<u64>().ok()?.checked_mul(scale).map(Some)
}

fn group_thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Inverse of [`parse_population`] for whole thousands: `1862000` → `"1,862k"`.
pub fn format_population(pop: Option<u64>) -> String {
    match pop {
        None => "unknown".to_string(),
        Some(0) => "0".to_string(),
        Some(n) if n % 1000 == 0 => format!("{}k", group_thousands(n / 1000)),
        Some(n) => group_thousands(n),
    }
}

#[derive(Deserialize)]
struct Row {
    mmi: String,
    perceived_shaking: String,
    damage_resistant: String,
    damage_vulnerable: String,
    population_exposed: String,
}

impl ProxyTable {
    pub fn parse(text: &str, event: &EventMeta) -> Result<Self, ProxyError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut records = BTreeMap::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let n = i + 1;
            let row = row.map_err(|e| ProxyError::Malformed { row: n, reason: e.to_string() })?;
            let mmi: Mmi = row
                .mmi
                .parse()
                .map_err(|e: crate::corpus::InvalidMmi| ProxyError::Malformed { row: n, reason: e.to_string() })?;
            let population_exposed =
                parse_population(&row.population_exposed).ok_or_else(|| ProxyError::UnparseablePopulation {
                    row: n,
                    value: row.population_exposed.clone(),
                })?;
            let rec = ProxyRecord {
                mmi,
                perceived_shaking: row.perceived_shaking,
                damage_resistant: row.damage_resistant,
                damage_vulnerable: row.damage_vulnerable,
                population_exposed,
            };
            if records.insert(mmi, rec).is_some() {
                return Err(ProxyError::DuplicateMmi { row: n, mmi });
            }
        }
        if let Some(missing) = Mmi::ALL.into_iter().find(|m| !records.contains_key(m)) {
            return Err(ProxyError::MissingMmiLevel(missing));
        }
        Ok(ProxyTable {
            event: event.name.clone(),
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>, event: &EventMeta) -> Result<Self, ProxyError> {
        Self::parse(&std::fs::read_to_string(path)?, event)
    }

    pub fn event(&self) -> &str {
        &self.event
    }

    pub fn get(&self, mmi: Mmi) -> Option<&ProxyRecord> {
        self.records.get(&mmi)
    }

    pub fn records(&self) -> impl Iterator<Item = &ProxyRecord> {
        self.records.values()
    }

    /// Summary for a region. Depends only on the event and the MMI row.
    pub fn summary_for(&self, mmi: Mmi) -> Result<ProxySummary, ProxyError> {
        let rec = self.get(mmi).ok_or(ProxyError::UnknownRegion(mmi))?;
        Ok(ProxySummary {
            event: self.event.clone(),
            mmi,
            rendered_text: render_summary(&self.event, rec),
        })
    }

    /// Location-conditioned summary for one post. The timestamp is ignored.
    pub fn lookup(&self, tweet: &Tweet) -> Result<ProxySummary, ProxyError> {
        self.summary_for(tweet.mmi_region)
    }
}

pub fn render_summary(event: &str, rec: &ProxyRecord) -> String {
    format!(
        "Event: {event}; MMI: {}; perceived shaking: {}; potential damage (resistant structures): {}; \
         potential damage (vulnerable structures): {}; population exposed: {}",
        rec.mmi,
        rec.perceived_shaking,
        rec.damage_resistant,
        rec.damage_vulnerable,
        format_population(rec.population_exposed),
    )
}

/// A proxy table and event shipped with the crate.
#[derive(Debug, Clone, Copy)]
pub struct BundledEvent {
    pub key: &'static str,
    pub table: &'static str,
}

pub const BUNDLED: [BundledEvent; 6] = [
    BundledEvent {
        key: "chile_2014",
        table: include_str!("../data/proxy/chile_2014.csv"),
    },
    BundledEvent {
        key: "napa_2014",
        table: include_str!("../data/proxy/napa_2014.csv"),
    },
    BundledEvent {
        key: "nepal_2015",
        table: include_str!("../data/proxy/nepal_2015.csv"),
    },
    BundledEvent {
        key: "ridgecrest_2019",
        table: include_str!("../data/proxy/ridgecrest_2019.csv"),
    },
    BundledEvent {
        key: "fukushima_2021",
        table: include_str!("../data/proxy/fukushima_2021.csv"),
    },
    BundledEvent {
        key: "haiti_2021",
        table: include_str!("../data/proxy/haiti_2021.csv"),
    },
];

const BUNDLED_EVENTS: &str = include_str!("../data/events.json");

/// Event metadata for the six bundled case studies, in `BUNDLED` order.
pub fn bundled_events() -> Vec<EventMeta> {
    serde_json::from_str(BUNDLED_EVENTS).expect("bundled events parse")
}

/// Loads a bundled table by key (e.g. `"haiti_2021"`).
pub fn bundled(key: &str) -> Option<(EventMeta, ProxyTable)> {
    let idx = BUNDLED.iter().position(|b| b.key == key)?;
    let event = bundled_events().swap_remove(idx);
    let table = ProxyTable::parse(BUNDLED[idx].table, &event).expect("bundled table parses");
    Some((event, table))
}

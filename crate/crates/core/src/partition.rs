//! Plausibility–confidence quadrants.
//!
//! ```text
//!  plausibility
//!      high |  Q1  |  Q3
//!      low  |  Q2  |  Q4
//!           +------+------
//!             low    high   confidence
//! ```
//!
//! By default an axis is "high" only strictly above its boundary, so the
//! neutral points l = 3 and c = 50 fall on the low side.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::uncertainty::UncertaintyEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuadrantTag {
    Q1,
    Q2,
    Q3,
    Q4,
    #[serde(rename = "BASELINE")]
    Baseline,
}

impl QuadrantTag {
    pub const QUADRANTS: [QuadrantTag; 4] = [QuadrantTag::Q1, QuadrantTag::Q2, QuadrantTag::Q3, QuadrantTag::Q4];
    pub const ALL: [QuadrantTag; 5] = [
        QuadrantTag::Q1,
        QuadrantTag::Q2,
        QuadrantTag::Q3,
        QuadrantTag::Q4,
        QuadrantTag::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuadrantTag::Q1 => "Q1",
            QuadrantTag::Q2 => "Q2",
            QuadrantTag::Q3 => "Q3",
            QuadrantTag::Q4 => "Q4",
            QuadrantTag::Baseline => "BASELINE",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            QuadrantTag::Q1 => "high plausibility, low confidence",
            QuadrantTag::Q2 => "low plausibility, low confidence",
            QuadrantTag::Q3 => "high plausibility, high confidence",
            QuadrantTag::Q4 => "low plausibility, high confidence",
            QuadrantTag::Baseline => "all posts, no uncertainty conditioning",
        }
    }
}

impl fmt::Display for QuadrantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuadrantTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuadrantTag::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown quadrant tag {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_likert")]
    pub likert_boundary: u8,
    #[serde(default = "default_confidence")]
    pub confidence_boundary: f64,
    /// Count values equal to a boundary as high.
    #[serde(default)]
    pub inclusive: bool,
}

fn default_likert() -> u8 {
    3
}
fn default_confidence() -> f64 {
    50.0
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            likert_boundary: default_likert(),
            confidence_boundary: default_confidence(),
            inclusive: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ThresholdError {
    #[error("likert boundary {0} outside 1..=5")]
    Likert(u8),
    #[error("confidence boundary {0} outside [0, 100]")]
    Confidence(f64),
    #[error("expected L:C, got {0:?}")]
    Syntax(String),
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), ThresholdError> {
        if !(1..=5).contains(&self.likert_boundary) {
            return Err(ThresholdError::Likert(self.likert_boundary));
        }
        if !(0.0..=100.0).contains(&self.confidence_boundary) {
            return Err(ThresholdError::Confidence(self.confidence_boundary));
        }
        Ok(())
    }

    fn above(&self, value: f64, boundary: f64) -> bool {
        if self.inclusive {
            value >= boundary
        } else {
            value > boundary
        }
    }

    pub fn high_plausibility(&self, likert: u8) -> bool {
        self.above(likert as f64, self.likert_boundary as f64)
    }

    pub fn high_confidence(&self, confidence: f64) -> bool {
        self.above(confidence, self.confidence_boundary)
    }
}

/// Parses the `L:C` command-line form, e.g. `3:50`.
impl FromStr for Thresholds {
    type Err = ThresholdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (l, c) = s.split_once(':').ok_or_else(|| ThresholdError::Syntax(s.into()))?;
        let t = Thresholds {
            likert_boundary: l.trim().parse().map_err(|_| ThresholdError::Syntax(s.into()))?,
            confidence_boundary: c.trim().parse().map_err(|_| ThresholdError::Syntax(s.into()))?,
            inclusive: false,
        };
        t.validate()?;
        Ok(t)
    }
}

pub fn quadrant_of(likert: u8, confidence: f64, thresholds: &Thresholds) -> QuadrantTag {
    match (thresholds.high_plausibility(likert), thresholds.high_confidence(confidence)) {
        (true, true) => QuadrantTag::Q3,
        (true, false) => QuadrantTag::Q1,
        (false, true) => QuadrantTag::Q4,
        (false, false) => QuadrantTag::Q2,
    }
}

pub fn assign_quadrant(estimate: &UncertaintyEstimate, thresholds: &Thresholds) -> QuadrantTag {
    quadrant_of(estimate.likert, estimate.confidence, thresholds)
}

/// Thresholds used plus per-quadrant tweet ids. All four quadrants are
/// always present, possibly empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub thresholds: Thresholds,
    pub quadrants: BTreeMap<QuadrantTag, Vec<String>>,
    pub counts: BTreeMap<QuadrantTag, usize>,
}

impl PartitionManifest {
    pub fn ids(&self, tag: QuadrantTag) -> &[String] {
        self.quadrants.get(&tag).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tag_of(&self, tweet_id: &str) -> Option<QuadrantTag> {
        self.quadrants
            .iter()
            .find(|(_, ids)| ids.iter().any(|i| i == tweet_id))
            .map(|(t, _)| *t)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

pub fn partition_corpus(estimates: &[UncertaintyEstimate], thresholds: &Thresholds) -> PartitionManifest {
    let mut quadrants: BTreeMap<QuadrantTag, Vec<String>> =
        QuadrantTag::QUADRANTS.into_iter().map(|t| (t, Vec::new())).collect();
    for e in estimates {
        quadrants
            .get_mut(&assign_quadrant(e, thresholds))
            .expect("all quadrants present")
            .push(e.tweet_id.clone());
    }
    for ids in quadrants.values_mut() {
        ids.sort();
    }
    let counts = quadrants.iter().map(|(t, ids)| (*t, ids.len())).collect();
    PartitionManifest {
        thresholds: *thresholds,
        quadrants,
        counts,
    }
}

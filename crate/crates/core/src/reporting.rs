//! Situation reports per grid cell and quadrant, plus an unconditioned
//! baseline per cell.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EventMeta, Tweet};
use crate::exec::bounded_map;
use crate::gateway::{ChatBackend, CompletionRequest};
use crate::partition::{PartitionManifest, QuadrantTag};
use crate::prompts::{self, BlockExtras};
use crate::uncertainty::UncertaintyEstimate;

const MIN_SENTENCE_CHARS: usize = 3;

/// Splits on `.`, `!` or `?` followed by whitespace. Fragments shorter than
/// three characters are joined to the next sentence (or to the previous one
/// at the end of the body).
pub fn split_sentences(body: &str) -> Vec<String> {
    let mut fragments = Vec::new();
    let mut start = 0;
    let mut chars = body.char_indices().peekable();
    while let Some((pos, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let end = pos + c.len_utf8();
                    fragments.push(&body[start..end]);
                    start = end;
                }
            }
        }
    }
    fragments.push(&body[start..]);

    let mut out: Vec<String> = Vec::new();
    let mut carry = String::new();
    for frag in fragments {
        let t = frag.trim();
        if t.is_empty() {
            continue;
        }
        let joined = if carry.is_empty() { t.to_string() } else { format!("{carry} {t}") };
        if joined.chars().count() < MIN_SENTENCE_CHARS {
            carry = joined;
        } else {
            out.push(joined);
            carry.clear();
        }
    }
    if !carry.is_empty() {
        match out.last_mut() {
            Some(last) => {
                last.push(' ');
                last.push_str(&carry);
            }
            None => out.push(carry),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ReportStatus {
    Generated,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub event: String,
    pub grid_cell: String,
    pub quadrant: QuadrantTag,
    pub status: ReportStatus,
    /// Size of the conditioning set, before any prompt truncation.
    pub tweet_count: usize,
    pub conditioning_ids: Vec<String>,
    pub body: String,
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Report {
    pub fn file_name(&self) -> String {
        report_file_name(&self.event, &self.grid_cell, self.quadrant)
    }
}

fn sanitize(part: &str) -> String {
    part.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn report_file_name(event: &str, grid_cell: &str, tag: QuadrantTag) -> String {
    format!("{}_{}_{}.txt", sanitize(event), sanitize(grid_cell), tag)
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no posts to condition the report on")]
    EmptyConditioningSet,
    #[error("partition manifest disagrees with estimates: {0}")]
    InconsistentManifest(String),
    #[error("writing reports: {0}")]
    Io(#[from] std::io::Error),
}

/// A post with its aggregated estimate.
#[derive(Debug, Clone, Copy)]
pub struct Conditioned<'a> {
    pub tweet: &'a Tweet,
    pub estimate: &'a UncertaintyEstimate,
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    /// Most posts placed in one prompt; the most recent are kept.
    pub cap: usize,
    pub temperature: f64,
    pub max_in_flight: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            cap: 200,
            temperature: 0.0,
            max_in_flight: 4,
        }
    }
}

/// Builds the report prompt. With `annotate` each post carries its
/// `[plausibility L/5, confidence C%]` annotation; the baseline omits it.
pub fn build_report_prompt(
    event: &EventMeta,
    grid_cell: &str,
    tweets: &[Conditioned<'_>],
    annotate: bool,
    cap: usize,
) -> Result<CompletionRequest, ReportError> {
    if tweets.is_empty() {
        return Err(ReportError::EmptyConditioningSet);
    }
    let mut ordered: Vec<_> = tweets.to_vec();
    ordered.sort_by(|a, b| b.tweet.timestamp.cmp(&a.tweet.timestamp).then(a.tweet.id.cmp(&b.tweet.id)));
    let cap = cap.max(1);
    let truncation = if ordered.len() > cap {
        format!("Showing the {cap} most recent tweets.\n")
    } else {
        String::new()
    };
    ordered.truncate(cap);
    let posts = ordered
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let extras = BlockExtras {
                time: true,
                categories: None,
                uncertainty: annotate.then_some((c.estimate.likert, c.estimate.confidence)),
            };
            prompts::render_post(i, c.tweet, &extras)
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    let mut user = prompts::fill(
        prompts::REPORT_USER,
        &[
            ("EVENT", &event.name),
            ("GRID_CELL", grid_cell),
            ("COUNT", &tweets.len().to_string()),
            ("TRUNCATION", "@@TRUNCATION@@"),
            ("POSTS", &posts),
        ],
    );
    user = user.replace("@@TRUNCATION@@\n", &truncation);
    Ok(CompletionRequest::new(prompts::REPORT_SYSTEM, user))
}

/// All reports for one event, ordered by `(grid_cell, quadrant)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub event: String,
    pub reports: Vec<Report>,
}

impl ReportBundle {
    pub fn get(&self, grid_cell: &str, tag: QuadrantTag) -> Option<&Report> {
        self.reports.iter().find(|r| r.grid_cell == grid_cell && r.quadrant == tag)
    }

    pub fn cells(&self) -> BTreeSet<&str> {
        self.reports.iter().map(|r| r.grid_cell.as_str()).collect()
    }

    pub fn count(&self, status: ReportStatus) -> usize {
        self.reports.iter().filter(|r| r.status == status).count()
    }

    /// Writes one text file per generated report plus `bundle.json`.
    pub fn write_to(&self, dir: &Path) -> Result<(), ReportError> {
        std::fs::create_dir_all(dir)?;
        for r in self.reports.iter().filter(|r| r.status == ReportStatus::Generated) {
            std::fs::write(dir.join(r.file_name()), format!("{}\n", r.body))?;
        }
        let json = serde_json::to_string_pretty(self).expect("bundle serializes");
        std::fs::write(dir.join("bundle.json"), json + "\n")?;
        Ok(())
    }

    pub fn read_from(dir: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(dir.join("bundle.json"))?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

fn check_consistency(estimates: &[UncertaintyEstimate], manifest: &PartitionManifest) -> Result<(), ReportError> {
    let in_manifest: BTreeSet<&str> = QuadrantTag::QUADRANTS
        .iter()
        .flat_map(|t| manifest.ids(*t))
        .map(String::as_str)
        .collect();
    let in_estimates: BTreeSet<&str> = estimates.iter().map(|e| e.tweet_id.as_str()).collect();
    if in_manifest != in_estimates {
        let extra = in_manifest.symmetric_difference(&in_estimates).next().expect("sets differ");
        return Err(ReportError::InconsistentManifest(format!(
            "tweet {extra:?} is in only one of them"
        )));
    }
    if in_manifest.len() != manifest.total() {
        return Err(ReportError::InconsistentManifest("a tweet appears in two quadrants".into()));
    }
    Ok(())
}

struct Job<'a> {
    cell: &'a str,
    tag: QuadrantTag,
    members: Vec<Conditioned<'a>>,
}

/// Generates five entries per grid cell: one per quadrant and a baseline.
/// Empty quadrants become `SKIPPED` entries; a failed completion becomes a
/// `FAILED` entry and the run carries on.
pub fn generate_reports(
    event: &EventMeta,
    corpus: &[Tweet],
    estimates: &[UncertaintyEstimate],
    manifest: &PartitionManifest,
    backend: &dyn ChatBackend,
    options: &ReportOptions,
) -> Result<ReportBundle, ReportError> {
    check_consistency(estimates, manifest)?;
    let by_id: HashMap<&str, &UncertaintyEstimate> = estimates.iter().map(|e| (e.tweet_id.as_str(), e)).collect();
    let mut cells: BTreeMap<&str, Vec<Conditioned<'_>>> = BTreeMap::new();
    for t in corpus {
        if let Some(e) = by_id.get(t.id.as_str()) {
            cells.entry(&t.grid_cell).or_default().push(Conditioned { tweet: t, estimate: e });
        }
    }
    let mut jobs = Vec::new();
    for (cell, members) in &cells {
        for tag in QuadrantTag::QUADRANTS {
            let ids: BTreeSet<&str> = manifest.ids(tag).iter().map(String::as_str).collect();
            jobs.push(Job {
                cell,
                tag,
                members: members.iter().filter(|c| ids.contains(c.tweet.id.as_str())).copied().collect(),
            });
        }
        jobs.push(Job {
            cell,
            tag: QuadrantTag::Baseline,
            members: members.clone(),
        });
    }
    let reports = bounded_map(&jobs, options.max_in_flight, |job| {
        let mut ids: Vec<String> = job.members.iter().map(|c| c.tweet.id.clone()).collect();
        ids.sort();
        let mut report = Report {
            event: event.name.clone(),
            grid_cell: job.cell.to_string(),
            quadrant: job.tag,
            status: ReportStatus::Skipped,
            tweet_count: job.members.len(),
            conditioning_ids: ids,
            body: String::new(),
            sentences: Vec::new(),
            error: None,
        };
        if job.members.is_empty() {
            return report;
        }
        let annotate = job.tag != QuadrantTag::Baseline;
        let result = build_report_prompt(event, job.cell, &job.members, annotate, options.cap)
            .map_err(|e| e.to_string())
            .and_then(|req| {
                backend
                    .complete(&req.with_temperature(options.temperature))
                    .map_err(|e| e.to_string())
            });
        match result {
            Ok(resp) if !resp.text.trim().is_empty() => {
                report.body = resp.text.trim().to_string();
                report.sentences = split_sentences(&report.body);
                report.status = ReportStatus::Generated;
            }
            Ok(_) => {
                report.status = ReportStatus::Failed;
                report.error = Some("empty completion".into());
            }
            Err(e) => {
                report.status = ReportStatus::Failed;
                report.error = Some(e);
            }
        }
        report
    });
    Ok(ReportBundle {
        event: event.name.clone(),
        reports,
    })
}

/// Time of the most recent post, for summaries.
pub fn latest_timestamp(tweets: &[Conditioned<'_>]) -> Option<String> {
    tweets
        .iter()
        .map(|c| c.tweet.timestamp)
        .max()
        .map(|t| t.to_rfc3339_opts(SecondsFormat::AutoSi, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitter_rules() {
        assert_eq!(
            split_sentences("Roads closed. Power out!  Is help coming? Yes"),
            ["Roads closed.", "Power out!", "Is help coming?", "Yes"]
        );
        assert_eq!(split_sentences("Magnitude 7.1 quake. Ok"), ["Magnitude 7.1 quake. Ok"]);
        assert_eq!(split_sentences("A. Big shaking here."), ["A. Big shaking here."]);
        assert_eq!(split_sentences("   "), Vec::<String>::new());
        assert_eq!(split_sentences("Hi"), ["Hi"]);
    }

    #[test]
    fn splitter_is_pure() {
        let body = "One thing. Another thing! A third?";
        assert_eq!(split_sentences(body), split_sentences(body));
        assert_eq!(split_sentences(body).len(), 3);
    }

    #[test]
    fn file_names_are_sanitized() {
        assert_eq!(
            report_file_name("Fukushima 2021", "cell/3", QuadrantTag::Baseline),
            "Fukushima_2021_cell_3_BASELINE.txt"
        );
    }
}

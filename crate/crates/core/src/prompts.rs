//! Prompt templates and the post-block format embedded in them.
//!
//! Every stage lists posts the same way, one block per post separated by a
//! blank line:
//!
//! ```text
//! [0] tweet_id: "t1"
//! time: 2021-02-13T14:20:00Z
//! situational_categories: affected_people
//! text: "Two people trapped under a collapsed wall"
//! ```
//!
//! Ids and texts are JSON string literals, so a block always fits on known
//! lines whatever the post contains. [`parse_posts`] reads blocks back; the
//! mock backend relies on it.

use chrono::SecondsFormat;

use crate::corpus::{Schema, Tweet};

pub const CLASSIFY_SYSTEM: &str = include_str!("../prompts/classify_system.txt");
pub const ASSESS_SYSTEM: &str = include_str!("../prompts/assess_system.txt");
pub const REPORT_SYSTEM: &str = include_str!("../prompts/report_system.txt");

pub(crate) const CLASSIFY_USER: &str = include_str!("../prompts/classify_user.txt");
pub(crate) const ASSESS_USER: &str = include_str!("../prompts/assess_user.txt");
pub(crate) const REPORT_USER: &str = include_str!("../prompts/report_user.txt");
pub(crate) const FORMATTING_RULES: &str = include_str!("../prompts/formatting_rules.txt");

/// Marker shown in place of categories for posts classified with none.
pub const NO_LABELS: &str = "(no SA labels assigned)";

/// Substitutes `{{KEY}}` placeholders. Panics on a placeholder left unfilled,
/// which would mean a template and its caller disagree.
pub(crate) fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    assert!(!out.contains("{{"), "unfilled placeholder in template");
    out
}

pub(crate) fn render_schema(schema: &Schema) -> String {
    schema
        .categories()
        .iter()
        .map(|c| format!("- {}: {}", c.name, c.description))
        .collect::<Vec<_>>()
        .join("\n")
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// Confidence rendered with at most one decimal: `90`, `86.7`.
pub fn format_confidence(c: f64) -> String {
    let s = format!("{c:.1}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

pub fn uncertainty_annotation(likert: u8, confidence: f64) -> String {
    format!("[plausibility {likert}/5, confidence {}%]", format_confidence(confidence))
}

/// Optional lines of a post block, in rendering order.
#[derive(Debug, Default, Clone)]
pub(crate) struct BlockExtras<'a> {
    pub time: bool,
    pub categories: Option<Vec<&'a str>>,
    pub uncertainty: Option<(u8, f64)>,
}

pub(crate) fn render_post(index: usize, tweet: &Tweet, extras: &BlockExtras<'_>) -> String {
    let mut lines = vec![format!("[{index}] tweet_id: {}", quoted(&tweet.id))];
    if extras.time {
        lines.push(format!(
            "time: {}",
            tweet.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true)
        ));
    }
    if let Some(cats) = &extras.categories {
        let shown = if cats.is_empty() { NO_LABELS.to_string() } else { cats.join(", ") };
        lines.push(format!("situational_categories: {shown}"));
    }
    if let Some((l, c)) = extras.uncertainty {
        lines.push(format!("uncertainty: {}", uncertainty_annotation(l, c)));
    }
    lines.push(format!("text: {}", quoted(&tweet.text)));
    lines.join("\n")
}

/// One post block read back from a rendered prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPost {
    pub index: usize,
    pub tweet_id: String,
    pub text: String,
    pub time: Option<String>,
    /// `Some(vec![])` when the block carried the no-labels marker.
    pub categories: Option<Vec<String>>,
    pub uncertainty: Option<(u8, f64)>,
}

fn parse_annotation(s: &str) -> Option<(u8, f64)> {
    let inner = s.trim().strip_prefix("[plausibility ")?.strip_suffix("%]")?;
    let (l, c) = inner.split_once("/5, confidence ")?;
    Some((l.parse().ok()?, c.parse().ok()?))
}

fn parse_header(line: &str) -> Option<(usize, String)> {
    let rest = line.strip_prefix('[')?;
    let (idx, rest) = rest.split_once("] tweet_id: ")?;
    Some((idx.parse().ok()?, serde_json::from_str(rest).ok()?))
}

/// Extracts every post block from a rendered user prompt.
pub fn parse_posts(user_text: &str) -> Vec<PromptPost> {
    let mut posts = Vec::new();
    let mut current: Option<PromptPost> = None;
    for line in user_text.lines() {
        if let Some((index, tweet_id)) = parse_header(line) {
            posts.extend(current.take());
            current = Some(PromptPost {
                index,
                tweet_id,
                text: String::new(),
                time: None,
                categories: None,
                uncertainty: None,
            });
            continue;
        }
        let Some(post) = current.as_mut() else { continue };
        if let Some(v) = line.strip_prefix("time: ") {
            post.time = Some(v.to_string());
        } else if let Some(v) = line.strip_prefix("situational_categories: ") {
            post.categories = Some(if v == NO_LABELS {
                Vec::new()
            } else {
                v.split(", ").map(str::to_string).collect()
            });
        } else if let Some(v) = line.strip_prefix("uncertainty: ") {
            post.uncertainty = parse_annotation(v);
        } else if let Some(v) = line.strip_prefix("text: ") {
            post.text = serde_json::from_str(v).unwrap_or_default();
            posts.extend(current.take());
        }
    }
    posts.extend(current);
    posts
}

/// Value of a `Key: value` line in a rendered prompt, e.g. `Event`.
pub fn context_value<'a>(user_text: &'a str, key: &str) -> Option<&'a str> {
    let prefix = format!("{key}: ");
    user_text.lines().find_map(|l| l.strip_prefix(prefix.as_str()))
}

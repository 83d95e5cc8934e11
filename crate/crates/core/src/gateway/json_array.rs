use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub type Record = Map<String, Value>;

/// How much non-JSON noise around the array is tolerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum RepairLevel {
    /// Output must be exactly one JSON array, surrounding whitespace aside.
    Strict,
    /// Markdown fences and prose before the first `[` or after the closing `]`
    /// are discarded.
    #[default]
    StripNoise,
}

impl RepairLevel {
    pub fn as_u8(self) -> u8 {
        match self {
            RepairLevel::Strict => 0,
            RepairLevel::StripNoise => 1,
        }
    }

    pub fn from_u8(level: u8) -> Option<Self> {
        match level {
            0 => Some(RepairLevel::Strict),
            1 => Some(RepairLevel::StripNoise),
            _ => None,
        }
    }
}

impl Serialize for RepairLevel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for RepairLevel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let n = u8::deserialize(d)?;
        RepairLevel::from_u8(n).ok_or_else(|| serde::de::Error::custom(format!("repair level {n} not in 0..=1")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("output is not a JSON array")]
    NotAnArray,
    #[error("record {index} is missing field {field:?}")]
    MissingField { index: usize, field: String },
    #[error("record {index} is not a JSON object")]
    NotAnObject { index: usize },
    #[error("output ends before the JSON array is closed")]
    TruncatedOutput,
    #[error("invalid JSON: {0}")]
    Syntax(String),
}

/// Byte offset one past the bracket closing the one at `open`, if balanced.
fn matching_close(text: &str, open: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' | b'{' => depth += 1,
            b']' | b'}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn parse_array(candidate: &str) -> Result<Vec<Value>, ParseError> {
    match serde_json::from_str::<Value>(candidate) {
        Ok(Value::Array(items)) => Ok(items),
        Ok(_) => Err(ParseError::NotAnArray),
        Err(e) if e.is_eof() => Err(ParseError::TruncatedOutput),
        Err(e) => Err(ParseError::Syntax(e.to_string())),
    }
}

fn locate_strict(raw: &str) -> Result<Vec<Value>, ParseError> {
    let t = raw.trim().trim_start_matches('\u{feff}');
    if !t.starts_with('[') {
        return Err(ParseError::NotAnArray);
    }
    if !t.ends_with(']') {
        return match matching_close(t, 0) {
            None => Err(ParseError::TruncatedOutput),
            Some(_) => Err(ParseError::NotAnArray),
        };
    }
    parse_array(t)
}

/// Offsets of `[` outside any string, object or array. String state resets
/// at line breaks, which JSON strings cannot contain, so stray quotes in
/// prose do not hide a later array.
fn top_level_opens(text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, b) in text.bytes().enumerate() {
        if b == b'\n' {
            in_string = false;
            escaped = false;
            continue;
        }
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' | b'{' => {
                if b == b'[' && depth == 0 {
                    out.push(i);
                }
                depth += 1;
            }
            b']' | b'}' => depth = depth.saturating_sub(1),
            _ => {}
        }
    }
    out
}

fn locate_repaired(raw: &str) -> Result<Vec<Value>, ParseError> {
    let cleaned = strip_fences(raw.trim_start_matches('\u{feff}'));
    let mut first_err = None;
    for open in top_level_opens(&cleaned) {
        let result = match matching_close(&cleaned, open) {
            Some(close) => parse_array(&cleaned[open..close]),
            None => Err(ParseError::TruncatedOutput),
        };
        match result {
            Ok(items) => return Ok(items),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.unwrap_or(ParseError::NotAnArray))
}

fn check_record(index: usize, value: Value, required: &[&str]) -> Result<Record, ParseError> {
    let Value::Object(map) = value else {
        return Err(ParseError::NotAnObject { index });
    };
    if let Some(field) = required.iter().find(|f| !map.contains_key(**f)) {
        return Err(ParseError::MissingField {
            index,
            field: field.to_string(),
        });
    }
    Ok(map)
}

/// Locates the top-level array and validates each element on its own, so one
/// bad record does not discard its neighbours.
pub fn parse_json_records(
    raw: &str,
    required_fields: &[&str],
    level: RepairLevel,
) -> Result<Vec<Result<Record, ParseError>>, ParseError> {
    let items = match level {
        RepairLevel::Strict => locate_strict(raw)?,
        RepairLevel::StripNoise => locate_repaired(raw)?,
    };
    Ok(items
        .into_iter()
        .enumerate()
        .map(|(i, v)| check_record(i, v, required_fields))
        .collect())
}

/// All-or-nothing variant: the first invalid record fails the whole parse.
pub fn parse_json_array(raw: &str, required_fields: &[&str], level: RepairLevel) -> Result<Vec<Record>, ParseError> {
    parse_json_records(raw, required_fields, level)?.into_iter().collect()
}

#![allow(dead_code)]

pub mod golden;
pub mod table_backend;

use std::path::{Path, PathBuf};

use sitrep::classification::REQUIRED_FIELDS;
use sitrep::gateway::{parse_json_array, ParseError, RepairLevel};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo")
}

/// Outcome label in the form used by `model_output/expected.json`.
pub fn outcome_label(result: &Result<Vec<sitrep::gateway::Record>, ParseError>) -> String {
    match result {
        Ok(records) => format!("ok:{}", records.len()),
        Err(ParseError::NotAnArray) => "NotAnArray".into(),
        Err(ParseError::TruncatedOutput) => "TruncatedOutput".into(),
        Err(ParseError::Syntax(_)) => "Syntax".into(),
        Err(ParseError::MissingField { index, field }) => format!("MissingField:{index}:{field}"),
        Err(ParseError::NotAnObject { index }) => format!("NotAnObject:{index}"),
    }
}

/// Runs every malformed-output case at both repair levels. Returns the
/// number of cases and the mismatches.
pub fn run_parser_suite() -> (usize, Vec<String>) {
    let dir = fixtures().join("model_output");
    let expected: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
    let mut failures = Vec::new();
    for case in &expected {
        let file = case["file"].as_str().unwrap();
        let raw = std::fs::read_to_string(dir.join(file)).unwrap();
        for (level, key) in [(RepairLevel::Strict, "strict"), (RepairLevel::StripNoise, "repaired")] {
            let got = outcome_label(&parse_json_array(&raw, &REQUIRED_FIELDS, level));
            if got != case[key].as_str().unwrap() {
                failures.push(format!("{file} [{key}]: expected {}, got {got}", case[key]));
            }
        }
    }
    (expected.len(), failures)
}

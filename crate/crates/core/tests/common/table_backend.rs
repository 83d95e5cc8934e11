use std::collections::HashMap;

use serde_json::json;
use sitrep::gateway::{ChatBackend, CompletionRequest, CompletionResponse, GatewayError, MockBackend, Synthetic};
use sitrep::prompts::{self, ASSESS_SYSTEM};

/// Answers assessment requests from a fixed `tweet_id -> (likert, confidence)`
/// table at every temperature; everything else goes to the heuristic mock.
pub struct TableBackend {
    pub table: HashMap<String, (u8, f64)>,
    inner: MockBackend,
}

impl TableBackend {
    pub fn new(table: HashMap<String, (u8, f64)>) -> Self {
        TableBackend {
            table,
            inner: MockBackend::synthetic(Synthetic::Heuristic),
        }
    }
}

impl ChatBackend for TableBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        if request.system_text != ASSESS_SYSTEM {
            return self.inner.complete(request);
        }
        let records: Vec<_> = prompts::parse_posts(&request.user_text)
            .iter()
            .map(|p| {
                let (l, c) = self.table[&p.tweet_id];
                json!({
                    "index": p.index,
                    "tweet_id": p.tweet_id,
                    "situational_categories": p.categories,
                    "likert_plausibility": l,
                    "confidence": c,
                    "discrepancy_assessment": "none",
                    "reason_alignment": "fixed by test table",
                })
            })
            .collect();
        Ok(CompletionResponse {
            text: serde_json::to_string(&records).unwrap(),
            backend_id: "table".into(),
            latency: Default::default(),
            usage: None,
        })
    }

    fn id(&self) -> String {
        "table".into()
    }
}

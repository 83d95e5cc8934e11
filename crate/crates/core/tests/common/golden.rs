//! Prompt goldens. Regenerate with `SITREP_BLESS=1 cargo test --test prompts_golden`.

use std::collections::BTreeSet;
use std::path::PathBuf;

use sitrep::classification::{build_classification_prompt, SaClassification};
use sitrep::corpus::{load_corpus, Schema, Tweet};
use sitrep::gateway::CompletionRequest;
use sitrep::proxy;
use sitrep::reporting::{build_report_prompt, Conditioned};
use sitrep::uncertainty::{build_assessment_prompt, AssessItem, UncertaintyEstimate};

fn golden_path(name: &str) -> PathBuf {
    super::fixtures().join("../golden").join(name)
}

fn render(req: &CompletionRequest) -> String {
    format!("[system]\n{}\n[user]\n{}\n", req.system_text, req.user_text)
}

/// Compares against the golden file, or rewrites it when blessing.
pub fn check_golden(name: &str, req: &CompletionRequest) -> Result<(), String> {
    let path = golden_path(name);
    let actual = render(req);
    if std::env::var_os("SITREP_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{name} differs from golden file"))
    }
}

fn demo() -> Vec<Tweet> {
    load_corpus(super::demo_dir().join("corpus.jsonl"), &Schema::default_earthquake()).unwrap()
}

fn estimate(id: &str, likert: u8, confidence: f64) -> UncertaintyEstimate {
    UncertaintyEstimate {
        tweet_id: id.into(),
        likert,
        confidence,
        sample_count: 3,
        degraded: false,
        samples: vec![],
    }
}

pub fn golden_requests() -> Vec<(&'static str, CompletionRequest)> {
    let tweets = demo();
    let schema = Schema::default_earthquake();
    let (event, table) = proxy::bundled("fukushima_2021").unwrap();
    let region_vi: Vec<&Tweet> = tweets.iter().filter(|t| t.grid_cell == "cell-a").take(3).collect();

    let classify = build_classification_prompt(&tweets[..3], &schema, 10).unwrap();

    let labels: Vec<SaClassification> = region_vi
        .iter()
        .zip([&["infrastructure_utilities"][..], &["caution_advice"], &[]])
        .map(|(t, cats)| SaClassification {
            tweet_id: t.id.clone(),
            categories: cats.iter().map(|c| c.to_string()).collect::<BTreeSet<_>>(),
            rationales: vec![],
        })
        .collect();
    let items: Vec<AssessItem> = region_vi
        .iter()
        .zip(&labels)
        .map(|(t, c)| AssessItem { tweet: t, classification: c })
        .collect();
    let assess = build_assessment_prompt(&items, &table.summary_for(region_vi[0].mmi_region).unwrap(), &event).unwrap();

    let ests = [estimate(&region_vi[0].id, 5, 90.0), estimate(&region_vi[1].id, 4, 66.6667), estimate(&region_vi[2].id, 4, 100.0)];
    let conditioned: Vec<Conditioned> = region_vi
        .iter()
        .zip(&ests)
        .map(|(t, e)| Conditioned { tweet: t, estimate: e })
        .collect();
    let report = build_report_prompt(&event, "cell-a", &conditioned, true, 200).unwrap();
    let baseline = build_report_prompt(&event, "cell-a", &conditioned, false, 200).unwrap();
    let truncated = build_report_prompt(&event, "cell-a", &conditioned, true, 2).unwrap();

    vec![
        ("classify_batch.txt", classify),
        ("assess_batch.txt", assess),
        ("report_quadrant.txt", report),
        ("report_baseline.txt", baseline),
        ("report_truncated.txt", truncated),
    ]
}


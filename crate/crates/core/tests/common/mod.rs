#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use ave_core::backend::{CallError, CostLedger, ModelRequest, Part, Pricing, PricingTable};
use ave_core::dataset::{ContextBundle, Sample, WeaknessSet};
use ave_core::stub::{FnBackend, LexicalMatcher};
use ave_core::taxonomy::Category;

pub const MARKER: &str = "Rule: check object permanence.";

pub fn sample(id: &str, category: Category, sub: &str, weaknesses: &[&str]) -> Sample {
    Sample {
        id: id.into(),
        category,
        subcategory: sub.into(),
        task_family: category.task_family(),
        context: ContextBundle::text(format!("instruction for {id}")),
        output_video_ref: format!("videos/{id}.mp4"),
        weaknesses: WeaknessSet::new(weaknesses.iter().copied()).unwrap(),
        model_name: "seed-model".into(),
        verdict: None,
    }
}

/// 30 samples; most carry one or two reference weaknesses.
pub fn corpus() -> Vec<Sample> {
    let pool = ["object vanishes", "extra finger", "flickering background", "wrong color"];
    (0..30)
        .map(|i| {
            let refs: Vec<&str> = match i % 4 {
                0 => vec![],
                1 => vec![pool[i % pool.len()]],
                _ => vec![pool[i % pool.len()], pool[(i + 1) % pool.len()]],
            };
            let cat = Category::ALL[i % 6];
            sample(&format!("s{i:02}"), cat, &format!("{cat}_a"), &refs)
        })
        .collect()
}

pub fn output_ref(request: &ModelRequest) -> String {
    request
        .user_parts
        .iter()
        .rev()
        .find_map(|p| match p {
            Part::Video(v) => Some(v.clone()),
            _ => None,
        })
        .expect("judge request carries the output video")
}

/// Judge that is perfect when its system prompt contains `MARKER` and
/// otherwise reports the same generic artifact for every video.
pub fn marker_judge(name: &str, samples: &[Sample]) -> FnBackend {
    let refs: Arc<BTreeMap<String, Vec<String>>> =
        Arc::new(samples.iter().map(|s| (s.output_video_ref.clone(), s.weaknesses.items().to_vec())).collect());
    FnBackend::new(name, move |req: &ModelRequest| {
        if req.system_prompt.contains(MARKER) {
            let items = &refs[&output_ref(req)];
            if items.is_empty() {
                return Ok("NONE".into());
            }
            Ok(items.iter().map(|w| format!("- {w}")).collect::<Vec<_>>().join("\n"))
        } else {
            Ok("- flickering background".into())
        }
    })
}

pub fn parent_prompt(request: &ModelRequest) -> Result<String, CallError> {
    let text = request.user_text();
    let (_, rest) = text.split_once("<prompt>\n").ok_or(CallError::Protocol("no prompt".into()))?;
    let (body, _) = rest.split_once("\n</prompt>").ok_or(CallError::Protocol("no prompt".into()))?;
    Ok(body.to_string())
}

/// Optimizer that injects `MARKER` first and afterwards keeps appending a
/// harmless extra rule.
pub fn marker_optimizer(name: &str) -> FnBackend {
    FnBackend::new(name, |req: &ModelRequest| {
        let parent = parent_prompt(req)?;
        if parent.contains(MARKER) {
            Ok(format!("{parent} Also verify motion continuity."))
        } else {
            Ok(format!("{parent} {MARKER}"))
        }
    })
}

pub fn lexical() -> LexicalMatcher {
    LexicalMatcher::new("lexical")
}

// Output is free so that a call's projected cost equals what it is charged,
// which lets a budget end the loop after an exact number of iterations.
pub const JUDGE_PRICE: Pricing = Pricing { usd_per_1m_input_tokens: 100.0, usd_per_1m_output_tokens: 0.0 };
pub const MATCH_PRICE: Pricing = Pricing { usd_per_1m_input_tokens: 50.0, usd_per_1m_output_tokens: 0.0 };
pub const OPT_PRICE: Pricing = Pricing { usd_per_1m_input_tokens: 300.0, usd_per_1m_output_tokens: 0.0 };

pub fn pricing(judges: &[&str]) -> PricingTable {
    let mut t = PricingTable::default().with("lexical", MATCH_PRICE).with("optimizer", OPT_PRICE);
    for j in judges {
        t = t.with(*j, JUDGE_PRICE);
    }
    t
}

pub fn ledger(budget: f64, judges: &[&str]) -> CostLedger {
    CostLedger::new(budget, pricing(judges)).unwrap()
}

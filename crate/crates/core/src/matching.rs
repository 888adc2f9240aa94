//! Semantic set matching between a predicted and a referenced weakness set:
//! one-to-one pairing via a match agent, the instance-level confusion
//! arithmetic, normalization, and textual feedback.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{complete, tags, CallSettings, CostLedger, ModelBackend, ModelRequest, Part};
use crate::dataset::WeaknessSet;
use crate::{Error, Result};

pub const PERFECT_PREDICTION: &str = "Perfect prediction.";
pub const EMPTY_SIDE: &str = "(none)";

const REFERENCED_HEADER: &str = "Referenced weaknesses:";
const PREDICTED_HEADER: &str = "Predicted weaknesses:";

/// The match agent: a backend plus its fixed instructions.
#[derive(Clone, Copy)]
pub struct MatchAgent<'a> {
    pub backend: &'a dyn ModelBackend,
    pub instructions: &'a str,
    pub settings: CallSettings,
}

impl<'a> MatchAgent<'a> {
    pub fn new(backend: &'a dyn ModelBackend, instructions: &'a str) -> Self {
        MatchAgent { backend, instructions, settings: CallSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// `(referenced item, predicted item)`.
    pub matched_pairs: Vec<(String, String)>,
    /// Referenced items without a partner (false negatives).
    pub omissions: Vec<String>,
    /// Predicted items without a partner (false positives).
    pub hallucinations: Vec<String>,
}

impl MatchOutcome {
    /// Builds the outcome from index pairs, which must already be in range
    /// and one-to-one.
    pub fn from_index_pairs(y: &[String], yhat: &[String], pairs: &[(usize, usize)]) -> Self {
        let mut ref_used = alloc::vec![false; y.len()];
        let mut pred_used = alloc::vec![false; yhat.len()];
        let mut matched_pairs = Vec::with_capacity(pairs.len());
        for &(r, p) in pairs {
            ref_used[r] = true;
            pred_used[p] = true;
            matched_pairs.push((y[r].clone(), yhat[p].clone()));
        }
        let unused = |items: &[String], used: &[bool]| {
            items.iter().zip(used).filter(|(_, u)| !**u).map(|(i, _)| i.clone()).collect()
        };
        MatchOutcome { omissions: unused(y, &ref_used), hallucinations: unused(yhat, &pred_used), matched_pairs }
    }

    /// Outcome for the case where at least one side is empty: nothing can
    /// pair, so everything referenced is omitted and everything predicted
    /// is hallucinated.
    pub fn unmatched(y: &WeaknessSet, yhat: &WeaknessSet) -> Self {
        MatchOutcome { matched_pairs: Vec::new(), omissions: y.items().to_vec(), hallucinations: yhat.items().to_vec() }
    }

    pub fn referenced_len(&self) -> usize {
        self.matched_pairs.len() + self.omissions.len()
    }

    pub fn predicted_len(&self) -> usize {
        self.matched_pairs.len() + self.hallucinations.len()
    }
}

/// Renders the two lists for the match agent as numbered lines.
pub fn render_match_request(y: &[String], yhat: &[String]) -> String {
    let mut out = String::new();
    out.push_str(REFERENCED_HEADER);
    out.push('\n');
    push_numbered(&mut out, y);
    out.push('\n');
    out.push_str(PREDICTED_HEADER);
    out.push('\n');
    push_numbered(&mut out, yhat);
    out
}

fn push_numbered(out: &mut String, items: &[String]) {
    for (i, item) in items.iter().enumerate() {
        let flat: Vec<&str> = item.split_whitespace().collect();
        out.push_str(&format!("{}. {}\n", i + 1, flat.join(" ")));
    }
}

/// Inverse of [`render_match_request`], used by offline match agents.
pub fn parse_match_request(text: &str) -> Option<(Vec<String>, Vec<String>)> {
    let (_, rest) = text.split_once(REFERENCED_HEADER)?;
    let (refs, preds) = rest.split_once(PREDICTED_HEADER)?;
    let items = |block: &str| -> Vec<String> {
        block
            .lines()
            .filter_map(|line| {
                let (num, item) = line.trim().split_once(". ")?;
                num.parse::<usize>().ok()?;
                Some(String::from(item.trim()))
            })
            .collect()
    };
    Some((items(refs), items(preds)))
}

#[derive(Serialize, Deserialize)]
struct PairsWire {
    pairs: Vec<[usize; 2]>,
}

/// Wire form of a pairing: `{"pairs":[[r,p],...]}` with 1-based indices.
pub fn render_pairs(pairs: &[(usize, usize)]) -> String {
    let wire = PairsWire { pairs: pairs.iter().map(|&(r, p)| [r + 1, p + 1]).collect() };
    serde_json::to_string(&wire).expect("pairs serialize")
}

/// Parses and checks the agent's pairing against list sizes. Accepts the JSON
/// object anywhere in the completion (for example inside a code fence).
/// Returns 0-based index pairs.
pub fn parse_pairs(raw: &str, n_ref: usize, n_pred: usize) -> core::result::Result<Vec<(usize, usize)>, String> {
    let start = raw.find('{').ok_or("no JSON object in completion")?;
    let end = raw.rfind('}').ok_or("no JSON object in completion")?;
    if end < start {
        return Err("no JSON object in completion".into());
    }
    let wire: PairsWire = serde_json::from_str(&raw[start..=end]).map_err(|e| format!("malformed pairing: {e}"))?;
    let mut ref_used = alloc::vec![false; n_ref];
    let mut pred_used = alloc::vec![false; n_pred];
    let mut pairs = Vec::with_capacity(wire.pairs.len());
    for [r, p] in wire.pairs {
        if r == 0 || r > n_ref {
            return Err(format!("referenced index {r} out of range 1..={n_ref}"));
        }
        if p == 0 || p > n_pred {
            return Err(format!("predicted index {p} out of range 1..={n_pred}"));
        }
        let (r, p) = (r - 1, p - 1);
        if core::mem::replace(&mut ref_used[r], true) {
            return Err(format!("referenced item {} paired more than once", r + 1));
        }
        if core::mem::replace(&mut pred_used[p], true) {
            return Err(format!("predicted item {} paired more than once", p + 1));
        }
        pairs.push((r, p));
    }
    Ok(pairs)
}

/// Raw index pairing between two non-empty lists. Retries once when the
/// agent's answer is unusable.
pub fn match_indices(
    y: &[String],
    yhat: &[String],
    agent: &MatchAgent<'_>,
    ledger: &mut CostLedger,
) -> Result<Vec<(usize, usize)>> {
    if y.is_empty() || yhat.is_empty() {
        return Err(Error::Contract("semantic matching needs two non-empty sets".into()));
    }
    let request = ModelRequest::new(agent.instructions, alloc::vec![Part::Text(render_match_request(y, yhat))])
        .with_settings(agent.settings);
    let mut last = None;
    for _ in 0..2 {
        let response = complete(agent.backend, &request, ledger, tags::MATCH)?;
        match parse_pairs(&response.text, y.len(), yhat.len()) {
            Ok(pairs) => return Ok(pairs),
            Err(reason) => last = Some((reason, response.text)),
        }
    }
    let (reason, raw_text) = last.expect("loop ran");
    Err(Error::MatchProtocol { reason, raw_text })
}

pub fn semantic_set_match(
    y: &WeaknessSet,
    yhat: &WeaknessSet,
    agent: &MatchAgent<'_>,
    ledger: &mut CostLedger,
) -> Result<MatchOutcome> {
    let pairs = match_indices(y.items(), yhat.items(), agent, ledger)?;
    Ok(MatchOutcome::from_index_pairs(y.items(), yhat.items(), &pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawCounts {
    pub tp: u32,
    pub tn: u32,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
}

impl RawCounts {
    pub fn total(&self) -> u32 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Per-instance confusion: raw counts and their normalization
/// `[tp, tn, fp, fn] / total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionVector {
    pub raw: RawCounts,
    pub normalized: [f64; 4],
}

impl ConfusionVector {
    pub fn from_raw(raw: RawCounts) -> Result<Self> {
        let total = raw.total();
        if total == 0 {
            return Err(Error::Contract("confusion counts are all zero".into()));
        }
        let t = f64::from(total);
        let normalized = [raw.tp, raw.tn, raw.fp, raw.fn_].map(|c| f64::from(c) / t);
        Ok(ConfusionVector { raw, normalized })
    }

    pub fn tp(&self) -> f64 {
        self.normalized[0]
    }
    pub fn tn(&self) -> f64 {
        self.normalized[1]
    }
    pub fn fp(&self) -> f64 {
        self.normalized[2]
    }
    pub fn fn_(&self) -> f64 {
        self.normalized[3]
    }

    pub fn is_perfect(&self) -> bool {
        self.raw.fp == 0 && self.raw.fn_ == 0
    }
}

fn indicator(cond: bool) -> u32 {
    u32::from(cond)
}

/// Instance-level confusion. The set-level indicators (+1 TP when both sets
/// are non-empty, TN when both are empty, FP/FN when exactly one side is
/// empty) are added to the item-level match counts.
pub fn confusion_from_sets(
    y: &WeaknessSet,
    yhat: &WeaknessSet,
    outcome: Option<&MatchOutcome>,
) -> Result<ConfusionVector> {
    let both = !y.is_empty() && !yhat.is_empty();
    let (n_tp, n_fp, n_fn) = match (both, outcome) {
        (true, Some(o)) => {
            if o.referenced_len() != y.len() || o.predicted_len() != yhat.len() {
                return Err(Error::Contract("match outcome does not cover both sets".into()));
            }
            (o.matched_pairs.len(), o.hallucinations.len(), o.omissions.len())
        }
        (true, None) => return Err(Error::Contract("both sets are non-empty but no match outcome was given".into())),
        (false, Some(_)) => return Err(Error::Contract("match outcome given although a set is empty".into())),
        (false, None) => (0, 0, 0),
    };
    let count = |n: usize| u32::try_from(n).map_err(|_| Error::InvalidInput("too many weaknesses".into()));
    let raw = RawCounts {
        tp: indicator(both) + count(n_tp)?,
        tn: indicator(y.is_empty() && yhat.is_empty()),
        fp: indicator(y.is_empty() && !yhat.is_empty()) + count(n_fp)?,
        fn_: indicator(!y.is_empty() && yhat.is_empty()) + count(n_fn)?,
    };
    ConfusionVector::from_raw(raw)
}

/// `"Perfect prediction."` when nothing was missed or invented, otherwise
/// the omitted and hallucinated items.
pub fn synthesize_feedback(
    confusion: &ConfusionVector,
    outcome: Option<&MatchOutcome>,
    y: &WeaknessSet,
    yhat: &WeaknessSet,
) -> String {
    if confusion.is_perfect() {
        return String::from(PERFECT_PREDICTION);
    }
    let (omissions, hallucinations): (&[String], &[String]) = match outcome {
        Some(o) => (&o.omissions, &o.hallucinations),
        None => (y.items(), yhat.items()),
    };
    let side = |items: &[String]| {
        if items.is_empty() {
            String::from(EMPTY_SIDE)
        } else {
            items.join("; ")
        }
    };
    format!("Omissions: {}; Hallucinations: {}", side(omissions), side(hallucinations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEvaluation {
    pub feedback: String,
    pub confusion: ConfusionVector,
    pub outcome: MatchOutcome,
}

impl InstanceEvaluation {
    pub fn predicted_len(&self) -> usize {
        self.outcome.predicted_len()
    }

    pub fn referenced_len(&self) -> usize {
        self.outcome.referenced_len()
    }
}

/// Scores one prediction against its reference. The match agent is only
/// consulted when both sets are non-empty.
pub fn evaluate_instance(
    yhat: &WeaknessSet,
    y: &WeaknessSet,
    agent: &MatchAgent<'_>,
    ledger: &mut CostLedger,
) -> Result<InstanceEvaluation> {
    let matched =
        if !y.is_empty() && !yhat.is_empty() { Some(semantic_set_match(y, yhat, agent, ledger)?) } else { None };
    let confusion = confusion_from_sets(y, yhat, matched.as_ref())?;
    let feedback = synthesize_feedback(&confusion, matched.as_ref(), y, yhat);
    let outcome = matched.unwrap_or_else(|| MatchOutcome::unmatched(y, yhat));
    Ok(InstanceEvaluation { feedback, confusion, outcome })
}

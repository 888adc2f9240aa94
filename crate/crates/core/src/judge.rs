//! The judge agent: predicts a weakness set for a generated video under a
//! system prompt, optionally stabilized by a k-run majority vote at the
//! level of semantic clusters.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{complete, tags, CallSettings, CostLedger, ModelBackend, ModelRequest, Part};
use crate::dataset::{Sample, WeaknessSet};
use crate::matching::{match_indices, MatchAgent};
use crate::{derive_seed, Error, Result};

/// Marker the judge emits when it finds nothing wrong.
pub const NONE_MARKER: &str = "NONE";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JudgePrompt {
    pub text: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
}

impl JudgePrompt {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("judge prompt text is empty".into()));
        }
        let id = prompt_id(&text);
        Ok(JudgePrompt { text, id, parent_id: None })
    }

    pub fn child(&self, text: impl Into<String>) -> Result<Self> {
        let mut child = JudgePrompt::new(text)?;
        child.parent_id = Some(self.id.clone());
        Ok(child)
    }
}

/// First 16 hex digits of the SHA-256 of the prompt text.
pub fn prompt_id(text: &str) -> String {
    let mut hex = crate::sha256_hex(text.as_bytes());
    hex.truncate(16);
    hex
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOutput {
    pub weaknesses: WeaknessSet,
    pub raw_text: String,
    /// Raw completions of the individual runs when the output was voted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub run_texts: Vec<String>,
}

#[derive(Clone, Copy)]
pub struct JudgeAgent<'a> {
    pub backend: &'a dyn ModelBackend,
    pub settings: CallSettings,
    pub seed: Option<u64>,
}

impl<'a> JudgeAgent<'a> {
    pub fn new(backend: &'a dyn ModelBackend) -> Self {
        JudgeAgent { backend, settings: CallSettings::default(), seed: None }
    }
}

fn list_item(line: &str) -> Option<&str> {
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return Some(rest);
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") "))
}

/// Parses a judge completion: either the bare `NONE` marker or a list where
/// every non-blank line is a `-`, `*`, `•` or numbered item. An enclosing
/// code fence is tolerated. Repeated items are kept once.
pub fn parse_judge_output(raw: &str) -> Result<WeaknessSet> {
    let parse_error = || Error::JudgeParse { raw_text: String::from(raw) };
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with("```")).collect();
    if lines.len() == 1 && lines[0].trim_end_matches('.').eq_ignore_ascii_case(NONE_MARKER) {
        return Ok(WeaknessSet::empty());
    }
    if lines.is_empty() {
        return Err(parse_error());
    }
    let mut seen = BTreeSet::new();
    let mut items = Vec::new();
    for line in lines {
        let item = list_item(line).map(str::trim).ok_or_else(parse_error)?;
        if item.is_empty() {
            return Err(parse_error());
        }
        if seen.insert(item) {
            items.push(String::from(item));
        }
    }
    WeaknessSet::new(items)
}

/// Canonical text form of a weakness set in the judge schema.
pub fn render_weaknesses(set: &WeaknessSet) -> String {
    if set.is_empty() {
        return String::from(NONE_MARKER);
    }
    let lines: Vec<String> = set.iter().map(|w| format!("- {w}")).collect();
    lines.join("\n")
}

/// User parts for one judge call: the context text, its media references,
/// then the generated video.
pub fn judge_parts(sample: &Sample) -> Vec<Part> {
    let ctx = &sample.context;
    let mut parts = Vec::with_capacity(2 + ctx.image_refs.len() + ctx.audio_refs.len() + ctx.video_refs.len());
    parts.push(Part::Text(format!(
        "Context instruction: {}\nThe last video is the generated output to evaluate.",
        ctx.instruction
    )));
    parts.extend(ctx.image_refs.iter().cloned().map(Part::Image));
    parts.extend(ctx.audio_refs.iter().cloned().map(Part::Audio));
    parts.extend(ctx.video_refs.iter().cloned().map(Part::Video));
    parts.push(Part::Video(sample.output_video_ref.clone()));
    parts
}

pub fn predict_weaknesses(
    prompt: &JudgePrompt,
    sample: &Sample,
    judge: &JudgeAgent<'_>,
    ledger: &mut CostLedger,
) -> Result<JudgeOutput> {
    if sample.output_video_ref.trim().is_empty() {
        return Err(Error::Contract(format!("sample `{}` has no output video", sample.id)));
    }
    let request = ModelRequest::new(prompt.text.as_str(), judge_parts(sample))
        .with_settings(judge.settings)
        .with_seed(judge.seed);
    let response = complete(judge.backend, &request, ledger, tags::JUDGE)?;
    let weaknesses = parse_judge_output(&response.text)?;
    Ok(JudgeOutput { weaknesses, raw_text: response.text, run_texts: Vec::new() })
}

struct DisjointSets(Vec<usize>);

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Minimum number of distinct supporting runs for a cluster to survive.
pub fn vote_threshold(k: usize) -> usize {
    k.div_ceil(2)
}

/// Majority vote over `k` weakness sets.
///
/// Every pair of non-empty runs is matched by the match agent; matched items
/// are merged into clusters (transitive closure). A cluster survives when
/// items from at least `⌈k/2⌉` distinct runs belong to it. Its
/// representative is taken from the lowest-indexed supporting run (shortest,
/// then lexicographically smallest, if that run has several members), and
/// survivors are ordered by the representative's run and position.
pub fn majority_vote(
    runs: &[WeaknessSet],
    k: usize,
    matcher: &MatchAgent<'_>,
    ledger: &mut CostLedger,
) -> Result<WeaknessSet> {
    if k == 0 || runs.len() != k {
        return Err(Error::Contract(format!("majority vote expects k = {} >= 1 runs, got k = {k}", runs.len())));
    }
    let mut offsets = Vec::with_capacity(k);
    let mut nodes: Vec<(usize, usize)> = Vec::new();
    for (run, set) in runs.iter().enumerate() {
        offsets.push(nodes.len());
        nodes.extend((0..set.len()).map(|pos| (run, pos)));
    }
    let mut sets = DisjointSets::new(nodes.len());
    for i in 0..k {
        for j in (i + 1)..k {
            if runs[i].is_empty() || runs[j].is_empty() {
                continue;
            }
            for (a, b) in match_indices(runs[i].items(), runs[j].items(), matcher, ledger)? {
                sets.union(offsets[i] + a, offsets[j] + b);
            }
        }
    }

    let mut clusters: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (node, &member) in nodes.iter().enumerate() {
        let root = sets.find(node);
        clusters.entry(root).or_default().push(member);
    }

    let threshold = vote_threshold(k);
    let mut survivors: Vec<(usize, usize, &String)> = Vec::new();
    for members in clusters.values() {
        let support: BTreeSet<usize> = members.iter().map(|&(run, _)| run).collect();
        if support.len() < threshold {
            continue;
        }
        let first_run = *support.first().expect("cluster is non-empty");
        let (run, pos) = members
            .iter()
            .filter(|(r, _)| *r == first_run)
            .min_by(|a, b| {
                let (sa, sb) = (&runs[a.0].items()[a.1], &runs[b.0].items()[b.1]);
                sa.chars().count().cmp(&sb.chars().count()).then_with(|| sa.cmp(sb))
            })
            .copied()
            .expect("supporting run has a member");
        survivors.push((run, pos, &runs[run].items()[pos]));
    }
    survivors.sort_by_key(|&(run, pos, _)| (run, pos));

    let mut seen = BTreeSet::new();
    let items: Vec<String> = survivors
        .into_iter()
        .filter(|(_, _, text)| seen.insert(text.trim()))
        .map(|(_, _, text)| text.clone())
        .collect();
    Ok(WeaknessSet::from_unchecked(items))
}

/// Runs the judge `k` times with seeds derived from the agent's base seed
/// and votes. `k = 1` is a single plain prediction.
pub fn judge_instance(
    prompt: &JudgePrompt,
    sample: &Sample,
    k: usize,
    judge: &JudgeAgent<'_>,
    matcher: &MatchAgent<'_>,
    ledger: &mut CostLedger,
) -> Result<JudgeOutput> {
    match k {
        0 => Err(Error::Contract("vote count k must be >= 1".into())),
        1 => predict_weaknesses(prompt, sample, judge, ledger),
        _ => {
            let base = judge.seed.unwrap_or(0);
            let mut runs = Vec::with_capacity(k);
            let mut run_texts = Vec::with_capacity(k);
            for i in 0..k {
                let agent = JudgeAgent { seed: Some(derive_seed(base, i as u64)), ..*judge };
                let out = predict_weaknesses(prompt, sample, &agent, ledger)?;
                runs.push(out.weaknesses);
                run_texts.push(out.raw_text);
            }
            let weaknesses = majority_vote(&runs, k, matcher, ledger)?;
            Ok(JudgeOutput { raw_text: render_weaknesses(&weaknesses), weaknesses, run_texts })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Pricing, PricingTable};
    use crate::dataset::tests::sample;
    use crate::stub::{LexicalMatcher, ScriptedBackend};
    use crate::taxonomy::Category;
    use alloc::vec;

    fn ledger() -> CostLedger {
        let p = Pricing { usd_per_1m_input_tokens: 1.0, usd_per_1m_output_tokens: 1.0 };
        CostLedger::new(10.0, PricingTable::default().with("j", p).with("lex", p)).unwrap()
    }

    fn ws(items: &[&str]) -> WeaknessSet {
        WeaknessSet::new(items.iter().copied()).unwrap()
    }

    #[test]
    fn parser_schema_cases() {
        assert!(parse_judge_output("NONE").unwrap().is_empty());
        assert!(parse_judge_output("```\nNONE\n```").unwrap().is_empty());
        assert_eq!(parse_judge_output("- a\n- b").unwrap().len(), 2);
        assert_eq!(parse_judge_output("1. a\n2) b\n* a").unwrap(), ws(&["a", "b"]));
        for bad in ["", "The video looks great overall.", "Weaknesses:\n- a", "- "] {
            assert!(matches!(parse_judge_output(bad), Err(Error::JudgeParse { .. })), "{bad:?}");
        }
    }

    #[test]
    fn predict_none_and_two_items() {
        let s = sample("a", Category::Perception, "perception_a");
        let p = JudgePrompt::new("judge carefully").unwrap();
        let stub = ScriptedBackend::queue("j", ["NONE", "- hand has six fingers\n- flicker", "I think it is fine"]);
        let judge = JudgeAgent::new(&stub);
        let mut l = ledger();
        assert!(predict_weaknesses(&p, &s, &judge, &mut l).unwrap().weaknesses.is_empty());
        assert_eq!(predict_weaknesses(&p, &s, &judge, &mut l).unwrap().weaknesses.len(), 2);
        let err = predict_weaknesses(&p, &s, &judge, &mut l).unwrap_err();
        assert_eq!(err, Error::JudgeParse { raw_text: "I think it is fine".into() });
    }

    #[test]
    fn prompt_ids_are_content_hashes() {
        let a = JudgePrompt::new("x").unwrap();
        let b = a.child("y").unwrap();
        assert_eq!(a.id, JudgePrompt::new("x").unwrap().id);
        assert_eq!(b.parent_id.as_deref(), Some(a.id.as_str()));
        assert!(JudgePrompt::new("  ").is_err());
    }

    #[test]
    fn vote_thresholds() {
        assert_eq!([1, 2, 3, 4, 5].map(vote_threshold), [1, 1, 2, 2, 3]);
    }

    #[test]
    fn vote_keeps_three_of_five() {
        let lex = LexicalMatcher::new("lex");
        let m = MatchAgent::new(&lex, "match");
        let mut l = ledger();
        let runs = vec![ws(&["flicker"]), ws(&["Flicker."]), ws(&["flicker"]), ws(&[]), ws(&[])];
        assert_eq!(majority_vote(&runs, 5, &m, &mut l).unwrap(), ws(&["flicker"]));
        let all_empty = vec![WeaknessSet::empty(); 5];
        assert!(majority_vote(&all_empty, 5, &m, &mut l).unwrap().is_empty());
    }

    #[test]
    fn vote_two_versus_four_supports() {
        let lex = LexicalMatcher::new("lex");
        let m = MatchAgent::new(&lex, "match");
        let mut l = ledger();
        let runs = vec![
            ws(&["blur", "extra limb"]),
            ws(&["extra limb"]),
            ws(&["blur", "extra limb"]),
            ws(&["extra limb"]),
            ws(&[]),
        ];
        assert_eq!(majority_vote(&runs, 5, &m, &mut l).unwrap(), ws(&["extra limb"]));
    }

    #[test]
    fn representative_rule() {
        let lex = LexicalMatcher::new("lex").alias("the hand has six fingers", "six").alias("six fingers", "six");
        let m = MatchAgent::new(&lex, "match");
        let mut l = ledger();
        let runs = vec![ws(&[]), ws(&["the hand has six fingers"]), ws(&["six fingers"])];
        assert_eq!(majority_vote(&runs, 3, &m, &mut l).unwrap(), ws(&["the hand has six fingers"]));
    }

    #[test]
    fn k1_is_plain_prediction() {
        let s = sample("a", Category::Perception, "perception_a");
        let p = JudgePrompt::new("judge").unwrap();
        let stub = ScriptedBackend::queue("j", ["- flicker"]);
        let lex = LexicalMatcher::new("lex");
        let mut l = ledger();
        let voted = judge_instance(&p, &s, 1, &JudgeAgent::new(&stub), &MatchAgent::new(&lex, "m"), &mut l).unwrap();
        let stub2 = ScriptedBackend::queue("j", ["- flicker"]);
        let plain = predict_weaknesses(&p, &s, &JudgeAgent::new(&stub2), &mut l).unwrap();
        assert_eq!(voted, plain);
    }

    #[test]
    fn budget_exhaustion_mid_vote_emits_nothing() {
        let s = sample("a", Category::Perception, "perception_a");
        let p = JudgePrompt::new("judge").unwrap();
        let stub = ScriptedBackend::queue("j", ["- a", "- a", "- a", "- a", "- a"]);
        let lex = LexicalMatcher::new("lex");
        // At 0.01 $/token each judge call costs about 0.2, so the budget covers two of the five runs.
        let price = Pricing { usd_per_1m_input_tokens: 10_000.0, usd_per_1m_output_tokens: 10_000.0 };
        let table = PricingTable::default().with("j", price).with("lex", price);
        let mut l = CostLedger::new(0.5, table).unwrap();
        let mut judge = JudgeAgent::new(&stub);
        judge.settings.max_tokens = 4;
        let err = judge_instance(&p, &s, 5, &judge, &MatchAgent::new(&lex, "m"), &mut l).unwrap_err();
        assert!(err.is_budget_exhausted());
        assert!(stub.consumed() < 5);
    }
}

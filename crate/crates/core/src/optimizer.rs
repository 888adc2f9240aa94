//! Budgeted prompt optimization for the judge.
//!
//! A table of candidate prompts with their validation scores drives the
//! loop: pick a candidate, score it on a training minibatch, hand the
//! feedback to the optimizer agent for a rewrite, score the rewrite on the
//! validation split, repeat until the ledger runs dry. The best validation
//! entry is returned, frozen and scored once more on the test split.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{complete, tags, CallSettings, CostLedger, ModelBackend, ModelRequest, Part};
use crate::dataset::{Sample, SplitAssignment, WeaknessSet};
use crate::judge::{judge_instance, JudgeAgent, JudgePrompt};
use crate::matching::{evaluate_instance, ConfusionVector, MatchAgent};
use crate::metrics::{aggregate_confusion, phi_apply, GlobalConfusion, MetricKind};
use crate::{Error, Result};

pub const DEFAULT_FEEDBACK_CHAR_BUDGET: usize = 20_000;
pub const DEFAULT_VOTES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionStrategy {
    #[serde(rename = "best", alias = "best_of_table")]
    BestOfTable,
    #[serde(rename = "pareto", alias = "pareto_sample")]
    ParetoSample,
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "best" | "best_of_table" => Ok(SelectionStrategy::BestOfTable),
            "pareto" | "pareto_sample" => Ok(SelectionStrategy::ParetoSample),
            other => Err(Error::InvalidInput(format!("unknown strategy `{other}` (expected best or pareto)"))),
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionStrategy::BestOfTable => "best",
            SelectionStrategy::ParetoSample => "pareto",
        })
    }
}

/// Knobs of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub metric: MetricKind,
    pub batch_size: usize,
    pub votes: usize,
    pub strategy: SelectionStrategy,
    pub seed: u64,
    pub feedback_char_budget: usize,
    /// Optional hard cap on loop iterations, on top of the budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            metric: MetricKind::F1,
            batch_size: 8,
            votes: DEFAULT_VOTES,
            strategy: SelectionStrategy::ParetoSample,
            seed: 0,
            feedback_char_budget: DEFAULT_FEEDBACK_CHAR_BUDGET,
            max_iterations: None,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        if self.votes == 0 {
            return Err(Error::InvalidInput("vote count must be >= 1".into()));
        }
        if self.feedback_char_budget == 0 {
            return Err(Error::InvalidInput("feedback character budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// The judge and match agents used to score a prompt on a slice.
#[derive(Clone, Copy)]
pub struct EvalAgents<'a> {
    pub judge: JudgeAgent<'a>,
    pub matcher: MatchAgent<'a>,
}

/// The optimizer agent with its fixed meta-prompt.
#[derive(Clone, Copy)]
pub struct Refiner<'a> {
    pub backend: &'a dyn ModelBackend,
    pub meta_prompt: &'a str,
    pub settings: CallSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub prompt: JudgePrompt,
    /// Feedback the parent received when this candidate was written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at_iteration: Option<usize>,
}

impl PromptCandidate {
    pub fn root(prompt: JudgePrompt) -> Self {
        PromptCandidate { prompt, feedback: None, created_at_iteration: None }
    }

    pub fn id(&self) -> &str {
        &self.prompt.id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub candidate: PromptCandidate,
    pub val_score: f64,
    /// Validation sample id → `tp + tn − fp − fn` of its normalized vector.
    pub per_instance_scores: BTreeMap<String, f64>,
}

/// Candidate prompts with their validation results, in insertion order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptScoreTable {
    pub entries: Vec<TableEntry>,
}

impl PromptScoreTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TableEntry> {
        self.entries.iter().find(|e| e.candidate.id() == id)
    }

    /// Inserts, or replaces in place (keeping the original insertion slot)
    /// when the prompt id is already present. Returns whether it replaced.
    pub fn upsert(&mut self, entry: TableEntry) -> bool {
        match self.entries.iter_mut().find(|e| e.candidate.id() == entry.candidate.id()) {
            Some(slot) => {
                *slot = entry;
                true
            }
            None => {
                self.entries.push(entry);
                false
            }
        }
    }

    /// Highest validation score; earliest insertion wins ties.
    pub fn best(&self) -> Option<&TableEntry> {
        self.entries.iter().fold(None, |best: Option<&TableEntry>, e| match best {
            Some(b) if b.val_score >= e.val_score => Some(b),
            _ => Some(e),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub sample_id: String,
    pub predicted: WeaknessSet,
    pub confusion: ConfusionVector,
    pub feedback: String,
}

impl InstanceRecord {
    pub fn scalar(&self) -> f64 {
        let c = &self.confusion;
        c.tp() + c.tn() - c.fp() - c.fn_()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEvaluation {
    pub score: f64,
    pub feedback: String,
    pub aggregate: GlobalConfusion,
    pub instances: Vec<InstanceRecord>,
}

/// Joins `"[id] feedback"` lines. When they exceed `budget` characters,
/// imperfect instances are kept first, alternating between omission-heavy
/// and hallucination-heavy ones, then perfect ones; the kept lines stay in
/// their original order.
pub fn compose_feedback(instances: &[InstanceRecord], budget: usize) -> String {
    let lines: Vec<String> = instances.iter().map(|r| format!("[{}] {}", r.sample_id, r.feedback)).collect();
    let full_len = lines.iter().map(|l| l.chars().count()).sum::<usize>() + lines.len().saturating_sub(1);
    if full_len <= budget {
        return lines.join("\n");
    }

    let mut omission_heavy = Vec::new();
    let mut hallucination_heavy = Vec::new();
    let mut perfect = Vec::new();
    for (i, r) in instances.iter().enumerate() {
        let raw = r.confusion.raw;
        if r.confusion.is_perfect() {
            perfect.push(i);
        } else if raw.fn_ >= raw.fp {
            omission_heavy.push(i);
        } else {
            hallucination_heavy.push(i);
        }
    }
    let mut order = Vec::with_capacity(lines.len());
    let (mut a, mut b) = (omission_heavy.into_iter(), hallucination_heavy.into_iter());
    loop {
        let (x, y) = (a.next(), b.next());
        if x.is_none() && y.is_none() {
            break;
        }
        order.extend(x);
        order.extend(y);
    }
    order.extend(perfect);

    let mut kept = BTreeSet::new();
    let mut used = 0usize;
    for i in order {
        let cost = lines[i].chars().count() + usize::from(!kept.is_empty());
        if used + cost <= budget {
            used += cost;
            kept.insert(i);
        }
    }
    if kept.is_empty() {
        return lines[0].chars().take(budget).collect();
    }
    let kept: Vec<&str> = kept.into_iter().map(|i| lines[i].as_str()).collect();
    kept.join("\n")
}

/// Judges and scores `prompt` on every sample of `slice`.
pub fn evaluate_slice(
    prompt: &JudgePrompt,
    slice: &[&Sample],
    agents: &EvalAgents<'_>,
    settings: &RunSettings,
    ledger: &mut CostLedger,
) -> Result<SliceEvaluation> {
    if slice.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty slice".into()));
    }
    let mut instances = Vec::with_capacity(slice.len());
    for sample in slice {
        let prediction = judge_instance(prompt, sample, settings.votes, &agents.judge, &agents.matcher, ledger)?;
        let eval = evaluate_instance(&prediction.weaknesses, &sample.weaknesses, &agents.matcher, ledger)?;
        instances.push(InstanceRecord {
            sample_id: sample.id.clone(),
            predicted: prediction.weaknesses,
            confusion: eval.confusion,
            feedback: eval.feedback,
        });
    }
    let aggregate = aggregate_confusion(instances.iter().map(|r| &r.confusion));
    let score = phi_apply(settings.metric, &aggregate)?;
    let feedback = compose_feedback(&instances, settings.feedback_char_budget);
    Ok(SliceEvaluation { score, feedback, aggregate, instances })
}

/// Scores `candidate` on `slice`; on the validation split the result is
/// upserted into `table`. Nothing is written when any call fails.
pub fn evaluate_and_update(
    candidate: &PromptCandidate,
    slice: &[&Sample],
    is_val: bool,
    table: &mut PromptScoreTable,
    agents: &EvalAgents<'_>,
    settings: &RunSettings,
    ledger: &mut CostLedger,
) -> Result<SliceEvaluation> {
    let eval = evaluate_slice(&candidate.prompt, slice, agents, settings, ledger)?;
    if is_val {
        table.upsert(TableEntry {
            candidate: candidate.clone(),
            val_score: eval.score,
            per_instance_scores: eval.instances.iter().map(|r| (r.sample_id.clone(), r.scalar())).collect(),
        });
    }
    Ok(eval)
}

fn instance_ids(table: &PromptScoreTable) -> Vec<&str> {
    let ids: BTreeSet<&str> =
        table.entries.iter().flat_map(|e| e.per_instance_scores.keys().map(String::as_str)).collect();
    ids.into_iter().collect()
}

fn score_grid(table: &PromptScoreTable) -> Vec<Vec<f64>> {
    let ids = instance_ids(table);
    table
        .entries
        .iter()
        .map(|e| ids.iter().map(|id| e.per_instance_scores.get(*id).copied().unwrap_or(f64::NEG_INFINITY)).collect())
        .collect()
}

fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Indices of table entries that no other entry dominates on the
/// per-instance validation scores.
pub fn pareto_frontier(table: &PromptScoreTable) -> Vec<usize> {
    let grid = score_grid(table);
    (0..grid.len()).filter(|&i| !(0..grid.len()).any(|j| j != i && dominates(&grid[j], &grid[i]))).collect()
}

/// For each entry, the number of validation instances on which it is the
/// unique best.
pub fn unique_win_counts(table: &PromptScoreTable) -> Vec<usize> {
    let grid = score_grid(table);
    let mut wins = alloc::vec![0usize; grid.len()];
    let n_instances = grid.first().map_or(0, Vec::len);
    for col in 0..n_instances {
        let best = grid.iter().map(|row| row[col]).fold(f64::NEG_INFINITY, f64::max);
        let mut holders = grid.iter().enumerate().filter(|(_, row)| row[col] == best);
        if let (Some((i, _)), None) = (holders.next(), holders.next()) {
            wins[i] += 1;
        }
    }
    wins
}

pub fn select_prompt<'t>(
    table: &'t PromptScoreTable,
    strategy: SelectionStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<&'t PromptCandidate> {
    if table.is_empty() {
        return Err(Error::InvalidInput("cannot select from an empty prompt table".into()));
    }
    let index = match strategy {
        SelectionStrategy::BestOfTable => {
            let best = table.best().expect("non-empty");
            table.entries.iter().position(|e| core::ptr::eq(e, best)).expect("entry from table")
        }
        SelectionStrategy::ParetoSample => {
            let frontier = pareto_frontier(table);
            let wins = unique_win_counts(table);
            let weights: Vec<usize> = frontier.iter().map(|&i| wins[i]).collect();
            let total: usize = weights.iter().sum();
            if total == 0 {
                frontier[rng.random_range(0..frontier.len())]
            } else {
                let mut ticket = rng.random_range(0..total);
                let mut chosen = frontier[frontier.len() - 1];
                for (&i, &w) in frontier.iter().zip(&weights) {
                    if ticket < w {
                        chosen = i;
                        break;
                    }
                    ticket -= w;
                }
                chosen
            }
        }
    };
    Ok(&table.entries[index].candidate)
}

/// Pulls the rewritten prompt out of the optimizer completion: the body of a
/// `<prompt>…</prompt>` block if present, else the text without an
/// enclosing code fence.
pub fn extract_prompt(completion: &str) -> String {
    if let Some((_, rest)) = completion.split_once("<prompt>") {
        if let Some((body, _)) = rest.split_once("</prompt>") {
            return String::from(body.trim());
        }
    }
    let trimmed = completion.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        let body = rest.split_once('\n').map_or("", |(_, b)| b);
        return String::from(body.trim_end().trim_end_matches("```").trim());
    }
    String::from(trimmed)
}

pub fn refine_prompt(
    parent: &PromptCandidate,
    feedback: &str,
    refiner: &Refiner<'_>,
    ledger: &mut CostLedger,
) -> Result<PromptCandidate> {
    if feedback.trim().is_empty() {
        return Err(Error::Contract("refinement needs non-empty feedback".into()));
    }
    let user = format!(
        "Current judge prompt:\n<prompt>\n{}\n</prompt>\n\nFeedback from evaluating this prompt:\n{}",
        parent.prompt.text, feedback
    );
    let request = ModelRequest::new(refiner.meta_prompt, alloc::vec![Part::Text(user)]).with_settings(refiner.settings);
    let mut reason = String::new();
    for _ in 0..2 {
        let response = complete(refiner.backend, &request, ledger, tags::OPTIMIZER)?;
        let text = extract_prompt(&response.text);
        if text.is_empty() {
            reason = String::from("optimizer returned an empty prompt");
        } else if text == parent.prompt.text.trim() {
            reason = String::from("optimizer returned the prompt unchanged");
        } else {
            return Ok(PromptCandidate {
                prompt: parent.prompt.child(text)?,
                feedback: Some(String::from(feedback)),
                created_at_iteration: None,
            });
        }
    }
    Err(Error::Refinement(reason))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum IterationOutcome {
    Accepted { new_prompt_id: String, new_val_score: f64 },
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub selected_prompt_id: String,
    pub minibatch_ids: Vec<String>,
    pub batch_score: f64,
    /// First 16 hex digits of the SHA-256 of the feedback text.
    pub feedback_digest: String,
    pub feedback_chars: usize,
    pub outcome: IterationOutcome,
    pub best_val_score: f64,
    pub spent_usd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initialization,
    Selection,
    Minibatch,
    Refinement,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    BudgetExhausted { phase: Phase, iteration: usize },
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRun {
    pub settings: RunSettings,
    pub ledger: CostLedger,
    pub table: PromptScoreTable,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
}

impl OptimizationRun {
    /// Best validation score after each recorded iteration.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.best_val_score).collect()
    }
}

fn digest(text: &str) -> String {
    let mut hex = crate::sha256_hex(text.as_bytes());
    hex.truncate(16);
    hex
}

fn sample_minibatch<'s>(train: &[&'s Sample], size: usize, rng: &mut ChaCha8Rng) -> Vec<&'s Sample> {
    let amount = size.min(train.len());
    rand::seq::index::sample(rng, train.len(), amount).into_iter().map(|i| train[i]).collect()
}

/// Runs the optimization loop until the ledger is exhausted (or the optional
/// iteration cap is hit) and returns the best validation candidate.
pub fn run_ave(
    p0: JudgePrompt,
    train: &[&Sample],
    val: &[&Sample],
    agents: &EvalAgents<'_>,
    refiner: &Refiner<'_>,
    settings: RunSettings,
    mut ledger: CostLedger,
) -> Result<(PromptCandidate, OptimizationRun)> {
    settings.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("train and val splits must be non-empty".into()));
    }
    if settings.max_iterations.is_none() {
        let priced = [agents.judge.backend, agents.matcher.backend, refiner.backend]
            .iter()
            .map(|b| ledger.pricing().get(b.name()).map(|p| p.usd_per_1m_input_tokens + p.usd_per_1m_output_tokens))
            .collect::<Result<Vec<f64>>>()?;
        if priced.iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidInput(
                "every backend needs a positive price unless max_iterations is set".into(),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut table = PromptScoreTable::default();
    let root = PromptCandidate::root(p0);
    let mut history = Vec::new();

    let finish = |table: PromptScoreTable, history, ledger, settings, termination| {
        let p_star = table.best().map_or_else(|| root.clone(), |e| e.candidate.clone());
        Ok((p_star, OptimizationRun { settings, ledger, table, history, termination }))
    };
    let exhausted = |phase, iteration| Termination::BudgetExhausted { phase, iteration };

    match evaluate_and_update(&root, val, true, &mut table, agents, &settings, &mut ledger) {
        Ok(_) => {}
        Err(e) if e.is_budget_exhausted() => {
            return finish(table, history, ledger, settings, exhausted(Phase::Initialization, 0))
        }
        Err(e) => return Err(e),
    }

    let mut iteration = 0usize;
    let termination = loop {
        if settings.max_iterations.is_some_and(|cap| iteration >= cap) {
            break Termination::MaxIterations;
        }
        iteration += 1;
        if ledger.is_exhausted() {
            break exhausted(Phase::Selection, iteration);
        }
        let selected = select_prompt(&table, settings.strategy, &mut rng)?.clone();
        let batch = sample_minibatch(train, settings.batch_size, &mut rng);
        let batch_eval = match evaluate_and_update(&selected, &batch, false, &mut table, agents, &settings, &mut ledger)
        {
            Ok(e) => e,
            Err(e) if e.is_budget_exhausted() => break exhausted(Phase::Minibatch, iteration),
            Err(e) => return Err(e),
        };

        let outcome = match refine_prompt(&selected, &batch_eval.feedback, refiner, &mut ledger) {
            Ok(mut child) => {
                child.created_at_iteration = Some(iteration);
                match evaluate_and_update(&child, val, true, &mut table, agents, &settings, &mut ledger) {
                    Ok(e) => {
                        IterationOutcome::Accepted { new_prompt_id: child.prompt.id.clone(), new_val_score: e.score }
                    }
                    Err(e) if e.is_budget_exhausted() => break exhausted(Phase::Validation, iteration),
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Refinement(reason)) => IterationOutcome::Rejected { reason },
            Err(e) if e.is_budget_exhausted() => break exhausted(Phase::Refinement, iteration),
            Err(e) => return Err(e),
        };

        history.push(IterationRecord {
            iteration,
            selected_prompt_id: selected.prompt.id.clone(),
            minibatch_ids: batch.iter().map(|s| s.id.clone()).collect(),
            batch_score: batch_eval.score,
            feedback_digest: digest(&batch_eval.feedback),
            feedback_chars: batch_eval.feedback.chars().count(),
            outcome,
            best_val_score: table.best().map_or(f64::NAN, |e| e.val_score),
            spent_usd: ledger.spent_usd,
        });
    };
    finish(table, history, ledger, settings, termination)
}

fn ensure_disjoint(test: &[&Sample], splits: &SplitAssignment) -> Result<()> {
    let seen: BTreeSet<&str> = splits.train_ids.iter().chain(&splits.val_ids).map(String::as_str).collect();
    if let Some(s) = test.iter().find(|s| seen.contains(s.id.as_str())) {
        return Err(Error::InvalidInput(format!("test sample `{}` also appears in train/val", s.id)));
    }
    Ok(())
}

/// Scores a frozen prompt once on the test split; no table, no refinement.
pub fn freeze_and_test(
    p_star: &JudgePrompt,
    test: &[&Sample],
    splits: &SplitAssignment,
    agents: &EvalAgents<'_>,
    settings: &RunSettings,
    ledger: &mut CostLedger,
) -> Result<f64> {
    ensure_disjoint(test, splits)?;
    Ok(evaluate_slice(p_star, test, agents, settings, ledger)?.score)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationScores {
    pub baseline_score: f64,
    pub adapted_score: f64,
}

/// Scores the target's own baseline prompt and the transferred `p_star` with
/// the target judge on the test split. Only judge and match calls are made.
pub fn adapt_prompt(
    p_star: &JudgePrompt,
    baseline: &JudgePrompt,
    target: &EvalAgents<'_>,
    test: &[&Sample],
    splits: &SplitAssignment,
    settings: &RunSettings,
    ledger: &mut CostLedger,
) -> Result<AdaptationScores> {
    let baseline_score = freeze_and_test(baseline, test, splits, target, settings, ledger)?;
    let adapted_score = freeze_and_test(p_star, test, splits, target, settings, ledger)?;
    Ok(AdaptationScores { baseline_score, adapted_score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::RawCounts;
    use alloc::vec;

    fn entry(text: &str, score: f64, per: &[(&str, f64)]) -> TableEntry {
        TableEntry {
            candidate: PromptCandidate::root(JudgePrompt::new(text).unwrap()),
            val_score: score,
            per_instance_scores: per.iter().map(|(k, v)| (String::from(*k), *v)).collect(),
        }
    }

    fn record(id: &str, raw: RawCounts, feedback: &str) -> InstanceRecord {
        InstanceRecord {
            sample_id: id.into(),
            predicted: WeaknessSet::empty(),
            confusion: ConfusionVector::from_raw(raw).unwrap(),
            feedback: feedback.into(),
        }
    }

    #[test]
    fn upsert_replaces_in_place() {
        let mut t = PromptScoreTable::default();
        assert!(!t.upsert(entry("a", 0.1, &[])));
        assert!(!t.upsert(entry("b", 0.2, &[])));
        assert!(t.upsert(entry("a", 0.9, &[])));
        assert_eq!(t.len(), 2);
        assert_eq!(t.entries[0].val_score, 0.9);
    }

    #[test]
    fn best_prefers_earliest_on_tie() {
        let mut t = PromptScoreTable::default();
        t.upsert(entry("a", 0.5, &[]));
        t.upsert(entry("b", 0.5, &[]));
        assert_eq!(t.best().unwrap().candidate.prompt.text, "a");
    }

    #[test]
    fn selection_single_and_best() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = PromptScoreTable::default();
        t.upsert(entry("only", 0.3, &[("v1", 1.0)]));
        for s in [SelectionStrategy::BestOfTable, SelectionStrategy::ParetoSample] {
            assert_eq!(select_prompt(&t, s, &mut rng).unwrap().prompt.text, "only");
        }
        t.upsert(entry("better", 0.7, &[("v1", 0.0)]));
        assert_eq!(select_prompt(&t, SelectionStrategy::BestOfTable, &mut rng).unwrap().prompt.text, "better");
        assert!(select_prompt(&PromptScoreTable::default(), SelectionStrategy::BestOfTable, &mut rng).is_err());
    }

    #[test]
    fn feedback_lines_in_order_when_they_fit() {
        let perfect = RawCounts { tp: 0, tn: 1, fp: 0, fn_: 0 };
        let recs = vec![record("a", perfect, "Perfect prediction."), record("b", perfect, "Perfect prediction.")];
        assert_eq!(compose_feedback(&recs, 1000), "[a] Perfect prediction.\n[b] Perfect prediction.");
    }

    #[test]
    fn truncation_balances_error_kinds() {
        let omit = RawCounts { tp: 0, tn: 0, fp: 0, fn_: 1 };
        let hall = RawCounts { tp: 0, tn: 0, fp: 1, fn_: 0 };
        let perfect = RawCounts { tp: 0, tn: 1, fp: 0, fn_: 0 };
        let recs = vec![
            record("p", perfect, "Perfect prediction."),
            record("o1", omit, "Omissions: xxxx; Hallucinations: (none)"),
            record("o2", omit, "Omissions: yyyy; Hallucinations: (none)"),
            record("h1", hall, "Omissions: (none); Hallucinations: zzzz"),
        ];
        let line = "[o1] Omissions: xxxx; Hallucinations: (none)".len();
        let out = compose_feedback(&recs, 2 * line + 1);
        assert_eq!(out, "[o1] Omissions: xxxx; Hallucinations: (none)\n[h1] Omissions: (none); Hallucinations: zzzz");
        assert_eq!(compose_feedback(&recs, 5).chars().count(), 5);
    }

    #[test]
    fn extract_prompt_forms() {
        assert_eq!(extract_prompt("noise <prompt>\nnew\n</prompt> tail"), "new");
        assert_eq!(extract_prompt("```text\nnew prompt\n```"), "new prompt");
        assert_eq!(extract_prompt("  plain  "), "plain");
    }

    #[test]
    fn strategy_names() {
        assert_eq!("best".parse::<SelectionStrategy>().unwrap(), SelectionStrategy::BestOfTable);
        assert_eq!("pareto".parse::<SelectionStrategy>().unwrap(), SelectionStrategy::ParetoSample);
        assert!("random".parse::<SelectionStrategy>().is_err());
    }
}

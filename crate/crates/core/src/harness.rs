//! Benchmark-side experiments: group-wise pass-rate tables, context-aware
//! instruction rewriting, and the multi-turn interaction environment.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{complete, tags, CallSettings, CostLedger, ModelBackend, ModelRequest, Part};
use crate::dataset::{ContextBundle, Sample, Verdict};
use crate::taxonomy::Category;
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Audio,
    Video,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Audio => "audio",
            Modality::Video => "video",
        })
    }
}

/// Modalities a case's context needs: always text, plus every media kind
/// that has at least one reference.
pub fn case_modalities(context: &ContextBundle) -> BTreeSet<Modality> {
    let mut m = BTreeSet::from([Modality::Text]);
    if !context.image_refs.is_empty() {
        m.insert(Modality::Image);
    }
    if !context.audio_refs.is_empty() {
        m.insert(Modality::Audio);
    }
    if !context.video_refs.is_empty() {
        m.insert(Modality::Video);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityProfile {
    pub model_name: String,
    pub accepts: BTreeSet<Modality>,
}

impl CapabilityProfile {
    pub fn new(model_name: impl Into<String>, accepts: impl IntoIterator<Item = Modality>) -> Self {
        CapabilityProfile { model_name: model_name.into(), accepts: accepts.into_iter().collect() }
    }

    pub fn group_label(&self) -> String {
        let names: Vec<String> = self.accepts.iter().map(|m| format!("{m}")).collect();
        names.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRateRow {
    pub model_name: String,
    /// Capability group, named after its accepted modalities.
    pub group: String,
    pub category: Category,
    pub passed: u32,
    pub cases: u32,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PassRateReport {
    /// Sorted by model name, then category; only rows with cases.
    pub rows: Vec<PassRateRow>,
    /// Cases dropped by the modality filter, per model.
    pub excluded: BTreeMap<String, u32>,
}

impl PassRateReport {
    pub fn rate(&self, model: &str, category: Category) -> Option<f64> {
        self.rows.iter().find(|r| r.model_name == model && r.category == category).map(|r| r.pass_rate)
    }
}

/// Pass rates per (model, category) under the group-wise protocol: models
/// with identical capability sets form a group, and a case only counts for a
/// model when everyone in its group can take the case's inputs.
pub fn compute_pass_rates(samples: &[Sample], profiles: &[CapabilityProfile]) -> Result<PassRateReport> {
    let mut by_model: BTreeMap<&str, &CapabilityProfile> = BTreeMap::new();
    for p in profiles {
        if !p.accepts.contains(&Modality::Text) {
            return Err(Error::InvalidInput(format!("profile `{}` must accept text", p.model_name)));
        }
        if by_model.insert(p.model_name.as_str(), p).is_some() {
            return Err(Error::InvalidInput(format!("duplicate profile `{}`", p.model_name)));
        }
    }
    // Group capability = intersection over members; members share one set, so
    // this equals each member's own set.
    let mut group_accepts: BTreeMap<&BTreeSet<Modality>, BTreeSet<Modality>> = BTreeMap::new();
    for p in profiles {
        group_accepts.entry(&p.accepts).or_insert_with(|| p.accepts.clone());
    }

    let mut counts: BTreeMap<(&str, Category), (u32, u32)> = BTreeMap::new();
    let mut excluded: BTreeMap<String, u32> = BTreeMap::new();
    for s in samples {
        let verdict = s
            .verdict
            .ok_or_else(|| Error::InvalidInput(format!("case `{}` for `{}` has no verdict", s.id, s.model_name)))?;
        let profile = by_model.get(s.model_name.as_str()).ok_or_else(|| {
            Error::InvalidInput(format!("case `{}` references unknown model `{}`", s.id, s.model_name))
        })?;
        let accepts = &group_accepts[&profile.accepts];
        if !case_modalities(&s.context).is_subset(accepts) {
            *excluded.entry(s.model_name.clone()).or_default() += 1;
            continue;
        }
        let slot = counts.entry((profile.model_name.as_str(), s.category)).or_default();
        slot.0 += u32::from(verdict.passed());
        slot.1 += 1;
    }

    let rows = counts
        .into_iter()
        .map(|((model, category), (passed, cases))| PassRateRow {
            model_name: model.into(),
            group: by_model[model].group_label(),
            category,
            passed,
            cases,
            pass_rate: f64::from(passed) / f64::from(cases),
        })
        .collect();
    Ok(PassRateReport { rows, excluded })
}

#[derive(Clone, Copy)]
pub struct RewriteAgent<'a> {
    pub backend: &'a dyn ModelBackend,
    pub instructions: &'a str,
    pub settings: CallSettings,
}

/// Asks the understanding model to read the whole context and restate the
/// instruction explicitly. The context itself is left untouched.
pub fn rewrite_instruction(
    context: &ContextBundle,
    agent: &RewriteAgent<'_>,
    ledger: &mut CostLedger,
) -> Result<String> {
    let mut parts =
        Vec::with_capacity(1 + context.image_refs.len() + context.audio_refs.len() + context.video_refs.len());
    parts.push(Part::Text(format!("Original instruction: {}", context.instruction)));
    parts.extend(context.image_refs.iter().cloned().map(Part::Image));
    parts.extend(context.audio_refs.iter().cloned().map(Part::Audio));
    parts.extend(context.video_refs.iter().cloned().map(Part::Video));
    let request = ModelRequest::new(agent.instructions, parts).with_settings(agent.settings);
    let response = complete(agent.backend, &request, ledger, tags::UNDERSTANDING)?;
    let text = response.text.trim();
    if text.is_empty() {
        return Err(Error::Rewrite);
    }
    Ok(String::from(text))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub goal: String,
    pub initial_video_ref: String,
    pub max_turns: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn: u32,
    pub feedback_in: String,
    pub script_out: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Succeeded { turn: u32 },
    Failed,
    Aborted { turn: u32, error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEpisode {
    pub goal: String,
    pub initial_video_ref: String,
    pub max_turns: u32,
    pub seed: u64,
    pub turns: Vec<Turn>,
    pub outcome: EpisodeOutcome,
}

impl InteractionEpisode {
    pub fn success_turn(&self) -> Option<u32> {
        match self.outcome {
            EpisodeOutcome::Succeeded { turn } => Some(turn),
            _ => None,
        }
    }
}

/// Environment side: produces the feedback a turn starts from.
pub trait FeedbackProvider {
    fn feedback(&mut self, config: &EpisodeConfig, history: &[Turn], seed: u64) -> Result<String>;
}

/// Model under test: answers feedback with a new video script.
pub trait ScriptProvider {
    fn script(&mut self, goal: &str, history: &[Turn], feedback: &str) -> Result<String>;
}

pub trait VerdictProvider {
    fn verdict(&mut self, script: &str, feedback: &str) -> Result<Verdict>;
}

/// Runs turns until the first pass or `max_turns`. A provider error stops
/// the episode and is recorded in its outcome.
pub fn run_interaction_episode(
    config: &EpisodeConfig,
    feedback: &mut dyn FeedbackProvider,
    script: &mut dyn ScriptProvider,
    verdict: &mut dyn VerdictProvider,
) -> Result<InteractionEpisode> {
    if config.max_turns == 0 {
        return Err(Error::InvalidInput("max_turns must be >= 1".into()));
    }
    let mut turns: Vec<Turn> = Vec::new();
    let mut outcome = EpisodeOutcome::Failed;
    for turn in 1..=config.max_turns {
        let step = (|| -> Result<Turn> {
            let fb = feedback.feedback(config, &turns, derive_seed(config.seed, u64::from(turn)))?;
            let out = script.script(&config.goal, &turns, &fb)?;
            let v = verdict.verdict(&out, &fb)?;
            Ok(Turn { turn, feedback_in: fb, script_out: out, verdict: v })
        })();
        match step {
            Ok(t) => {
                let passed = t.verdict.passed();
                turns.push(t);
                if passed {
                    outcome = EpisodeOutcome::Succeeded { turn };
                    break;
                }
            }
            Err(e) => {
                outcome = EpisodeOutcome::Aborted { turn, error: format!("{e}") };
                break;
            }
        }
    }
    Ok(InteractionEpisode {
        goal: config.goal.clone(),
        initial_video_ref: config.initial_video_ref.clone(),
        max_turns: config.max_turns,
        seed: config.seed,
        turns,
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSuccess {
    /// `per_turn[t - 1]` = share of episodes that first succeed at turn `t`.
    pub per_turn: Vec<f64>,
    pub overall: f64,
    pub episodes: usize,
}

pub fn per_turn_success(episodes: &[InteractionEpisode]) -> Result<TurnSuccess> {
    let first = episodes.first().ok_or_else(|| Error::InvalidInput("no episodes".into()))?;
    let max_turns = first.max_turns;
    if episodes.iter().any(|e| e.max_turns != max_turns) {
        return Err(Error::InvalidInput("episodes disagree on max_turns".into()));
    }
    let n = episodes.len() as f64;
    let mut counts = alloc::vec![0usize; max_turns as usize];
    for turn in episodes.iter().filter_map(InteractionEpisode::success_turn) {
        counts[turn as usize - 1] += 1;
    }
    let total: usize = counts.iter().sum();
    Ok(TurnSuccess {
        per_turn: counts.iter().map(|&c| c as f64 / n).collect(),
        overall: total as f64 / n,
        episodes: episodes.len(),
    })
}

/// Seeded pick from a fixed pool of feedback messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolFeedback {
    pub pool: Vec<String>,
}

impl FeedbackProvider for PoolFeedback {
    fn feedback(&mut self, _config: &EpisodeConfig, _history: &[Turn], seed: u64) -> Result<String> {
        if self.pool.is_empty() {
            return Err(Error::InvalidInput("feedback pool is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.pool[rng.random_range(0..self.pool.len())].clone())
    }
}

/// Fills `{goal}`, `{feedback}` and `{turn}` into a template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateScript {
    pub template: String,
}

impl ScriptProvider for TemplateScript {
    fn script(&mut self, goal: &str, history: &[Turn], feedback: &str) -> Result<String> {
        Ok(self
            .template
            .replace("{goal}", goal)
            .replace("{feedback}", feedback)
            .replace("{turn}", &format!("{}", history.len() + 1)))
    }
}

/// Passes on the `pass_at`-th call (1-based), fails otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScheduledVerdict {
    pub pass_at: Option<u32>,
    calls: u32,
}

impl ScheduledVerdict {
    pub fn new(pass_at: Option<u32>) -> Self {
        ScheduledVerdict { pass_at, calls: 0 }
    }
}

impl VerdictProvider for ScheduledVerdict {
    fn verdict(&mut self, _script: &str, _feedback: &str) -> Result<Verdict> {
        self.calls += 1;
        Ok(if self.pass_at == Some(self.calls) { Verdict::Pass } else { Verdict::Fail })
    }
}

/// Model-backed provider usable for both the environment feedback and the
/// script role. Several agents may share one ledger through the `RefCell`.
pub struct AgentProvider<'a> {
    pub backend: &'a dyn ModelBackend,
    pub instructions: &'a str,
    pub settings: CallSettings,
    pub tag: &'a str,
    pub ledger: &'a RefCell<CostLedger>,
}

impl AgentProvider<'_> {
    fn ask(&self, text: String, seed: Option<u64>) -> Result<String> {
        let request = ModelRequest::new(self.instructions, alloc::vec![Part::Text(text)])
            .with_settings(self.settings)
            .with_seed(seed);
        let response = complete(self.backend, &request, &mut self.ledger.borrow_mut(), self.tag)?;
        Ok(String::from(response.text.trim()))
    }
}

fn render_history(history: &[Turn]) -> String {
    let lines: Vec<String> = history
        .iter()
        .map(|t| format!("Turn {}: feedback: {} | script: {}", t.turn, t.feedback_in, t.script_out))
        .collect();
    lines.join("\n")
}

impl FeedbackProvider for AgentProvider<'_> {
    fn feedback(&mut self, config: &EpisodeConfig, history: &[Turn], seed: u64) -> Result<String> {
        let text = format!(
            "Goal: {}\nInitial video: {}\nHistory:\n{}",
            config.goal,
            config.initial_video_ref,
            render_history(history)
        );
        self.ask(text, Some(seed))
    }
}

impl ScriptProvider for AgentProvider<'_> {
    fn script(&mut self, goal: &str, history: &[Turn], feedback: &str) -> Result<String> {
        let text = format!("Goal: {goal}\nHistory:\n{}\nFeedback: {feedback}", render_history(history));
        self.ask(text, None)
    }
}

/// Verdict from a model that answers `PASS` or `FAIL` on its first word.
pub struct AgentVerdict<'a>(pub AgentProvider<'a>);

impl VerdictProvider for AgentVerdict<'_> {
    fn verdict(&mut self, script: &str, feedback: &str) -> Result<Verdict> {
        let answer = self.0.ask(format!("Feedback: {feedback}\nScript: {script}"), None)?;
        let word = answer.split_whitespace().next().unwrap_or("").trim_matches(|c: char| !c.is_alphabetic());
        match word.to_ascii_uppercase().as_str() {
            "PASS" => Ok(Verdict::Pass),
            "FAIL" => Ok(Verdict::Fail),
            _ => Err(Error::Protocol(format!("verdict agent answered `{answer}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::sample;
    use alloc::vec;

    fn case(id: &str, model: &str, category: Category, pass: bool) -> Sample {
        let mut s = sample(id, category, "x");
        s.model_name = model.into();
        s.verdict = Some(if pass { Verdict::Pass } else { Verdict::Fail });
        s
    }

    #[test]
    fn one_model_three_of_four() {
        let cases: Vec<_> = (0..4).map(|i| case(&format!("c{i}"), "m", Category::ElementEditing, i != 0)).collect();
        let report = compute_pass_rates(&cases, &[CapabilityProfile::new("m", [Modality::Text])]).unwrap();
        assert_eq!(report.rate("m", Category::ElementEditing), Some(0.75));
        assert_eq!(report.rows.len(), 1);
    }

    #[test]
    fn audio_case_excluded_from_image_group() {
        let profiles = [
            CapabilityProfile::new("a", [Modality::Text, Modality::Image]),
            CapabilityProfile::new("b", [Modality::Text, Modality::Image]),
        ];
        let mut cases = vec![case("c0", "a", Category::Perception, true), case("c0", "b", Category::Perception, false)];
        for c in &mut cases {
            c.context.audio_refs.push("audio/c0.wav".into());
        }
        let report = compute_pass_rates(&cases, &profiles).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.excluded.get("a"), Some(&1));
        assert_eq!(report.excluded.get("b"), Some(&1));
    }

    #[test]
    fn unknown_model_and_missing_verdict() {
        let p = [CapabilityProfile::new("m", [Modality::Text])];
        assert!(compute_pass_rates(&[case("c", "ghost", Category::Perception, true)], &p).is_err());
        let mut c = case("c", "m", Category::Perception, true);
        c.verdict = None;
        assert!(compute_pass_rates(&[c], &p).is_err());
        assert!(compute_pass_rates(&[], &[CapabilityProfile::new("m", [Modality::Image])]).is_err());
    }

    struct Failing;
    impl ScriptProvider for Failing {
        fn script(&mut self, _: &str, _: &[Turn], _: &str) -> Result<String> {
            Err(Error::Transport { attempts: 4, message: "down".into() })
        }
    }

    fn config(max_turns: u32, seed: u64) -> EpisodeConfig {
        EpisodeConfig { goal: "teach counting".into(), initial_video_ref: "v0.mp4".into(), max_turns, seed }
    }

    fn pool() -> PoolFeedback {
        PoolFeedback { pool: vec!["too fast".into(), "wrong number".into(), "good, continue".into()] }
    }

    #[test]
    fn pass_at_first_turn() {
        let mut script = TemplateScript { template: "{turn}: {feedback}".into() };
        let ep = run_interaction_episode(&config(3, 1), &mut pool(), &mut script, &mut ScheduledVerdict::new(Some(1)))
            .unwrap();
        assert_eq!(ep.turns.len(), 1);
        assert_eq!(ep.outcome, EpisodeOutcome::Succeeded { turn: 1 });
        assert!(ep.turns[0].script_out.starts_with("1: "));
    }

    #[test]
    fn never_passing_runs_all_turns() {
        let mut script = TemplateScript { template: "{feedback}".into() };
        let ep =
            run_interaction_episode(&config(3, 1), &mut pool(), &mut script, &mut ScheduledVerdict::new(None)).unwrap();
        assert_eq!(ep.turns.len(), 3);
        assert_eq!(ep.outcome, EpisodeOutcome::Failed);
    }

    #[test]
    fn provider_failure_aborts() {
        let ep = run_interaction_episode(&config(3, 1), &mut pool(), &mut Failing, &mut ScheduledVerdict::new(None))
            .unwrap();
        assert!(ep.turns.is_empty());
        assert!(matches!(ep.outcome, EpisodeOutcome::Aborted { turn: 1, .. }));
        assert!(run_interaction_episode(&config(0, 1), &mut pool(), &mut Failing, &mut ScheduledVerdict::new(None))
            .is_err());
    }

    #[test]
    fn episodes_are_seed_reproducible() {
        let run = |seed| {
            let mut script = TemplateScript { template: "{feedback}".into() };
            run_interaction_episode(&config(3, seed), &mut pool(), &mut script, &mut ScheduledVerdict::new(None))
                .unwrap()
        };
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn per_turn_counts() {
        let mk = |pass_at: Option<u32>| {
            let mut script = TemplateScript { template: "s".into() };
            run_interaction_episode(&config(3, 0), &mut pool(), &mut script, &mut ScheduledVerdict::new(pass_at))
                .unwrap()
        };
        let none: Vec<_> = (0..4).map(|_| mk(None)).collect();
        let s = per_turn_success(&none).unwrap();
        assert_eq!((s.per_turn, s.overall), (vec![0.0, 0.0, 0.0], 0.0));
        let all: Vec<_> = (0..4).map(|_| mk(Some(1))).collect();
        let s = per_turn_success(&all).unwrap();
        assert_eq!((s.per_turn, s.overall), (vec![1.0, 0.0, 0.0], 1.0));
        assert!(per_turn_success(&[]).is_err());
        let mut mixed = all.clone();
        mixed[0].max_turns = 5;
        assert!(per_turn_success(&mixed).is_err());
    }
}

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ave_core::backend::{tags, CallSettings, CostLedger, PricingTable};
use ave_core::dataset::{group_by_task_family, split_dataset, Sample, SplitAssignment};
use ave_core::harness::{
    compute_pass_rates, per_turn_success, rewrite_instruction, run_interaction_episode, AgentProvider, AgentVerdict,
    EpisodeConfig, FeedbackProvider, InteractionEpisode, PoolFeedback, RewriteAgent, ScheduledVerdict, ScriptProvider,
    TemplateScript, VerdictProvider,
};
use ave_core::judge::{JudgeAgent, JudgePrompt};
use ave_core::matching::MatchAgent;
use ave_core::metrics::aggregate_confusion;
use ave_core::optimizer::{adapt_prompt, evaluate_slice, freeze_and_test, run_ave, EvalAgents, Refiner};
use ave_core::taxonomy::Taxonomy;
use serde::{Deserialize, Serialize};

use crate::config::{read_prompt, BackendRegistry, Overrides, RunConfig};
use crate::formats::{
    attach_verdicts, lint_dataset, load_dataset, load_pricing, load_profiles, load_splits, load_taxonomy,
    load_verdicts, read_text, LineIssue,
};
use crate::http::HttpSettings;
use crate::reports::{metric_csv, metric_rows, pass_rate_csv, MetricRow};
use crate::rundir::{Manifest, RunDir};

/// Outcome of `validate`: decode and invariant problems, line by line.
pub struct ValidationSummary {
    pub records: usize,
    pub issues: Vec<LineIssue>,
}

pub fn validate(dataset: &Path, taxonomy: &Path) -> anyhow::Result<ValidationSummary> {
    let taxonomy = load_taxonomy(taxonomy)?;
    let (samples, issues) = lint_dataset(dataset, &taxonomy)?;
    Ok(ValidationSummary { records: samples.len(), issues })
}

pub fn split(dataset: &Path, taxonomy: &Path, seed: u64) -> anyhow::Result<SplitAssignment> {
    let samples = load_dataset(dataset, &load_taxonomy(taxonomy)?)?;
    Ok(split_dataset(&samples, seed)?)
}

/// Dataset, taxonomy and pricing named by a run config.
struct Inputs {
    samples: Vec<Sample>,
    pricing: PricingTable,
}

fn load_inputs(config: &RunConfig) -> anyhow::Result<Inputs> {
    let taxonomy: Taxonomy = load_taxonomy(&config.taxonomy)?;
    let mut samples = load_dataset(&config.dataset, &taxonomy)?;
    if let Some(family) = config.run.task_family {
        samples.retain(|s| s.task_family == family);
        if samples.is_empty() {
            bail!("no samples of task family `{family}` in {}", config.dataset.display());
        }
    }
    Ok(Inputs { samples, pricing: load_pricing(&config.pricing)? })
}

fn manifest(command: &str, config: &RunConfig, config_text: &str, fixed_clock: bool) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new(command, config_text, fixed_clock);
    m.asset("dataset", &config.dataset)?;
    m.asset("taxonomy", &config.taxonomy)?;
    m.asset("pricing", &config.pricing)?;
    m.asset("prompt.judge", &config.prompts.judge)?;
    m.asset("prompt.optimizer", &config.prompts.optimizer)?;
    m.asset("prompt.match", &config.prompts.matcher)?;
    if let Some(p) = &config.prompts.rewrite {
        m.asset("prompt.rewrite", p)?;
    }
    if let Some(p) = &config.prompts.target_baseline {
        m.asset("prompt.target_baseline", p)?;
    }
    if let Some(p) = &config.stub {
        m.asset("stub", p)?;
    }
    m.seeds.insert("split".into(), config.run.seed);
    m.seeds.insert("run".into(), config.run.seed);
    m.settings = serde_json::to_value(config.settings()?)?;
    Ok(m)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OptimizeSummary {
    pub p_star_id: String,
    pub p0_id: String,
    pub iterations: usize,
    pub val_score: f64,
    pub test_score: f64,
    pub p0_test_score: f64,
    pub spent_usd: f64,
    pub eval_spent_usd: f64,
}

/// Splits, optimizes on train/val, then scores p* and p0 once on test with
/// a separate ledger.
pub fn optimize(
    config_path: &Path,
    overrides: &Overrides,
    fixed_clock: bool,
) -> anyhow::Result<(PathBuf, OptimizeSummary)> {
    let (config, config_text) = RunConfig::load(config_path, overrides)?;
    let settings = config.settings()?;
    let inputs = load_inputs(&config)?;
    let p0 = JudgePrompt::new(read_prompt(&config.prompts.judge)?)?;
    let meta = read_prompt(&config.prompts.optimizer)?;
    let match_text = read_prompt(&config.prompts.matcher)?;

    let mut registry = BackendRegistry::from_config(&config)?;
    let [judge, matcher, optimizer] = registry
        .resolve(&config.http, [&config.backends.judge, &config.backends.matcher, &config.backends.optimizer])?;
    let call = config.call_settings();
    let agents = EvalAgents {
        judge: JudgeAgent { backend: judge, settings: call, seed: Some(config.run.seed) },
        matcher: MatchAgent { backend: matcher, instructions: &match_text, settings: call },
    };
    let refiner = Refiner { backend: optimizer, meta_prompt: &meta, settings: call };

    let dir = RunDir::open(&config.run_dir)?;
    dir.write_json("manifest.json", &manifest("optimize", &config, &config_text, fixed_clock)?)?;
    let splits = split_dataset(&inputs.samples, config.run.seed)?;
    dir.write_json("splits.json", &splits)?;
    let train = SplitAssignment::select(&splits.train_ids, &inputs.samples)?;
    let val = SplitAssignment::select(&splits.val_ids, &inputs.samples)?;
    let test = SplitAssignment::select(&splits.test_ids, &inputs.samples)?;

    let ledger = CostLedger::new(config.run.budget_usd, inputs.pricing.clone())?;
    let (p_star, run) = run_ave(p0.clone(), &train, &val, &agents, &refiner, settings.clone(), ledger)?;
    dir.write_json("table.json", &run.table)?;
    dir.write_json("history.json", &run.history)?;
    dir.write_json("termination.json", &run.termination)?;
    dir.write_json("ledger.json", &run.ledger)?;
    dir.write_json("p_star.json", &p_star)?;
    dir.write_text("p_star.txt", &format!("{}\n", p_star.prompt.text))?;

    let mut eval_ledger = CostLedger::new(config.eval_budget(), inputs.pricing)?;
    let test_score = freeze_and_test(&p_star.prompt, &test, &splits, &agents, &settings, &mut eval_ledger)?;
    let p0_test_score = freeze_and_test(&p0, &test, &splits, &agents, &settings, &mut eval_ledger)?;
    dir.write_json("eval_ledger.json", &eval_ledger)?;

    let summary = OptimizeSummary {
        p_star_id: p_star.prompt.id.clone(),
        p0_id: p0.id.clone(),
        iterations: run.history.len(),
        val_score: run.table.get(&p_star.prompt.id).map_or(f64::NAN, |e| e.val_score),
        test_score,
        p0_test_score,
        spent_usd: run.ledger.spent_usd,
        eval_spent_usd: eval_ledger.spent_usd,
    };
    dir.write_json("scores.json", &summary)?;
    Ok((dir.path().to_path_buf(), summary))
}

fn test_split(config: &RunConfig, samples: &[Sample]) -> anyhow::Result<SplitAssignment> {
    let stored = config.run_dir.join("splits.json");
    if stored.is_file() {
        return Ok(load_splits(&stored)?);
    }
    Ok(split_dataset(samples, config.run.seed)?)
}

fn prompt_or_p_star(config: &RunConfig, prompt: Option<&Path>) -> anyhow::Result<JudgePrompt> {
    let path = prompt.map_or_else(|| config.run_dir.join("p_star.txt"), Path::to_path_buf);
    Ok(JudgePrompt::new(read_prompt(&path).with_context(|| "pass --prompt or run `optimize` first")?)?)
}

/// Scores a frozen prompt on the test split, overall and per task family.
pub fn eval(
    config_path: &Path,
    overrides: &Overrides,
    prompt: Option<&Path>,
    fixed_clock: bool,
) -> anyhow::Result<(PathBuf, Vec<MetricRow>)> {
    let (config, config_text) = RunConfig::load(config_path, overrides)?;
    let settings = config.settings()?;
    let inputs = load_inputs(&config)?;
    let prompt = prompt_or_p_star(&config, prompt)?;
    let match_text = read_prompt(&config.prompts.matcher)?;
    let splits = test_split(&config, &inputs.samples)?;
    let test = SplitAssignment::select(&splits.test_ids, &inputs.samples)?;

    let mut registry = BackendRegistry::from_config(&config)?;
    let [judge, matcher] = registry.resolve(&config.http, [&config.backends.judge, &config.backends.matcher])?;
    let call = config.call_settings();
    let agents = EvalAgents {
        judge: JudgeAgent { backend: judge, settings: call, seed: Some(config.run.seed) },
        matcher: MatchAgent { backend: matcher, instructions: &match_text, settings: call },
    };

    let dir = RunDir::open(&config.run_dir.join("eval"))?;
    let mut m = manifest("eval", &config, &config_text, fixed_clock)?;
    m.assets.insert("prompt.evaluated".into(), prompt.id.clone());
    dir.write_json("manifest.json", &m)?;

    let mut ledger = CostLedger::new(config.eval_budget(), inputs.pricing)?;
    let tests: Vec<Sample> = test.into_iter().cloned().collect();
    let by_id: BTreeMap<&str, &Sample> = tests.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (family, members) in group_by_task_family(&tests) {
        if members.is_empty() {
            continue;
        }
        let refs: Vec<&Sample> = members.iter().collect();
        let eval = evaluate_slice(&prompt, &refs, &agents, &settings, &mut ledger)?;
        rows.extend(metric_rows(family.as_str(), &eval.aggregate, &eval.instances, &by_id)?);
        records.extend(eval.instances);
    }
    let overall = aggregate_confusion(records.iter().map(|r| &r.confusion));
    rows.extend(metric_rows("all", &overall, &records, &by_id)?);

    dir.write_text("metrics.csv", &metric_csv(&rows)?)?;
    dir.write_json("metrics.json", &rows)?;
    let mut lines = String::new();
    for r in &records {
        writeln!(lines, "{}", serde_json::to_string(r)?)?;
    }
    dir.write_text("predictions.jsonl", &lines)?;
    dir.write_json("ledger.json", &ledger)?;
    Ok((dir.path().to_path_buf(), rows))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AdaptSummary {
    pub target_backend: String,
    pub baseline_prompt_id: String,
    pub adapted_prompt_id: String,
    pub baseline_score: f64,
    pub adapted_score: f64,
    pub optimizer_spend_usd: f64,
    pub spent_usd: f64,
}

/// Scores a transferred prompt with the target judge against the target's
/// own baseline prompt. No optimizer is constructed.
pub fn adapt(
    config_path: &Path,
    overrides: &Overrides,
    prompt: Option<&Path>,
    fixed_clock: bool,
) -> anyhow::Result<(PathBuf, AdaptSummary)> {
    let (config, config_text) = RunConfig::load(config_path, overrides)?;
    let settings = config.settings()?;
    let inputs = load_inputs(&config)?;
    let p_star = prompt_or_p_star(&config, prompt)?;
    let baseline_path = config.prompts.target_baseline.as_ref().unwrap_or(&config.prompts.judge);
    let baseline = JudgePrompt::new(read_prompt(baseline_path)?)?;
    let match_text = read_prompt(&config.prompts.matcher)?;
    let target_name = config.backends.target_judge.clone().context("adapt needs backends.target_judge")?;
    let splits = test_split(&config, &inputs.samples)?;
    let test = SplitAssignment::select(&splits.test_ids, &inputs.samples)?;

    let mut registry = BackendRegistry::from_config(&config)?;
    let [target, matcher] = registry.resolve(&config.http, [&target_name, &config.backends.matcher])?;
    let call = config.call_settings();
    let agents = EvalAgents {
        judge: JudgeAgent { backend: target, settings: call, seed: Some(config.run.seed) },
        matcher: MatchAgent { backend: matcher, instructions: &match_text, settings: call },
    };

    let dir = RunDir::open(&config.run_dir.join("adapt"))?;
    dir.write_json("manifest.json", &manifest("adapt", &config, &config_text, fixed_clock)?)?;
    let mut ledger = CostLedger::new(config.eval_budget(), inputs.pricing)?;
    let scores = adapt_prompt(&p_star, &baseline, &agents, &test, &splits, &settings, &mut ledger)?;
    let summary = AdaptSummary {
        target_backend: target_name,
        baseline_prompt_id: baseline.id,
        adapted_prompt_id: p_star.id,
        baseline_score: scores.baseline_score,
        adapted_score: scores.adapted_score,
        optimizer_spend_usd: ledger.spent_by_tag(tags::OPTIMIZER),
        spent_usd: ledger.spent_usd,
    };
    dir.write_json("adapt.json", &summary)?;
    dir.write_json("ledger.json", &ledger)?;
    Ok((dir.path().to_path_buf(), summary))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub sample_id: String,
    pub instruction: String,
    pub rewritten: String,
}

pub fn rewrite(config_path: &Path, overrides: &Overrides, fixed_clock: bool) -> anyhow::Result<(PathBuf, usize)> {
    let (config, config_text) = RunConfig::load(config_path, overrides)?;
    let inputs = load_inputs(&config)?;
    let instructions = read_prompt(config.prompts.rewrite.as_ref().context("rewrite needs prompts.rewrite")?)?;
    let name = config.backends.understanding.clone().context("rewrite needs backends.understanding")?;
    let mut registry = BackendRegistry::from_config(&config)?;
    let [backend] = registry.resolve(&config.http, [&name])?;
    let agent = RewriteAgent { backend, instructions: &instructions, settings: config.call_settings() };

    let dir = RunDir::open(&config.run_dir.join("rewrite"))?;
    dir.write_json("manifest.json", &manifest("rewrite", &config, &config_text, fixed_clock)?)?;
    let mut ledger = CostLedger::new(config.run.budget_usd, inputs.pricing)?;
    let mut lines = String::new();
    for s in &inputs.samples {
        let rewritten =
            rewrite_instruction(&s.context, &agent, &mut ledger).with_context(|| format!("rewriting `{}`", s.id))?;
        let record = RewriteRecord { sample_id: s.id.clone(), instruction: s.context.instruction.clone(), rewritten };
        writeln!(lines, "{}", serde_json::to_string(&record)?)?;
    }
    dir.write_text("rewrites.jsonl", &lines)?;
    dir.write_json("ledger.json", &ledger)?;
    Ok((dir.path().to_path_buf(), inputs.samples.len()))
}

/// Pass rates per model and category from a verdict file.
pub fn report(
    verdicts: &Path,
    profiles: &Path,
    dataset: &Path,
    taxonomy: &Path,
    out: &Path,
) -> anyhow::Result<ave_core::harness::PassRateReport> {
    let cases = load_dataset(dataset, &load_taxonomy(taxonomy)?)?;
    let verdicts = load_verdicts(verdicts)?;
    if verdicts.is_empty() {
        bail!("verdict file is empty");
    }
    let samples = attach_verdicts(&cases, &verdicts)?;
    let report = compute_pass_rates(&samples, &load_profiles(profiles)?)?;
    let dir = RunDir::open(out)?;
    dir.write_text("pass_rates.csv", &pass_rate_csv(&report)?)?;
    dir.write_json("pass_rates.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractConfig {
    pub episodes: usize,
    pub max_turns: u32,
    #[serde(default)]
    pub seed: u64,
    /// Goal of episode `i` is `goals[i % goals.len()]`.
    pub goals: Vec<String>,
    pub initial_video_ref: String,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub stub: Option<PathBuf>,
    #[serde(default)]
    pub pricing: Option<PathBuf>,
    #[serde(default = "default_interact_budget")]
    pub budget_usd: f64,
    pub feedback: FeedbackSource,
    pub script: ScriptSource,
    pub verdict: VerdictSource,
    #[serde(default)]
    pub http: BTreeMap<String, HttpSettings>,
}

fn default_interact_budget() -> f64 {
    30.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeedbackSource {
    Pool { pool: Vec<String> },
    Agent { backend: String, instructions: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptSource {
    Template { template: String },
    Agent { backend: String, instructions: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VerdictSource {
    /// `pass_at[i]` is the passing turn of episode `i`; 0 or a missing entry
    /// means it never passes.
    Scheduled {
        pass_at: Vec<u32>,
    },
    Agent {
        backend: String,
        instructions: PathBuf,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InteractSummary {
    pub episodes: usize,
    pub max_turns: u32,
    pub per_turn: Vec<f64>,
    pub overall: f64,
    pub aborted: usize,
}

pub fn interact(
    config_path: &Path,
    seed: Option<u64>,
    stub: Option<&Path>,
) -> anyhow::Result<(PathBuf, InteractSummary)> {
    let mut config: InteractConfig = toml::from_str(&read_text(config_path)?)
        .with_context(|| format!("invalid config {}", config_path.display()))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
    config.out_dir = rel(&config.out_dir);
    config.stub = stub.map(Path::to_path_buf).or(config.stub.as_deref().map(rel));
    config.pricing = config.pricing.as_deref().map(rel);
    if let Some(s) = seed {
        config.seed = s;
    }
    if config.episodes == 0 {
        bail!("episodes must be >= 1");
    }
    if config.goals.is_empty() {
        bail!("goals must not be empty");
    }

    let pricing = match &config.pricing {
        Some(p) => load_pricing(p)?,
        None => PricingTable::default(),
    };
    let ledger = RefCell::new(CostLedger::new(config.budget_usd, pricing)?);
    let mut registry = BackendRegistry::load(config.stub.as_deref())?;
    let mut texts: BTreeMap<PathBuf, String> = BTreeMap::new();
    let agent_roles = [
        match &mut config.feedback {
            FeedbackSource::Agent { backend, instructions } => Some((backend, instructions)),
            FeedbackSource::Pool { .. } => None,
        },
        match &mut config.script {
            ScriptSource::Agent { backend, instructions } => Some((backend, instructions)),
            ScriptSource::Template { .. } => None,
        },
        match &mut config.verdict {
            VerdictSource::Agent { backend, instructions } => Some((backend, instructions)),
            VerdictSource::Scheduled { .. } => None,
        },
    ];
    for (backend, instructions) in agent_roles.into_iter().flatten() {
        registry.connect(&config.http, backend)?;
        *instructions = rel(instructions);
        texts.insert(instructions.clone(), read_prompt(instructions)?);
    }
    let roles = AgentRoles { registry: &registry, texts: &texts, ledger: &ledger };

    let dir = RunDir::open(&config.out_dir)?;
    let mut episodes: Vec<InteractionEpisode> = Vec::with_capacity(config.episodes);
    for i in 0..config.episodes {
        let episode_config = EpisodeConfig {
            goal: config.goals[i % config.goals.len()].clone(),
            initial_video_ref: config.initial_video_ref.clone(),
            max_turns: config.max_turns,
            seed: ave_core::derive_seed(config.seed, i as u64),
        };
        let mut feedback: Box<dyn FeedbackProvider + '_> = match &config.feedback {
            FeedbackSource::Pool { pool } => Box::new(PoolFeedback { pool: pool.clone() }),
            FeedbackSource::Agent { backend, instructions } => {
                Box::new(roles.agent(backend, instructions, tags::ENVIRONMENT)?)
            }
        };
        let mut script: Box<dyn ScriptProvider + '_> = match &config.script {
            ScriptSource::Template { template } => Box::new(TemplateScript { template: template.clone() }),
            ScriptSource::Agent { backend, instructions } => {
                Box::new(roles.agent(backend, instructions, tags::UNDERSTANDING)?)
            }
        };
        let mut verdict: Box<dyn VerdictProvider + '_> = match &config.verdict {
            VerdictSource::Scheduled { pass_at } => {
                Box::new(ScheduledVerdict::new(pass_at.get(i).copied().filter(|&t| t > 0)))
            }
            VerdictSource::Agent { backend, instructions } => {
                Box::new(AgentVerdict(roles.agent(backend, instructions, tags::JUDGE)?))
            }
        };
        let episode = run_interaction_episode(&episode_config, feedback.as_mut(), script.as_mut(), verdict.as_mut())?;
        dir.write_json(&format!("episodes/episode_{i:03}.json"), &episode)?;
        episodes.push(episode);
    }
    let stats = per_turn_success(&episodes)?;
    let summary = InteractSummary {
        episodes: stats.episodes,
        max_turns: config.max_turns,
        per_turn: stats.per_turn,
        overall: stats.overall,
        aborted: episodes
            .iter()
            .filter(|e| matches!(e.outcome, ave_core::harness::EpisodeOutcome::Aborted { .. }))
            .count(),
    };
    dir.write_json("summary.json", &summary)?;
    dir.write_json("ledger.json", &*ledger.borrow())?;
    Ok((dir.path().to_path_buf(), summary))
}

struct AgentRoles<'a> {
    registry: &'a BackendRegistry,
    texts: &'a BTreeMap<PathBuf, String>,
    ledger: &'a RefCell<CostLedger>,
}

impl<'a> AgentRoles<'a> {
    fn agent(&self, backend: &str, instructions: &Path, tag: &'static str) -> anyhow::Result<AgentProvider<'a>> {
        Ok(AgentProvider {
            backend: self.registry.get(backend)?,
            instructions: &self.texts[instructions],
            settings: CallSettings::default(),
            tag,
            ledger: self.ledger,
        })
    }
}

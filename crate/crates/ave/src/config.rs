use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ave_core::backend::{CallSettings, ModelBackend, DEFAULT_MAX_TOKENS};
use ave_core::metrics::MetricKind;
use ave_core::optimizer::{RunSettings, SelectionStrategy, DEFAULT_FEEDBACK_CHAR_BUDGET, DEFAULT_VOTES};
use ave_core::stub::{LexicalMatcher, ScriptedBackend, StubScript};
use ave_core::taxonomy::TaskFamily;
use serde::{Deserialize, Serialize};

use crate::formats::{load_json, read_text};
use crate::http::{HttpBackend, HttpSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub taxonomy: PathBuf,
    pub pricing: PathBuf,
    pub run_dir: PathBuf,
    /// Stub script file; `--stub` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub: Option<PathBuf>,
    pub prompts: PromptPaths,
    pub backends: Roles,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub http: BTreeMap<String, HttpSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptPaths {
    /// Initial judge prompt.
    pub judge: PathBuf,
    /// Meta-prompt of the optimizer agent.
    pub optimizer: PathBuf,
    /// Instructions of the match agent.
    #[serde(rename = "match")]
    pub matcher: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<PathBuf>,
    /// The adaptation target's own prompt; defaults to `judge`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_baseline: Option<PathBuf>,
}

/// Backend name per role. Names key both the pricing table and either a
/// stub script or an `[http.<name>]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub judge: String,
    #[serde(rename = "match")]
    pub matcher: String,
    pub optimizer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub understanding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_judge: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_metric")]
    pub metric: String,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_votes")]
    pub votes: usize,
    #[serde(default = "default_budget")]
    pub budget_usd: f64,
    /// Budget for the frozen test evaluation; defaults to `budget_usd`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_budget_usd: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    /// Restricts the dataset to one task family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_family: Option<TaskFamily>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_feedback_budget")]
    pub feedback_char_budget: usize,
}

fn default_metric() -> String {
    "rec-fpr".into()
}
fn default_batch() -> usize {
    8
}
fn default_votes() -> usize {
    DEFAULT_VOTES
}
fn default_budget() -> f64 {
    30.0
}
fn default_strategy() -> String {
    "pareto".into()
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}
fn default_feedback_budget() -> usize {
    DEFAULT_FEEDBACK_CHAR_BUDGET
}

impl Default for RunSection {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget_usd: Option<f64>,
    pub metric: Option<String>,
    pub votes: Option<usize>,
    pub batch_size: Option<usize>,
    pub strategy: Option<String>,
    pub stub: Option<PathBuf>,
}

impl RunConfig {
    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path, overrides: &Overrides) -> anyhow::Result<(Self, String)> {
        let text = read_text(path)?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        config.apply(overrides);
        config.check()?;
        Ok((config, text))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.dataset, &mut self.taxonomy, &mut self.pricing, &mut self.run_dir] {
            fix(p);
        }
        for p in [&mut self.prompts.judge, &mut self.prompts.optimizer, &mut self.prompts.matcher] {
            fix(p);
        }
        for p in [&mut self.stub, &mut self.prompts.rewrite, &mut self.prompts.target_baseline].into_iter().flatten() {
            fix(p);
        }
    }

    fn apply(&mut self, o: &Overrides) {
        let r = &mut self.run;
        r.seed = o.seed.unwrap_or(r.seed);
        r.budget_usd = o.budget_usd.unwrap_or(r.budget_usd);
        r.votes = o.votes.unwrap_or(r.votes);
        r.batch_size = o.batch_size.unwrap_or(r.batch_size);
        if let Some(m) = &o.metric {
            r.metric.clone_from(m);
        }
        if let Some(s) = &o.strategy {
            r.strategy.clone_from(s);
        }
        if o.stub.is_some() {
            self.stub.clone_from(&o.stub);
        }
    }

    fn check(&self) -> anyhow::Result<()> {
        let r = &self.run;
        if r.batch_size == 0 {
            bail!("run.batch_size must be >= 1");
        }
        if r.votes == 0 {
            bail!("run.votes must be >= 1");
        }
        if !(r.budget_usd > 0.0 && r.budget_usd.is_finite()) {
            bail!("run.budget_usd must be positive, got {}", r.budget_usd);
        }
        if let Some(b) = r.eval_budget_usd {
            if !(b > 0.0 && b.is_finite()) {
                bail!("run.eval_budget_usd must be positive, got {b}");
            }
        }
        r.metric.parse::<MetricKind>()?;
        r.strategy.parse::<SelectionStrategy>()?;
        let mut assets = vec![
            &self.dataset,
            &self.taxonomy,
            &self.pricing,
            &self.prompts.judge,
            &self.prompts.optimizer,
            &self.prompts.matcher,
        ];
        assets.extend(self.stub.iter());
        assets.extend(self.prompts.rewrite.iter());
        assets.extend(self.prompts.target_baseline.iter());
        for p in assets {
            if !p.is_file() {
                bail!("missing asset {}", p.display());
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> anyhow::Result<RunSettings> {
        let r = &self.run;
        let s = RunSettings {
            metric: r.metric.parse()?,
            batch_size: r.batch_size,
            votes: r.votes,
            strategy: r.strategy.parse()?,
            seed: r.seed,
            feedback_char_budget: r.feedback_char_budget,
            max_iterations: r.max_iterations,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn call_settings(&self) -> CallSettings {
        CallSettings { temperature: self.run.temperature, max_tokens: self.run.max_tokens }
    }

    pub fn eval_budget(&self) -> f64 {
        self.run.eval_budget_usd.unwrap_or(self.run.budget_usd)
    }
}

/// One backend in a stub file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StubBackend {
    Script(StubScript),
    Lexical(LexicalMatcher),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubFile {
    pub backends: Vec<StubBackend>,
}

/// Owns every backend a command may use, keyed by name.
#[derive(Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Box<dyn ModelBackend + Send + Sync>>,
}

impl BackendRegistry {
    pub fn load(stub: Option<&Path>) -> anyhow::Result<Self> {
        let mut registry = BackendRegistry::default();
        if let Some(path) = stub {
            let file: StubFile = load_json(path)?;
            for b in file.backends {
                let (name, backend): (String, Box<dyn ModelBackend + Send + Sync>) = match b {
                    StubBackend::Script(s) => (s.name.clone(), Box::new(ScriptedBackend::new(s))),
                    StubBackend::Lexical(m) => (m.name.clone(), Box::new(m)),
                };
                if registry.backends.insert(name.clone(), backend).is_some() {
                    bail!("stub file {} defines `{name}` twice", path.display());
                }
            }
        }
        Ok(registry)
    }

    pub fn from_config(config: &RunConfig) -> anyhow::Result<Self> {
        BackendRegistry::load(config.stub.as_deref())
    }

    /// Makes sure `name` is available: a stub of that name, or else an HTTP
    /// backend built from `http[name]`.
    pub fn connect(&mut self, http: &BTreeMap<String, HttpSettings>, name: &str) -> anyhow::Result<()> {
        if !self.backends.contains_key(name) {
            let Some(settings) = http.get(name) else {
                bail!("backend `{name}` is neither in the stub file nor configured under [http.{name}]");
            };
            self.backends.insert(name.to_string(), Box::new(HttpBackend::new(name, settings.clone())?));
        }
        Ok(())
    }

    /// Resolves several names at once so the borrows can coexist.
    pub fn resolve<const N: usize>(
        &mut self,
        http: &BTreeMap<String, HttpSettings>,
        names: [&str; N],
    ) -> anyhow::Result<[&dyn ModelBackend; N]> {
        for name in names {
            self.connect(http, name)?;
        }
        Ok(names.map(|n| self.backends[n].as_ref() as &dyn ModelBackend))
    }

    /// A backend already loaded or connected.
    pub fn get(&self, name: &str) -> anyhow::Result<&dyn ModelBackend> {
        match self.backends.get(name) {
            Some(b) => Ok(b.as_ref()),
            None => bail!("backend `{name}` is not connected"),
        }
    }
}

pub fn read_prompt(path: &Path) -> anyhow::Result<String> {
    let text = read_text(path)?;
    let trimmed = text.trim();
    if trimmed.is_empty() {
        bail!("prompt file {} is empty", path.display());
    }
    Ok(trimmed.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_section_defaults() {
        let r = RunSection::default();
        assert_eq!((r.votes, r.batch_size, r.budget_usd, r.metric.as_str()), (5, 8, 30.0, "rec-fpr"));
        assert_eq!(r.max_tokens, 32_000);
    }

    #[test]
    fn overrides_win() {
        let mut c: RunConfig = toml::from_str(
            r#"
            dataset = "d.jsonl"
            taxonomy = "t.toml"
            pricing = "p.toml"
            run_dir = "out"
            [prompts]
            judge = "j.txt"
            optimizer = "o.txt"
            match = "m.txt"
            [backends]
            judge = "j"
            match = "m"
            optimizer = "o"
            [run]
            seed = 3
            "#,
        )
        .unwrap();
        c.resolve(Path::new("/base"));
        assert_eq!(c.dataset, Path::new("/base/d.jsonl"));
        c.apply(&Overrides { seed: Some(9), metric: Some("mcc".into()), ..Overrides::default() });
        let s = c.settings().unwrap();
        assert_eq!((s.seed, s.metric), (9, MetricKind::Mcc));
        c.run.metric = "accuracy".into();
        assert!(c.settings().is_err());
    }

    #[test]
    fn stub_file_round_trip() {
        let json = r#"{"backends":[{"kind":"lexical","name":"m"},{"kind":"script","name":"j","default":"NONE"}]}"#;
        let f: StubFile = serde_json::from_str(json).unwrap();
        assert!(matches!(&f.backends[0], StubBackend::Lexical(m) if m.name == "m"));
        assert!(matches!(&f.backends[1], StubBackend::Script(s) if s.default.as_deref() == Some("NONE")));
    }
}

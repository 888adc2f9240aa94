//! Uniform model-call contract shared by the judge, match agent, optimizer
//! and understanding model, with retries and dollar-budget accounting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_MAX_TOKENS: u32 = 32_000;
/// Retries after the first failed attempt, so at most `MAX_RETRIES + 1` calls.
pub const MAX_RETRIES: u32 = 3;
pub const BACKOFF_BASE_MS: u64 = 500;

/// Ledger tags for the four agent roles.
pub mod tags {
    pub const JUDGE: &str = "judge";
    pub const MATCH: &str = "match";
    pub const OPTIMIZER: &str = "optimizer";
    pub const UNDERSTANDING: &str = "understanding";
    pub const ENVIRONMENT: &str = "environment";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Part {
    Text(String),
    Image(String),
    Audio(String),
    Video(String),
}

impl Part {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Part::Text(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub system_prompt: String,
    pub user_parts: Vec<Part>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ModelRequest {
    pub fn new(system_prompt: impl Into<String>, user_parts: Vec<Part>) -> Self {
        ModelRequest {
            system_prompt: system_prompt.into(),
            user_parts,
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }

    pub fn with_settings(mut self, settings: CallSettings) -> Self {
        self.temperature = settings.temperature;
        self.max_tokens = settings.max_tokens;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    /// Concatenated text parts, one per line.
    pub fn user_text(&self) -> String {
        let texts: Vec<&str> = self.user_parts.iter().filter_map(Part::as_text).collect();
        texts.join("\n")
    }

    /// Hex SHA-256 over the canonical JSON encoding of the request.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        crate::sha256_hex(&bytes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.user_parts.is_empty() {
            return Err(Error::Contract("request has no user parts".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Contract(format!("temperature {} is not >= 0", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Contract("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Sampling knobs applied to every request a role makes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CallSettings {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for CallSettings {
    fn default() -> Self {
        CallSettings { temperature: 0.0, max_tokens: DEFAULT_MAX_TOKENS }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Failure of a single backend attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallError {
    /// Retryable: connection failures, timeouts, rate limits, 5xx.
    Transport(String),
    /// Not retryable: the provider answered with something unusable.
    Protocol(String),
}

/// A text-completion provider over multimodal parts.
///
/// Implementations must be callable concurrently through `&self`.
pub trait ModelBackend {
    /// Name used to look up pricing.
    fn name(&self) -> &str;

    fn call(&self, request: &ModelRequest) -> core::result::Result<ModelResponse, CallError>;

    /// Called before retry number `attempt` (1-based). Backends that talk to a
    /// network sleep here; the default does nothing.
    fn before_retry(&self, _attempt: u32, _delay_ms: u64) {}
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn call(&self, request: &ModelRequest) -> core::result::Result<ModelResponse, CallError> {
        (**self).call(request)
    }

    fn before_retry(&self, attempt: u32, delay_ms: u64) {
        (**self).before_retry(attempt, delay_ms)
    }
}

/// Whitespace token count; the stub's deterministic counter.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Prompt-side token estimate: whitespace tokens of the system prompt and
/// every text part, plus one token per media reference.
pub fn estimate_prompt_tokens(request: &ModelRequest) -> u64 {
    let media = request.user_parts.iter().filter(|p| p.as_text().is_none()).count() as u64;
    let text: u64 = request.user_parts.iter().filter_map(Part::as_text).map(estimate_tokens).sum();
    estimate_tokens(&request.system_prompt) + text + media
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    #[serde(rename = "usd_per_1M_input_tokens")]
    pub usd_per_1m_input_tokens: f64,
    #[serde(rename = "usd_per_1M_output_tokens")]
    pub usd_per_1m_output_tokens: f64,
}

impl Pricing {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        (prompt_tokens as f64 * self.usd_per_1m_input_tokens + completion_tokens as f64 * self.usd_per_1m_output_tokens)
            / 1_000_000.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PricingTable(pub BTreeMap<String, Pricing>);

impl PricingTable {
    pub fn with(mut self, backend: impl Into<String>, pricing: Pricing) -> Self {
        self.0.insert(backend.into(), pricing);
        self
    }

    pub fn get(&self, backend: &str) -> Result<&Pricing> {
        self.0.get(backend).ok_or_else(|| Error::UnpricedBackend(backend.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub tag: String,
    pub backend: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub usd: f64,
    /// The provider reported more usage than the remaining budget covered;
    /// `usd` was capped at what was left.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub clamped: bool,
}

/// Shared dollar budget for every agent call of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub budget_usd: f64,
    pub spent_usd: f64,
    pub entries: Vec<LedgerEntry>,
    #[serde(skip)]
    pricing: PricingTable,
}

impl CostLedger {
    pub fn new(budget_usd: f64, pricing: PricingTable) -> Result<Self> {
        if !(budget_usd > 0.0 && budget_usd.is_finite()) {
            return Err(Error::InvalidInput(format!("budget must be positive, got {budget_usd}")));
        }
        Ok(CostLedger { budget_usd, spent_usd: 0.0, entries: Vec::new(), pricing })
    }

    pub fn pricing(&self) -> &PricingTable {
        &self.pricing
    }

    pub fn remaining_budget(&self) -> f64 {
        (self.budget_usd - self.spent_usd).max(0.0)
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining_budget() <= 0.0
    }

    /// Worst-case cost of `request`: estimated prompt tokens plus the full
    /// `max_tokens` of output.
    pub fn projected_cost(&self, backend: &str, request: &ModelRequest) -> Result<f64> {
        let pricing = self.pricing.get(backend)?;
        Ok(pricing.cost(estimate_prompt_tokens(request), u64::from(request.max_tokens)))
    }

    /// Appends an entry, capping its cost at the remaining budget.
    pub fn record(&mut self, mut entry: LedgerEntry) -> &LedgerEntry {
        let remaining = self.remaining_budget();
        if entry.usd > remaining {
            entry.usd = remaining;
            entry.clamped = true;
        }
        self.spent_usd += entry.usd;
        self.entries.push(entry);
        self.entries.last().expect("just pushed")
    }

    pub fn spent_by_tag(&self, tag: &str) -> f64 {
        self.entries.iter().filter(|e| e.tag == tag).fold(0.0, |acc, e| acc + e.usd)
    }

    pub fn calls_by_tag(&self, tag: &str) -> usize {
        self.entries.iter().filter(|e| e.tag == tag).count()
    }
}

/// Sends `request` through `backend`, retrying transport failures with
/// exponential backoff, and charges the successful call to `ledger` under
/// `tag`.
pub fn complete(
    backend: &dyn ModelBackend,
    request: &ModelRequest,
    ledger: &mut CostLedger,
    tag: &str,
) -> Result<ModelResponse> {
    request.validate()?;
    let projected = ledger.projected_cost(backend.name(), request)?;
    let remaining = ledger.remaining_budget();
    if remaining <= 0.0 || projected > remaining {
        return Err(Error::BudgetExhausted { remaining, projected });
    }

    let mut attempt = 0;
    let response = loop {
        match backend.call(request) {
            Ok(response) => break response,
            Err(CallError::Protocol(msg)) => return Err(Error::Protocol(msg)),
            Err(CallError::Transport(msg)) => {
                if attempt == MAX_RETRIES {
                    return Err(Error::Transport { attempts: attempt + 1, message: msg });
                }
                attempt += 1;
                backend.before_retry(attempt, BACKOFF_BASE_MS << (attempt - 1));
            }
        }
    };

    let pricing = ledger.pricing.get(backend.name())?;
    let usd = pricing.cost(response.prompt_tokens, response.completion_tokens);
    ledger.record(LedgerEntry {
        tag: tag.into(),
        backend: backend.name().into(),
        prompt_tokens: response.prompt_tokens,
        completion_tokens: response.completion_tokens,
        usd,
        clamped: false,
    });
    Ok(response)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::cell::Cell;

    struct Flaky {
        failures: Cell<u32>,
        calls: Cell<u32>,
        waits: Cell<u64>,
    }

    impl ModelBackend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn call(&self, _r: &ModelRequest) -> core::result::Result<ModelResponse, CallError> {
            self.calls.set(self.calls.get() + 1);
            if self.failures.get() > 0 {
                self.failures.set(self.failures.get() - 1);
                return Err(CallError::Transport("reset".into()));
            }
            Ok(ModelResponse { text: "OK".into(), prompt_tokens: 10_000, completion_tokens: 0 })
        }
        fn before_retry(&self, _attempt: u32, delay_ms: u64) {
            self.waits.set(self.waits.get() + delay_ms);
        }
    }

    fn pricing() -> PricingTable {
        PricingTable::default().with("flaky", Pricing { usd_per_1m_input_tokens: 1.0, usd_per_1m_output_tokens: 0.0 })
    }

    fn req() -> ModelRequest {
        ModelRequest::new("sys", vec![Part::Text("hi".into())])
    }

    #[test]
    fn retried_call_is_charged_once() {
        let backend = Flaky { failures: Cell::new(2), calls: Cell::new(0), waits: Cell::new(0) };
        let mut ledger = CostLedger::new(30.0, pricing()).unwrap();
        let resp = complete(&backend, &req(), &mut ledger, tags::JUDGE).unwrap();
        assert_eq!(resp.text, "OK");
        assert_eq!(backend.calls.get(), 3);
        assert_eq!(backend.waits.get(), 500 + 1000);
        assert_eq!(ledger.entries.len(), 1);
        assert!((ledger.spent_usd - 0.01).abs() < 1e-15);
    }

    #[test]
    fn transport_gives_up_after_retries() {
        let backend = Flaky { failures: Cell::new(10), calls: Cell::new(0), waits: Cell::new(0) };
        let mut ledger = CostLedger::new(30.0, pricing()).unwrap();
        let err = complete(&backend, &req(), &mut ledger, tags::JUDGE).unwrap_err();
        assert_eq!(err, Error::Transport { attempts: 4, message: "reset".into() });
        assert!(ledger.entries.is_empty());
    }

    #[test]
    fn budget_precondition() {
        let backend = Flaky { failures: Cell::new(0), calls: Cell::new(0), waits: Cell::new(0) };
        // "sys hi" projects 2 tokens of input; make each token cost 0.005.
        let table = PricingTable::default()
            .with("flaky", Pricing { usd_per_1m_input_tokens: 5_000.0, usd_per_1m_output_tokens: 0.0 });
        let mut ledger = CostLedger::new(1.0, table).unwrap();
        ledger.record(LedgerEntry {
            tag: "x".into(),
            backend: "flaky".into(),
            prompt_tokens: 0,
            completion_tokens: 0,
            usd: 0.995,
            clamped: false,
        });
        let err = complete(&backend, &req(), &mut ledger, tags::JUDGE).unwrap_err();
        assert!(err.is_budget_exhausted());
        assert_eq!(backend.calls.get(), 0);
    }

    #[test]
    fn remaining_budget_arithmetic() {
        let mut ledger = CostLedger::new(30.0, PricingTable::default()).unwrap();
        assert_eq!(ledger.remaining_budget(), 30.0);
        let entry = |usd| LedgerEntry {
            tag: "t".into(),
            backend: "b".into(),
            prompt_tokens: 0,
            completion_tokens: 0,
            usd,
            clamped: false,
        };
        ledger.record(entry(1.25));
        assert_eq!(ledger.remaining_budget(), 28.75);
        ledger.record(entry(28.75));
        assert_eq!(ledger.remaining_budget(), 0.0);
        let capped = ledger.record(entry(1.0)).clone();
        assert!(capped.clamped);
        assert_eq!(capped.usd, 0.0);
        assert_eq!(ledger.spent_usd, 30.0);
    }

    #[test]
    fn unpriced_backend_is_an_error() {
        let backend = Flaky { failures: Cell::new(0), calls: Cell::new(0), waits: Cell::new(0) };
        let mut ledger = CostLedger::new(30.0, PricingTable::default()).unwrap();
        let err = complete(&backend, &req(), &mut ledger, tags::JUDGE).unwrap_err();
        assert_eq!(err, Error::UnpricedBackend("flaky".into()));
    }

    #[test]
    fn fingerprint_changes_with_seed() {
        let a = req();
        let b = req().with_seed(Some(1));
        assert_eq!(a.fingerprint(), req().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}

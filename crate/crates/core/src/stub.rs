//! Deterministic offline backends: a scripted responder and a lexical match
//! agent. Both charge token counts from the whitespace counter so runs are
//! reproducible without a provider.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::backend::{estimate_prompt_tokens, estimate_tokens, CallError, ModelBackend, ModelRequest, ModelResponse};
use crate::matching::{parse_match_request, render_pairs};

/// A pattern rule; every present condition must hold.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StubRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_lacks: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_contains: Option<String>,
    pub response: String,
}

impl StubRule {
    fn matches(&self, request: &ModelRequest, user_text: &str) -> bool {
        let has = |hay: &str, needle: &Option<String>| needle.as_deref().is_none_or(|n| hay.contains(n));
        has(&request.system_prompt, &self.system_contains)
            && self.system_lacks.as_deref().is_none_or(|n| !request.system_prompt.contains(n))
            && has(user_text, &self.user_contains)
    }
}

/// Canned responses. Resolution order: exact request fingerprint, first
/// matching rule, next queue entry, `default`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StubScript {
    pub name: String,
    #[serde(default)]
    pub by_fingerprint: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: Vec<StubRule>,
    #[serde(default)]
    pub queue: Vec<String>,
    #[serde(default)]
    pub default: Option<String>,
}

#[derive(Debug)]
pub struct ScriptedBackend {
    script: StubScript,
    cursor: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(script: StubScript) -> Self {
        ScriptedBackend { script, cursor: AtomicUsize::new(0) }
    }

    pub fn queue(name: impl Into<String>, responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        ScriptedBackend::new(StubScript {
            name: name.into(),
            queue: responses.into_iter().map(Into::into).collect(),
            ..Default::default()
        })
    }

    pub fn script(&self) -> &StubScript {
        &self.script
    }

    /// Number of queue entries consumed so far.
    pub fn consumed(&self) -> usize {
        self.cursor.load(Ordering::SeqCst).min(self.script.queue.len())
    }

    fn resolve(&self, request: &ModelRequest) -> Option<String> {
        if !self.script.by_fingerprint.is_empty() {
            if let Some(text) = self.script.by_fingerprint.get(&request.fingerprint()) {
                return Some(text.clone());
            }
        }
        let user_text = request.user_text();
        if let Some(rule) = self.script.rules.iter().find(|r| r.matches(request, &user_text)) {
            return Some(rule.response.clone());
        }
        if !self.script.queue.is_empty() {
            let index = self.cursor.fetch_add(1, Ordering::SeqCst);
            if let Some(text) = self.script.queue.get(index) {
                return Some(text.clone());
            }
        }
        self.script.default.clone()
    }
}

impl ModelBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.script.name
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, CallError> {
        let text = self.resolve(request).ok_or_else(|| {
            CallError::Protocol(format!(
                "stub `{}` has no response for request {}",
                self.script.name,
                request.fingerprint()
            ))
        })?;
        Ok(ModelResponse {
            prompt_tokens: estimate_prompt_tokens(request),
            completion_tokens: estimate_tokens(&text),
            text,
        })
    }
}

/// Match agent that pairs items whose normalized text (or alias) is equal,
/// one-to-one and greedily in reference order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexicalMatcher {
    pub name: String,
    /// Normalized phrase → canonical key. Phrases mapping to the same key
    /// count as the same weakness.
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
}

impl LexicalMatcher {
    pub fn new(name: impl Into<String>) -> Self {
        LexicalMatcher { name: name.into(), aliases: BTreeMap::new() }
    }

    pub fn alias(mut self, phrase: &str, key: &str) -> Self {
        self.aliases.insert(normalize(phrase), normalize(key));
        self
    }

    pub fn key(&self, item: &str) -> String {
        let norm = normalize(item);
        self.aliases.get(&norm).cloned().unwrap_or(norm)
    }

    pub fn pair(&self, referenced: &[String], predicted: &[String]) -> Vec<(usize, usize)> {
        let pred_keys: Vec<String> = predicted.iter().map(|p| self.key(p)).collect();
        let mut used = alloc::vec![false; predicted.len()];
        let mut pairs = Vec::new();
        for (r, item) in referenced.iter().enumerate() {
            let key = self.key(item);
            if let Some(p) = (0..predicted.len()).find(|&p| !used[p] && pred_keys[p] == key) {
                used[p] = true;
                pairs.push((r, p));
            }
        }
        pairs
    }
}

/// Lower-cases and keeps alphanumeric words separated by single spaces.
pub fn normalize(text: &str) -> String {
    let lowered: String =
        text.chars().map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' }).collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl ModelBackend for LexicalMatcher {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, CallError> {
        let (referenced, predicted) = parse_match_request(&request.user_text())
            .ok_or_else(|| CallError::Protocol("lexical matcher: unrecognized match request".into()))?;
        let text = render_pairs(&self.pair(&referenced, &predicted));
        Ok(ModelResponse {
            prompt_tokens: estimate_prompt_tokens(request),
            completion_tokens: estimate_tokens(&text),
            text,
        })
    }
}

type Responder = dyn Fn(&ModelRequest) -> Result<String, CallError> + Send + Sync;

/// Backend whose reply is computed by a closure; handy for fixtures where the
/// response depends on the request content.
pub struct FnBackend {
    name: String,
    responder: Box<Responder>,
}

impl FnBackend {
    pub fn new(
        name: impl Into<String>,
        responder: impl Fn(&ModelRequest) -> Result<String, CallError> + Send + Sync + 'static,
    ) -> Self {
        FnBackend { name: name.into(), responder: Box::new(responder) }
    }
}

impl core::fmt::Debug for FnBackend {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("FnBackend").field("name", &self.name).finish_non_exhaustive()
    }
}

impl ModelBackend for FnBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, CallError> {
        let text = (self.responder)(request)?;
        Ok(ModelResponse {
            prompt_tokens: estimate_prompt_tokens(request),
            completion_tokens: estimate_tokens(&text),
            text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Part;
    use alloc::vec;

    fn req(system: &str, user: &str) -> ModelRequest {
        ModelRequest::new(system, vec![Part::Text(user.into())])
    }

    #[test]
    fn fingerprint_then_rule_then_queue() {
        let keyed = req("judge", "video-1");
        let mut by_fingerprint = BTreeMap::new();
        by_fingerprint.insert(keyed.fingerprint(), String::from("OK"));
        let stub = ScriptedBackend::new(StubScript {
            name: "s".into(),
            by_fingerprint,
            rules: vec![StubRule {
                user_contains: Some("video-2".into()),
                response: "rule".into(),
                ..Default::default()
            }],
            queue: vec!["q1".into()],
            default: None,
        });
        let r = stub.call(&keyed).unwrap();
        assert_eq!(r.text, "OK");
        assert_eq!(r.prompt_tokens, 2);
        assert_eq!(r.completion_tokens, 1);
        assert_eq!(stub.call(&req("judge", "video-2")).unwrap().text, "rule");
        assert_eq!(stub.call(&req("judge", "video-3")).unwrap().text, "q1");
        assert!(matches!(stub.call(&req("judge", "video-3")), Err(CallError::Protocol(_))));
    }

    #[test]
    fn identical_requests_identical_responses() {
        let stub = ScriptedBackend::new(StubScript {
            name: "s".into(),
            default: Some("- blurry".into()),
            ..Default::default()
        });
        let a = stub.call(&req("p", "u").with_seed(Some(7))).unwrap();
        let b = stub.call(&req("p", "u").with_seed(Some(7))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lexical_pairs_one_to_one() {
        let m = LexicalMatcher::new("lex").alias("extra finger on left hand", "six fingers");
        let refs = vec!["Six fingers!".into(), "six fingers".into()];
        let preds = vec!["extra finger on left hand".into()];
        assert_eq!(m.pair(&refs, &preds), vec![(0, 0)]);
    }
}

use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("budget exhausted: projected ${projected:.6} exceeds remaining ${remaining:.6}")]
    BudgetExhausted { remaining: f64, projected: f64 },
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no pricing configured for backend `{0}`")]
    UnpricedBackend(String),
    #[error("judge output does not follow the weakness-list schema")]
    JudgeParse { raw_text: String },
    #[error("match agent output rejected: {reason}")]
    MatchProtocol { reason: String, raw_text: String },
    #[error("prompt refinement failed: {0}")]
    Refinement(String),
    #[error("instruction rewrite returned an empty completion")]
    Rewrite,
    #[error("metric requested over an empty aggregate")]
    EmptyAggregate,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub fn is_budget_exhausted(&self) -> bool {
        matches!(self, Error::BudgetExhausted { .. })
    }
}

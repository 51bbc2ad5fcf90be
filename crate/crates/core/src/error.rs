use thiserror::Error;

use crate::span::Span;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{span}: {message}")]
    Syntax { span: Span, message: String },

    /// A reference to an attribute or value the model does not declare.
    #[error("{}model mismatch: {message}", located(.span))]
    ModelMismatch { span: Option<Span>, message: String },

    #[error("{}duplicate {what} `{name}`", located(.span))]
    Duplicate {
        span: Option<Span>,
        what: &'static str,
        name: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid prior for `{attribute}`: {message}")]
    InvalidPrior { attribute: String, message: String },

    #[error("{}invalid scenario: {message}", located(.span))]
    InvalidScenario { span: Option<Span>, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    /// An event had zero or several true condition groups in some state.
    #[error("event `{event}`: {message}")]
    ModelIntegrity { event: String, message: String },

    #[error("event `{event}` never reports observation `{label}`")]
    UnknownLabel { event: String, label: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("time ordering violation: {0}")]
    TimeOrder(String),

    #[error("session exhausted: every trial has zero weight")]
    SessionExhausted,

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("session format: {0}")]
    SessionFormat(String),
}

fn located(span: &Option<Span>) -> String {
    span.map(|s| format!("{s}: ")).unwrap_or_default()
}

impl Error {
    pub fn mismatch(message: impl Into<String>) -> Self {
        Error::ModelMismatch {
            span: None,
            message: message.into(),
        }
    }

    pub fn scenario(message: impl Into<String>) -> Self {
        Error::InvalidScenario {
            span: None,
            message: message.into(),
        }
    }

    /// Source location, when the error came from parsing text.
    pub fn span(&self) -> Option<Span> {
        match self {
            Error::Syntax { span, .. } => Some(*span),
            Error::ModelMismatch { span, .. }
            | Error::Duplicate { span, .. }
            | Error::InvalidScenario { span, .. } => *span,
            _ => None,
        }
    }
}

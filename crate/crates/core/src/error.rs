use std::fmt;

use thiserror::Error;

/// A single validation failure tied to a config field path such as
/// `operator.inner.step` or `groups[2].agents`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl FieldError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn join_errors(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("topology error: {0}")]
    Topology(String),

    #[error("invalid configuration: {}", join_errors(.0))]
    Config(Vec<FieldError>),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("combination matrix construction failed: {0}")]
    Construction(String),

    #[error("diverged at iteration {iteration}, agent {agent} (|value| = {magnitude:e})")]
    Divergence {
        iteration: usize,
        agent: usize,
        magnitude: f64,
    },

    #[error("trace too short: {len} samples, window {window}")]
    ShortTrace { len: usize, window: usize },

    #[error("{} Monte Carlo run(s) diverged (seeds {seeds:?}): {first}", .seeds.len())]
    MonteCarlo { seeds: Vec<u64>, first: Box<Error> },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config(vec![FieldError::new(path, message)])
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

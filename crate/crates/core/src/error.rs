use std::fmt;

use crate::problem::Role;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Misuse of a tape, dimension or layout mismatch.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("unsupported primitive `{0}`")]
    UnsupportedPrimitive(String),

    /// A configuration value is missing or invalid. `field` names the key.
    #[error("invalid configuration for `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("non-finite residual at {role} point x={x:?}, t={t}")]
    NonFiniteResidual { role: Role, x: Vec<f64>, t: f64 },

    #[error("non-finite gradient entry at parameter index {index}")]
    NonFiniteGradient { index: usize },

    #[error("{0}")]
    Diverged(Box<crate::trainer::Divergence>),

    #[error("malformed {what}: {reason}")]
    Parse { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(field: impl Into<String>, reason: impl fmt::Display) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.to_string(),
        }
    }

    pub fn structural(reason: impl fmt::Display) -> Self {
        Error::Structural(reason.to_string())
    }

    pub fn parse(what: &'static str, reason: impl fmt::Display) -> Self {
        Error::Parse {
            what,
            reason: reason.to_string(),
        }
    }
}

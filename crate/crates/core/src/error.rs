use std::io;

use thiserror::Error;

use crate::conditioning::CaptionViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("schedule order violated: {0}")]
    ScheduleOrder(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("caption validation failed: {0}")]
    Caption(#[from] CaptionViolation),

    #[error("template error: {0}")]
    Template(String),

    #[error("window geometry error: {message} (nearest admissible K: {suggestions:?})")]
    Geometry {
        message: String,
        suggestions: Vec<usize>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}

macro_rules! ensure {
    ($cond:expr, $kind:ident, $($arg:tt)*) => {
        // negated on purpose: NaN must fail the check
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::Error::$kind(format!($($arg)*)));
        }
    };
}

pub(crate) use bail;
pub(crate) use ensure;

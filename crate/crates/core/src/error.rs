use std::fmt;

/// Crate-wide error type.
///
/// Contract violations carry the module and operation that rejected the input
/// so that a pipeline abort can be attributed without a backtrace.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation in {module}::{op}: {msg}")]
    Contract {
        module: &'static str,
        op: &'static str,
        msg: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("weights error: {0}")]
    Weights(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn contract(module: &'static str, op: &'static str, msg: impl fmt::Display) -> Self {
        Error::Contract {
            module,
            op,
            msg: msg.to_string(),
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    /// Process exit code used by the CLI: 2 for configuration problems,
    /// 3 for contract violations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Weights(_) => 2,
            Error::Contract { .. } => 3,
            _ => 1,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $module:expr, $op:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::contract($module, $op, format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;

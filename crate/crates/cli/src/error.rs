//! Error classes mapped onto stable process exit codes.

use std::fmt;

use cdi_core::cdag::CdagError;
use cdi_core::discovery::DiscoveryError;
use cdi_core::evaluation::EvalError;
use cdi_core::extract::ExtractError;
use cdi_core::inference::InferenceError;
use cdi_core::oracle::OracleError;
use cdi_core::organize::OrganizeError;
use cdi_core::table::TableError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;
pub const EXIT_IDENTIFICATION: i32 = 5;
pub const EXIT_EVALUATION: i32 = 6;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Oracle(String),
    Identification(String),
    Evaluation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Oracle(_) => EXIT_ORACLE,
            CliError::Identification(_) => EXIT_IDENTIFICATION,
            CliError::Evaluation(_) => EXIT_EVALUATION,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Oracle(m) => write!(f, "oracle error: {m}"),
            CliError::Identification(m) => write!(f, "identification error: {m}"),
            CliError::Evaluation(m) => write!(f, "evaluation error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ExtractError> for CliError {
    fn from(e: ExtractError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<OrganizeError> for CliError {
    fn from(e: OrganizeError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Oracle(e.to_string())
    }
}

impl From<DiscoveryError> for CliError {
    fn from(e: DiscoveryError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CdagError> for CliError {
    fn from(e: CdagError) -> Self {
        match e {
            CdagError::Oracle(o) => CliError::Oracle(o.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::NotIdentified => CliError::Identification(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::TopicMismatch { .. } | EvalError::DuplicateTopic(_) => {
                CliError::Evaluation(e.to_string())
            }
            EvalError::Inference(i) => CliError::from(i),
            EvalError::Cdag(c) => CliError::from(c),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(format!("json: {e}"))
    }
}

use std::fmt;

use forge_core::dataset::DatasetError;
use forge_core::filter::FilterError;
use forge_core::harness::HarnessError;
use forge_core::metrics::MetricsError;
use forge_core::model::ModelError;
use forge_core::patcher::PatchError;
use forge_review::ReviewError;
use serde::Serialize;

/// Exit code 1: the inputs were read but are not acceptable.
/// Exit code 2: something could not be read, written or run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Validation,
    Io,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Io,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            Kind::Validation => 1,
            Kind::Io => 2,
        }
    }

    /// The single stderr line: a JSON object with `command`, `kind`, `exit`
    /// and `message`.
    pub fn line(&self, command: &str) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            command: &'a str,
            kind: Kind,
            exit: u8,
            message: &'a str,
        }
        let message = self.message.replace(['\n', '\r'], " ");
        serde_json::to_string(&Line {
            command,
            kind: self.kind,
            exit: self.exit_code(),
            message: &message,
        })
        .expect("plain struct serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) | DatasetError::Csv(_) => Self::io(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::InvalidThresholds(_) | FilterError::InsufficientLabels { .. } => Self::validation(e.to_string()),
            _ => Self::io(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidConfig(_) => Self::validation(e.to_string()),
            _ => Self::io(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Io(_) => Self::io(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::io(e.to_string())
    }
}

impl From<PatchError> for CliError {
    fn from(e: PatchError) -> Self {
        match e {
            PatchError::InvalidParameters(_) => Self::validation(e.to_string()),
            _ => Self::io(e.to_string()),
        }
    }
}

impl From<ReviewError> for CliError {
    fn from(e: ReviewError) -> Self {
        Self::io(e.to_string())
    }
}

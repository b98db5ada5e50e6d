use std::path::{Path, PathBuf};

use mag_core::MagError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{}: no such file", path.display())]
    InputMissing { path: PathBuf },
    #[error("{}{}: {msg}", path.display(), line.map(|l| format!(" line {l}")).unwrap_or_default())]
    InputFormat { path: PathBuf, line: Option<u64>, msg: String },
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] MagError),
}

pub type Result<T> = std::result::Result<T, AppError>;

impl AppError {
    /// Short machine-readable class printed in front of the message.
    pub fn class(&self) -> &'static str {
        match self {
            AppError::InputMissing { .. } => "input-missing",
            AppError::InputFormat { .. } => "input-format",
            AppError::Alignment(_) => "alignment",
            AppError::Config(_) => "config",
            AppError::Io { .. } => "io",
            AppError::Model(MagError::Config(_) | MagError::Shape { .. }) => "config",
            AppError::Model(MagError::Numeric { .. }) => "numeric",
            AppError::Model(MagError::Data(_)) => "data",
        }
    }

    /// 2 for configuration problems, 3 for bad or missing input, 4 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "config" => 2,
            "numeric" => 4,
            _ => 3,
        }
    }

    pub(crate) fn format(path: &Path, line: Option<u64>, msg: impl Into<String>) -> Self {
        AppError::InputFormat {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            AppError::InputMissing { path: path.to_path_buf() }
        } else {
            AppError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

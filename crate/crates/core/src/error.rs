use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MagError {
    /// Operand shapes do not conform.
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },
    /// A configuration value violates a constraint.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A loss, gradient or activation became NaN or infinite.
    #[error("non-finite value in {what}{}{}", fmt_index(" at epoch ", *epoch), fmt_index(" batch ", *batch))]
    Numeric {
        what: &'static str,
        epoch: Option<usize>,
        batch: Option<usize>,
    },
    /// Input data is unusable (empty dataset, bad lengths).
    #[error("invalid data: {0}")]
    Data(String),
}

fn fmt_index(prefix: &str, idx: Option<usize>) -> String {
    match idx {
        Some(i) => alloc::format!("{prefix}{i}"),
        None => String::new(),
    }
}

impl MagError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        MagError::Shape {
            op,
            left: alloc::format!("{}x{}", left.0, left.1),
            right: alloc::format!("{}x{}", right.0, right.1),
        }
    }

    pub(crate) fn numeric(what: &'static str) -> Self {
        MagError::Numeric {
            what,
            epoch: None,
            batch: None,
        }
    }

    /// Attach training-loop coordinates to a numeric error; other variants pass through.
    pub fn at(self, epoch: Option<usize>, batch: Option<usize>) -> Self {
        match self {
            MagError::Numeric { what, .. } => MagError::Numeric { what, epoch, batch },
            other => other,
        }
    }
}

pub type Result<T> = core::result::Result<T, MagError>;

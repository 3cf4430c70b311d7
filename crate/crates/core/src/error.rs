use thiserror::Error;

/// Errors raised anywhere in the unmixing pipeline.
#[derive(Debug, Error)]
pub enum UnmixError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("degenerate Dirichlet sample: {0}")]
    DegenerateSample(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("endmember extraction error: {0}")]
    Extraction(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("format error in field `{field}`: {message}")]
    Format { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl UnmixError {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        UnmixError::Dimension {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        UnmixError::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by numerical breakdown rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            UnmixError::Numeric(_) | UnmixError::Training(_) | UnmixError::DegenerateSample(_)
        )
    }
}

pub type Result<T, E = UnmixError> = std::result::Result<T, E>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GlimError>;

#[derive(Debug, Error)]
pub enum GlimError {
    /// Invalid configuration value or combination of values.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed container, archive or manifest. `offset` is a byte offset
    /// into the offending file.
    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("trial duration {time_points} exceeds the {limit}-point window at the target rate")]
    DurationOverflow { time_points: usize, limit: usize },

    #[error("input contains NaN at time {time}, channel {channel} (all-NaN channels must be dropped before preprocessing)")]
    NanInput { time: usize, channel: usize },

    /// Input that is well formed but carries nothing to compute on.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Non-finite loss or undefined numerical quantity.
    #[error("numerical error: {msg} (batch ids: {batch_ids:?})")]
    Numerical { msg: String, batch_ids: Vec<usize> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("paraphraser request failed: {0}")]
    Http(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl GlimError {
    /// Process exit status: 1 for usage and configuration problems, 2 for
    /// unreadable or malformed data, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            GlimError::Config(_) | GlimError::Unsupported(_) => 1,
            GlimError::Format { .. }
            | GlimError::DurationOverflow { .. }
            | GlimError::NanInput { .. }
            | GlimError::Degenerate(_)
            | GlimError::Http(_)
            | GlimError::Io(_) => 2,
            GlimError::Numerical { .. } | GlimError::Tensor(_) => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        GlimError::Config(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        GlimError::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        GlimError::Numerical {
            msg: msg.into(),
            batch_ids: Vec::new(),
        }
    }
}

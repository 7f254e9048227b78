use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integration did not converge on [{lo}, {hi}]: estimate {estimate:e}, error {error:e} after {evaluations} evaluations")]
    Integration {
        lo: f64,
        hi: f64,
        estimate: f64,
        error: f64,
        evaluations: usize,
    },

    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    #[error("hot load spectrum is below the cold load spectrum (mean ratio {ratio:.4}); the load labels are probably swapped")]
    SwappedLoads { ratio: f64 },

    #[error("empty campaign: {0}")]
    EmptyCampaign(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("filter window of {window} bins does not fit a band of {bins} bins")]
    FilterWindow { window: usize, bins: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed artifact {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) | Error::Format { .. } | Error::Json(_) => 4,
            _ => 3,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            4 => "io",
            _ => "numeric",
        }
    }
}

pub(crate) fn ensure_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite, got {value}")))
    }
}

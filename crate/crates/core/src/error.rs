use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("step index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coil sensitivities are not normalized (max deviation {0:e})")]
    Unnormalized(f64),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("calibration region too small: {0}")]
    CalibrationTooSmall(String),

    #[error("step size too large: {0}")]
    StepSize(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("reference image is identically zero")]
    UndefinedReference,

    #[error("at reverse step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed container: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable category, used in structured error reports.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "invalid-dimension",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::NonFinite(_) => "non-finite",
            Error::InvalidSchedule(_) => "invalid-schedule",
            Error::IndexOutOfRange { .. } => "index-out-of-range",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Unnormalized(_) => "unnormalized-sensitivities",
            Error::InvalidMask(_) => "invalid-mask",
            Error::CalibrationTooSmall(_) => "calibration-too-small",
            Error::StepSize(_) => "step-size",
            Error::NumericalFailure(_) => "numerical-failure",
            Error::UndefinedReference => "undefined-reference",
            Error::AtStep { source, .. } => source.category(),
            Error::Format(_) => "malformed-container",
            Error::Config(_) => "config-validation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::AtStep { step, source: Box::new(self) }
    }
}

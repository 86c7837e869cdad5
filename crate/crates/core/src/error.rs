use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no path along route: {0}")]
    NoPath(String),
    #[error("variation index {0} out of range (0..20)")]
    BadIndex(usize),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("waypoint {index} out of view at ({u:.2}, {v:.2})")]
    WaypointOutOfView { index: usize, u: f64, v: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pixel ({0}, {1}) out of range")]
    OutOfRange(i64, i64),
    #[error("constrained sampling mask has empty support at step {0}")]
    EmptyMaskSupport(usize),
    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),
    #[error("training diverged at step {step}: total loss {loss}")]
    DivergenceDetected { step: usize, loss: f64 },
    #[error("degenerate trajectory: all predicted points within 0.1 m")]
    DegenerateTrajectory,
    #[error("checkpoint config hash mismatch: file {found}, expected {expected}")]
    ConfigMismatch { found: String, expected: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Validation errors map to exit code 2, everything else to 3.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            e => matches!(e, Error::BadIndex(_) | Error::Invalid(_) | Error::Format(_) | Error::ConfigMismatch { .. }),
        }
    }

    /// Tag an error with the pipeline stage it came from.
    pub fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage { stage, source: Box::new(e) }
    }
}

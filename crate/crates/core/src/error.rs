use thiserror::Error;

/// Errors produced anywhere in the fitting pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RrmeError {
    #[error("invalid knots: {0}")]
    InvalidKnots(String),

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("time {time} at index {index} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain {
        index: usize,
        time: f64,
        lo: f64,
        hi: f64,
    },

    #[error("unsupported spline degree {0} (second derivatives need degree >= 2)")]
    UnsupportedDegree(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation not applicable to the {0} family")]
    NotApplicable(&'static str),

    #[error("degenerate update: {0}")]
    DegenerateUpdate(String),

    #[error("no observations in channel {0}")]
    ChannelEmpty(char),

    #[error("subject {0} has no observations")]
    EmptySubject(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<RrmeError>,
    },

    #[error("penalty selection failed: {0}")]
    SelectionFailed(String),

    #[error("data error: {0}")]
    Data(String),
}

impl RrmeError {
    /// Short machine-readable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            RrmeError::InvalidKnots(_)
            | RrmeError::UnsupportedDegree(_)
            | RrmeError::InvalidArgument(_)
            | RrmeError::NotApplicable(_) => "config",
            RrmeError::OutOfDomain { .. }
            | RrmeError::ChannelEmpty(_)
            | RrmeError::EmptySubject(_)
            | RrmeError::Data(_) => "data",
            RrmeError::DegenerateBasis(_)
            | RrmeError::DegenerateUpdate(_)
            | RrmeError::Numerical(_)
            | RrmeError::SelectionFailed(_) => "numerical",
            RrmeError::Fold { source, .. } => source.category(),
        }
    }
}

pub type Result<T> = std::result::Result<T, RrmeError>;

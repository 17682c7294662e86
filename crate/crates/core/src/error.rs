use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("NotPositiveDefinite: pivot {pivot_index} is not positive (value {pivot:e})")]
    NotPositiveDefinite { pivot_index: usize, pivot: f64 },

    #[error("DimensionMismatch: {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("NotSymmetric: entry ({row}, {col}) differs from its transpose")]
    NotSymmetric { row: usize, col: usize },

    #[error("NonPositiveDepth: depth {value} must be > 0")]
    NonPositiveDepth { value: f64 },

    #[error("EmptySparseSet: at least one sparse depth sample is required")]
    EmptySparseSet,

    #[error("InvalidBasis: {0}")]
    InvalidBasis(String),

    #[error("InvalidSamples: {0}")]
    InvalidSamples(String),

    #[error("KinkProximity: iteration {iteration}, sample {sample} sits within {margin:e} of a non-differentiable point")]
    KinkProximity {
        iteration: usize,
        sample: usize,
        margin: f64,
    },

    #[error("ScaleOutOfRange: scale {scale} requested, pyramid has {levels} levels")]
    ScaleOutOfRange { scale: usize, levels: usize },

    #[error("PixelOutOfRange: pixel id {pixel} outside a {height}x{width} grid")]
    PixelOutOfRange {
        pixel: usize,
        height: usize,
        width: usize,
    },

    #[error("CapViolation: {0}")]
    CapViolation(String),

    #[error("NoEligiblePixels: no pixel has a depth within the cap")]
    NoEligiblePixels,

    #[error("NoValidPixels: no pixel passed the evaluation mask")]
    NoValidPixels,

    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error("Format: {0}")]
    Format(String),

    #[error("Io: {0}")]
    Io(String),

    #[error("HandleConsumed: the backward pass of this fit was already taken")]
    HandleConsumed,
}

impl Error {
    /// True for failures of the numerical fit itself, as opposed to bad
    /// inputs, files or configs. The CLI maps these to exit code 2.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::EmptySparseSet
                | Error::KinkProximity { .. }
        )
    }

    /// Short variant name, used as the status column of result tables.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::NonPositiveDepth { .. } => "NonPositiveDepth",
            Error::EmptySparseSet => "EmptySparseSet",
            Error::InvalidBasis(_) => "InvalidBasis",
            Error::InvalidSamples(_) => "InvalidSamples",
            Error::KinkProximity { .. } => "KinkProximity",
            Error::ScaleOutOfRange { .. } => "ScaleOutOfRange",
            Error::PixelOutOfRange { .. } => "PixelOutOfRange",
            Error::CapViolation(_) => "CapViolation",
            Error::NoEligiblePixels => "NoEligiblePixels",
            Error::NoValidPixels => "NoValidPixels",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Format(_) => "Format",
            Error::Io(_) => "Io",
            Error::HandleConsumed => "HandleConsumed",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

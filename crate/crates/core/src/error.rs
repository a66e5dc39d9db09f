use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("a measure needs at least one atom")]
    EmptyMeasure,

    #[error("atom {index}: weight {weight} is not strictly positive and finite")]
    InvalidWeight { index: usize, weight: f64 },

    #[error("atom {index}: location has a non-finite coordinate")]
    NonFiniteLocation { index: usize },

    #[error("point {point:?} lies outside the unit box required by monomial test functions")]
    OutsideUnitBox { point: Vec<f64> },

    #[error("exponent {exponent} exceeds the overflow guard of {limit}")]
    ExpOverflow { exponent: f64, limit: f64 },

    #[error("test function {0} has no trainable parameters")]
    NotTrainable(String),

    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite gradient component at parameter {index} ({name})")]
    NonFiniteGradient { index: usize, name: String },

    #[error("risk diverged at iteration {iteration} (risk = {risk})")]
    Diverged {
        iteration: usize,
        risk: f64,
        trace: Vec<f64>,
    },

    #[error("filter weights underflowed at step {step}")]
    WeightUnderflow { step: usize },

    #[error("line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_sample(self, index: usize) -> Error {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_record(self, index: usize) -> Error {
        Error::Record {
            index,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

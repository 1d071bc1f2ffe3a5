use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("batch size {0} is too small for batch statistics (need at least 2)")]
    BatchTooSmall(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("no mismatch available: every candidate shares the query attribute vector")]
    NoMismatch,
    #[error("unknown attribute name `{0}`")]
    UnknownAttribute(String),
    #[error("missing attribute `{0}`")]
    MissingAttribute(String),
    #[error("sigma must be strictly positive (got {0})")]
    NonPositiveSigma(f64),
    #[error("no discriminator registered for resolution {0}")]
    NoDiscriminator(usize),
    #[error("epoch {epoch} outside schedule of {epochs} epochs")]
    EpochOutOfRange { epoch: usize, epochs: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("unregistered feature extractor `{0}`")]
    UnknownExtractor(String),
    #[error("empty dataset")]
    EmptyDataset,
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(alloc::format!($($arg)*))
    };
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use shape_err;

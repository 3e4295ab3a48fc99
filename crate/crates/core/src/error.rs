use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    EmptyClass { class: usize },
    NoSamples { class: usize },
    MissingClass { classes: Vec<usize> },
    MissingShape { class: usize },
    MissingPrototype { class: usize },
    EmptySource,
    EmptyTestSet,
    ZeroCount { class: usize },
    ZeroVector,
    DimensionMismatch { expected: usize, found: usize },
    ArchMismatch,
    NonFiniteEntry { row: usize, col: usize },
    NonFinite,
    NotSymmetric { row: usize, col: usize, delta: f64 },
    NotPositiveSemidefinite { eigenvalue: f64 },
    NoConvergence,
    InvalidLabel { row: usize, label: usize, num_classes: usize },
    InvalidDomain { row: usize, domain: usize, num_domains: usize },
    InvalidSize(usize),
    InvalidSpec(String),
    NonFiniteLoss { epoch: usize, batch: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyClass { class } => write!(f, "class {class} has no samples"),
            Error::NoSamples { class } => write!(f, "no client holds samples of class {class}"),
            Error::MissingClass { classes } => {
                write!(f, "classes absent from every client: {classes:?}")
            }
            Error::MissingShape { class } => write!(f, "no geometric shape for class {class}"),
            Error::MissingPrototype { class } => write!(f, "no prototypes for class {class}"),
            Error::EmptySource => write!(f, "cannot augment from an empty sample list"),
            Error::EmptyTestSet => write!(f, "test set is empty"),
            Error::ZeroCount { class } => write!(f, "class {class} has a zero count"),
            Error::ZeroVector => write!(f, "cosine similarity of a zero vector"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::ArchMismatch => write!(f, "classifier architectures differ"),
            Error::NonFiniteEntry { row, col } => {
                write!(f, "non-finite entry at row {row}, column {col}")
            }
            Error::NonFinite => write!(f, "matrix contains non-finite entries"),
            Error::NotSymmetric { row, col, delta } => {
                write!(f, "matrix not symmetric at ({row}, {col}): |a_ij - a_ji| = {delta:e}")
            }
            Error::NotPositiveSemidefinite { eigenvalue } => {
                write!(f, "matrix has eigenvalue {eigenvalue:e} below the clamp tolerance")
            }
            Error::NoConvergence => write!(f, "eigensolver did not converge"),
            Error::InvalidLabel { row, label, num_classes } => {
                write!(f, "row {row}: label {label} outside [0, {num_classes})")
            }
            Error::InvalidDomain { row, domain, num_domains } => {
                write!(f, "row {row}: domain {domain} outside [0, {num_domains})")
            }
            Error::InvalidSize(size) => write!(f, "invalid subsample size {size}"),
            Error::InvalidSpec(msg) => write!(f, "invalid specification: {msg}"),
            Error::NonFiniteLoss { epoch, batch } => {
                write!(f, "loss diverged at epoch {epoch}, batch {batch}")
            }
        }
    }
}

impl core::error::Error for Error {}

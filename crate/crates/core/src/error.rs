use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tokenizer or config artifact could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Loaded data violates a structural invariant.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("token id {id} is not in the vocabulary (size {vocab_size})")]
    Lookup { id: u32, vocab_size: usize },

    #[error("load error: {0}")]
    Load(String),

    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value in {what} at timestep {timestep} (step {step})")]
    Numeric {
        what: String,
        step: usize,
        timestep: usize,
    },

    #[error("backend error: {0}")]
    Backend(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Pipeline,
    Backend,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. } | Error::Input(_) | Error::Parameter(_) | Error::Io(_) => {
                ErrorClass::Input
            }
            Error::Backend(_) => ErrorClass::Backend,
            Error::Integrity(_)
            | Error::Lookup { .. }
            | Error::Load(_)
            | Error::Shape { .. }
            | Error::Numeric { .. } => ErrorClass::Pipeline,
        }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: &[usize], found: &[usize]) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}

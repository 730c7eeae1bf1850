use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid mixing matrix: {0}")]
    InvalidMixing(String),

    #[error("invalid rank {rank} for layer {layer} of shape {rows}x{cols}")]
    InvalidRank {
        rank: usize,
        layer: usize,
        rows: usize,
        cols: usize,
    },

    #[error("epoch mismatch: expected {expected}, found {found}")]
    EpochMismatch { expected: u32, found: u32 },

    #[error("corrupted message: {0}")]
    CorruptedMessage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, iteration: usize) -> Self {
        match self {
            e @ Error::AtIteration { .. } => e,
            e => Error::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }
}

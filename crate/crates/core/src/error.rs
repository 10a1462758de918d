use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Problems with a serialized weight file or an in-memory weight store.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WeightsError {
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    UnknownVersion(u32),
    #[error("weight checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: [usize; 4],
        got: [usize; 4],
    },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed weight file: {0}")]
    Malformed(String),
}

/// Problems with a coded image container or one of its substreams.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitstreamError {
    #[error("not a coded image (bad magic)")]
    BadMagic,
    #[error("unsupported bitstream version {0}")]
    UnsupportedVersion(u16),
    #[error("bitstream was produced with weights {expected:016x}, loaded weights are {loaded:016x}")]
    WeightMismatch { expected: u64, loaded: u64 },
    #[error("bitstream truncated: {0}")]
    Truncated(String),
    #[error("bitstream integrity check failed")]
    IntegrityCheck,
    #[error("corrupt bitstream: {0}")]
    Corrupt(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Bitstream(#[from] BitstreamError),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

use std::path::PathBuf;

/// Everything that can go wrong between loading an image and writing a stream.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller handed an operation tensors or values that break its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot read image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    /// Image dimensions the codec cannot represent.
    #[error("unsupported image size: {0}")]
    Dimensions(String),

    #[error("malformed bitstream at bit {bit_offset}: {reason}")]
    Malformed { bit_offset: u64, reason: String },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    /// A quantized parameter escaped the sanity bound, which only happens
    /// when the trained weights blew up.
    #[error("quantization overflow: {0}")]
    QuantOverflow(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn malformed(bit_offset: u64, reason: impl Into<String>) -> Self {
        Error::Malformed {
            bit_offset,
            reason: reason.into(),
        }
    }

    /// Process exit code for the CLI: 2 bad input, 3 malformed stream,
    /// 4 training divergence, 5 image size out of range.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Malformed { .. } | Error::Unsupported(_) => 3,
            Error::Diverged { .. } | Error::QuantOverflow(_) => 4,
            Error::Dimensions(_) => 5,
            Error::Contract(_) | Error::Config(_) | Error::Image { .. } | Error::Io(_) => 2,
        }
    }
}

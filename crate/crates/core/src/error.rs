use std::path::PathBuf;

/// Errors produced anywhere in the codec.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("missing view ({0},{1})")]
    MissingView(usize, usize),
    #[error("inconsistent dimensions: view ({u},{v}) is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    InconsistentDimensions {
        u: usize,
        v: usize,
        got_h: u32,
        got_w: u32,
        want_h: u32,
        want_w: u32,
    },
    #[error("unreadable image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated stream")]
    Truncated,
    #[error("CRC failure: stored {stored:08x}, computed {computed:08x}")]
    CrcFailure { stored: u32, computed: u32 },
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("symbol {symbol} outside coder support [{min}, {max}]")]
    SymbolOutOfRange { symbol: i64, min: i64, max: i64 },
    #[error("model not finalized")]
    NotFinalized,
    #[error("training diverged at epoch {epoch}, iteration {iteration}: loss is {loss}")]
    Diverged {
        epoch: usize,
        iteration: usize,
        loss: f64,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

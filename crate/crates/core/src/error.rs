use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid image dimensions {width}x{height} (minimum 8x8)")]
    InvalidDimensions { width: usize, height: usize },

    #[error("pixel buffer holds {actual} values, expected {expected}")]
    PixelCount { expected: usize, actual: usize },

    #[error("unsupported image format {0:?}: only binary PGM (P5) is accepted")]
    UnsupportedFormat(String),

    #[error("unsupported bit depth: maxval {0}, only 255 is accepted")]
    UnsupportedDepth(u32),

    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),

    #[error("truncated PGM payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("payload {0} bpp is outside (0, 1]")]
    InvalidPayload(f64),

    #[error("image {width}x{height} is smaller than the {support}x{support} cost filter support")]
    ImageTooSmall {
        width: usize,
        height: usize,
        support: usize,
    },

    #[error("subsequent embedding seed {0} equals the original stego key")]
    SeedCollision(u64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training data must contain every class; class {0} is missing")]
    MissingClass(usize),

    #[error("non-finite value in input at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("corrupt or incompatible model file: {0}")]
    CorruptModel(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDimensions { .. } => "invalid_dimensions",
            Error::PixelCount { .. } => "pixel_count",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::UnsupportedDepth(_) => "unsupported_depth",
            Error::MalformedHeader(_) => "malformed_header",
            Error::TruncatedPayload { .. } => "truncated_payload",
            Error::InvalidPayload(_) => "invalid_payload",
            Error::ImageTooSmall { .. } => "image_too_small",
            Error::SeedCollision(_) => "seed_collision",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::MissingClass(_) => "missing_class",
            Error::NonFinite { .. } => "non_finite",
            Error::Empty(_) => "empty_input",
            Error::InvalidConfig(_) => "invalid_config",
            Error::CorruptModel(_) => "corrupt_model",
            Error::MissingFile(_) => "missing_file",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

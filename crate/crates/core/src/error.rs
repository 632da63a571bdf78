//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm below 1e-12")]
    ZeroNorm,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("token index {index} out of range for text with {tokens} tokens")]
    SpanOutOfRange { index: usize, tokens: usize },
    #[error("invalid concept span: {0}")]
    InvalidSpan(String),
    #[error("k = {k} out of range for {r} regions")]
    KTooLarge { k: usize, r: usize },
    #[error("class {0} has no concept embeddings")]
    NoConcepts(String),
    #[error("empty store")]
    EmptyStore,
    #[error("unknown id: {0}")]
    UnknownId(String),
    #[error("unknown class: {0}")]
    UnknownClass(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("zero variance in paired differences")]
    ZeroVariance,
    #[error("need at least {needed} items, got {got}")]
    TooFewItems { needed: usize, got: usize },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("empty image set: {0}")]
    EmptySet(String),
    #[error("concept vocabularies do not match across models")]
    VocabMismatch,
    #[error("invalid synthetic spec: {0}")]
    SpecInvalid(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    // binary store format
    #[error("bad magic bytes, not a CCEM file")]
    BadMagic,
    #[error("unsupported CCEM version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated CCEM file: {0}")]
    Truncated(String),
    #[error("trailing bytes after last CCEM record")]
    TrailingBytes,

    // text formats
    #[error("line {line}: malformed record: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("vocab line {line}: expected 3 tab-separated fields")]
    MalformedRow { line: usize },
    #[error("synonym {synonym:?} maps to both {existing} and {incoming}")]
    ConflictingSynonym {
        synonym: String,
        existing: String,
        incoming: String,
    },

    // numeric failures
    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numeric kind (divergence, non-finite values),
    /// as opposed to malformed or inconsistent input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NonFinite(_))
    }
}

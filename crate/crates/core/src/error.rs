use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("evaluation point {0} appears more than once")]
    DuplicatePoint(u64),
    #[error("evaluation points must be nonzero")]
    ZeroPoint,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular")]
    Singular,

    #[error("collusion threshold t = {t} must satisfy 1 <= t < k = {k}")]
    InvalidThreshold { t: usize, k: usize },
    #[error("k = {k} must satisfy 1 <= k <= n = {n}")]
    InvalidK { k: usize, n: usize },
    #[error("field size q = {q} must exceed the server count n = {n}")]
    FieldTooSmall { q: u64, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("file index {index} out of range for {m} files")]
    FileIndexOutOfRange { index: usize, m: usize },
    #[error("encoding matrix has a singular rows-by-leading-columns submatrix")]
    BadEncodingMatrix,
    #[error("responder count {mu} outside [{k}, {n}]")]
    OutOfRange { mu: usize, k: usize, n: usize },
    #[error("{have} responders available, at least {need} required")]
    InsufficientResponders { have: usize, need: usize },
    #[error("column {column} out of range (query has {alpha} sub-queries)")]
    ColumnOutOfRange { column: usize, alpha: usize },
    #[error("missing response from server {server} for column {column}")]
    MissingResponse { server: usize, column: usize },
    #[error("{have} shares supplied, {need} required")]
    NotEnoughShares { have: usize, need: usize },
    #[error("exhaustive search space of {0} assignments exceeds the limit")]
    SearchSpaceTooLarge(u128),

    #[error("handshake mismatch: {0}")]
    HandshakeMismatch(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("remote error {code}: {message}")]
    Remote { code: u64, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

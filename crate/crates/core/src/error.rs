use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("degenerate public key")]
    DegeneratePublicKey,
    #[error("wrong party")]
    WrongParty,
    #[error("authentication failure")]
    AuthenticationFailure,
    #[error("unsupported format")]
    UnsupportedFormat,
    #[error("truncated envelope")]
    TruncatedEnvelope,
    #[error("malformed armor")]
    MalformedArmor,
    #[error("too large ({0} bytes)")]
    TooLarge(usize),
    #[error("plaintext is not valid UTF-8")]
    InvalidPlaintext,
    #[error("invalid key length {0}, expected 32")]
    InvalidKeyLength(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("weak or oversized password")]
    WeakPassword,
    #[error("invalid username")]
    InvalidUsername,
    #[error("username taken")]
    UsernameTaken,
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("no such user")]
    NoSuchUser,
    #[error("unauthorized")]
    Unauthorized,
    #[error("storage failure: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TargetError {
    #[error("target list is empty")]
    Empty,
    #[error("target literal {0:?} is shorter than 4 bytes")]
    LiteralTooShort(String),
    #[error("line {line}: invalid sha256 digest")]
    BadDigest { line: usize },
}

use std::path::{Path, PathBuf};

use arsecure_core::{AuthError, CryptoError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("already initialized")]
    AlreadyInitialized,
    #[error("not initialized: run `arsecure init` first")]
    NotInitialized,
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("server unreachable: {0}")]
    ServerUnreachable(String),
    #[error("contact key changed for {0}: refusing")]
    ContactKeyChanged(String),
    #[error("too large")]
    TooLarge,
    #[error("no such user")]
    NoSuchUser,
    #[error("username taken")]
    UsernameTaken,
    #[error("invalid username")]
    InvalidUsername,
    #[error("weak or oversized password")]
    WeakPassword,
    #[error("server rejected request ({status} {code}): {message}")]
    Server { status: u16, code: String, message: String },
    #[error("identity in use by another process (lock file {})", .0.display())]
    Locked(PathBuf),
    #[error("refusing to bind the device API to non-local address {0}")]
    NonLocalBind(std::net::SocketAddr),
    #[error("corrupt local data: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl DeviceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DeviceError::Io { path: path.to_path_buf(), source }
    }
}

impl From<AuthError> for DeviceError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::WeakPassword => DeviceError::WeakPassword,
            AuthError::InvalidUsername => DeviceError::InvalidUsername,
            AuthError::UsernameTaken => DeviceError::UsernameTaken,
            AuthError::AuthenticationFailed | AuthError::Unauthorized => DeviceError::AuthenticationFailed,
            AuthError::NoSuchUser => DeviceError::NoSuchUser,
            AuthError::Storage(s) => DeviceError::Corrupt(s),
        }
    }
}

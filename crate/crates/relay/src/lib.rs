//! The ARSecure relay: a key directory plus store-and-forward mailboxes,
//! served over HTTP/JSON. The relay only ever handles armored ciphertext.

pub mod service;
pub mod store;

pub use service::{router, ApiError, ErrorCode, RelayConfig, RelayServer, StartError};
pub use store::{Relay, RestoreReport, StoreError, StoredMessage};

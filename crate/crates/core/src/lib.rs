//! ARSecure core: everything that touches plaintext or key material, plus the
//! server-side directory logic and the client-side-scanning adversary used to
//! check that only ciphertext ever leaves the secure device.
//!
//! - [`crypto`]: X25519 identities and authenticated message encryption.
//! - [`envelope`] and [`armor`]: the binary and text wire forms of a message.
//! - [`auth`]: Argon2id password verifiers, the key directory and sessions.
//! - [`css`]: the scanning adversary.

pub mod armor;
pub mod auth;
pub mod crypto;
pub mod css;
pub mod envelope;
pub mod error;
pub mod serde_util;

pub use armor::{armor, dearmor};
pub use auth::{derive_verifier, Clock, Directory, PublicUserRecord, SessionToken, UserRecord, Username};
pub use crypto::{
    decrypt_message, encrypt_message, generate_keypair, key_id, KeyId, KeyPair, PlaintextMessage, PublicKey,
    MAX_PLAINTEXT_LEN,
};
pub use css::{scan, scan_transcript, ScanReport, TargetList, TranscriptEntry, Verdict};
pub use envelope::MessageEnvelope;
pub use error::{AuthError, CryptoError, TargetError};

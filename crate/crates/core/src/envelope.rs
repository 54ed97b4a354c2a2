//! Binary envelope layout.
//!
//! ```text
//! offset  len  field
//!      0    1  version           (0x01)
//!      1    1  suite             (0x01: X25519 + HKDF-SHA-256 + ChaCha20-Poly1305)
//!      2   32  ephemeral_public
//!     34    8  sender_key_id
//!     42    8  recipient_key_id
//!     50  N+16 ciphertext || tag
//! ```
//!
//! The 50-byte header is the AEAD associated data.

use crate::crypto::{KeyId, PublicKey, MAX_PLAINTEXT_LEN};
use crate::error::CryptoError;

pub const VERSION_1: u8 = 0x01;
pub const SUITE_X25519_HKDF_CHACHA: u8 = 0x01;
pub const HEADER_LEN: usize = 50;
pub const TAG_LEN: usize = 16;
pub const MIN_ENVELOPE_LEN: usize = HEADER_LEN + TAG_LEN;
pub const MAX_ENVELOPE_LEN: usize = MAX_PLAINTEXT_LEN + MIN_ENVELOPE_LEN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageEnvelope {
    pub version: u8,
    pub suite: u8,
    pub ephemeral_public: PublicKey,
    pub sender_key_id: KeyId,
    pub recipient_key_id: KeyId,
    pub ciphertext: Vec<u8>,
}

impl MessageEnvelope {
    pub fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = self.version;
        h[1] = self.suite;
        h[2..34].copy_from_slice(self.ephemeral_public.as_bytes());
        h[34..42].copy_from_slice(self.sender_key_id.as_bytes());
        h[42..50].copy_from_slice(self.recipient_key_id.as_bytes());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ciphertext.len());
        out.extend_from_slice(&self.header_bytes());
        out.extend_from_slice(&self.ciphertext);
        out
    }

    /// Parses and validates the layout; does not touch the ciphertext.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < MIN_ENVELOPE_LEN {
            return Err(CryptoError::TruncatedEnvelope);
        }
        if bytes.len() > MAX_ENVELOPE_LEN {
            return Err(CryptoError::TooLarge(bytes.len()));
        }
        let env = MessageEnvelope {
            version: bytes[0],
            suite: bytes[1],
            ephemeral_public: PublicKey::from_bytes(bytes[2..34].try_into().unwrap()),
            sender_key_id: KeyId::from_bytes(bytes[34..42].try_into().unwrap()),
            recipient_key_id: KeyId::from_bytes(bytes[42..50].try_into().unwrap()),
            ciphertext: bytes[HEADER_LEN..].to_vec(),
        };
        env.check_format()?;
        Ok(env)
    }

    pub(crate) fn check_format(&self) -> Result<(), CryptoError> {
        if self.version != VERSION_1 || self.suite != SUITE_X25519_HKDF_CHACHA {
            return Err(CryptoError::UnsupportedFormat);
        }
        if self.ciphertext.len() < TAG_LEN {
            return Err(CryptoError::TruncatedEnvelope);
        }
        Ok(())
    }

    /// Length of the plaintext this envelope carries.
    pub fn plaintext_len(&self) -> usize {
        self.ciphertext.len().saturating_sub(TAG_LEN)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.ciphertext.len()
    }
}

//! Key material and authenticated public-key encryption of messages.
//!
//! A message is sealed with a fresh ephemeral X25519 key. The AEAD key is
//! derived from two Diffie-Hellman outputs: ephemeral-to-recipient (gives
//! per-message freshness) and sender-static-to-recipient (authenticates the
//! sender to the recipient). Because the key is unique per message the
//! ChaCha20-Poly1305 nonce is fixed at zero.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;
use hkdf::Hkdf;
use rand_core::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use x25519_dalek::StaticSecret;
use zeroize::Zeroizing;

use crate::envelope::{MessageEnvelope, HEADER_LEN, SUITE_X25519_HKDF_CHACHA, VERSION_1};
use crate::error::CryptoError;

/// Maximum plaintext size accepted for a single message (64 KiB).
pub const MAX_PLAINTEXT_LEN: usize = 64 * 1024;

const KDF_LABEL: &[u8] = b"arsecure-v1";
const ZERO_NONCE: [u8; 12] = [0u8; 12];

/// A 32-byte X25519 public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub const LEN: usize = 32;

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        PublicKey(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::InvalidKeyLength(bytes.len()))?;
        Ok(PublicKey(arr))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn key_id(&self) -> KeyId {
        key_id(self)
    }

    fn to_dalek(self) -> x25519_dalek::PublicKey {
        x25519_dalek::PublicKey::from(self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.0))
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        crate::serde_util::b64::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        crate::serde_util::b64::deserialize(d).map(PublicKey)
    }
}

/// Compact reference to a public key: the first 8 bytes of its SHA-256.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct KeyId([u8; 8]);

impl KeyId {
    pub const LEN: usize = 8;

    pub fn from_bytes(bytes: [u8; 8]) -> Self {
        KeyId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 8] {
        &self.0
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({})", hex::encode(self.0))
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

pub fn key_id(pk: &PublicKey) -> KeyId {
    let digest = Sha256::digest(pk.as_bytes());
    let mut id = [0u8; 8];
    id.copy_from_slice(&digest[..8]);
    KeyId(id)
}

/// An X25519 identity: the raw 32-byte secret (clamped on use) and its public key.
#[derive(Clone)]
pub struct KeyPair {
    secret: StaticSecret,
    public: PublicKey,
}

impl KeyPair {
    /// Deterministically derives a keypair from 32 seed bytes.
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let secret = StaticSecret::from(seed);
        let public = PublicKey(x25519_dalek::PublicKey::from(&secret).to_bytes());
        KeyPair { secret, public }
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = Zeroizing::new([0u8; 32]);
        rng.fill_bytes(seed.as_mut());
        Self::from_seed(*seed)
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn key_id(&self) -> KeyId {
        key_id(&self.public)
    }

    /// The secret bytes. Only the encrypted identity store should call this.
    pub fn private_key_bytes(&self) -> Zeroizing<[u8; 32]> {
        Zeroizing::new(self.secret.to_bytes())
    }

    /// Raw X25519 with the peer's public key; rejects all-zero (low-order) outputs.
    pub fn diffie_hellman(&self, peer: &PublicKey) -> Result<Zeroizing<[u8; 32]>, CryptoError> {
        let shared = self.secret.diffie_hellman(&peer.to_dalek());
        if !shared.was_contributory() {
            return Err(CryptoError::DegeneratePublicKey);
        }
        Ok(Zeroizing::new(shared.to_bytes()))
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

pub fn generate_keypair(seed: [u8; 32]) -> KeyPair {
    KeyPair::from_seed(seed)
}

/// UTF-8 message text of at most [`MAX_PLAINTEXT_LEN`] bytes.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PlaintextMessage(String);

impl PlaintextMessage {
    pub fn new(text: impl Into<String>) -> Result<Self, CryptoError> {
        let text = text.into();
        if text.len() > MAX_PLAINTEXT_LEN {
            return Err(CryptoError::TooLarge(text.len()));
        }
        Ok(PlaintextMessage(text))
    }

    pub fn from_utf8(bytes: Vec<u8>) -> Result<Self, CryptoError> {
        let text = String::from_utf8(bytes).map_err(|_| CryptoError::InvalidPlaintext)?;
        Self::new(text)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl TryFrom<String> for PlaintextMessage {
    type Error = CryptoError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        PlaintextMessage::new(s)
    }
}

impl From<PlaintextMessage> for String {
    fn from(m: PlaintextMessage) -> String {
        m.0
    }
}

// Plaintext must not leak through debug logging.
impl fmt::Debug for PlaintextMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PlaintextMessage({} bytes)", self.0.len())
    }
}

fn derive_message_key(ephemeral_dh: &[u8; 32], static_dh: &[u8; 32], header: &[u8; HEADER_LEN]) -> Zeroizing<[u8; 32]> {
    let mut ikm = Zeroizing::new([0u8; 64]);
    ikm[..32].copy_from_slice(ephemeral_dh);
    ikm[32..].copy_from_slice(static_dh);

    // info = label || ephemeral_public || sender_key_id || recipient_key_id
    let mut info = Vec::with_capacity(KDF_LABEL.len() + HEADER_LEN - 2);
    info.extend_from_slice(KDF_LABEL);
    info.extend_from_slice(&header[2..]);

    let hk = Hkdf::<Sha256>::new(None, ikm.as_ref());
    let mut okm = Zeroizing::new([0u8; 32]);
    hk.expand(&info, okm.as_mut()).expect("32 bytes is a valid HKDF-SHA-256 length");
    okm
}

/// Seals raw bytes. The ephemeral key is drawn from `rng`.
pub fn seal<R: RngCore + CryptoRng>(
    plaintext: &[u8],
    sender: &KeyPair,
    recipient_pk: &PublicKey,
    rng: &mut R,
) -> Result<MessageEnvelope, CryptoError> {
    let ephemeral = KeyPair::generate(rng);
    seal_with_ephemeral(plaintext, sender, recipient_pk, &ephemeral)
}

pub(crate) fn seal_with_ephemeral(
    plaintext: &[u8],
    sender: &KeyPair,
    recipient_pk: &PublicKey,
    ephemeral: &KeyPair,
) -> Result<MessageEnvelope, CryptoError> {
    if plaintext.len() > MAX_PLAINTEXT_LEN {
        return Err(CryptoError::TooLarge(plaintext.len()));
    }
    let ephemeral_dh = ephemeral.diffie_hellman(recipient_pk)?;
    let static_dh = sender.diffie_hellman(recipient_pk)?;

    let mut envelope = MessageEnvelope {
        version: VERSION_1,
        suite: SUITE_X25519_HKDF_CHACHA,
        ephemeral_public: ephemeral.public_key(),
        sender_key_id: sender.key_id(),
        recipient_key_id: key_id(recipient_pk),
        ciphertext: Vec::new(),
    };
    let header = envelope.header_bytes();
    let key = derive_message_key(&ephemeral_dh, &static_dh, &header);
    let cipher = ChaCha20Poly1305::new(key.as_ref().into());
    envelope.ciphertext = cipher
        .encrypt(&ZERO_NONCE.into(), Payload { msg: plaintext, aad: &header })
        .map_err(|_| CryptoError::AuthenticationFailure)?;
    Ok(envelope)
}

/// Opens an envelope, returning the raw plaintext bytes.
pub fn open(
    envelope: &MessageEnvelope,
    recipient: &KeyPair,
    sender_pk: &PublicKey,
) -> Result<Zeroizing<Vec<u8>>, CryptoError> {
    envelope.check_format()?;
    if envelope.sender_key_id != key_id(sender_pk) || envelope.recipient_key_id != recipient.key_id() {
        return Err(CryptoError::WrongParty);
    }
    open_unchecked_ids(envelope, recipient, sender_pk)
}

// Skips the key-id routing check; the AEAD still binds the whole header.
pub(crate) fn open_unchecked_ids(
    envelope: &MessageEnvelope,
    recipient: &KeyPair,
    sender_pk: &PublicKey,
) -> Result<Zeroizing<Vec<u8>>, CryptoError> {
    let ephemeral_dh = recipient.diffie_hellman(&envelope.ephemeral_public)?;
    let static_dh = recipient.diffie_hellman(sender_pk)?;
    let header = envelope.header_bytes();
    let key = derive_message_key(&ephemeral_dh, &static_dh, &header);
    let cipher = ChaCha20Poly1305::new(key.as_ref().into());
    cipher
        .decrypt(&ZERO_NONCE.into(), Payload { msg: &envelope.ciphertext, aad: &header })
        .map(Zeroizing::new)
        .map_err(|_| CryptoError::AuthenticationFailure)
}

pub fn encrypt_message<R: RngCore + CryptoRng>(
    plaintext: &PlaintextMessage,
    sender: &KeyPair,
    recipient_pk: &PublicKey,
    rng: &mut R,
) -> Result<MessageEnvelope, CryptoError> {
    seal(plaintext.as_bytes(), sender, recipient_pk, rng)
}

pub fn decrypt_message(
    envelope: &MessageEnvelope,
    recipient: &KeyPair,
    sender_pk: &PublicKey,
) -> Result<PlaintextMessage, CryptoError> {
    let bytes = open(envelope, recipient, sender_pk)?;
    PlaintextMessage::from_utf8(bytes.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    // RFC 7748 section 6.1.
    const ALICE_SK: &str = "77076d0a7318a57d3c16c17251b26645df4c2f87ebc0992ab177fba51db92c2a";
    const ALICE_PK: &str = "8520f0098930a754748b7ddcb43ef75a0dbf3a0d26381af4eba4a98eaa9b4e6a";
    const BOB_SK: &str = "5dab087e624a8a4b79e17f8b83800ee66f3bb1292618b6fd1c2f8b27ff88e0eb";
    const BOB_PK: &str = "de9edb7d7b7dc1b4d35b61c2ece435373f8343c85b78674dadfc7e146f882b4f";
    const SHARED: &str = "4a5d9d5ba4ce2de1728e3bf480350f25e07e21c947d19e3376f09b3c1e161742";

    fn seed(hex_str: &str) -> [u8; 32] {
        hex::decode(hex_str).unwrap().try_into().unwrap()
    }

    #[test]
    fn rfc7748_vectors() {
        let alice = generate_keypair(seed(ALICE_SK));
        let bob = generate_keypair(seed(BOB_SK));
        assert_eq!(hex::encode(alice.public_key().as_bytes()), ALICE_PK);
        assert_eq!(hex::encode(bob.public_key().as_bytes()), BOB_PK);
        let ab = alice.diffie_hellman(&bob.public_key()).unwrap();
        let ba = bob.diffie_hellman(&alice.public_key()).unwrap();
        assert_eq!(hex::encode(*ab), SHARED);
        assert_eq!(*ab, *ba);
    }

    #[test]
    fn keypair_is_deterministic_in_seed() {
        let a = generate_keypair([7u8; 32]);
        let b = generate_keypair([7u8; 32]);
        assert_eq!(a.public_key(), b.public_key());
        assert_eq!(*a.private_key_bytes(), *b.private_key_bytes());
    }

    #[test]
    fn key_id_of_zero_key() {
        // First 8 bytes of SHA-256(0^32), computed with Python hashlib.
        let id = key_id(&PublicKey::from_bytes([0u8; 32]));
        assert_eq!(id.to_string(), "66687aadf862bd77");
    }

    #[test]
    fn key_ids_do_not_collide() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..1000 {
            assert!(seen.insert(KeyPair::generate(&mut rng).key_id()));
        }
    }

    #[test]
    fn empty_plaintext_gives_66_byte_envelope() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let a = KeyPair::generate(&mut rng);
        let b = KeyPair::generate(&mut rng);
        let env = encrypt_message(&PlaintextMessage::new("").unwrap(), &a, &b.public_key(), &mut rng).unwrap();
        assert_eq!(env.to_bytes().len(), 66);
        assert_eq!(decrypt_message(&env, &b, &a.public_key()).unwrap().as_str(), "");
    }

    #[test]
    fn low_order_recipient_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = KeyPair::generate(&mut rng);
        // The identity point (u = 0) and u = 1 both give an all-zero shared secret.
        for bad in [[0u8; 32], {
            let mut one = [0u8; 32];
            one[0] = 1;
            one
        }] {
            let err = encrypt_message(&PlaintextMessage::new("x").unwrap(), &a, &PublicKey::from_bytes(bad), &mut rng)
                .unwrap_err();
            assert_eq!(err, CryptoError::DegeneratePublicKey);
        }
    }

    #[test]
    fn wrong_recipient_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (a, b, c) = (KeyPair::generate(&mut rng), KeyPair::generate(&mut rng), KeyPair::generate(&mut rng));
        let env = encrypt_message(&PlaintextMessage::new("hi").unwrap(), &a, &b.public_key(), &mut rng).unwrap();
        assert_eq!(decrypt_message(&env, &c, &a.public_key()).unwrap_err(), CryptoError::WrongParty);
        assert_eq!(decrypt_message(&env, &b, &c.public_key()).unwrap_err(), CryptoError::WrongParty);
    }

    #[test]
    fn key_id_fields_are_bound_by_the_aead() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (a, b) = (KeyPair::generate(&mut rng), KeyPair::generate(&mut rng));
        let env = encrypt_message(&PlaintextMessage::new("hi").unwrap(), &a, &b.public_key(), &mut rng).unwrap();
        for field in 0..2 {
            let mut forged = env.clone();
            let id = if field == 0 { &mut forged.sender_key_id } else { &mut forged.recipient_key_id };
            id.0[3] ^= 0x10;
            assert_eq!(
                open_unchecked_ids(&forged, &b, &a.public_key()).unwrap_err(),
                CryptoError::AuthenticationFailure
            );
        }
    }

    #[test]
    fn oversize_plaintext_is_rejected() {
        assert!(matches!(PlaintextMessage::new("a".repeat(MAX_PLAINTEXT_LEN + 1)), Err(CryptoError::TooLarge(_))));
        assert!(PlaintextMessage::new("a".repeat(MAX_PLAINTEXT_LEN)).is_ok());
    }

    #[test]
    fn debug_output_hides_secrets() {
        let kp = generate_keypair([9u8; 32]);
        let dbg = format!("{kp:?} {:?}", PlaintextMessage::new("secret words").unwrap());
        assert!(!dbg.contains(&hex::encode(*kp.private_key_bytes())));
        assert!(!dbg.contains("secret words"));
    }
}

//! Key directory and password authentication.
//!
//! The directory binds canonical usernames to public keys and Argon2id
//! password verifiers, and issues bearer tokens on login. It holds its state
//! in memory and hands every new record to a [`RecordSink`] before making it
//! visible, so the caller decides how (and whether) records are persisted.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use argon2::{Algorithm, Argon2, Params, Version};
use rand_core::{OsRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use zeroize::Zeroizing;

use crate::crypto::PublicKey;
use crate::error::AuthError;
use crate::serde_util::b64;

pub const SALT_LEN: usize = 16;
pub const VERIFIER_LEN: usize = 32;
pub const TOKEN_LEN: usize = 32;
pub const MIN_PASSWORD_LEN: usize = 8;
pub const MAX_PASSWORD_LEN: usize = 128;
pub const DEFAULT_TOKEN_TTL_SECS: i64 = 24 * 60 * 60;

const ARGON2_MEMORY_KIB: u32 = 64 * 1024;
const ARGON2_ITERATIONS: u32 = 3;
const ARGON2_LANES: u32 = 1;

/// Argon2id (64 MiB, 3 passes, 1 lane) producing 32 bytes.
pub fn argon2id(password: &[u8], salt: &[u8]) -> Zeroizing<[u8; 32]> {
    let params = Params::new(ARGON2_MEMORY_KIB, ARGON2_ITERATIONS, ARGON2_LANES, Some(32))
        .expect("static Argon2 parameters are valid");
    let mut out = Zeroizing::new([0u8; 32]);
    Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
        .hash_password_into(password, salt, out.as_mut())
        .expect("salt and output lengths are within Argon2 bounds");
    out
}

pub fn derive_verifier(password: &str, salt: &[u8; SALT_LEN]) -> Result<[u8; VERIFIER_LEN], AuthError> {
    if !(MIN_PASSWORD_LEN..=MAX_PASSWORD_LEN).contains(&password.len()) {
        return Err(AuthError::WeakPassword);
    }
    Ok(*argon2id(password.as_bytes(), salt))
}

/// Canonical (lowercase) username matching `[a-z0-9_]{3,32}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Username(String);

impl Username {
    pub fn parse(raw: &str) -> Result<Self, AuthError> {
        let name = raw.to_ascii_lowercase();
        let valid_len = (3..=32).contains(&name.len());
        let valid_chars = name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
        if valid_len && valid_chars {
            Ok(Username(name))
        } else {
            Err(AuthError::InvalidUsername)
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Username {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Username {
    type Error = AuthError;

    fn try_from(s: String) -> Result<Self, AuthError> {
        Username::parse(&s)
    }
}

impl From<Username> for String {
    fn from(u: Username) -> String {
        u.0
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub username: Username,
    pub public_key: PublicKey,
    #[serde(with = "b64")]
    pub salt: [u8; SALT_LEN],
    #[serde(with = "b64")]
    pub verifier: [u8; VERIFIER_LEN],
    pub registered_at: i64,
}

impl UserRecord {
    pub fn public(&self) -> PublicUserRecord {
        PublicUserRecord {
            username: self.username.clone(),
            public_key: self.public_key,
            registered_at: self.registered_at,
        }
    }
}

impl fmt::Debug for UserRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserRecord")
            .field("username", &self.username)
            .field("public_key", &self.public_key)
            .field("registered_at", &self.registered_at)
            .finish_non_exhaustive()
    }
}

/// The fields of a [`UserRecord`] that may leave the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicUserRecord {
    pub username: Username,
    pub public_key: PublicKey,
    pub registered_at: i64,
}

#[derive(Clone, PartialEq, Eq)]
pub struct SessionToken {
    pub token: [u8; TOKEN_LEN],
    pub username: Username,
    pub expires_at: i64,
}

impl fmt::Debug for SessionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionToken")
            .field("username", &self.username)
            .field("expires_at", &self.expires_at)
            .finish_non_exhaustive()
    }
}

/// Wall-clock source in unix seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: i64) -> Self {
        ManualClock(AtomicI64::new(start))
    }

    pub fn advance(&self, secs: i64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Receives each new record before it becomes visible.
pub trait RecordSink: Send + Sync {
    fn append(&self, record: &UserRecord) -> Result<(), AuthError>;
}

#[derive(Debug, Default)]
pub struct MemorySink;

impl RecordSink for MemorySink {
    fn append(&self, _record: &UserRecord) -> Result<(), AuthError> {
        Ok(())
    }
}

struct ActiveSession {
    username: Username,
    expires_at: i64,
}

pub struct Directory {
    users: RwLock<HashMap<Username, UserRecord>>,
    // Keyed by SHA-256(token) so raw tokens are not held at rest.
    sessions: Mutex<HashMap<[u8; 32], ActiveSession>>,
    clock: Arc<dyn Clock>,
    token_ttl: i64,
    sink: Box<dyn RecordSink>,
}

impl Directory {
    pub fn new(clock: Arc<dyn Clock>, token_ttl_secs: i64, sink: Box<dyn RecordSink>) -> Self {
        Directory {
            users: RwLock::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
            clock,
            token_ttl: token_ttl_secs,
            sink,
        }
    }

    pub fn in_memory() -> Self {
        Self::new(Arc::new(SystemClock), DEFAULT_TOKEN_TTL_SECS, Box::new(MemorySink))
    }

    /// Loads previously persisted records without passing them to the sink.
    pub fn restore(&self, records: impl IntoIterator<Item = UserRecord>) -> Result<(), AuthError> {
        let mut users = self.users.write().unwrap();
        for record in records {
            if users.contains_key(&record.username) {
                return Err(AuthError::Storage(format!("duplicate directory entry for {}", record.username)));
            }
            users.insert(record.username.clone(), record);
        }
        Ok(())
    }

    pub fn register(
        &self,
        username: &str,
        public_key: PublicKey,
        salt: [u8; SALT_LEN],
        verifier: [u8; VERIFIER_LEN],
    ) -> Result<UserRecord, AuthError> {
        let username = Username::parse(username)?;
        let mut users = self.users.write().unwrap();
        if users.contains_key(&username) {
            return Err(AuthError::UsernameTaken);
        }
        let record =
            UserRecord { username: username.clone(), public_key, salt, verifier, registered_at: self.clock.now() };
        self.sink.append(&record)?;
        users.insert(username, record.clone());
        Ok(record)
    }

    /// Unknown users and wrong passwords fail identically, after the same KDF work.
    pub fn login(&self, username: &str, password: &str) -> Result<SessionToken, AuthError> {
        let record = Username::parse(username).ok().and_then(|u| self.users.read().unwrap().get(&u).cloned());
        let salt = record.as_ref().map(|r| r.salt).unwrap_or([0u8; SALT_LEN]);
        let candidate = argon2id(password.as_bytes(), &salt);
        let password_ok = (MIN_PASSWORD_LEN..=MAX_PASSWORD_LEN).contains(&password.len());
        let record = match record {
            Some(r) if password_ok && bool::from(candidate.ct_eq(&r.verifier)) => r,
            _ => return Err(AuthError::AuthenticationFailed),
        };

        let mut token = [0u8; TOKEN_LEN];
        OsRng.fill_bytes(&mut token);
        let now = self.clock.now();
        let expires_at = now + self.token_ttl;
        let mut sessions = self.sessions.lock().unwrap();
        sessions.retain(|_, s| s.expires_at > now);
        sessions.insert(token_key(&token), ActiveSession { username: record.username.clone(), expires_at });
        Ok(SessionToken { token, username: record.username, expires_at })
    }

    pub fn lookup_key(&self, username: &str) -> Result<PublicUserRecord, AuthError> {
        self.record(username).map(|r| r.public()).ok_or(AuthError::NoSuchUser)
    }

    /// Full record including verifier material; server-internal use only.
    pub fn record(&self, username: &str) -> Option<UserRecord> {
        let username = Username::parse(username).ok()?;
        self.users.read().unwrap().get(&username).cloned()
    }

    pub fn validate_token(&self, token: &[u8]) -> Result<Username, AuthError> {
        let now = self.clock.now();
        let key = token_key(token);
        let mut sessions = self.sessions.lock().unwrap();
        match sessions.get(&key) {
            Some(s) if s.expires_at > now => Ok(s.username.clone()),
            Some(_) => {
                sessions.remove(&key);
                Err(AuthError::Unauthorized)
            }
            None => Err(AuthError::Unauthorized),
        }
    }

    pub fn revoke(&self, token: &[u8]) {
        self.sessions.lock().unwrap().remove(&token_key(token));
    }

    pub fn user_count(&self) -> usize {
        self.users.read().unwrap().len()
    }

    pub fn token_ttl_secs(&self) -> i64 {
        self.token_ttl
    }
}

fn token_key(token: &[u8]) -> [u8; 32] {
    Sha256::digest(token).into()
}

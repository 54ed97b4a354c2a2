//! On-device files.
//!
//! ```text
//! <home>/identity.enc   sealed LocalIdentity
//! <home>/history.enc    sealed LocalState (conversation, contacts, seen ids)
//! <home>/config         plain key=value (server_url, cursor)
//! <home>/lock           pid of the process holding the identity
//! ```
//!
//! Sealed file layout: `"ARSL" || kind || salt[16] || nonce[12] || ChaCha20-Poly1305(json)`
//! with the 21-byte prefix as associated data. The key is
//! HKDF-SHA-256(Argon2id(password, salt), info = "identity-at-rest"); the
//! salt in `identity.enc` is the one used for every sealed file.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use arsecure_core::auth::{argon2id, SALT_LEN};
use arsecure_core::serde_util::b64;
use arsecure_core::{KeyPair, PublicKey, Username};
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;
use hkdf::Hkdf;
use rand_core::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use zeroize::Zeroizing;

use crate::error::DeviceError;

const MAGIC: &[u8; 4] = b"ARSL";
const KIND_IDENTITY: u8 = 1;
const KIND_HISTORY: u8 = 2;
const PREFIX_LEN: usize = 4 + 1 + SALT_LEN;
const AT_REST_CONTEXT: &[u8] = b"identity-at-rest";

pub const IDENTITY_FILE: &str = "identity.enc";
pub const HISTORY_FILE: &str = "history.enc";
pub const CONFIG_FILE: &str = "config";
pub const LOCK_FILE: &str = "lock";

/// Symmetric key protecting on-device files, with the salt it was derived from.
pub struct AtRestKey {
    key: Zeroizing<[u8; 32]>,
    salt: [u8; SALT_LEN],
}

impl AtRestKey {
    pub fn derive(password: &str, salt: [u8; SALT_LEN]) -> Self {
        let ikm = argon2id(password.as_bytes(), &salt);
        let mut key = Zeroizing::new([0u8; 32]);
        Hkdf::<Sha256>::new(None, ikm.as_ref()).expand(AT_REST_CONTEXT, key.as_mut()).expect("32-byte HKDF output");
        AtRestKey { key, salt }
    }

    fn seal<R: RngCore + CryptoRng>(&self, kind: u8, plaintext: &[u8], rng: &mut R) -> Vec<u8> {
        let mut out = Vec::with_capacity(PREFIX_LEN + 12 + plaintext.len() + 16);
        out.extend_from_slice(MAGIC);
        out.push(kind);
        out.extend_from_slice(&self.salt);
        let mut nonce = [0u8; 12];
        rng.fill_bytes(&mut nonce);
        let ct = ChaCha20Poly1305::new(self.key.as_ref().into())
            .encrypt(&nonce.into(), Payload { msg: plaintext, aad: &out })
            .expect("in-memory AEAD encryption cannot fail");
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&ct);
        out
    }

    fn open(&self, kind: u8, sealed: &[u8]) -> Result<Zeroizing<Vec<u8>>, DeviceError> {
        let (prefix, rest) = split_sealed(sealed, kind)?;
        if prefix[5..] != self.salt {
            return Err(DeviceError::AuthenticationFailed);
        }
        let (nonce, ct) = rest.split_at(12);
        ChaCha20Poly1305::new(self.key.as_ref().into())
            .decrypt(nonce.into(), Payload { msg: ct, aad: prefix })
            .map(Zeroizing::new)
            .map_err(|_| DeviceError::AuthenticationFailed)
    }
}

fn split_sealed(sealed: &[u8], kind: u8) -> Result<(&[u8], &[u8]), DeviceError> {
    if sealed.len() < PREFIX_LEN + 12 + 16 || &sealed[..4] != MAGIC || sealed[4] != kind {
        return Err(DeviceError::Corrupt("not a sealed ARSecure file".into()));
    }
    Ok(sealed.split_at(PREFIX_LEN))
}

/// The salt stored in a sealed identity file, needed before the key can be derived.
pub fn identity_salt(sealed: &[u8]) -> Result<[u8; SALT_LEN], DeviceError> {
    let (prefix, _) = split_sealed(sealed, KIND_IDENTITY)?;
    Ok(prefix[5..].try_into().unwrap())
}

pub struct LocalIdentity {
    pub username: Username,
    pub keypair: KeyPair,
    pub server_url: String,
    pub created_at: i64,
}

#[derive(Serialize, Deserialize)]
struct IdentityFile {
    username: Username,
    #[serde(with = "b64")]
    private_key: [u8; 32],
    server_url: String,
    created_at: i64,
}

impl LocalIdentity {
    fn to_json(&self) -> Zeroizing<Vec<u8>> {
        let file = IdentityFile {
            username: self.username.clone(),
            private_key: *self.keypair.private_key_bytes(),
            server_url: self.server_url.clone(),
            created_at: self.created_at,
        };
        Zeroizing::new(serde_json::to_vec(&file).expect("identity serializes"))
    }

    fn from_json(bytes: &[u8]) -> Result<Self, DeviceError> {
        let file: IdentityFile = serde_json::from_slice(bytes).map_err(|e| DeviceError::Corrupt(e.to_string()))?;
        let keypair = KeyPair::from_seed(file.private_key);
        Ok(LocalIdentity { username: file.username, keypair, server_url: file.server_url, created_at: file.created_at })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EntryBody {
    Ok { text: String },
    Undecryptable { reason: String },
    SenderKeyChanged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationEntry {
    pub direction: Direction,
    pub peer: Username,
    pub body: EntryBody,
    pub message_id: String,
    pub sequence: Option<u64>,
    pub timestamp: i64,
    /// The envelope exactly as it crossed the network.
    pub armored: String,
}

impl ConversationEntry {
    pub fn text(&self) -> Option<&str> {
        match &self.body {
            EntryBody::Ok { text } => Some(text),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contact {
    pub username: Username,
    pub public_key: PublicKey,
    pub pinned_at: i64,
    pub key_id: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct LocalState {
    pub entries: Vec<ConversationEntry>,
    pub contacts: BTreeMap<Username, Contact>,
    pub seen: HashSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    pub server_url: String,
    pub cursor: u64,
}

impl Config {
    fn render(&self) -> String {
        format!("server_url={}\ncursor={}\n", self.server_url, self.cursor)
    }

    fn parse(text: &str) -> Result<Self, DeviceError> {
        let mut config = Config::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) =
                line.split_once('=').ok_or_else(|| DeviceError::Corrupt(format!("config line {line:?}")))?;
            match key.trim() {
                "server_url" => config.server_url = value.trim().to_string(),
                "cursor" => {
                    config.cursor = value.trim().parse().map_err(|_| DeviceError::Corrupt("config cursor".into()))?
                }
                _ => {}
            }
        }
        Ok(config)
    }
}

/// The device's data directory.
#[derive(Debug, Clone)]
pub struct DeviceHome {
    dir: PathBuf,
}

impl DeviceHome {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DeviceHome { dir: dir.into() }
    }

    /// `$ARSECURE_HOME`, else `~/.arsecure`.
    pub fn default_location() -> Self {
        if let Some(dir) = std::env::var_os("ARSECURE_HOME") {
            return DeviceHome::new(dir);
        }
        let home = dirs::home_dir().unwrap_or_else(|| PathBuf::from("."));
        DeviceHome::new(home.join(".arsecure"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn is_initialized(&self) -> bool {
        self.path(IDENTITY_FILE).exists()
    }

    pub fn read_identity(&self, password: &str) -> Result<(LocalIdentity, AtRestKey), DeviceError> {
        let path = self.path(IDENTITY_FILE);
        let sealed = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(DeviceError::NotInitialized),
            Err(e) => return Err(DeviceError::io(&path, e)),
        };
        let key = AtRestKey::derive(password, identity_salt(&sealed)?);
        let json = key.open(KIND_IDENTITY, &sealed)?;
        Ok((LocalIdentity::from_json(&json)?, key))
    }

    pub fn write_identity<R: RngCore + CryptoRng>(
        &self,
        identity: &LocalIdentity,
        key: &AtRestKey,
        rng: &mut R,
    ) -> Result<(), DeviceError> {
        let sealed = key.seal(KIND_IDENTITY, &identity.to_json(), rng);
        self.write_atomic(IDENTITY_FILE, &sealed)
    }

    pub fn read_state(&self, key: &AtRestKey) -> Result<LocalState, DeviceError> {
        let path = self.path(HISTORY_FILE);
        let sealed = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(LocalState::default()),
            Err(e) => return Err(DeviceError::io(&path, e)),
        };
        let json = key.open(KIND_HISTORY, &sealed)?;
        serde_json::from_slice(&json).map_err(|e| DeviceError::Corrupt(e.to_string()))
    }

    pub fn write_state<R: RngCore + CryptoRng>(
        &self,
        state: &LocalState,
        key: &AtRestKey,
        rng: &mut R,
    ) -> Result<(), DeviceError> {
        let json = Zeroizing::new(serde_json::to_vec(state).expect("state serializes"));
        self.write_atomic(HISTORY_FILE, &key.seal(KIND_HISTORY, &json, rng))
    }

    pub fn read_config(&self) -> Result<Config, DeviceError> {
        let path = self.path(CONFIG_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => Config::parse(&text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Config::default()),
            Err(e) => Err(DeviceError::io(&path, e)),
        }
    }

    pub fn write_config(&self, config: &Config) -> Result<(), DeviceError> {
        self.write_atomic(CONFIG_FILE, config.render().as_bytes())
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), DeviceError> {
        let path = self.path(name);
        let tmp = self.path(&format!("{name}.tmp"));
        let mut f = File::create(&tmp).map_err(|e| DeviceError::io(&tmp, e))?;
        f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| DeviceError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| DeviceError::io(&path, e))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }

    /// Removes every file `init` may have created.
    pub(crate) fn wipe(&self) {
        for name in [IDENTITY_FILE, HISTORY_FILE, CONFIG_FILE] {
            let _ = fs::remove_file(self.path(name));
        }
    }
}

/// Exclusive claim on a device home; released on drop.
#[derive(Debug)]
pub struct LockFile {
    path: PathBuf,
}

impl LockFile {
    pub fn acquire(home: &DeviceHome) -> Result<Self, DeviceError> {
        fs::create_dir_all(home.dir()).map_err(|e| DeviceError::io(home.dir(), e))?;
        let path = home.path(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(LockFile { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if holder_is_alive(&path) {
                        return Err(DeviceError::Locked(path));
                    }
                    let _ = fs::remove_file(&path);
                }
                Err(e) => return Err(DeviceError::io(&path, e)),
            }
        }
        Err(DeviceError::Locked(path))
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

// Without /proc we cannot tell, so the lock is assumed live.
fn holder_is_alive(lock: &Path) -> bool {
    let Ok(text) = fs::read_to_string(lock) else {
        return true;
    };
    let Ok(pid) = text.trim().parse::<u32>() else {
        return true;
    };
    let proc_root = Path::new("/proc");
    !proc_root.is_dir() || proc_root.join(pid.to_string()).exists()
}

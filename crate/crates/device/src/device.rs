//! The unlocked secure device.
//!
//! A [`Device`] owns the identity keypair and is the only place plaintext
//! exists. Everything it hands to the relay is an armored envelope.

use std::future::Future;
use std::time::{SystemTime, UNIX_EPOCH};

use arsecure_core::auth::{derive_verifier, SALT_LEN};
use arsecure_core::{armor, dearmor, decrypt_message, encrypt_message, KeyPair, PlaintextMessage, PublicKey, Username};
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Serialize;
use zeroize::Zeroizing;

use crate::client::{is_unauthorized, RelayClient, SendReceipt, WireMessage};
use crate::error::DeviceError;
use crate::local::{
    AtRestKey, Config, Contact, ConversationEntry, DeviceHome, Direction, EntryBody, LocalIdentity, LocalState,
    LockFile,
};

const PULL_BATCH: usize = 100;

fn now() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviceStatus {
    pub username: String,
    pub key_id: String,
    pub server_url: String,
    pub online: bool,
    pub cursor: u64,
    pub contacts: usize,
    pub entries: usize,
}

pub struct Device {
    home: DeviceHome,
    identity: LocalIdentity,
    key: AtRestKey,
    state: LocalState,
    config: Config,
    client: RelayClient,
    password: Zeroizing<String>,
    token: Option<String>,
    rng: ChaCha20Rng,
    online: bool,
    ack_pending: bool,
    _lock: LockFile,
}

impl Device {
    /// Creates a new identity, registers it with the relay, and writes the
    /// encrypted identity file. Nothing is left on disk if registration fails.
    pub async fn init(home: DeviceHome, username: &str, password: &str, server_url: &str) -> Result<Self, DeviceError> {
        Self::init_with_rng(home, username, password, server_url, ChaCha20Rng::from_entropy()).await
    }

    pub async fn init_with_rng(
        home: DeviceHome,
        username: &str,
        password: &str,
        server_url: &str,
        mut rng: ChaCha20Rng,
    ) -> Result<Self, DeviceError> {
        let lock = LockFile::acquire(&home)?;
        if home.is_initialized() {
            return Err(DeviceError::AlreadyInitialized);
        }
        let username = Username::parse(username)?;
        let keypair = KeyPair::generate(&mut rng);
        let mut salt = [0u8; SALT_LEN];
        rng.fill_bytes(&mut salt);
        let verifier = derive_verifier(password, &salt)?;

        let client = RelayClient::new(server_url);
        client.register(username.as_str(), &keypair.public_key(), &salt, &verifier).await?;

        let mut at_rest_salt = [0u8; SALT_LEN];
        rng.fill_bytes(&mut at_rest_salt);
        let key = AtRestKey::derive(password, at_rest_salt);
        let identity =
            LocalIdentity { username, keypair, server_url: client.base_url().to_string(), created_at: now() };
        let config = Config { server_url: identity.server_url.clone(), cursor: 0 };
        let state = LocalState::default();
        let written = home
            .write_state(&state, &key, &mut rng)
            .and_then(|_| home.write_config(&config))
            .and_then(|_| home.write_identity(&identity, &key, &mut rng));
        if let Err(e) = written {
            home.wipe();
            return Err(e);
        }

        let mut device = Device {
            home,
            identity,
            key,
            state,
            config,
            client,
            password: Zeroizing::new(password.to_string()),
            token: None,
            rng,
            online: true,
            ack_pending: false,
            _lock: lock,
        };
        // Registration succeeded, so a failed login here only means we start offline.
        let _ = device.ensure_token().await;
        Ok(device)
    }

    /// Decrypts the local identity and logs in. A relay that cannot be
    /// reached leaves the device unlocked but offline.
    pub async fn unlock(home: DeviceHome, password: &str) -> Result<Self, DeviceError> {
        Self::unlock_with_rng(home, password, ChaCha20Rng::from_entropy()).await
    }

    pub async fn unlock_with_rng(home: DeviceHome, password: &str, rng: ChaCha20Rng) -> Result<Self, DeviceError> {
        let lock = LockFile::acquire(&home)?;
        let (identity, key) = home.read_identity(password)?;
        let state = home.read_state(&key)?;
        let mut config = home.read_config()?;
        if config.server_url.is_empty() {
            config.server_url = identity.server_url.clone();
        }
        let client = RelayClient::new(&config.server_url);
        // A previous run may have stopped between persisting the cursor and acking it.
        let ack_pending = config.cursor > 0;
        let mut device = Device {
            home,
            identity,
            key,
            state,
            config,
            client,
            password: Zeroizing::new(password.to_string()),
            token: None,
            rng,
            online: false,
            ack_pending,
            _lock: lock,
        };
        match device.ensure_token().await {
            Ok(_) | Err(DeviceError::ServerUnreachable(_)) => Ok(device),
            Err(e) => Err(e),
        }
    }

    pub fn username(&self) -> &Username {
        &self.identity.username
    }

    pub fn public_key(&self) -> PublicKey {
        self.identity.keypair.public_key()
    }

    pub fn home(&self) -> &DeviceHome {
        &self.home
    }

    pub fn status(&self) -> DeviceStatus {
        DeviceStatus {
            username: self.identity.username.to_string(),
            key_id: self.identity.keypair.key_id().to_string(),
            server_url: self.config.server_url.clone(),
            online: self.online,
            cursor: self.config.cursor,
            contacts: self.state.contacts.len(),
            entries: self.state.entries.len(),
        }
    }

    async fn ensure_token(&mut self) -> Result<String, DeviceError> {
        if let Some(t) = &self.token {
            return Ok(t.clone());
        }
        let result = self.client.login(self.identity.username.as_str(), &self.password).await;
        self.online = !matches!(result, Err(DeviceError::ServerUnreachable(_)));
        let token = result?;
        self.token = Some(token.clone());
        Ok(token)
    }

    /// Runs an authenticated call, logging in again once if the token was rejected.
    async fn authed<T, F, Fut>(&mut self, call: F) -> Result<T, DeviceError>
    where
        F: Fn(RelayClient, String) -> Fut,
        Fut: Future<Output = Result<T, DeviceError>>,
    {
        let token = self.ensure_token().await?;
        let mut result = call(self.client.clone(), token).await;
        if matches!(&result, Err(e) if is_unauthorized(e)) {
            self.token = None;
            let token = self.ensure_token().await?;
            result = call(self.client.clone(), token).await;
        }
        self.note_reachability(&result);
        result
    }

    fn note_reachability<T>(&mut self, result: &Result<T, DeviceError>) {
        self.online = !matches!(result, Err(DeviceError::ServerUnreachable(_)));
    }

    fn save_state(&mut self) -> Result<(), DeviceError> {
        self.home.write_state(&self.state, &self.key, &mut self.rng)
    }

    fn pin(&mut self, username: Username, public_key: PublicKey) -> Result<Contact, DeviceError> {
        let contact = Contact {
            username: username.clone(),
            public_key,
            pinned_at: now(),
            key_id: public_key.key_id().to_string(),
        };
        self.state.contacts.insert(username, contact.clone());
        self.save_state()?;
        Ok(contact)
    }

    async fn directory_key(&mut self, username: &Username) -> Result<PublicKey, DeviceError> {
        let result = self.client.lookup_key(username.as_str()).await;
        self.note_reachability(&result);
        Ok(result?.public_key)
    }

    /// The pinned key for `username`, pinning the directory's key on first
    /// use. A directory key that differs from the pin is refused.
    pub async fn resolve_contact(&mut self, username: &str) -> Result<Contact, DeviceError> {
        let username = Username::parse(username)?;
        let current = self.directory_key(&username).await?;
        match self.state.contacts.get(&username) {
            Some(c) if c.public_key != current => Err(DeviceError::ContactKeyChanged(username.to_string())),
            Some(c) => Ok(c.clone()),
            None => self.pin(username, current),
        }
    }

    pub async fn add_contact(&mut self, username: &str) -> Result<Contact, DeviceError> {
        self.resolve_contact(username).await
    }

    /// Explicitly accepts the directory's current key for `username`.
    pub async fn repin(&mut self, username: &str) -> Result<Contact, DeviceError> {
        let username = Username::parse(username)?;
        let current = self.directory_key(&username).await?;
        self.pin(username, current)
    }

    pub fn contacts(&self) -> Vec<Contact> {
        self.state.contacts.values().cloned().collect()
    }

    pub async fn send(&mut self, recipient: &str, text: &str) -> Result<SendReceipt, DeviceError> {
        let message = PlaintextMessage::new(text).map_err(|_| DeviceError::TooLarge)?;
        let contact = self.resolve_contact(recipient).await?;
        let envelope = encrypt_message(&message, &self.identity.keypair, &contact.public_key, &mut self.rng)?;
        let armored = armor(&envelope);
        let to = contact.username.clone();
        let receipt = {
            let armored = armored.clone();
            self.authed(move |client, token| {
                let (to, armored) = (to.clone(), armored.clone());
                async move { client.send(&token, to.as_str(), &armored).await }
            })
            .await?
        };
        self.state.entries.push(ConversationEntry {
            direction: Direction::Sent,
            peer: contact.username,
            body: EntryBody::Ok { text: message.into_string() },
            message_id: receipt.message_id.clone(),
            sequence: None,
            timestamp: now(),
            armored,
        });
        self.save_state()?;
        Ok(receipt)
    }

    /// Pulls, decrypts and acknowledges everything newer than the cursor.
    /// Returns the entries added to history by this call.
    pub async fn inbox(&mut self) -> Result<Vec<ConversationEntry>, DeviceError> {
        let mut added = Vec::new();
        loop {
            let after = self.config.cursor;
            let batch =
                self.authed(move |client, token| async move { client.pull(&token, after, PULL_BATCH).await }).await?;
            if batch.is_empty() {
                if self.ack_pending && after > 0 {
                    self.authed(move |client, token| async move { client.ack(&token, after).await }).await?;
                    self.ack_pending = false;
                }
                break;
            }
            let mut highest = after;
            for message in &batch {
                highest = highest.max(message.sequence);
                if self.state.seen.contains(&message.message_id) {
                    continue;
                }
                let Some(entry) = self.open_incoming(message).await? else {
                    continue;
                };
                self.state.seen.insert(message.message_id.clone());
                self.state.entries.push(entry.clone());
                added.push(entry);
            }
            // History and cursor are durable before the relay is told to delete.
            self.config.cursor = highest;
            self.save_state()?;
            self.home.write_config(&self.config)?;
            self.ack_pending = true;
            self.authed(move |client, token| async move { client.ack(&token, highest).await }).await?;
            self.ack_pending = false;
            if batch.len() < PULL_BATCH {
                break;
            }
        }
        Ok(added)
    }

    async fn open_incoming(&mut self, message: &WireMessage) -> Result<Option<ConversationEntry>, DeviceError> {
        let Ok(sender) = Username::parse(&message.sender) else {
            tracing::warn!(message_id = %message.message_id, "relay returned an invalid sender name; skipping");
            return Ok(None);
        };
        let entry = |body: EntryBody| ConversationEntry {
            direction: Direction::Received,
            peer: sender.clone(),
            body,
            message_id: message.message_id.clone(),
            sequence: Some(message.sequence),
            timestamp: message.received_at,
            armored: message.envelope.clone(),
        };
        let undecryptable = |reason: String| EntryBody::Undecryptable { reason };

        let envelope = match dearmor(&message.envelope) {
            Ok(e) => e,
            Err(e) => return Ok(Some(entry(undecryptable(e.to_string())))),
        };
        let pinned = self.state.contacts.get(&sender).map(|c| c.public_key);
        let sender_key = match pinned {
            Some(pk) => pk,
            None => match self.directory_key(&sender).await {
                Ok(pk) => self.pin(sender.clone(), pk)?.public_key,
                Err(DeviceError::NoSuchUser) => {
                    return Ok(Some(entry(undecryptable("sender not in directory".into()))))
                }
                Err(e) => return Err(e),
            },
        };
        if pinned.is_some() && envelope.sender_key_id != sender_key.key_id() {
            // Distinguish a rotated directory key from an outright forgery.
            let rotated = match self.directory_key(&sender).await {
                Ok(current) => current != sender_key && envelope.sender_key_id == current.key_id(),
                Err(DeviceError::NoSuchUser) => false,
                Err(e) => return Err(e),
            };
            let body = if rotated { EntryBody::SenderKeyChanged } else { undecryptable("wrong party".into()) };
            return Ok(Some(entry(body)));
        }
        let body = match decrypt_message(&envelope, &self.identity.keypair, &sender_key) {
            Ok(text) => EntryBody::Ok { text: text.into_string() },
            Err(e) => undecryptable(e.to_string()),
        };
        Ok(Some(entry(body)))
    }

    pub fn history(&self) -> &[ConversationEntry] {
        &self.state.entries
    }

    pub fn conversation(&self, peer: &str) -> Vec<ConversationEntry> {
        let Ok(peer) = Username::parse(peer) else {
            return Vec::new();
        };
        self.state.entries.iter().filter(|e| e.peer == peer).cloned().collect()
    }

    /// What the untrusted phone layer sees of a conversation: armored envelopes only.
    pub fn phone_view(&self, peer: &str) -> Vec<String> {
        self.conversation(peer).into_iter().map(|e| e.armored).collect()
    }
}

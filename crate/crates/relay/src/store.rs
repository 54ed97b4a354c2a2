//! Mailboxes and on-disk state.
//!
//! Layout under the storage root:
//!
//! ```text
//! directory.jsonl        one UserRecord JSON object per line
//! mail/<username>.log    records: u32 big-endian length, then a JSON object
//! ```
//!
//! Mailbox log records are `{"kind":"message",...}`, `{"kind":"ack","up_to":n}`
//! and `{"kind":"cursor","next_sequence":n}`. The last kind appears only as
//! the first record of a compacted log. A torn record at the end of a log
//! (or a torn last line of the directory) is truncated away on restore.

use std::collections::{HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use arsecure_core::auth::{Clock, RecordSink, UserRecord, Username};
use arsecure_core::envelope::MAX_ENVELOPE_LEN;
use arsecure_core::{AuthError, CryptoError, Directory, MessageEnvelope};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand_core::{OsRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_PULL: usize = 100;
const DIRECTORY_FILE: &str = "directory.jsonl";
const MAIL_DIR: &str = "mail";
// Logs of empty mailboxes are rewritten once they grow past this.
const COMPACT_THRESHOLD: u64 = 64 * 1024;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no such user")]
    NoSuchUser,
    #[error("misaddressed envelope")]
    Misaddressed,
    #[error("too large")]
    TooLarge,
    #[error("malformed envelope: {0}")]
    Malformed(CryptoError),
    #[error("storage I/O on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt storage in {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error(transparent)]
    Auth(#[from] AuthError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StoredMessage {
    pub message_id: [u8; 16],
    pub recipient: Username,
    pub sender: Username,
    pub envelope: Vec<u8>,
    pub received_at: i64,
    pub sequence: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogRecord {
    Message {
        message_id: String,
        recipient: Username,
        sender: Username,
        received_at: i64,
        sequence: u64,
        envelope: String,
    },
    Ack {
        up_to: u64,
    },
    Cursor {
        next_sequence: u64,
    },
}

impl From<&StoredMessage> for LogRecord {
    fn from(m: &StoredMessage) -> Self {
        LogRecord::Message {
            message_id: hex::encode(m.message_id),
            recipient: m.recipient.clone(),
            sender: m.sender.clone(),
            received_at: m.received_at,
            sequence: m.sequence,
            envelope: STANDARD.encode(&m.envelope),
        }
    }
}

fn encode_record(record: &LogRecord) -> Vec<u8> {
    let json = serde_json::to_vec(record).expect("log records always serialize");
    let mut out = Vec::with_capacity(4 + json.len());
    out.extend_from_slice(&(json.len() as u32).to_be_bytes());
    out.extend_from_slice(&json);
    out
}

struct Mailbox {
    path: PathBuf,
    file: File,
    messages: VecDeque<StoredMessage>,
    next_sequence: u64,
}

impl Mailbox {
    fn append(&mut self, record: &LogRecord) -> Result<(), StoreError> {
        self.file.write_all(&encode_record(record)).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }

    fn compact_if_idle(&mut self) -> Result<(), StoreError> {
        if !self.messages.is_empty() {
            return Ok(());
        }
        let len = self.file.metadata().map_err(io_err(&self.path))?.len();
        if len < COMPACT_THRESHOLD {
            return Ok(());
        }
        let tmp = self.path.with_extension("log.tmp");
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&encode_record(&LogRecord::Cursor { next_sequence: self.next_sequence }))
                .map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &self.path).map_err(io_err(&self.path))?;
        sync_dir(self.path.parent().unwrap_or(Path::new(".")));
        self.file = OpenOptions::new().append(true).open(&self.path).map_err(io_err(&self.path))?;
        Ok(())
    }
}

fn sync_dir(dir: &Path) {
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

/// Appends directory records to `directory.jsonl`.
struct DirectoryFile {
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordSink for DirectoryFile {
    fn append(&self, record: &UserRecord) -> Result<(), AuthError> {
        let mut line = serde_json::to_vec(record).map_err(|e| AuthError::Storage(e.to_string()))?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(&line)
            .and_then(|_| file.sync_data())
            .map_err(|e| AuthError::Storage(format!("{}: {e}", self.path.display())))
    }
}

/// Problems repaired while loading state from disk.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct RestoreReport {
    pub users: usize,
    pub messages: usize,
    pub warnings: Vec<String>,
}

/// Directory plus mailboxes: the whole server-side state.
pub struct Relay {
    directory: Directory,
    mail_dir: PathBuf,
    mailboxes: Mutex<HashMap<Username, Arc<Mutex<Mailbox>>>>,
    clock: Arc<dyn Clock>,
}

impl Relay {
    /// Opens (creating if needed) the storage root and replays its contents.
    pub fn open(root: &Path, clock: Arc<dyn Clock>, token_ttl_secs: i64) -> Result<(Self, RestoreReport), StoreError> {
        let mut report = RestoreReport::default();
        let mail_dir = root.join(MAIL_DIR);
        fs::create_dir_all(&mail_dir).map_err(io_err(&mail_dir))?;

        let dir_path = root.join(DIRECTORY_FILE);
        let records = load_directory(&dir_path, &mut report)?;
        report.users = records.len();
        let file = OpenOptions::new().create(true).append(true).open(&dir_path).map_err(io_err(&dir_path))?;
        let directory = Directory::new(
            clock.clone(),
            token_ttl_secs,
            Box::new(DirectoryFile { path: dir_path, file: Mutex::new(file) }),
        );
        directory.restore(records)?;

        let mut mailboxes = HashMap::new();
        for entry in fs::read_dir(&mail_dir).map_err(io_err(&mail_dir))? {
            let path = entry.map_err(io_err(&mail_dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("log") {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| Username::parse(s).ok()) else {
                report.warnings.push(format!("ignoring unexpected file {}", path.display()));
                continue;
            };
            let mailbox = load_mailbox(&path, &mut report)?;
            report.messages += mailbox.messages.len();
            mailboxes.insert(name, Arc::new(Mutex::new(mailbox)));
        }
        for w in &report.warnings {
            tracing::warn!("{w}");
        }
        let relay = Relay { directory, mail_dir, mailboxes: Mutex::new(mailboxes), clock };
        Ok((relay, report))
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    fn mailbox(&self, recipient: &Username) -> Result<Arc<Mutex<Mailbox>>, StoreError> {
        let mut boxes = self.mailboxes.lock().unwrap();
        if let Some(mb) = boxes.get(recipient) {
            return Ok(mb.clone());
        }
        let path = self.mail_dir.join(format!("{recipient}.log"));
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        sync_dir(&self.mail_dir);
        let mb = Arc::new(Mutex::new(Mailbox { path, file, messages: VecDeque::new(), next_sequence: 1 }));
        boxes.insert(recipient.clone(), mb.clone());
        Ok(mb)
    }

    fn existing_mailbox(&self, recipient: &Username) -> Option<Arc<Mutex<Mailbox>>> {
        self.mailboxes.lock().unwrap().get(recipient).cloned()
    }

    /// Validates routing, assigns the next sequence number, and makes the
    /// message durable before it becomes visible to `pull`.
    pub fn enqueue(&self, recipient: &str, sender: &Username, envelope: &[u8]) -> Result<StoredMessage, StoreError> {
        let record = self.directory.record(recipient).ok_or(StoreError::NoSuchUser)?;
        if envelope.len() > MAX_ENVELOPE_LEN {
            return Err(StoreError::TooLarge);
        }
        // Only the fixed header is examined.
        let parsed = MessageEnvelope::from_bytes(envelope).map_err(|e| match e {
            CryptoError::TooLarge(_) => StoreError::TooLarge,
            other => StoreError::Malformed(other),
        })?;
        if parsed.recipient_key_id != record.public_key.key_id() {
            return Err(StoreError::Misaddressed);
        }

        let mut message_id = [0u8; 16];
        OsRng.fill_bytes(&mut message_id);
        let mailbox = self.mailbox(&record.username)?;
        let mut mb = mailbox.lock().unwrap();
        let message = StoredMessage {
            message_id,
            recipient: record.username,
            sender: sender.clone(),
            envelope: envelope.to_vec(),
            received_at: self.clock.now(),
            sequence: mb.next_sequence,
        };
        mb.append(&LogRecord::from(&message))?;
        mb.next_sequence += 1;
        mb.messages.push_back(message.clone());
        Ok(message)
    }

    /// Up to `limit` (clamped to 1..=100) messages with sequence > `after`, oldest first.
    pub fn pull(&self, recipient: &Username, after: u64, limit: usize) -> Vec<StoredMessage> {
        let limit = limit.clamp(1, MAX_PULL);
        let Some(mailbox) = self.existing_mailbox(recipient) else {
            return Vec::new();
        };
        let mb = mailbox.lock().unwrap();
        mb.messages.iter().filter(|m| m.sequence > after).take(limit).cloned().collect()
    }

    /// Deletes every message with sequence <= `up_to`; returns how many were removed.
    pub fn acknowledge(&self, recipient: &Username, up_to: u64) -> Result<usize, StoreError> {
        let Some(mailbox) = self.existing_mailbox(recipient) else {
            return Ok(0);
        };
        let mut mb = mailbox.lock().unwrap();
        let count = mb.messages.iter().take_while(|m| m.sequence <= up_to).count();
        if count == 0 {
            return Ok(0);
        }
        mb.append(&LogRecord::Ack { up_to })?;
        mb.messages.drain(..count);
        mb.compact_if_idle()?;
        Ok(count)
    }

    pub fn next_sequence(&self, recipient: &Username) -> u64 {
        self.existing_mailbox(recipient).map(|m| m.lock().unwrap().next_sequence).unwrap_or(1)
    }

    /// Flushes every open log to stable storage.
    pub fn flush(&self) -> Result<(), StoreError> {
        let boxes: Vec<_> = self.mailboxes.lock().unwrap().values().cloned().collect();
        for mb in boxes {
            let mb = mb.lock().unwrap();
            mb.file.sync_all().map_err(io_err(&mb.path))?;
        }
        Ok(())
    }
}

fn load_directory(path: &Path, report: &mut RestoreReport) -> Result<Vec<UserRecord>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut good_len = 0u64;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        let complete = line.ends_with(b"\n");
        match serde_json::from_slice::<UserRecord>(&line) {
            Ok(rec) if complete => {
                records.push(rec);
                good_len += n as u64;
            }
            _ => {
                // Anything after this point is a torn write only if it is the tail.
                let mut rest = Vec::new();
                reader.read_to_end(&mut rest).map_err(io_err(path))?;
                if !rest.is_empty() {
                    return Err(StoreError::Corrupt {
                        path: path.to_path_buf(),
                        reason: format!("bad record at byte {good_len}"),
                    });
                }
                report.warnings.push(format!(
                    "{}: truncated torn trailing record ({} bytes at offset {good_len})",
                    path.display(),
                    n
                ));
                truncate(path, good_len)?;
                break;
            }
        }
    }
    Ok(records)
}

fn load_mailbox(path: &Path, report: &mut RestoreReport) -> Result<Mailbox, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut messages: VecDeque<StoredMessage> = VecDeque::new();
    let mut next_sequence = 1u64;
    let mut offset = 0usize;
    while offset < bytes.len() {
        let torn = |why: &str| format!("{}: truncated torn trailing record at offset {offset} ({why})", path.display());
        let Some(len_bytes) = bytes.get(offset..offset + 4) else {
            report.warnings.push(torn("short length prefix"));
            break;
        };
        let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        let Some(body) = bytes.get(offset + 4..offset + 4 + len) else {
            report.warnings.push(torn("short record body"));
            break;
        };
        let record: LogRecord = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) if offset + 4 + len == bytes.len() => {
                report.warnings.push(torn(&e.to_string()));
                break;
            }
            Err(e) => {
                return Err(StoreError::Corrupt { path: path.to_path_buf(), reason: format!("offset {offset}: {e}") })
            }
        };
        match record {
            LogRecord::Message { message_id, recipient, sender, received_at, sequence, envelope } => {
                let corrupt = |reason: String| StoreError::Corrupt { path: path.to_path_buf(), reason };
                let mut id = [0u8; 16];
                hex::decode_to_slice(&message_id, &mut id).map_err(|e| corrupt(e.to_string()))?;
                let envelope = STANDARD.decode(envelope).map_err(|e| corrupt(e.to_string()))?;
                if sequence < next_sequence {
                    return Err(corrupt(format!("sequence {sequence} out of order")));
                }
                next_sequence = sequence + 1;
                messages.push_back(StoredMessage {
                    message_id: id,
                    recipient,
                    sender,
                    envelope,
                    received_at,
                    sequence,
                });
            }
            LogRecord::Ack { up_to } => messages.retain(|m| m.sequence > up_to),
            LogRecord::Cursor { next_sequence: n } => next_sequence = next_sequence.max(n),
        }
        offset += 4 + len;
    }
    if offset < bytes.len() {
        truncate(path, offset as u64)?;
    }
    let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
    Ok(Mailbox { path: path.to_path_buf(), file, messages, next_sequence })
}

fn truncate(path: &Path, len: u64) -> Result<(), StoreError> {
    let mut f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(len).map_err(io_err(path))?;
    f.seek(SeekFrom::End(0)).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

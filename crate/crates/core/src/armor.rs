//! Printable text form of an envelope.
//!
//! Emission is canonical: header line, standard base64 wrapped at 64
//! columns, footer line, each terminated by LF. Parsing accepts CRLF and
//! any whitespace inside the body.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::envelope::MessageEnvelope;
use crate::error::CryptoError;

pub const BEGIN_LINE: &str = "-----BEGIN ARSECURE MESSAGE-----";
pub const END_LINE: &str = "-----END ARSECURE MESSAGE-----";
const LINE_WIDTH: usize = 64;

pub fn armor(envelope: &MessageEnvelope) -> String {
    armor_bytes(&envelope.to_bytes())
}

fn armor_bytes(bytes: &[u8]) -> String {
    let b64 = STANDARD.encode(bytes);
    let mut out = String::with_capacity(b64.len() + b64.len() / LINE_WIDTH + BEGIN_LINE.len() + END_LINE.len() + 4);
    out.push_str(BEGIN_LINE);
    out.push('\n');
    // base64 output is ASCII so byte chunks are char boundaries.
    for line in b64.as_bytes().chunks(LINE_WIDTH) {
        out.push_str(std::str::from_utf8(line).expect("base64 is ASCII"));
        out.push('\n');
    }
    out.push_str(END_LINE);
    out.push('\n');
    out
}

pub fn dearmor(text: &str) -> Result<MessageEnvelope, CryptoError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some(BEGIN_LINE) {
        return Err(CryptoError::MalformedArmor);
    }
    let rest: Vec<&str> = lines.collect();
    let Some((&last, body)) = rest.split_last() else {
        return Err(CryptoError::MalformedArmor);
    };
    if last != END_LINE {
        return Err(CryptoError::MalformedArmor);
    }
    let compact: String = body.iter().flat_map(|l| l.chars()).filter(|c| !c.is_whitespace()).collect();
    let bytes = STANDARD.decode(compact.as_bytes()).map_err(|_| CryptoError::MalformedArmor)?;
    MessageEnvelope::from_bytes(&bytes)
}

/// Cheap prefix check, ignoring leading whitespace.
pub fn looks_armored(text: &str) -> bool {
    text.trim_start().starts_with(BEGIN_LINE)
}

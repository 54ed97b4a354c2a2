//! The ARSecure secure device.
//!
//! This crate plays the part of the glasses: it holds the identity keypair,
//! encrypts outgoing text, decrypts incoming envelopes, and talks to the
//! relay. Plaintext leaves it only through the loopback device API.

pub mod agent;
pub mod client;
pub mod device;
pub mod error;
pub mod local;

pub use agent::{AgentOptions, AgentServer};
pub use client::{RelayClient, SendReceipt};
pub use device::{Device, DeviceStatus};
pub use error::DeviceError;
pub use local::{Contact, ConversationEntry, DeviceHome, Direction, EntryBody};

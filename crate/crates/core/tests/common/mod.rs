#![allow(dead_code)]

use rand_core::{CryptoRng, Error, RngCore};
use serde::Deserialize;

/// Yields a constant byte forever; lets a test pin the ephemeral seed.
pub struct FixedRng(pub u8);

impl RngCore for FixedRng {
    fn next_u32(&mut self) -> u32 {
        u32::from_le_bytes([self.0; 4])
    }
    fn next_u64(&mut self) -> u64 {
        u64::from_le_bytes([self.0; 8])
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        dest.fill(self.0)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), Error> {
        dest.fill(self.0);
        Ok(())
    }
}

impl CryptoRng for FixedRng {}

#[derive(Debug, Deserialize)]
pub struct EnvelopeVector {
    pub sender_seed: String,
    pub recipient_seed: String,
    pub ephemeral_seed: String,
    pub plaintext: String,
    pub sender_public: String,
    pub recipient_public: String,
    pub envelope_hex: String,
    pub armored: String,
}

#[derive(Debug, Deserialize)]
pub struct VerifierVector {
    pub password: String,
    pub salt: String,
    pub verifier: String,
}

pub fn envelope_vectors() -> Vec<EnvelopeVector> {
    include_str!("../data/envelope_kat.jsonl").lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

pub fn verifier_vectors() -> Vec<VerifierVector> {
    include_str!("../data/verifier_kat.jsonl").lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

pub fn seed32(hex_str: &str) -> [u8; 32] {
    hex::decode(hex_str).unwrap().try_into().unwrap()
}

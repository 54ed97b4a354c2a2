//! A client-side-scanning adversary.
//!
//! Inspects byte streams for watch-listed literals (ASCII case-insensitive)
//! and for whole-input SHA-256 digests, the way a scanner sitting on the
//! phone would inspect message content in the clear.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::TargetError;
use crate::serde_util::hex_opt;

pub const MIN_LITERAL_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetList {
    literals: Vec<String>,
    digests: Vec<[u8; 32]>,
}

impl TargetList {
    pub fn new<S: AsRef<str>>(
        literals: impl IntoIterator<Item = S>,
        digests: Vec<[u8; 32]>,
    ) -> Result<Self, TargetError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for lit in literals {
            let lit = lit.as_ref().to_ascii_lowercase();
            if lit.len() < MIN_LITERAL_LEN {
                return Err(TargetError::LiteralTooShort(lit));
            }
            if seen.insert(lit.clone()) {
                out.push(lit);
            }
        }
        if out.is_empty() && digests.is_empty() {
            return Err(TargetError::Empty);
        }
        Ok(TargetList { literals: out, digests })
    }

    /// One target per line: a literal, or `sha256:<64 hex chars>`. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, TargetError> {
        let mut literals = Vec::new();
        let mut digests = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(hex_digest) = line.trim().strip_prefix("sha256:") {
                let mut d = [0u8; 32];
                hex::decode_to_slice(hex_digest.trim(), &mut d)
                    .map_err(|_| TargetError::BadDigest { line: idx + 1 })?;
                digests.push(d);
            } else {
                literals.push(line.to_string());
            }
        }
        TargetList::new(literals, digests)
    }

    pub fn literals(&self) -> &[String] {
        &self.literals
    }

    pub fn digests(&self) -> &[[u8; 32]] {
        &self.digests
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LiteralHit {
    pub target: String,
    pub byte_offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Clean,
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanReport {
    pub input_label: String,
    pub bytes_scanned: usize,
    pub literal_hits: Vec<LiteralHit>,
    #[serde(with = "hex_opt")]
    pub digest_hit: Option<[u8; 32]>,
    pub verdict: Verdict,
}

impl ScanReport {
    pub fn is_flagged(&self) -> bool {
        self.verdict == Verdict::Flagged
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub label: String,
    pub bytes: Vec<u8>,
}

impl TranscriptEntry {
    pub fn new(label: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        TranscriptEntry { label: label.into(), bytes: bytes.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSummary {
    pub entries: usize,
    pub flagged: usize,
    pub literal_hits: usize,
    pub digest_hits: usize,
    pub bytes_scanned: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptScan {
    pub reports: Vec<ScanReport>,
    pub summary: TranscriptSummary,
}

/// Multi-pattern matcher over ASCII-folded bytes (Aho-Corasick).
struct Automaton {
    // goto[state] maps a folded byte to the next state.
    goto: Vec<HashMap<u8, usize>>,
    fail: Vec<usize>,
    // Pattern indices ending at each state, including those reached via fail links.
    out: Vec<Vec<usize>>,
}

impl Automaton {
    fn build(patterns: &[String]) -> Self {
        let mut goto = vec![HashMap::new()];
        let mut out: Vec<Vec<usize>> = vec![Vec::new()];
        for (idx, pat) in patterns.iter().enumerate() {
            let mut state = 0;
            for b in pat.bytes() {
                state = match goto[state].get(&b) {
                    Some(&next) => next,
                    None => {
                        goto.push(HashMap::new());
                        out.push(Vec::new());
                        let next = goto.len() - 1;
                        goto[state].insert(b, next);
                        next
                    }
                };
            }
            out[state].push(idx);
        }

        let mut fail = vec![0; goto.len()];
        let mut queue: VecDeque<usize> = goto[0].values().copied().collect();
        while let Some(state) = queue.pop_front() {
            let edges: Vec<(u8, usize)> = goto[state].iter().map(|(&b, &s)| (b, s)).collect();
            for (b, child) in edges {
                let mut f = fail[state];
                let target = loop {
                    if let Some(&next) = goto[f].get(&b) {
                        break next;
                    }
                    if f == 0 {
                        break 0;
                    }
                    f = fail[f];
                };
                fail[child] = target;
                let inherited = out[target].clone();
                out[child].extend(inherited);
                queue.push_back(child);
            }
        }
        Automaton { goto, fail, out }
    }

    fn step(&self, mut state: usize, b: u8) -> usize {
        loop {
            if let Some(&next) = self.goto[state].get(&b) {
                return next;
            }
            if state == 0 {
                return 0;
            }
            state = self.fail[state];
        }
    }

    fn find_all(&self, patterns: &[String], input: &[u8]) -> Vec<LiteralHit> {
        let mut hits = Vec::new();
        let mut state = 0;
        for (pos, &raw) in input.iter().enumerate() {
            state = self.step(state, raw.to_ascii_lowercase());
            for &idx in &self.out[state] {
                let pat = &patterns[idx];
                hits.push(LiteralHit { target: pat.clone(), byte_offset: pos + 1 - pat.len() });
            }
        }
        hits.sort();
        hits
    }
}

pub fn scan(label: &str, input: &[u8], targets: &TargetList) -> ScanReport {
    let literal_hits = if targets.literals.is_empty() {
        Vec::new()
    } else {
        Automaton::build(&targets.literals).find_all(&targets.literals, input)
    };
    let digest: [u8; 32] = Sha256::digest(input).into();
    let digest_hit = targets.digests.iter().find(|d| **d == digest).copied();
    let verdict = if literal_hits.is_empty() && digest_hit.is_none() { Verdict::Clean } else { Verdict::Flagged };
    ScanReport { input_label: label.to_string(), bytes_scanned: input.len(), literal_hits, digest_hit, verdict }
}

pub fn scan_transcript(transcript: &[TranscriptEntry], targets: &TargetList) -> TranscriptScan {
    let reports: Vec<ScanReport> = transcript.iter().map(|e| scan(&e.label, &e.bytes, targets)).collect();
    let summary = TranscriptSummary {
        entries: reports.len(),
        flagged: reports.iter().filter(|r| r.is_flagged()).count(),
        literal_hits: reports.iter().map(|r| r.literal_hits.len()).sum(),
        digest_hits: reports.iter().filter(|r| r.digest_hit.is_some()).count(),
        bytes_scanned: reports.iter().map(|r| r.bytes_scanned).sum(),
    };
    TranscriptScan { reports, summary }
}

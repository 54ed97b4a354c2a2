//! Acceptance gate. Each test prints one `criterion N [PASS|FAIL]` line to
//! stderr, outside the harness capture, so the lines show in plain
//! `cargo test` output.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::fmt::Display;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use arsecure_core::auth::{derive_verifier, ManualClock};
use arsecure_core::css::LiteralHit;
use arsecure_core::{
    armor, decrypt_message, encrypt_message, generate_keypair, scan, scan_transcript, KeyPair, MessageEnvelope,
    PlaintextMessage, TargetList, TranscriptEntry,
};
use arsecure_device::{AgentOptions, AgentServer, ConversationEntry, DeviceError, Direction, RelayClient};
use arsecure_relay::{RelayConfig, RelayServer};
use common::*;
use rand_chacha::ChaCha20Rng;
use rand_core::{CryptoRng, RngCore, SeedableRng};
use serde::Deserialize;
use serde_json::{json, Value};
use tempfile::TempDir;

fn report(n: u32, name: &str, ok: bool, detail: impl Display) {
    let line = format!("criterion {n} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(ok, "{line}");
}

fn random_text(rng: &mut ChaCha20Rng, max_bytes: usize) -> String {
    let target = (rng.next_u32() as usize) % (max_bytes + 1);
    let mut s = String::new();
    while s.len() < target {
        let c = match rng.next_u32() % 4 {
            0 => char::from_u32(0x20 + rng.next_u32() % 0x5f),
            1 => char::from_u32(0xa0 + rng.next_u32() % 0x700),
            2 => char::from_u32(0x4e00 + rng.next_u32() % 0x5000),
            _ => char::from_u32(0x1f300 + rng.next_u32() % 0x300),
        }
        .unwrap();
        if s.len() + c.len_utf8() > target {
            break;
        }
        s.push(c);
    }
    s
}

#[test]
fn criterion_1_round_trip() {
    let mut rng = ChaCha20Rng::seed_from_u64(0xa11ce);
    let start = Instant::now();
    let mut failures = 0;
    for _ in 0..500 {
        let (a, b) = (KeyPair::generate(&mut rng), KeyPair::generate(&mut rng));
        let text = random_text(&mut rng, 4096);
        let m = PlaintextMessage::new(text.clone()).unwrap();
        let env = encrypt_message(&m, &a, &b.public_key(), &mut rng).unwrap();
        match decrypt_message(&env, &b, &a.public_key()) {
            Ok(out) if out.as_str() == text => {}
            _ => failures += 1,
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "crypto round trip",
        failures == 0 && elapsed < Duration::from_secs(10),
        format!("500 triples, {failures} failures, {:.2}s (limit 10s)", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_2_tamper() {
    let mut rng = ChaCha20Rng::seed_from_u64(0x7a3e);
    let mut rejected = 0;
    for _ in 0..100 {
        let (a, b) = (KeyPair::generate(&mut rng), KeyPair::generate(&mut rng));
        let text = random_text(&mut rng, 512);
        let env = encrypt_message(&PlaintextMessage::new(text).unwrap(), &a, &b.public_key(), &mut rng).unwrap();
        let mut bytes = env.to_bytes();
        let bit = (rng.next_u64() as usize) % (bytes.len() * 8);
        bytes[bit / 8] ^= 1 << (bit % 8);
        let outcome = MessageEnvelope::from_bytes(&bytes).and_then(|e| decrypt_message(&e, &b, &a.public_key()));
        if outcome.is_err() {
            rejected += 1;
        }
    }
    report(2, "tamper suite", rejected == 100, format!("{rejected}/100 single-bit flips rejected"));
}

struct FixedRng(u8);

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
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand_core::Error> {
        dest.fill(self.0);
        Ok(())
    }
}

impl CryptoRng for FixedRng {}

#[derive(Deserialize)]
struct Vector {
    sender_seed: String,
    recipient_seed: String,
    ephemeral_seed: String,
    plaintext: String,
    envelope_hex: String,
    armored: String,
}

fn seed(h: &str) -> [u8; 32] {
    hex::decode(h).unwrap().try_into().unwrap()
}

#[test]
fn criterion_3_interop_kat() {
    let vectors: Vec<Vector> = include_str!("../../core/tests/data/envelope_kat.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mut matched = 0;
    for v in &vectors {
        let sender = generate_keypair(seed(&v.sender_seed));
        let recipient = generate_keypair(seed(&v.recipient_seed));
        let eph = seed(&v.ephemeral_seed);
        assert!(eph.iter().all(|&b| b == eph[0]), "vectors use a repeated-byte ephemeral seed");
        let m = PlaintextMessage::new(v.plaintext.clone()).unwrap();
        let env = encrypt_message(&m, &sender, &recipient.public_key(), &mut FixedRng(eph[0])).unwrap();
        if hex::encode(env.to_bytes()) == v.envelope_hex && armor(&env) == v.armored {
            matched += 1;
        }
    }
    report(
        3,
        "interop KAT",
        matched == vectors.len() && !vectors.is_empty(),
        format!("{matched}/{} vectors byte-exact (envelope and armor)", vectors.len()),
    );
}

const TARGETS: [&str; 5] = ["detonator", "safehouse", "contraband", "blueprint", "rendezvous"];

fn scenario_messages() -> Vec<String> {
    (0..10)
        .map(|i| {
            let word = TARGETS[i % TARGETS.len()];
            match i / 5 {
                0 => format!("msg {i}: the {word} is ready, confirm by noon"),
                _ => format!("msg {i}: moving the {} tonight", word.to_uppercase()),
            }
        })
        .collect()
}

struct Scenario {
    received: Vec<ConversationEntry>,
    sent_ids: Vec<String>,
    first_inbox_interrupted: bool,
    added_after_rollback: usize,
    later_inbox_empty: bool,
    mailbox_left: usize,
    wire: Vec<TranscriptEntry>,
    storage: Vec<TranscriptEntry>,
    phone: Vec<TranscriptEntry>,
    elapsed: Duration,
}

fn snapshot_files(root: &Path, label: &str, out: &mut Vec<TranscriptEntry>) {
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(root).unwrap().display().to_string();
                out.push(TranscriptEntry::new(format!("{label} {name}"), std::fs::read(&path).unwrap()));
            }
        }
    }
}

/// alice sends ten messages to bob through a recording proxy. The relay is
/// restarted halfway, bob's first acknowledgement is lost in transit, and bob
/// then crashes between writing history and writing his cursor, so the
/// relay redelivers five messages he already holds.
async fn run_scenario() -> Scenario {
    let start = Instant::now();
    let (srv, homes) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (ha, hb) = (homes.path().join("alice"), homes.path().join("bob"));
    let messages = scenario_messages();
    let mut storage = Vec::new();

    let relay = start_relay(srv.path()).await;
    let proxy = RecordingProxy::start(relay.local_addr()).await;
    let mut alice = init_device(&ha, "alice", &proxy.url(), 0xa).await;
    let mut bob = init_device(&hb, "bob", &proxy.url(), 0xb).await;

    let mut sent_ids = Vec::new();
    for m in &messages[..5] {
        sent_ids.push(alice.send("bob", m).await.unwrap().message_id);
    }
    proxy.drop_next_ack();
    let first_inbox_interrupted = matches!(bob.inbox().await, Err(DeviceError::ServerUnreachable(_)));
    snapshot_files(srv.path(), "storage(before restart)", &mut storage);

    relay.shutdown().await.unwrap();
    let relay = start_relay(srv.path()).await;
    proxy.set_upstream(relay.local_addr());

    for m in &messages[5..] {
        sent_ids.push(alice.send("bob", m).await.unwrap().message_id);
    }
    snapshot_files(srv.path(), "storage(all queued)", &mut storage);

    drop(bob);
    let config = hb.join("config");
    let text = std::fs::read_to_string(&config).unwrap();
    let rolled_back: String = text
        .lines()
        .map(|l| if l.starts_with("cursor=") { "cursor=0\n".to_string() } else { format!("{l}\n") })
        .collect();
    std::fs::write(&config, rolled_back).unwrap();
    let mut bob = unlock_device(&hb, 0xb0).await;
    let added_after_rollback = bob.inbox().await.unwrap().len();
    let later_inbox_empty = bob.inbox().await.unwrap().is_empty();
    let received: Vec<ConversationEntry> =
        bob.history().iter().filter(|e| e.direction == Direction::Received).cloned().collect();
    let name = arsecure_core::Username::parse("bob").unwrap();
    let mailbox_left = relay.relay().pull(&name, 0, 100).len();
    relay.relay().flush().unwrap();
    snapshot_files(srv.path(), "storage(final)", &mut storage);

    let mut phone = Vec::new();
    let opts = AgentOptions { bind: "127.0.0.1:0".parse().unwrap(), sync_every: None };
    let http = reqwest::Client::new();
    for (agent, peer) in [
        (AgentServer::start(bob, opts.clone()).await.unwrap(), "alice"),
        (AgentServer::start(alice, opts.clone()).await.unwrap(), "bob"),
    ] {
        let resp = http
            .get(format!("{}/device/v1/phone-view/{peer}", agent.url()))
            .header(arsecure_device::agent::SESSION_HEADER, agent.session_secret())
            .send()
            .await
            .unwrap();
        phone.push(TranscriptEntry::new(format!("phone-view {peer}"), resp.bytes().await.unwrap().to_vec()));
        agent.shutdown().await;
    }

    Scenario {
        received,
        sent_ids,
        first_inbox_interrupted,
        added_after_rollback,
        later_inbox_empty,
        mailbox_left,
        wire: proxy.transcript(),
        storage,
        phone,
        elapsed: start.elapsed(),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn criterion_4_e2e_scenario() {
    let s = run_scenario().await;
    let texts: Vec<&str> = s.received.iter().map(|e| e.text().unwrap_or("<undecryptable>")).collect();
    let ids: Vec<&str> = s.received.iter().map(|e| e.message_id.as_str()).collect();
    let unique: HashSet<&str> = ids.iter().copied().collect();
    let expected = scenario_messages();
    let in_order = texts == expected.iter().map(String::as_str).collect::<Vec<_>>();
    let exactly_once =
        ids.len() == 10 && unique.len() == 10 && ids == s.sent_ids.iter().map(String::as_str).collect::<Vec<_>>();
    let ok = in_order
        && exactly_once
        && s.first_inbox_interrupted
        && s.added_after_rollback == 5
        && s.later_inbox_empty
        && s.mailbox_left == 0
        && s.elapsed < Duration::from_secs(30);
    report(
        4,
        "e2e scenario",
        ok,
        format!(
            "{} received, in order: {in_order}, exactly once: {exactly_once}, lost ack before restart: {}, new after redelivery: {}/5, mailbox left {}, {:.2}s (limit 30s)",
            texts.len(),
            s.first_inbox_interrupted,
            s.added_after_rollback,
            s.mailbox_left,
            s.elapsed.as_secs_f64()
        ),
    );
}

fn baseline_transcript(messages: &[String]) -> Vec<TranscriptEntry> {
    messages
        .iter()
        .enumerate()
        .flat_map(|(i, m)| {
            let send = json!({ "recipient": "bob", "body": m }).to_string();
            let pull = json!({ "messages": [{ "sender": "alice", "sequence": i + 1, "body": m }] }).to_string();
            [
                TranscriptEntry::new(format!("baseline send {i}"), format!("POST /v1/messages HTTP/1.1\r\n\r\n{send}")),
                TranscriptEntry::new(format!("baseline pull {i}"), format!("HTTP/1.1 200 OK\r\n\r\n{pull}")),
            ]
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn criterion_5_css_defeat() {
    let s = run_scenario().await;
    let targets = TargetList::new(TARGETS, vec![]).unwrap();
    let observed: Vec<TranscriptEntry> = s.wire.iter().chain(&s.storage).chain(&s.phone).cloned().collect();
    let wire_bytes: usize = s.wire.iter().map(|e| e.bytes.len()).sum();
    let arsecure = scan_transcript(&observed, &targets);
    let baseline = scan_transcript(&baseline_transcript(&scenario_messages()), &targets);

    let delivered = s.received.iter().filter(|e| e.text().is_some()).count();
    let armored_on_wire = s.wire.iter().any(|e| String::from_utf8_lossy(&e.bytes).contains("BEGIN ARSECURE MESSAGE"));
    let ok = arsecure.summary.literal_hits == 0
        && arsecure.summary.digest_hits == 0
        && baseline.summary.literal_hits >= 10
        && delivered == 10
        && armored_on_wire
        && wire_bytes > 0;
    report(
        5,
        "CSS defeat",
        ok,
        format!(
            "ARSecure: {} entries ({} wire bytes, {} storage files, {} phone views) -> {} hits; plaintext baseline -> {} hits (need >= 10)",
            observed.len(),
            wire_bytes,
            s.storage.len(),
            s.phone.len(),
            arsecure.summary.literal_hits + arsecure.summary.digest_hits,
            baseline.summary.literal_hits
        ),
    );
}

async fn post_raw(http: &reqwest::Client, url: String, body: Value) -> (u16, Vec<u8>) {
    let resp = http.post(url).json(&body).send().await.unwrap();
    (resp.status().as_u16(), resp.bytes().await.unwrap().to_vec())
}

#[tokio::test(flavor = "multi_thread")]
async fn criterion_6_auth_properties() {
    let dir = TempDir::new().unwrap();
    let clock = Arc::new(ManualClock::new(1_700_000_000));
    let mut config = RelayConfig::new("127.0.0.1:0".parse().unwrap(), dir.path());
    config.clock = clock.clone();
    config.token_ttl_secs = 3600;
    let relay = RelayServer::start(config).await.unwrap();
    let client = RelayClient::new(&relay.url());
    let http = reqwest::Client::new();
    let mut rng = ChaCha20Rng::seed_from_u64(0x6);

    let mut keys = Vec::new();
    for (i, name) in ["alice", "bob", "carol"].into_iter().enumerate() {
        let kp = KeyPair::generate(&mut rng);
        let salt = [i as u8 + 1; 16];
        client.register(name, &kp.public_key(), &salt, &derive_verifier(PASSWORD, &salt).unwrap()).await.unwrap();
        keys.push(kp);
    }

    // Login failures.
    let login = format!("{}/v1/login", relay.url());
    let unknown = post_raw(&http, login.clone(), json!({ "username": "mallory", "password": PASSWORD })).await;
    let wrong = post_raw(&http, login.clone(), json!({ "username": "alice", "password": "wrong password!" })).await;
    let identical = unknown == wrong && unknown.0 == 401;

    // Expiry.
    let token = client.login("bob", PASSWORD).await.unwrap();
    let fresh_ok = client.pull(&token, 0, 10).await.is_ok();
    clock.advance(3601);
    let expired = client.pull(&token, 0, 10).await;
    let expired_rejected = matches!(expired, Err(DeviceError::Server { status: 401, .. }));

    // Cross-user isolation.
    let tokens: Vec<String> = {
        let mut t = Vec::new();
        for name in ["alice", "bob", "carol"] {
            t.push(client.login(name, PASSWORD).await.unwrap());
        }
        t
    };
    let mut alice_ids = BTreeSet::new();
    let mut bob_ids = BTreeSet::new();
    for i in 0..12 {
        let (from, to, to_name) = if i % 2 == 0 { (2, 0, "alice") } else { (2, 1, "bob") };
        let env = encrypt_message(
            &PlaintextMessage::new(format!("note {i}")).unwrap(),
            &keys[from],
            &keys[to].public_key(),
            &mut rng,
        )
        .unwrap();
        let receipt = client.send(&tokens[from], to_name, &armor(&env)).await.unwrap();
        if to == 0 {
            alice_ids.insert(receipt.message_id)
        } else {
            bob_ids.insert(receipt.message_id)
        };
    }
    let bob_token = &tokens[1];
    let mut leaks = 0;
    for _ in 0..100 {
        let after = rng.next_u32() % 20;
        let limit = 1 + rng.next_u32() % 100;
        let path = match rng.next_u32() % 4 {
            0 => format!("/v1/messages?after={after}&limit={limit}"),
            1 => format!("/v1/messages?after={after}&limit={limit}&recipient=alice"),
            2 => format!("/v1/messages?user=alice&username=alice&after={after}"),
            _ => format!("/v1/messages/alice?after={after}"),
        };
        let resp = http.get(format!("{}{path}", relay.url())).bearer_auth(bob_token).send().await.unwrap();
        let body: Value = resp.json().await.unwrap_or(Value::Null);
        for m in body["messages"].as_array().into_iter().flatten() {
            let id = m["message_id"].as_str().unwrap_or_default();
            if !bob_ids.contains(id) || alice_ids.contains(id) {
                leaks += 1;
            }
        }
        if rng.next_u32() % 5 == 0 {
            let _ = http
                .post(format!("{}/v1/messages/ack", relay.url()))
                .bearer_auth(bob_token)
                .json(&json!({ "up_to": 100, "recipient": "alice" }))
                .send()
                .await;
        }
    }
    let alice_still: BTreeSet<String> =
        client.pull(&tokens[0], 0, 100).await.unwrap().into_iter().map(|m| m.message_id).collect();
    let alice_intact = alice_still == alice_ids;

    let ok = identical && fresh_ok && expired_rejected && leaks == 0 && alice_intact;
    report(
        6,
        "auth properties",
        ok,
        format!(
            "login errors byte-identical: {identical} (status {}); expired token rejected: {expired_rejected}; 100 cross-user attempts, {leaks} leaks; alice's mailbox intact: {alice_intact}",
            unknown.0
        ),
    );
}

fn brute_force(input: &[u8], literals: &[String]) -> BTreeSet<LiteralHit> {
    let folded: Vec<u8> = input.iter().map(u8::to_ascii_lowercase).collect();
    let mut hits = BTreeSet::new();
    for lit in literals {
        let n = lit.len();
        for start in 0..folded.len().saturating_sub(n - 1) {
            if folded[start..start + n] == *lit.as_bytes() {
                hits.insert(LiteralHit { target: lit.clone(), byte_offset: start });
            }
        }
    }
    hits
}

#[test]
fn criterion_7_scanner_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(0x5ca9);
    let alphabet = b"abAB c";
    let pick = |rng: &mut ChaCha20Rng| alphabet[(rng.next_u32() as usize) % alphabet.len()];
    let mut discrepancies = 0;
    let mut total_hits = 0;
    for _ in 0..1000 {
        let literals: Vec<String> = (0..1 + rng.next_u32() % 6)
            .map(|_| {
                (0..4 + rng.next_u32() % 4).map(|_| pick(&mut rng) as char).collect::<String>().to_ascii_lowercase()
            })
            .collect();
        let len = (rng.next_u32() as usize) % 4097;
        let input: Vec<u8> = (0..len).map(|_| pick(&mut rng)).collect();
        let targets = TargetList::new(&literals, vec![]).unwrap();
        let mut unique = literals.clone();
        unique.sort();
        unique.dedup();
        let expected = brute_force(&input, &unique);
        let got: BTreeSet<LiteralHit> = scan("random", &input, &targets).literal_hits.into_iter().collect();
        total_hits += expected.len();
        if got != expected {
            discrepancies += 1;
        }
    }
    report(
        7,
        "scanner oracle equivalence",
        discrepancies == 0 && total_hits > 0,
        format!("1000 random inputs <= 4 KiB, {total_hits} oracle hits, {discrepancies} discrepancies"),
    );
}

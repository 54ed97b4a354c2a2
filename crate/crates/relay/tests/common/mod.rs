#![allow(dead_code)]

use std::sync::Arc;

use arsecure_core::auth::{derive_verifier, Clock};
use arsecure_core::{armor, encrypt_message, KeyPair, PlaintextMessage, PublicKey};
use arsecure_relay::{RelayConfig, RelayServer};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

pub const PASSWORD: &str = "correct horse battery";

pub async fn start(dir: &std::path::Path) -> RelayServer {
    RelayServer::start(RelayConfig::new("127.0.0.1:0".parse().unwrap(), dir)).await.unwrap()
}

pub async fn start_with_clock(dir: &std::path::Path, clock: Arc<dyn Clock>) -> RelayServer {
    let mut config = RelayConfig::new("127.0.0.1:0".parse().unwrap(), dir);
    config.clock = clock;
    RelayServer::start(config).await.unwrap()
}

pub struct Api {
    pub base: String,
    pub http: reqwest::Client,
}

impl Api {
    pub fn new(base: String) -> Self {
        Api { base, http: reqwest::Client::new() }
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> (u16, String) {
        let mut req = self.http.get(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.unwrap();
        (resp.status().as_u16(), resp.text().await.unwrap())
    }

    pub async fn post(&self, path: &str, body: &Value, token: Option<&str>) -> (u16, String) {
        let mut req = self.http.post(format!("{}{path}", self.base)).json(body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.unwrap();
        (resp.status().as_u16(), resp.text().await.unwrap())
    }

    pub async fn register(&self, name: &str, pk: &PublicKey) -> (u16, String) {
        let salt = [name.len() as u8; 16];
        let verifier = derive_verifier(PASSWORD, &salt).unwrap();
        let body = json!({
            "username": name,
            "public_key": STANDARD.encode(pk.as_bytes()),
            "salt": STANDARD.encode(salt),
            "verifier": STANDARD.encode(verifier),
        });
        self.post("/v1/register", &body, None).await
    }

    pub async fn login(&self, name: &str) -> String {
        let (status, body) = self.post("/v1/login", &json!({"username": name, "password": PASSWORD}), None).await;
        assert_eq!(status, 200, "{body}");
        let v: Value = serde_json::from_str(&body).unwrap();
        v["token"].as_str().unwrap().to_string()
    }
}

pub fn code(body: &str) -> String {
    let v: Value = serde_json::from_str(body).unwrap_or_else(|_| panic!("not JSON: {body}"));
    assert_eq!(v.as_object().unwrap().len(), 2, "ApiError has exactly code+message: {body}");
    assert!(v["message"].is_string());
    v["code"].as_str().unwrap().to_string()
}

pub fn keys(seed: u64) -> (KeyPair, KeyPair, ChaCha20Rng) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (KeyPair::generate(&mut rng), KeyPair::generate(&mut rng), rng)
}

pub fn armored(text: &str, from: &KeyPair, to: &PublicKey, rng: &mut ChaCha20Rng) -> String {
    armor(&encrypt_message(&PlaintextMessage::new(text).unwrap(), from, to, rng).unwrap())
}

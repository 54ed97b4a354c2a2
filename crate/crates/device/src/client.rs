//! Typed HTTP client for the relay API.

use std::time::Duration;

use arsecure_core::{PublicKey, PublicUserRecord};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::DeviceError;

#[derive(Debug, Clone, Deserialize)]
pub struct WireMessage {
    pub message_id: String,
    pub sender: String,
    pub sequence: u64,
    pub received_at: i64,
    pub envelope: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SendReceipt {
    pub message_id: String,
    pub sequence: u64,
}

#[derive(Deserialize)]
struct LoginResponse {
    token: String,
}

#[derive(Deserialize)]
struct PullResponse {
    messages: Vec<WireMessage>,
}

#[derive(Deserialize)]
struct AckResponse {
    deleted: usize,
}

#[derive(Deserialize)]
struct ErrorBody {
    code: String,
    message: String,
}

#[derive(Clone)]
pub struct RelayClient {
    base: String,
    http: reqwest::Client,
}

impl RelayClient {
    pub fn new(base: &str) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(15))
            .connect_timeout(Duration::from_secs(5))
            // No keep-alive reuse: a pooled socket to a relay that restarted fails the next request.
            .pool_max_idle_per_host(0)
            .build()
            .expect("HTTP client builds with static settings");
        RelayClient { base: base.trim_end_matches('/').to_string(), http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn call<T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<serde_json::Value>,
        token: Option<&str>,
    ) -> Result<T, DeviceError> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.map_err(|e| DeviceError::ServerUnreachable(e.without_url().to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| DeviceError::ServerUnreachable(e.without_url().to_string()))?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| DeviceError::Server {
                status: status.as_u16(),
                code: "malformed".into(),
                message: e.to_string(),
            });
        }
        let err: ErrorBody = serde_json::from_slice(&bytes)
            .unwrap_or(ErrorBody { code: "malformed".into(), message: String::from_utf8_lossy(&bytes).into_owned() });
        Err(map_error(status, err))
    }

    pub async fn register(
        &self,
        username: &str,
        public_key: &PublicKey,
        salt: &[u8; 16],
        verifier: &[u8; 32],
    ) -> Result<PublicUserRecord, DeviceError> {
        let body = json!({
            "username": username,
            "public_key": STANDARD.encode(public_key.as_bytes()),
            "salt": STANDARD.encode(salt),
            "verifier": STANDARD.encode(verifier),
        });
        self.call(Method::POST, "/v1/register", Some(body), None).await
    }

    pub async fn login(&self, username: &str, password: &str) -> Result<String, DeviceError> {
        let body = json!({ "username": username, "password": password });
        let resp: LoginResponse = self.call(Method::POST, "/v1/login", Some(body), None).await?;
        Ok(resp.token)
    }

    pub async fn lookup_key(&self, username: &str) -> Result<PublicUserRecord, DeviceError> {
        self.call(Method::GET, &format!("/v1/keys/{username}"), None, None).await
    }

    pub async fn send(&self, token: &str, recipient: &str, armored: &str) -> Result<SendReceipt, DeviceError> {
        let body = json!({ "recipient": recipient, "envelope": armored });
        self.call(Method::POST, "/v1/messages", Some(body), Some(token)).await
    }

    pub async fn pull(&self, token: &str, after: u64, limit: usize) -> Result<Vec<WireMessage>, DeviceError> {
        let resp: PullResponse =
            self.call(Method::GET, &format!("/v1/messages?after={after}&limit={limit}"), None, Some(token)).await?;
        Ok(resp.messages)
    }

    pub async fn ack(&self, token: &str, up_to: u64) -> Result<usize, DeviceError> {
        let resp: AckResponse =
            self.call(Method::POST, "/v1/messages/ack", Some(json!({ "up_to": up_to })), Some(token)).await?;
        Ok(resp.deleted)
    }
}

fn map_error(status: StatusCode, err: ErrorBody) -> DeviceError {
    match err.code.as_str() {
        "username_taken" => DeviceError::UsernameTaken,
        "invalid_username" => DeviceError::InvalidUsername,
        "authentication_failed" => DeviceError::AuthenticationFailed,
        "no_such_user" => DeviceError::NoSuchUser,
        "too_large" => DeviceError::TooLarge,
        _ => DeviceError::Server { status: status.as_u16(), code: err.code, message: err.message },
    }
}

pub(crate) fn is_unauthorized(e: &DeviceError) -> bool {
    matches!(e, DeviceError::Server { status: 401, .. })
}

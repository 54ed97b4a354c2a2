//! HTTP/JSON API over [`Relay`].
//!
//! | method | path                  | auth   |
//! |--------|-----------------------|--------|
//! | GET    | `/v1/health`          |        |
//! | POST   | `/v1/register`        |        |
//! | POST   | `/v1/login`           |        |
//! | GET    | `/v1/keys/{username}` |        |
//! | POST   | `/v1/messages`        | bearer |
//! | GET    | `/v1/messages`        | bearer |
//! | POST   | `/v1/messages/ack`    | bearer |
//!
//! Envelopes always travel armored. Handlers log method, path and status
//! only; request and response bodies never reach the log.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use arsecure_core::auth::{Clock, SystemClock, Username, DEFAULT_TOKEN_TTL_SECS, SALT_LEN, TOKEN_LEN, VERIFIER_LEN};
use arsecure_core::serde_util::b64;
use arsecure_core::{armor, dearmor, AuthError, CryptoError, PublicKey, PublicUserRecord};
use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::store::{Relay, RestoreReport, StoreError, StoredMessage, MAX_PULL};

pub const API_VERSION: &str = "1";
const BODY_LIMIT: usize = 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidUsername,
    UsernameTaken,
    AuthenticationFailed,
    Unauthorized,
    NoSuchUser,
    MisaddressedEnvelope,
    TooLarge,
    Malformed,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::InvalidUsername | ErrorCode::Malformed => StatusCode::BAD_REQUEST,
            ErrorCode::UsernameTaken => StatusCode::CONFLICT,
            ErrorCode::AuthenticationFailed | ErrorCode::Unauthorized => StatusCode::UNAUTHORIZED,
            ErrorCode::NoSuchUser => StatusCode::NOT_FOUND,
            ErrorCode::MisaddressedEnvelope => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::TooLarge => StatusCode::PAYLOAD_TOO_LARGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip)]
    status: Option<StatusCode>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError { code, message: message.into(), status: None }
    }

    fn with_status(mut self, status: StatusCode) -> Self {
        self.status = Some(status);
        self
    }

    fn malformed(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::Malformed, message)
    }

    fn unauthorized() -> Self {
        ApiError::new(ErrorCode::Unauthorized, "unauthorized")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status.unwrap_or_else(|| self.code.status());
        (status, Json(self)).into_response()
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        let code = match e {
            AuthError::InvalidUsername => ErrorCode::InvalidUsername,
            AuthError::UsernameTaken => ErrorCode::UsernameTaken,
            AuthError::AuthenticationFailed | AuthError::WeakPassword => {
                return ApiError::new(ErrorCode::AuthenticationFailed, "authentication failed")
            }
            AuthError::NoSuchUser => ErrorCode::NoSuchUser,
            AuthError::Unauthorized => ErrorCode::Unauthorized,
            AuthError::Storage(_) => return internal(),
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NoSuchUser => ApiError::new(ErrorCode::NoSuchUser, "no such user"),
            StoreError::Misaddressed => ApiError::new(ErrorCode::MisaddressedEnvelope, "misaddressed envelope"),
            StoreError::TooLarge => ApiError::new(ErrorCode::TooLarge, "too large"),
            StoreError::Malformed(inner) => ApiError::malformed(inner.to_string()),
            StoreError::Auth(a) => a.into(),
            StoreError::Io { .. } | StoreError::Corrupt { .. } => {
                tracing::error!("storage failure: {e}");
                internal()
            }
        }
    }
}

// The code set is closed, so server faults reuse `malformed` with a 500.
fn internal() -> ApiError {
    ApiError::malformed("internal storage error").with_status(StatusCode::INTERNAL_SERVER_ERROR)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub username: String,
    pub public_key: PublicKey,
    #[serde(with = "b64")]
    pub salt: [u8; SALT_LEN],
    #[serde(with = "b64")]
    pub verifier: [u8; VERIFIER_LEN],
}

#[derive(Serialize, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LoginResponse {
    #[serde(with = "b64")]
    pub token: [u8; TOKEN_LEN],
    pub expires_at: i64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SendRequest {
    pub recipient: String,
    pub envelope: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SendResponse {
    pub message_id: String,
    pub sequence: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireMessage {
    pub message_id: String,
    pub sender: String,
    pub sequence: u64,
    pub received_at: i64,
    pub envelope: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PullResponse {
    pub messages: Vec<WireMessage>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AckRequest {
    pub up_to: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AckResponse {
    pub deleted: usize,
}

#[derive(Debug, Deserialize)]
struct PullQuery {
    after: Option<u64>,
    limit: Option<usize>,
}

impl From<StoredMessage> for WireMessage {
    fn from(m: StoredMessage) -> Self {
        // Stored envelopes were validated at enqueue.
        let envelope = arsecure_core::MessageEnvelope::from_bytes(&m.envelope).map(|e| armor(&e)).unwrap_or_default();
        WireMessage {
            message_id: hex::encode(m.message_id),
            sender: m.sender.to_string(),
            sequence: m.sequence,
            received_at: m.received_at,
            envelope,
        }
    }
}

type AppState = Arc<Relay>;

/// The user named by a valid `Authorization: Bearer <base64 token>` header.
pub struct Authenticated(pub Username);

impl FromRequestParts<AppState> for Authenticated {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, relay: &AppState) -> Result<Self, Self::Rejection> {
        authenticate_request(&parts.headers, relay).map(Authenticated)
    }
}

pub fn authenticate_request(headers: &axum::http::HeaderMap, relay: &Relay) -> Result<Username, ApiError> {
    let value = headers.get(header::AUTHORIZATION).ok_or_else(ApiError::unauthorized)?;
    let value = value.to_str().map_err(|_| ApiError::unauthorized())?;
    let token = value.strip_prefix("Bearer ").ok_or_else(ApiError::unauthorized)?;
    let token = STANDARD.decode(token.trim()).map_err(|_| ApiError::unauthorized())?;
    relay.directory().validate_token(&token).map_err(|_| ApiError::unauthorized())
}

fn parse_json<T: serde::de::DeserializeOwned>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let body = body.map_err(|r| {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(ErrorCode::TooLarge, "too large")
        } else {
            ApiError::malformed("unreadable request body")
        }
    })?;
    serde_json::from_slice(&body).map_err(|e| ApiError::malformed(format!("invalid JSON body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|_| internal())
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": API_VERSION }))
}

async fn register(
    State(relay): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<(StatusCode, Json<PublicUserRecord>), ApiError> {
    let req: RegisterRequest = parse_json(body)?;
    let record =
        blocking(move || relay.directory().register(&req.username, req.public_key, req.salt, req.verifier)).await??;
    tracing::info!(user = %record.username, "registered");
    Ok((StatusCode::CREATED, Json(record.public())))
}

async fn login(
    State(relay): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<LoginResponse>, ApiError> {
    let req: LoginRequest = parse_json(body).map_err(|_| ApiError::from(AuthError::AuthenticationFailed))?;
    let session = blocking(move || relay.directory().login(&req.username, &req.password)).await??;
    Ok(Json(LoginResponse { token: session.token, expires_at: session.expires_at }))
}

async fn lookup_key(
    State(relay): State<AppState>,
    Path(username): Path<String>,
) -> Result<Json<PublicUserRecord>, ApiError> {
    Ok(Json(relay.directory().lookup_key(&username)?))
}

async fn send_message(
    State(relay): State<AppState>,
    Authenticated(sender): Authenticated,
    body: Result<Bytes, BytesRejection>,
) -> Result<(StatusCode, Json<SendResponse>), ApiError> {
    let req: SendRequest = parse_json(body)?;
    let envelope = dearmor(&req.envelope).map_err(|e| match e {
        CryptoError::TooLarge(_) => ApiError::new(ErrorCode::TooLarge, "too large"),
        other => ApiError::malformed(other.to_string()),
    })?;
    let bytes = envelope.to_bytes();
    let stored = blocking(move || relay.enqueue(&req.recipient, &sender, &bytes)).await??;
    Ok((
        StatusCode::CREATED,
        Json(SendResponse { message_id: hex::encode(stored.message_id), sequence: stored.sequence }),
    ))
}

async fn pull_messages(
    State(relay): State<AppState>,
    Authenticated(user): Authenticated,
    query: Result<Query<PullQuery>, QueryRejection>,
) -> Result<Json<PullResponse>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::malformed(e.body_text()))?;
    let limit = q.limit.unwrap_or(MAX_PULL);
    if !(1..=MAX_PULL).contains(&limit) {
        return Err(ApiError::malformed(format!("limit must be within 1..={MAX_PULL}")));
    }
    // The mailbox comes from the token, never from the request.
    let messages = relay.pull(&user, q.after.unwrap_or(0), limit).into_iter().map(WireMessage::from).collect();
    Ok(Json(PullResponse { messages }))
}

async fn ack_messages(
    State(relay): State<AppState>,
    Authenticated(user): Authenticated,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<AckResponse>, ApiError> {
    let req: AckRequest = parse_json(body)?;
    let deleted = blocking(move || relay.acknowledge(&user, req.up_to)).await??;
    Ok(Json(AckResponse { deleted }))
}

async fn not_found() -> ApiError {
    ApiError::malformed("no such route").with_status(StatusCode::NOT_FOUND)
}

async fn method_not_allowed() -> ApiError {
    ApiError::malformed("method not allowed").with_status(StatusCode::METHOD_NOT_ALLOWED)
}

async fn access_log(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(%method, %path, status = resp.status().as_u16(), elapsed_ms = started.elapsed().as_millis() as u64);
    resp
}

pub fn router(relay: Arc<Relay>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/register", post(register))
        .route("/v1/login", post(login))
        .route("/v1/keys/{username}", get(lookup_key))
        .route("/v1/messages", post(send_message).get(pull_messages))
        .route("/v1/messages/ack", post(ack_messages))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(middleware::from_fn(access_log))
        .with_state(relay)
}

#[derive(Clone)]
pub struct RelayConfig {
    pub bind: SocketAddr,
    pub storage: PathBuf,
    pub token_ttl_secs: i64,
    pub clock: Arc<dyn Clock>,
}

impl RelayConfig {
    pub fn new(bind: SocketAddr, storage: impl Into<PathBuf>) -> Self {
        RelayConfig {
            bind,
            storage: storage.into(),
            token_ttl_secs: DEFAULT_TOKEN_TTL_SECS,
            clock: Arc::new(SystemClock),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Storage(#[from] StoreError),
}

/// A running relay; dropping it without [`RelayServer::shutdown`] aborts the server task.
pub struct RelayServer {
    addr: SocketAddr,
    relay: Arc<Relay>,
    restore: RestoreReport,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<std::io::Result<()>>>,
}

impl RelayServer {
    pub async fn start(config: RelayConfig) -> Result<Self, StartError> {
        let listener =
            TcpListener::bind(config.bind).await.map_err(|source| StartError::Bind { addr: config.bind, source })?;
        let addr = listener.local_addr().map_err(|source| StartError::Bind { addr: config.bind, source })?;
        let storage = config.storage.clone();
        let (relay, restore) =
            tokio::task::spawn_blocking(move || Relay::open(&storage, config.clock, config.token_ttl_secs))
                .await
                .expect("restore task panicked")?;
        let relay = Arc::new(relay);
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(relay.clone());
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        tracing::info!(%addr, users = restore.users, messages = restore.messages, "relay listening");
        Ok(RelayServer { addr, relay, restore, shutdown: Some(tx), task: Some(task) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn relay(&self) -> &Arc<Relay> {
        &self.relay
    }

    pub fn restore_report(&self) -> &RestoreReport {
        &self.restore
    }

    /// Stops accepting connections, drains in-flight requests and flushes storage.
    pub async fn shutdown(mut self) -> Result<(), StoreError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
        self.relay.flush()
    }

    /// Resolves when the server task exits on its own.
    pub async fn wait(mut self) -> std::io::Result<()> {
        match self.task.take() {
            Some(task) => task.await.unwrap_or_else(|e| Err(std::io::Error::other(e))),
            None => Ok(()),
        }
    }
}

impl Drop for RelayServer {
    fn drop(&mut self) {
        if let Some(task) = self.task.take() {
            task.abort();
        }
    }
}

//! Localhost device API for the browser UI.
//!
//! Binds loopback only. Every request must carry `X-Device-Session` equal to
//! the per-launch secret printed at startup.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Request, State};
use axum::http::{HeaderName, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand_core::{OsRng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::json;
use subtle::ConstantTimeEq;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, Mutex};
use tokio::task::JoinHandle;
use tower_http::cors::{Any, CorsLayer};

use crate::device::Device;
use crate::error::DeviceError;
use crate::local::{ConversationEntry, Direction, EntryBody};

pub const SESSION_HEADER: &str = "x-device-session";
pub const DEFAULT_AGENT_BIND: &str = "127.0.0.1:7171";

#[derive(Clone)]
struct AgentState {
    device: Arc<Mutex<Device>>,
    secret: Arc<str>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AgentError {
    pub code: String,
    pub message: String,
}

struct ApiFailure(StatusCode, AgentError);

impl IntoResponse for ApiFailure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<DeviceError> for ApiFailure {
    fn from(e: DeviceError) -> Self {
        let (status, code) = match &e {
            DeviceError::ContactKeyChanged(_) => (StatusCode::CONFLICT, "contact_key_changed"),
            DeviceError::TooLarge => (StatusCode::PAYLOAD_TOO_LARGE, "too_large"),
            DeviceError::ServerUnreachable(_) => (StatusCode::BAD_GATEWAY, "server_unreachable"),
            DeviceError::NoSuchUser => (StatusCode::NOT_FOUND, "no_such_user"),
            DeviceError::InvalidUsername => (StatusCode::BAD_REQUEST, "invalid_username"),
            DeviceError::AuthenticationFailed => (StatusCode::UNAUTHORIZED, "authentication_failed"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "device_error"),
        };
        ApiFailure(status, AgentError { code: code.into(), message: e.to_string() })
    }
}

fn failure(status: StatusCode, code: &str, message: &str) -> ApiFailure {
    ApiFailure(status, AgentError { code: code.into(), message: message.into() })
}

#[derive(Deserialize)]
struct SendBody {
    recipient: String,
    text: String,
}

#[derive(Serialize)]
struct EntryView {
    direction: Direction,
    status: &'static str,
    text: Option<String>,
    detail: Option<String>,
    message_id: String,
    sequence: Option<u64>,
    timestamp: i64,
}

impl From<ConversationEntry> for EntryView {
    fn from(e: ConversationEntry) -> Self {
        let (status, text, detail) = match e.body {
            EntryBody::Ok { text } => ("ok", Some(text), None),
            EntryBody::Undecryptable { reason } => ("undecryptable", None, Some(reason)),
            EntryBody::SenderKeyChanged => ("sender_key_changed", None, None),
        };
        EntryView {
            direction: e.direction,
            status,
            text,
            detail,
            message_id: e.message_id,
            sequence: e.sequence,
            timestamp: e.timestamp,
        }
    }
}

async fn status(State(st): State<AgentState>) -> impl IntoResponse {
    Json(st.device.lock().await.status())
}

async fn contacts(State(st): State<AgentState>) -> impl IntoResponse {
    Json(json!({ "contacts": st.device.lock().await.contacts() }))
}

async fn send(
    State(st): State<AgentState>,
    body: Result<Json<SendBody>, axum::extract::rejection::JsonRejection>,
) -> Result<impl IntoResponse, ApiFailure> {
    let Json(body) = body.map_err(|e| failure(StatusCode::BAD_REQUEST, "bad_request", &e.body_text()))?;
    if body.text.is_empty() {
        return Err(failure(StatusCode::BAD_REQUEST, "bad_request", "empty message"));
    }
    let receipt = st.device.lock().await.send(&body.recipient, &body.text).await?;
    Ok((StatusCode::CREATED, Json(receipt)))
}

async fn conversation(State(st): State<AgentState>, Path(peer): Path<String>) -> impl IntoResponse {
    let entries: Vec<EntryView> = st.device.lock().await.conversation(&peer).into_iter().map(EntryView::from).collect();
    Json(json!({ "peer": peer.to_ascii_lowercase(), "entries": entries }))
}

async fn phone_view(State(st): State<AgentState>, Path(peer): Path<String>) -> impl IntoResponse {
    let envelopes = st.device.lock().await.phone_view(&peer);
    Json(json!({ "peer": peer.to_ascii_lowercase(), "envelopes": envelopes }))
}

async fn require_session(State(st): State<AgentState>, req: Request, next: Next) -> Response {
    let presented = req.headers().get(SESSION_HEADER).and_then(|v| v.to_str().ok());
    let ok = presented.is_some_and(|p| bool::from(p.as_bytes().ct_eq(st.secret.as_bytes())));
    if !ok {
        return failure(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong device session").into_response();
    }
    next.run(req).await
}

fn router(state: AgentState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([HeaderName::from_static(SESSION_HEADER), axum::http::header::CONTENT_TYPE]);
    Router::new()
        .route("/device/v1/status", get(status))
        .route("/device/v1/contacts", get(contacts))
        .route("/device/v1/send", post(send))
        .route("/device/v1/conversation/{peer}", get(conversation))
        .route("/device/v1/phone-view/{peer}", get(phone_view))
        .fallback(|| async { failure(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .layer(middleware::from_fn_with_state(state.clone(), require_session))
        .layer(cors)
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct AgentOptions {
    pub bind: SocketAddr,
    /// Background inbox sync interval; `None` disables it.
    pub sync_every: Option<Duration>,
}

impl Default for AgentOptions {
    fn default() -> Self {
        AgentOptions { bind: DEFAULT_AGENT_BIND.parse().unwrap(), sync_every: Some(Duration::from_secs(2)) }
    }
}

pub struct AgentServer {
    addr: SocketAddr,
    secret: String,
    device: Arc<Mutex<Device>>,
    shutdown: Option<oneshot::Sender<()>>,
    tasks: Vec<JoinHandle<()>>,
}

impl AgentServer {
    pub async fn start(device: Device, options: AgentOptions) -> Result<Self, DeviceError> {
        if !options.bind.ip().is_loopback() {
            return Err(DeviceError::NonLocalBind(options.bind));
        }
        let listener = TcpListener::bind(options.bind)
            .await
            .map_err(|e| DeviceError::io(std::path::Path::new(&options.bind.to_string()), e))?;
        let addr = listener.local_addr().map_err(|e| DeviceError::io(std::path::Path::new("agent"), e))?;

        let mut raw = [0u8; 16];
        OsRng.fill_bytes(&mut raw);
        let secret = hex::encode(raw);
        let device = Arc::new(Mutex::new(device));
        let state = AgentState { device: device.clone(), secret: Arc::from(secret.as_str()) };

        let (tx, rx) = oneshot::channel::<()>();
        let app = router(state);
        let mut tasks = vec![tokio::spawn(async move {
            let served = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            if let Err(e) = served.await {
                tracing::error!("device agent stopped: {e}");
            }
        })];
        if let Some(every) = options.sync_every {
            let device = device.clone();
            tasks.push(tokio::spawn(async move {
                let mut ticker = tokio::time::interval(every);
                loop {
                    ticker.tick().await;
                    if let Err(e) = device.lock().await.inbox().await {
                        tracing::debug!("inbox sync failed: {e}");
                    }
                }
            }));
        }
        Ok(AgentServer { addr, secret, device, shutdown: Some(tx), tasks })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn session_secret(&self) -> &str {
        &self.secret
    }

    pub fn device(&self) -> &Arc<Mutex<Device>> {
        &self.device
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        for task in self.tasks.drain(1..) {
            task.abort();
        }
        if let Some(server) = self.tasks.pop() {
            let _ = server.await;
        }
    }
}

impl Drop for AgentServer {
    fn drop(&mut self) {
        for task in &self.tasks {
            task.abort();
        }
    }
}

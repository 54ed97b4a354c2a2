#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use arsecure_core::TranscriptEntry;
use arsecure_device::{Device, DeviceHome};
use arsecure_relay::{RelayConfig, RelayServer};
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

pub const PASSWORD: &str = "correct horse battery";

pub async fn start_relay(dir: &Path) -> RelayServer {
    RelayServer::start(RelayConfig::new("127.0.0.1:0".parse().unwrap(), dir)).await.unwrap()
}

pub async fn init_device(home: &Path, name: &str, server: &str, seed: u64) -> Device {
    Device::init_with_rng(DeviceHome::new(home), name, PASSWORD, server, ChaCha20Rng::seed_from_u64(seed))
        .await
        .unwrap()
}

pub async fn unlock_device(home: &Path, seed: u64) -> Device {
    Device::unlock_with_rng(DeviceHome::new(home), PASSWORD, ChaCha20Rng::seed_from_u64(seed)).await.unwrap()
}

type Log = Arc<Mutex<Vec<TranscriptEntry>>>;

/// Loopback TCP forwarder that records every byte in both directions.
/// The upstream can be swapped, so a relay restart on a new port is
/// invisible to the clients.
pub struct RecordingProxy {
    addr: SocketAddr,
    upstream: Arc<Mutex<SocketAddr>>,
    log: Log,
    drop_next_ack: Arc<AtomicBool>,
    task: JoinHandle<()>,
}

impl RecordingProxy {
    pub async fn start(upstream: SocketAddr) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let upstream = Arc::new(Mutex::new(upstream));
        let log: Log = Arc::default();
        let drop_next_ack = Arc::new(AtomicBool::new(false));
        let counter = Arc::new(AtomicUsize::new(0));
        let task = {
            let (upstream, log, drop_next_ack) = (upstream.clone(), log.clone(), drop_next_ack.clone());
            tokio::spawn(async move {
                while let Ok((client, _)) = listener.accept().await {
                    let target = *upstream.lock().unwrap();
                    let n = counter.fetch_add(1, Ordering::SeqCst);
                    tokio::spawn(forward(client, target, n, log.clone(), drop_next_ack.clone()));
                }
            })
        };
        RecordingProxy { addr, upstream, log, drop_next_ack, task }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn set_upstream(&self, addr: SocketAddr) {
        *self.upstream.lock().unwrap() = addr;
    }

    /// Cuts the connection carrying the next `POST /v1/messages/ack` before it reaches the relay.
    pub fn drop_next_ack(&self) {
        self.drop_next_ack.store(true, Ordering::SeqCst);
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.log.lock().unwrap().clone()
    }
}

impl Drop for RecordingProxy {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn forward(client: TcpStream, target: SocketAddr, n: usize, log: Log, drop_ack: Arc<AtomicBool>) {
    let Ok(upstream) = TcpStream::connect(target).await else {
        return;
    };
    let (up_idx, down_idx) = {
        let mut log = log.lock().unwrap();
        log.push(TranscriptEntry::new(format!("conn{n} client->relay"), Vec::new()));
        log.push(TranscriptEntry::new(format!("conn{n} relay->client"), Vec::new()));
        (log.len() - 2, log.len() - 1)
    };
    let (cr, cw) = client.into_split();
    let (ur, uw) = upstream.into_split();
    tokio::select! {
        _ = pump(cr, uw, log.clone(), up_idx, Some(drop_ack)) => {}
        _ = pump(ur, cw, log, down_idx, None) => {}
    }
}

async fn pump(
    mut from: OwnedReadHalf,
    mut to: OwnedWriteHalf,
    log: Log,
    idx: usize,
    drop_ack: Option<Arc<AtomicBool>>,
) {
    let mut buf = vec![0u8; 16 * 1024];
    loop {
        let n = match from.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        let chunk = &buf[..n];
        if let Some(flag) = &drop_ack {
            if chunk.starts_with(b"POST /v1/messages/ack ") && flag.swap(false, Ordering::SeqCst) {
                return;
            }
        }
        log.lock().unwrap()[idx].bytes.extend_from_slice(chunk);
        if to.write_all(chunk).await.is_err() {
            break;
        }
    }
    let _ = to.shutdown().await;
}

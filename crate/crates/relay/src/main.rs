use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use arsecure_relay::{RelayConfig, RelayServer};
use clap::Parser;

#[derive(Parser)]
#[command(name = "arsecure-relay", version, about = "ARSecure store-and-forward relay")]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "ARSECURE_BIND", default_value = "127.0.0.1:7070")]
    bind: SocketAddr,
    /// Storage root for the directory and mailbox logs.
    #[arg(long, env = "ARSECURE_STORAGE", default_value = "./arsecure-data")]
    storage: PathBuf,
    /// Session token lifetime in hours.
    #[arg(long, env = "ARSECURE_TOKEN_TTL", default_value_t = 24)]
    token_ttl: i64,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let args = Args::parse();
    let mut config = RelayConfig::new(args.bind, args.storage);
    config.token_ttl_secs = args.token_ttl * 3600;

    let server = match RelayServer::start(config).await {
        Ok(s) => s,
        Err(e) => {
            eprintln!("arsecure-relay: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!("arsecure-relay listening on {}", server.url());
    if let Err(e) = tokio::signal::ctrl_c().await {
        eprintln!("arsecure-relay: cannot wait for shutdown signal: {e}");
    }
    match server.shutdown().await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("arsecure-relay: flush on shutdown failed: {e}");
            ExitCode::FAILURE
        }
    }
}

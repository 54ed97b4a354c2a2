use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use arsecure_device::agent::DEFAULT_AGENT_BIND;
use arsecure_device::{
    AgentOptions, AgentServer, ConversationEntry, Device, DeviceError, DeviceHome, Direction, EntryBody,
};
use clap::{Parser, Subcommand};
use zeroize::Zeroizing;

#[derive(Parser)]
#[command(name = "arsecure", version, about = "ARSecure secure-device client")]
struct Cli {
    /// Device data directory (default: $ARSECURE_HOME or ~/.arsecure).
    #[arg(long, global = true)]
    home: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an identity on this device and register it with the relay.
    Init {
        #[arg(long)]
        user: String,
        #[arg(long)]
        server: String,
    },
    /// Encrypt and send a message.
    Send {
        user: String,
        #[arg(required = true, num_args = 1..)]
        text: Vec<String>,
    },
    /// Fetch, decrypt and show new messages.
    Inbox {
        /// Keep polling every two seconds.
        #[arg(long)]
        follow: bool,
    },
    /// List pinned contacts, or pin a new one.
    Contacts {
        #[command(subcommand)]
        action: Option<ContactAction>,
    },
    /// Serve the localhost device API for the web UI.
    Agent {
        #[arg(long, default_value = DEFAULT_AGENT_BIND)]
        bind: SocketAddr,
    },
}

#[derive(Subcommand)]
enum ContactAction {
    /// Look up and pin a user's current directory key.
    Add {
        user: String,
        /// Replace an existing pin with the directory's current key.
        #[arg(long)]
        repin: bool,
    },
}

fn read_password(prompt: &str) -> Result<Zeroizing<String>, DeviceError> {
    if let Ok(p) = std::env::var("ARSECURE_PASSWORD") {
        return Ok(Zeroizing::new(p));
    }
    rpassword::prompt_password(prompt)
        .map(Zeroizing::new)
        .map_err(|e| DeviceError::Io { path: PathBuf::from("<terminal>"), source: e })
}

fn print_entry(e: &ConversationEntry) {
    let arrow = match e.direction {
        Direction::Sent => "->",
        Direction::Received => "<-",
    };
    match &e.body {
        EntryBody::Ok { text } => println!("[{}] {arrow} {}: {text}", e.sequence.unwrap_or(0), e.peer),
        EntryBody::Undecryptable { reason } => {
            println!("[{}] {arrow} {}: undecryptable (id {}): {reason}", e.sequence.unwrap_or(0), e.peer, e.message_id)
        }
        EntryBody::SenderKeyChanged => {
            println!(
                "[{}] {arrow} {}: sender key changed (id {}); not decrypted",
                e.sequence.unwrap_or(0),
                e.peer,
                e.message_id
            )
        }
    }
}

async fn run(cli: Cli) -> Result<(), DeviceError> {
    let home = cli.home.map(DeviceHome::new).unwrap_or_else(DeviceHome::default_location);
    match cli.command {
        Command::Init { user, server } => {
            let password = read_password("New password: ")?;
            let device = Device::init(home, &user, &password, &server).await?;
            let status = device.status();
            println!("initialized {} (key id {}) on {}", status.username, status.key_id, status.server_url);
        }
        Command::Send { user, text } => {
            let password = read_password("Password: ")?;
            let mut device = Device::unlock(home, &password).await?;
            let receipt = device.send(&user, &text.join(" ")).await?;
            println!("sent {} (sequence {})", receipt.message_id, receipt.sequence);
        }
        Command::Inbox { follow } => {
            let password = read_password("Password: ")?;
            let mut device = Device::unlock(home, &password).await?;
            loop {
                match device.inbox().await {
                    Ok(entries) => entries.iter().for_each(print_entry),
                    Err(e @ DeviceError::ServerUnreachable(_)) if follow => eprintln!("arsecure: {e}"),
                    Err(e) => return Err(e),
                }
                if !follow {
                    break;
                }
                tokio::select! {
                    _ = tokio::time::sleep(Duration::from_secs(2)) => {}
                    _ = tokio::signal::ctrl_c() => break,
                }
            }
        }
        Command::Contacts { action } => {
            let password = read_password("Password: ")?;
            let mut device = Device::unlock(home, &password).await?;
            match action {
                None => {
                    for c in device.contacts() {
                        println!("{}\t{}\tpinned {}", c.username, c.key_id, c.pinned_at);
                    }
                }
                Some(ContactAction::Add { user, repin }) => {
                    let c = if repin { device.repin(&user).await? } else { device.add_contact(&user).await? };
                    println!("pinned {} (key id {})", c.username, c.key_id);
                }
            }
        }
        Command::Agent { bind } => {
            let password = read_password("Password: ")?;
            let device = Device::unlock(home, &password).await?;
            let agent = AgentServer::start(device, AgentOptions { bind, ..AgentOptions::default() }).await?;
            println!("device agent on {}", agent.url());
            println!("device session: {}", agent.session_secret());
            let _ = tokio::signal::ctrl_c().await;
            agent.shutdown().await;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("arsecure: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use kevlar::cache::{CacheConfig, Policy};
use kevlar::daemon::client::{exit, Client, ClientError};
use kevlar::daemon::{self, DaemonConfig};
use kevlar::transport::{Endpoint, Mode};
use kevlar::wire::DEFAULT_MAX_FRAME;

#[derive(Parser)]
#[command(name = "kevlar", version, about = "Write-through sealed key-value cache daemon and client")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Connect {
    /// Address the untrusted side listens on (reverse mode) or the daemon binds (listen mode).
    #[arg(long, env = "KEVLAR_ENDPOINT", default_value = "127.0.0.1:7878")]
    endpoint: String,
    /// Daemon connection model: `reverse` (daemon dials out) or `listen`.
    #[arg(long, env = "KEVLAR_MODE", default_value = "reverse")]
    mode: Mode,
}

impl Connect {
    fn endpoint(&self) -> Result<Endpoint, String> {
        Endpoint::parse(&self.endpoint, self.mode).map_err(|e| e.to_string())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the daemon until QUIT.
    Daemon(DaemonArgs),
    /// Store a value (hex) under an id (hex).
    ServeAndSave {
        #[command(flatten)]
        client: ClientArgs,
        #[arg(long, value_parser = parse_hex)]
        id: Hex,
        #[arg(long, value_parser = parse_hex)]
        value: Hex,
    },
    /// Fetch the value stored under an id; prints it as hex.
    Query {
        #[command(flatten)]
        client: ClientArgs,
        #[arg(long, value_parser = parse_hex)]
        id: Hex,
    },
    /// Re-encrypt a cipher (hex iv||body) from the key under --src to the key under --dst.
    Reenc {
        #[command(flatten)]
        client: ClientArgs,
        #[arg(long, value_parser = parse_hex)]
        src: Hex,
        #[arg(long, value_parser = parse_hex)]
        dst: Hex,
        #[arg(long, value_parser = parse_hex)]
        cipher: Hex,
    },
    /// Liveness check.
    Ping {
        #[command(flatten)]
        client: ClientArgs,
    },
    /// Stop the daemon.
    Quit {
        #[command(flatten)]
        client: ClientArgs,
    },
}

#[derive(Args)]
struct ClientArgs {
    #[command(flatten)]
    connect: Connect,
    /// Seconds to wait for the daemon.
    #[arg(long, env = "KEVLAR_TIMEOUT", default_value_t = 10.0)]
    timeout: f64,
}

#[derive(Args)]
struct DaemonArgs {
    #[command(flatten)]
    connect: Connect,
    #[arg(long, env = "KEVLAR_STORE_DIR", default_value = "kevlar-store")]
    store_dir: PathBuf,
    #[arg(long, env = "KEVLAR_KEYFILE", default_value = "kevlar.key")]
    keyfile: PathBuf,
    #[arg(long, env = "KEVLAR_CAPACITY", default_value_t = 64)]
    capacity: usize,
    #[arg(long, env = "KEVLAR_BUCKETS", default_value_t = 64)]
    buckets: usize,
    #[arg(long, env = "KEVLAR_ID_SIZE", default_value_t = 64)]
    id_size: usize,
    #[arg(long, env = "KEVLAR_VALUE_SIZE", default_value_t = 4096)]
    value_size: usize,
    #[arg(long, env = "KEVLAR_POLICY", default_value = "lru")]
    policy: Policy,
    #[arg(long, env = "KEVLAR_MAX_FRAME", default_value_t = DEFAULT_MAX_FRAME)]
    max_frame: usize,
}

#[derive(Clone)]
struct Hex(Vec<u8>);

fn parse_hex(s: &str) -> Result<Hex, String> {
    hex::decode(s).map(Hex).map_err(|e| format!("not hex: {e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Daemon(args) => run_daemon(args),
        Command::ServeAndSave { client, id, value } => {
            run_client(&client, |c| c.save(&id.0, &value.0).map(|()| None))
        }
        Command::Query { client, id } => run_client(&client, |c| c.query(&id.0).map(Some)),
        Command::Reenc {
            client,
            src,
            dst,
            cipher,
        } => run_client(&client, |c| c.reencrypt(&src.0, &dst.0, &cipher.0).map(Some)),
        Command::Ping { client } => run_client(&client, |c| c.ping().map(|()| None)),
        Command::Quit { client } => run_client(&client, |c| c.quit().map(|()| None)),
    };
    ExitCode::from(code as u8)
}

fn run_daemon(args: DaemonArgs) -> i32 {
    let endpoint = match args.connect.endpoint() {
        Ok(e) => e,
        Err(e) => {
            eprintln!("kevlar: {e}");
            return exit::USAGE;
        }
    };
    let cache = match CacheConfig::new(args.capacity, args.buckets, args.id_size, args.value_size, args.policy) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("kevlar: {e}");
            return exit::USAGE;
        }
    };
    let mut cfg = DaemonConfig::new(endpoint, args.store_dir, args.keyfile, cache);
    cfg.max_frame = args.max_frame;
    match daemon::run_daemon(cfg) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("kevlar: {e}");
            1
        }
    }
}

fn run_client(
    args: &ClientArgs,
    op: impl FnOnce(&mut Client) -> Result<Option<Vec<u8>>, ClientError>,
) -> i32 {
    let endpoint = match args.connect.endpoint() {
        Ok(e) => e,
        Err(e) => {
            eprintln!("kevlar: {e}");
            return exit::USAGE;
        }
    };
    let timeout = Duration::from_secs_f64(args.timeout.max(0.0));
    let result = Client::connect(&endpoint, timeout).and_then(|mut c| op(&mut c));
    match result {
        Ok(value) => {
            if let Some(v) = value {
                println!("{}", hex::encode(v));
            }
            exit::OK
        }
        Err(e) => {
            eprintln!("kevlar: {e}");
            e.exit_code()
        }
    }
}

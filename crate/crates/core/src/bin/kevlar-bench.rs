use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use kevlar::bench::{self, Access, BenchError, BenchRecord};
use kevlar::cache::{CacheConfig, Policy};
use kevlar::daemon::{self, DaemonConfig};
use kevlar::store::SecureStore;
use kevlar::transport::{Endpoint, Mode};

#[derive(Clone, Copy, ValueEnum)]
enum BenchId {
    Base64,
    Crypto,
    Tcp,
    StoreInsert,
    CacheQuery,
    EcgStream,
}

#[derive(Parser)]
#[command(name = "kevlar-bench", version, about = "Benchmark workloads, CSV on stdout or --out")]
struct Cli {
    bench: BenchId,
    /// Comma-separated payload sizes in bytes.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = bench::DEFAULT_REPS)]
    reps: usize,
    /// Simulated ECG clients.
    #[arg(long, default_value_t = 1)]
    clients: usize,
    /// ECG stream length in seconds.
    #[arg(long, default_value_t = 60.0)]
    seconds: f64,
    /// Pace ECG batches at real time instead of back-to-back.
    #[arg(long)]
    paced: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keys inserted for store-insert and cache-query.
    #[arg(long, default_value_t = bench::DEFAULT_STORE_KEYS)]
    keys: usize,
    #[arg(long, default_value_t = bench::DEFAULT_ID_SIZE)]
    id_size: usize,
    #[arg(long, default_value_t = bench::DEFAULT_VALUE_SIZE)]
    value_size: usize,
    /// Cache capacity for cache-query.
    #[arg(long, default_value_t = 50)]
    capacity: usize,
    /// Number of queries for cache-query.
    #[arg(long, default_value_t = 10_000)]
    queries: usize,
    /// Store directory for store-insert (must be empty). Defaults to a temp dir.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Use a running listen-mode daemon for ecg-stream instead of an in-process one.
    #[arg(long)]
    daemon: Option<SocketAddr>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(records) => {
            let written = match &cli.out {
                Some(path) => File::create(path)
                    .map_err(BenchError::from)
                    .and_then(|f| bench::write_csv(&records, BufWriter::new(f))),
                None => bench::write_csv(&records, io::stdout().lock()),
            };
            if let Err(e) = written {
                eprintln!("kevlar-bench: {e}");
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("kevlar-bench: {e}");
            ExitCode::FAILURE
        }
    }
}

fn sizes(cli: &Cli, default: &[usize]) -> Vec<usize> {
    cli.sizes.clone().unwrap_or_else(|| default.to_vec())
}

fn report(label: &str, records: &[BenchRecord], tags: &[&str]) {
    let mut err = io::stderr().lock();
    let mut sizes: Vec<u64> = records.iter().map(|r| r.size_bytes).collect();
    sizes.sort_unstable();
    sizes.dedup();
    for tag in tags {
        for &size in &sizes {
            let group = records.iter().filter(|r| r.tag == *tag && r.size_bytes == size);
            if let Some(s) = bench::summarize(group) {
                let _ = writeln!(
                    err,
                    "{label} {tag:>8} {size:>7} B  n={:<5} min={:.3e} p25={:.3e} p50={:.3e} p75={:.3e} max={:.3e} B/s",
                    s.count, s.min, s.p25, s.median, s.p75, s.max
                );
            }
        }
    }
}

fn run(cli: &Cli) -> Result<Vec<BenchRecord>, BenchError> {
    match cli.bench {
        BenchId::Base64 => {
            let r = bench::bench_base64(&sizes(cli, &bench::DEFAULT_BASE64_SIZES), cli.reps, cli.seed)?;
            report("base64", &r, &["encode", "decode"]);
            Ok(r)
        }
        BenchId::Crypto => {
            let r = bench::bench_crypto(&sizes(cli, &bench::DEFAULT_CRYPTO_SIZES), cli.reps, cli.seed)?;
            report("crypto", &r, &["encrypt", "decrypt"]);
            Ok(r)
        }
        BenchId::Tcp => {
            let r = bench::bench_tcp(&sizes(cli, &bench::DEFAULT_TCP_SIZES), cli.reps)?;
            report("tcp", &r, &["incoming"]);
            Ok(r)
        }
        BenchId::StoreInsert => {
            let tmp = tempfile::TempDir::new()?;
            let dir = cli.dir.clone().unwrap_or_else(|| tmp.path().join("objects"));
            let keyfile = dir.with_extension("key");
            bench::bench_store_insert(&dir, &keyfile, cli.keys, cli.id_size, cli.value_size, cli.seed)
        }
        BenchId::CacheQuery => {
            let tmp = tempfile::TempDir::new()?;
            let dir = tmp.path().join("objects");
            let keyfile = tmp.path().join("key");
            bench::bench_store_insert(&dir, &keyfile, cli.keys, cli.id_size, cli.value_size, cli.seed)?;
            let store = SecureStore::open(&dir, &keyfile)?;
            let ids: Vec<_> = (1..=cli.keys).map(|i| bench::bench_key_id(i, cli.id_size)).collect();
            let run = bench::bench_cache_query(store, &ids, cli.capacity, cli.queries, Access::Uniform, cli.seed)?;
            eprintln!(
                "cache-query steady-state hit fraction {:.4} over {} queries (expected {:.4})",
                run.steady_state_hit_fraction(),
                run.steady_queries,
                cli.capacity.min(cli.keys) as f64 / cli.keys.max(1) as f64
            );
            report("cache", &run.records, &["hit", "miss"]);
            Ok(run.records)
        }
        BenchId::EcgStream => {
            let tmp = tempfile::TempDir::new()?;
            let local = match cli.daemon {
                Some(_) => None,
                None => {
                    let cache = CacheConfig::new(cli.clients + 16, 64, 64, 64, Policy::Lru)?;
                    let endpoint = Endpoint::new("127.0.0.1", 0, Mode::Listen)?;
                    let cfg = DaemonConfig::new(endpoint, tmp.path().join("objects"), tmp.path().join("key"), cache);
                    Some(daemon::spawn_daemon(cfg).map_err(|e| BenchError::Precondition(e.to_string()))?)
                }
            };
            let addr = cli
                .daemon
                .or_else(|| local.as_ref().and_then(|d| d.local_addr()))
                .expect("daemon address");
            let run = bench::bench_ecg_stream(addr, cli.clients, cli.seconds, cli.seed, cli.paced)?;
            eprintln!(
                "ecg-stream clients={} batches/client={} verified={} points={} wall={:.3}s normalized={:.4} s/s (reference {:.3} s/s)",
                run.clients,
                run.batches_per_client,
                run.verified,
                run.points(),
                run.wall.as_secs_f64(),
                run.normalized(),
                bench::ECG_REFERENCE_NORMALIZED,
            );
            if let Some(d) = local {
                d.shutdown();
                let _ = d.join();
            }
            Ok(run.records)
        }
    }
}

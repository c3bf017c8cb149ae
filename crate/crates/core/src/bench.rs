//! Micro and macro benchmark workloads with CSV output.
//!
//! Workload content is a pure function of the seed; only timings vary
//! between runs. Every bench emits [`BenchRecord`] rows with one shared
//! header so the same tooling can read any of them.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{Backend, Cache, CacheConfig, CacheError, Policy, Tier};
use crate::crypto::{self, SymmetricKey};
use crate::daemon::client::{Client, ClientError};
use crate::store::{SecureStore, StoreError};
use crate::transport::{Connection, TransportError};
use crate::wire;

pub const DEFAULT_BASE64_SIZES: [usize; 2] = [1024, 100 * 1024];
pub const DEFAULT_CRYPTO_SIZES: [usize; 3] = [128, 1024, 4096];
pub const DEFAULT_TCP_SIZES: [usize; 4] = [1, 245, 757, 1024];
pub const DEFAULT_REPS: usize = 200;
pub const DEFAULT_STORE_KEYS: usize = 200;
pub const DEFAULT_ID_SIZE: usize = 12;
pub const DEFAULT_VALUE_SIZE: usize = 32;

/// Points per ECG batch and the stream time one batch covers.
pub const ECG_POINTS_PER_BATCH: usize = 10;
pub const ECG_BATCH_PERIOD_MS: f64 = 93.4;
/// Raspberry Pi figure for one client, seconds of processing per stream second.
pub const ECG_REFERENCE_NORMALIZED: f64 = 0.064;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("cache: {0}")]
    Cache(#[from] CacheError),
    #[error("client: {0}")]
    Client(#[from] ClientError),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One CSV row.
///
/// `tag` names the measured direction or class (encode, decrypt, hit, ...).
/// `count` is bench-specific: keys stored so far, client count, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub bench_id: String,
    pub size_bytes: u64,
    pub repetition: u64,
    pub duration_ns: u64,
    pub throughput_bytes_per_s: f64,
    pub tag: String,
    pub count: u64,
}

impl BenchRecord {
    pub fn new(bench_id: &str, tag: &str, size: usize, repetition: usize, elapsed: Duration, count: u64) -> Self {
        let duration_ns = (elapsed.as_nanos() as u64).max(1);
        BenchRecord {
            bench_id: bench_id.to_string(),
            size_bytes: size as u64,
            repetition: repetition as u64,
            duration_ns,
            throughput_bytes_per_s: size as f64 * 1e9 / duration_ns as f64,
            tag: tag.to_string(),
            count,
        }
    }
}

pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<(), BenchError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<BenchRecord>, BenchError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(BenchError::from)
}

pub const CSV_HEADER: [&str; 7] = [
    "bench_id",
    "size_bytes",
    "repetition",
    "duration_ns",
    "throughput_bytes_per_s",
    "tag",
    "count",
];

/// Five-number summary of throughputs, as used for box plots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

/// Linear-interpolated percentile of an ascending slice, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize<'a>(records: impl IntoIterator<Item = &'a BenchRecord>) -> Option<Summary> {
    let mut v: Vec<f64> = records.into_iter().map(|r| r.throughput_bytes_per_s).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(Summary {
        count: v.len(),
        min: v[0],
        p25: percentile(&v, 0.25),
        median: percentile(&v, 0.5),
        p75: percentile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_bytes(rng: &mut impl RngCore, n: usize) -> Vec<u8> {
    let mut v = vec![0u8; n];
    rng.fill_bytes(&mut v);
    v
}

/// Deterministic id of exactly `id_size` bytes, `client000001` style.
pub fn bench_key_id(i: usize, id_size: usize) -> Vec<u8> {
    let digits = id_size.saturating_sub(6).max(1);
    let s = format!("client{i:0digits$}");
    s.as_bytes()[s.len().saturating_sub(id_size)..].to_vec()
}

pub fn bench_base64(sizes: &[usize], reps: usize, seed: u64) -> Result<Vec<BenchRecord>, BenchError> {
    if sizes.is_empty() {
        return Err(BenchError::Precondition("no sizes given".into()));
    }
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(sizes.len() * reps * 2);
    for &size in sizes {
        for rep in 0..reps {
            let data = random_bytes(&mut rng, size);
            let t = Instant::now();
            let encoded = wire::base64_encode(&data);
            out.push(BenchRecord::new("base64", "encode", size, rep, t.elapsed(), 0));
            let t = Instant::now();
            let decoded = wire::base64_decode(encoded.as_bytes())
                .map_err(|e| BenchError::Verification(e.to_string()))?;
            out.push(BenchRecord::new("base64", "decode", size, rep, t.elapsed(), 0));
            if decoded != data {
                return Err(BenchError::Verification("base64 roundtrip mismatch".into()));
            }
        }
    }
    Ok(out)
}

pub fn bench_crypto(sizes: &[usize], reps: usize, seed: u64) -> Result<Vec<BenchRecord>, BenchError> {
    if sizes.is_empty() {
        return Err(BenchError::Precondition("no sizes given".into()));
    }
    let mut rng = seeded(seed);
    let key = SymmetricKey::new(rng.gen());
    let mut out = Vec::with_capacity(sizes.len() * reps * 2);
    for &size in sizes {
        for rep in 0..reps {
            let data = random_bytes(&mut rng, size);
            let iv: [u8; 16] = rng.gen();
            let t = Instant::now();
            let envelope = crypto::encrypt_with_iv(&key, &iv, &data);
            out.push(BenchRecord::new("crypto", "encrypt", size, rep, t.elapsed(), 0));
            let t = Instant::now();
            let plain = crypto::decrypt(&key, &envelope).map_err(|e| BenchError::Verification(e.to_string()))?;
            out.push(BenchRecord::new("crypto", "decrypt", size, rep, t.elapsed(), 0));
            if plain != data {
                return Err(BenchError::Verification("AES roundtrip mismatch".into()));
            }
        }
    }
    Ok(out)
}

/// Incoming throughput of the transport layer over loopback.
///
/// A receiver thread times each `receive_frame` call, from the moment it
/// starts waiting until a whole message is reassembled. The sender waits for
/// a one-byte acknowledgement before sending the next message.
pub fn bench_tcp(sizes: &[usize], reps: usize) -> Result<Vec<BenchRecord>, BenchError> {
    if sizes.is_empty() || reps == 0 {
        return Ok(Vec::new());
    }
    let max_frame = sizes.iter().copied().max().unwrap_or(1).max(1);
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let plan: Vec<usize> = sizes.to_vec();

    let receiver = thread::spawn(move || -> Result<Vec<BenchRecord>, BenchError> {
        let (stream, _) = listener.accept()?;
        let mut conn = Connection::from_stream(stream)?.with_max_frame(max_frame);
        let mut out = Vec::with_capacity(plan.len() * reps);
        for &size in &plan {
            for rep in 0..reps {
                let t = Instant::now();
                let frame = conn.receive_frame()?;
                let elapsed = t.elapsed();
                if frame.len() != size {
                    return Err(BenchError::Verification(format!(
                        "expected {size}-byte message, got {}",
                        frame.len()
                    )));
                }
                out.push(BenchRecord::new("tcp", "incoming", size, rep, elapsed, 1));
                conn.send(b"\n")?;
            }
        }
        Ok(out)
    });

    let send_result = (|| -> Result<(), BenchError> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut ack = [0u8; 1];
        for &size in sizes {
            let mut msg = vec![b'A'; size.max(1)];
            *msg.last_mut().unwrap() = b'\n';
            for _ in 0..reps {
                stream.write_all(&msg)?;
                stream.read_exact(&mut ack)?;
            }
        }
        Ok(())
    })();
    let records = receiver
        .join()
        .map_err(|_| BenchError::Verification("receiver thread panicked".into()))??;
    send_result?;
    Ok(records)
}

/// Inserts `n_keys` sequential keys into a fresh store, one record each.
pub fn bench_store_insert(
    store_dir: &Path,
    keyfile: &Path,
    n_keys: usize,
    id_size: usize,
    value_size: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>, BenchError> {
    if store_dir.exists() && std::fs::read_dir(store_dir)?.next().is_some() {
        return Err(BenchError::Precondition(format!(
            "{} is not empty; store insertion needs a fresh directory",
            store_dir.display()
        )));
    }
    let store = SecureStore::open(store_dir, keyfile)?;
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(n_keys);
    for i in 0..n_keys {
        let id = bench_key_id(i + 1, id_size);
        let value = random_bytes(&mut rng, value_size);
        let t = Instant::now();
        store.write_ss(&id, &value)?;
        out.push(BenchRecord::new(
            "store_insert",
            "insert",
            id_size + value_size,
            i,
            t.elapsed(),
            i as u64 + 1,
        ));
    }
    Ok(out)
}

/// Outcome of [`bench_cache_query`].
#[derive(Debug, Clone)]
pub struct CacheQueryRun {
    pub records: Vec<BenchRecord>,
    /// Index of the first query issued once the cache was full.
    pub warmup: usize,
    pub steady_hits: usize,
    pub steady_queries: usize,
}

impl CacheQueryRun {
    pub fn steady_state_hit_fraction(&self) -> f64 {
        if self.steady_queries == 0 {
            return 0.0;
        }
        self.steady_hits as f64 / self.steady_queries as f64
    }

    pub fn summary(&self, tag: &str) -> Option<Summary> {
        summarize(self.records.iter().filter(|r| r.tag == tag))
    }
}

/// How query ids are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Uniform,
    RoundRobin,
}

/// Queries random ids from a pre-filled backend through a cache of
/// `capacity` entries, tagging each query `hit` or `miss`.
pub fn bench_cache_query<B: Backend>(
    backend: B,
    ids: &[Vec<u8>],
    capacity: usize,
    n_queries: usize,
    access: Access,
    seed: u64,
) -> Result<CacheQueryRun, BenchError> {
    if ids.is_empty() {
        return Err(BenchError::Precondition("no keys to query".into()));
    }
    let id_size = ids.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let config = CacheConfig::new(capacity, capacity.max(1), id_size, 1 << 20, Policy::Lru)?;
    let mut cache = Cache::init(config, backend)?;
    let mut rng = seeded(seed);
    let mut records = Vec::with_capacity(n_queries);
    let mut warmup = None;
    let (mut steady_hits, mut steady_queries) = (0, 0);
    for q in 0..n_queries {
        let id = match access {
            Access::Uniform => &ids[rng.gen_range(0..ids.len())],
            Access::RoundRobin => &ids[q % ids.len()],
        };
        let full = cache.len() >= capacity.min(ids.len());
        if full && warmup.is_none() {
            warmup = Some(q);
        }
        let t = Instant::now();
        let (value, tier) = cache.lookup(id)?;
        let elapsed = t.elapsed();
        let tag = match tier {
            Tier::Volatile => "hit",
            Tier::Backend => "miss",
        };
        if full {
            steady_queries += 1;
            steady_hits += usize::from(tier == Tier::Volatile);
        }
        records.push(BenchRecord::new("cache_query", tag, value.len(), q, elapsed, ids.len() as u64));
    }
    Ok(CacheQueryRun {
        records,
        warmup: warmup.unwrap_or(n_queries),
        steady_hits,
        steady_queries,
    })
}

/// One ECG sample: milliseconds since stream start and millivolts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcgPoint {
    pub timestamp_ms: f64,
    pub voltage_mv: f64,
}

/// Deterministic PQRST-shaped synthetic ECG with seeded noise.
pub struct EcgGenerator {
    rng: ChaCha8Rng,
    next_index: u64,
    beat_ms: f64,
}

impl EcgGenerator {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeded(seed);
        // 60..80 bpm
        let beat_ms = 60_000.0 / rng.gen_range(60.0..80.0);
        EcgGenerator {
            rng,
            next_index: 0,
            beat_ms,
        }
    }

    fn waveform(&self, t_ms: f64) -> f64 {
        let phase = (t_ms % self.beat_ms) / self.beat_ms;
        // (amplitude mV, centre in beat phase, width in beat phase)
        const WAVES: [(f64, f64, f64); 5] = [
            (0.12, 0.18, 0.025),  // P
            (-0.10, 0.30, 0.008), // Q
            (1.10, 0.32, 0.010),  // R
            (-0.20, 0.345, 0.009), // S
            (0.30, 0.55, 0.040),  // T
        ];
        WAVES
            .iter()
            .map(|&(a, c, w)| a * (-((phase - c) / w).powi(2) / 2.0).exp())
            .sum()
    }

    pub fn next_point(&mut self) -> EcgPoint {
        let period = ECG_BATCH_PERIOD_MS / ECG_POINTS_PER_BATCH as f64;
        let timestamp_ms = self.next_index as f64 * period;
        self.next_index += 1;
        let noise = self.rng.gen_range(-0.02..0.02);
        EcgPoint {
            timestamp_ms,
            voltage_mv: self.waveform(timestamp_ms) + noise,
        }
    }

    pub fn next_batch(&mut self) -> Vec<EcgPoint> {
        (0..ECG_POINTS_PER_BATCH).map(|_| self.next_point()).collect()
    }
}

/// `timestamp,voltage;` per point.
pub fn serialize_batch(points: &[EcgPoint]) -> String {
    let mut s = String::with_capacity(points.len() * 18);
    for p in points {
        s.push_str(&format!("{:.2},{:.4};", p.timestamp_ms, p.voltage_mv));
    }
    s
}

pub fn ecg_batches(stream_seconds: f64) -> usize {
    (stream_seconds * 1000.0 / ECG_BATCH_PERIOD_MS).ceil().max(0.0) as usize
}

#[derive(Debug, Clone)]
pub struct EcgRun {
    pub records: Vec<BenchRecord>,
    pub clients: usize,
    pub batches_per_client: usize,
    pub verified: usize,
    pub wall: Duration,
    pub stream_seconds: f64,
}

impl EcgRun {
    /// Wall-clock seconds spent per second of streamed data.
    pub fn normalized(&self) -> f64 {
        if self.stream_seconds <= 0.0 {
            return 0.0;
        }
        self.wall.as_secs_f64() / self.stream_seconds
    }

    pub fn points(&self) -> usize {
        self.verified * ECG_POINTS_PER_BATCH
    }
}

pub fn ecg_client_id(client: usize) -> Vec<u8> {
    format!("ecg-client-{client:04}").into_bytes()
}

pub const ECG_SINK_ID: &[u8] = b"ecg-sink";

/// Streams synthetic ECG batches from `n_clients` concurrent clients through a
/// listen-mode daemon at `daemon`, re-encrypting every batch from the client's
/// key to the sink key and checking the result.
pub fn bench_ecg_stream(
    daemon: SocketAddr,
    n_clients: usize,
    stream_seconds: f64,
    seed: u64,
    paced: bool,
) -> Result<EcgRun, BenchError> {
    let batches = ecg_batches(stream_seconds);
    if n_clients == 0 {
        return Ok(EcgRun {
            records: Vec::new(),
            clients: 0,
            batches_per_client: batches,
            verified: 0,
            wall: Duration::ZERO,
            stream_seconds,
        });
    }
    let mut rng = seeded(seed);
    let sink = SymmetricKey::new(rng.gen());
    let client_keys: Vec<SymmetricKey> = (0..n_clients).map(|_| SymmetricKey::new(rng.gen())).collect();

    let connect = || -> Result<Client, BenchError> {
        let stream = TcpStream::connect(daemon)?;
        Ok(Client::from_connection(Connection::from_stream(stream)?))
    };
    let mut setup = connect()?;
    setup.save(ECG_SINK_ID, sink.as_bytes())?;
    for (i, key) in client_keys.iter().enumerate() {
        setup.save(&ecg_client_id(i), key.as_bytes())?;
    }
    drop(setup);

    let start = Instant::now();
    let results: Vec<Result<(Vec<BenchRecord>, usize), BenchError>> = thread::scope(|scope| {
        let handles: Vec<_> = client_keys
            .iter()
            .enumerate()
            .map(|(i, key)| {
                let sink = &sink;
                let connect = &connect;
                scope.spawn(move || -> Result<(Vec<BenchRecord>, usize), BenchError> {
                    let mut client = connect()?;
                    let mut ecg = EcgGenerator::new(seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let mut iv_rng = seeded(seed.wrapping_add(i as u64 + 1));
                    let id = ecg_client_id(i);
                    let begin = Instant::now();
                    let mut records = Vec::with_capacity(batches);
                    let mut verified = 0;
                    for b in 0..batches {
                        if paced {
                            let due = Duration::from_secs_f64(b as f64 * ECG_BATCH_PERIOD_MS / 1000.0);
                            if let Some(wait) = due.checked_sub(begin.elapsed()) {
                                thread::sleep(wait);
                            }
                        }
                        let text = serialize_batch(&ecg.next_batch());
                        let t = Instant::now();
                        let iv: [u8; 16] = iv_rng.gen();
                        let cipher = crypto::encrypt_with_iv(key, &iv, text.as_bytes());
                        let reply = client.reencrypt(&id, ECG_SINK_ID, &cipher.to_bytes())?;
                        let envelope = crypto::CipherEnvelope::from_bytes(&reply)
                            .map_err(|e| BenchError::Verification(e.to_string()))?;
                        let plain = crypto::decrypt(sink, &envelope)
                            .map_err(|e| BenchError::Verification(format!("batch {b}: {e}")))?;
                        let elapsed = t.elapsed();
                        if plain != text.as_bytes() {
                            return Err(BenchError::Verification(format!("client {i} batch {b} mismatch")));
                        }
                        verified += 1;
                        records.push(BenchRecord::new(
                            "ecg_stream",
                            "batch",
                            text.len(),
                            b,
                            elapsed,
                            n_clients as u64,
                        ));
                    }
                    Ok((records, verified))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(BenchError::Verification("client thread panicked".into())))
            })
            .collect()
    });
    let wall = start.elapsed();

    let mut records = Vec::new();
    let mut verified = 0;
    for r in results {
        let (recs, ok) = r?;
        records.extend(recs);
        verified += ok;
    }
    Ok(EcgRun {
        records,
        clients: n_clients,
        batches_per_client: batches,
        verified,
        wall,
        stream_seconds,
    })
}

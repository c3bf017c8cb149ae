//! The request-serving daemon and its client side.
//!
//! One owner thread holds the [`Cache`] and answers requests strictly one at
//! a time. Connection threads read frames and hand them to the owner over a
//! channel, waiting for each reply before reading the next frame, so replies
//! on a connection are never reordered.

pub mod client;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;
use std::{fmt, io};

use log::{debug, info, warn};
use thiserror::Error;

use crate::cache::{Backend, Cache, CacheConfig, CacheError};
use crate::crypto::{self, CipherEnvelope, CryptoError, SymmetricKey};
use crate::store::{SecureStore, StoreError};
use crate::transport::{self, Connection, Endpoint, Mode, TransportError};
use crate::wire::{Op, WireError, WireFrame};

/// Every failed request is reported with exactly one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    NotFound,
    BadRequest,
    CryptoFail,
    StoreFail,
    TooLarge,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 5] = [
        ErrorCode::NotFound,
        ErrorCode::BadRequest,
        ErrorCode::CryptoFail,
        ErrorCode::StoreFail,
        ErrorCode::TooLarge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::NotFound => "NOT_FOUND",
            ErrorCode::BadRequest => "BAD_REQUEST",
            ErrorCode::CryptoFail => "CRYPTO_FAIL",
            ErrorCode::StoreFail => "STORE_FAIL",
            ErrorCode::TooLarge => "TOO_LARGE",
        }
    }

    pub fn parse(s: &[u8]) -> Option<ErrorCode> {
        ErrorCode::ALL.into_iter().find(|c| c.as_str().as_bytes() == s)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A failed request: a code plus a human-readable message that never carries
/// stored values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestError {
    pub code: ErrorCode,
    pub message: String,
}

impl RequestError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        RequestError {
            code,
            message: message.into(),
        }
    }

    /// `ERR|<code>|<message>`, both fields base64 like every other field.
    pub fn to_frame(&self) -> WireFrame {
        WireFrame::new(
            Op::Err,
            vec![self.code.as_str().as_bytes().to_vec(), self.message.as_bytes().to_vec()],
        )
    }
}

impl From<CacheError> for RequestError {
    fn from(e: CacheError) -> Self {
        let code = match &e {
            CacheError::NotFound => ErrorCode::NotFound,
            CacheError::IdTooLong { .. } | CacheError::ValueTooLong { .. } => ErrorCode::TooLarge,
            CacheError::EmptyId | CacheError::InvalidConfig(_) => ErrorCode::BadRequest,
            CacheError::Store(_) => ErrorCode::StoreFail,
        };
        RequestError::new(code, e.to_string())
    }
}

impl From<CryptoError> for RequestError {
    fn from(e: CryptoError) -> Self {
        RequestError::new(ErrorCode::CryptoFail, e.to_string())
    }
}

impl From<WireError> for RequestError {
    fn from(e: WireError) -> Self {
        let code = match e {
            WireError::FrameTooLarge { .. } => ErrorCode::TooLarge,
            _ => ErrorCode::BadRequest,
        };
        RequestError::new(code, e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Quit,
}

/// Protocol semantics over a cache, independent of any socket.
pub struct Service<B> {
    cache: Cache<B>,
    max_frame: usize,
}

impl<B: Backend> Service<B> {
    pub fn new(cache: Cache<B>, max_frame: usize) -> Self {
        Service { cache, max_frame }
    }

    pub fn cache(&self) -> &Cache<B> {
        &self.cache
    }

    pub fn into_cache(self) -> Cache<B> {
        self.cache
    }

    /// Parses one raw line and produces the serialized reply.
    pub fn handle_line(&mut self, line: &[u8]) -> (Vec<u8>, Control) {
        let (reply, control) = match WireFrame::parse(line, self.max_frame) {
            Ok(frame) => {
                debug!(
                    "request {} with {} field(s), {} bytes",
                    frame.op,
                    frame.fields.len(),
                    line.len()
                );
                let control = if frame.op == Op::Quit && frame.fields.is_empty() {
                    Control::Quit
                } else {
                    Control::Continue
                };
                (self.dispatch(&frame), control)
            }
            Err(e) => (RequestError::from(e).to_frame(), Control::Continue),
        };
        let bytes = match reply.serialize(self.max_frame) {
            Ok(bytes) => bytes,
            Err(e) => RequestError::from(e)
                .to_frame()
                .serialize(usize::MAX)
                .expect("error frame is well-formed"),
        };
        (bytes, control)
    }

    pub fn dispatch(&mut self, frame: &WireFrame) -> WireFrame {
        match self.execute(frame) {
            Ok(fields) => WireFrame::ok(fields),
            Err(e) => {
                debug!("request {} failed: {}", frame.op, e.code);
                e.to_frame()
            }
        }
    }

    fn execute(&mut self, frame: &WireFrame) -> Result<Vec<Vec<u8>>, RequestError> {
        let arity = |n: usize| {
            if frame.fields.len() == n {
                Ok(())
            } else {
                Err(RequestError::new(
                    ErrorCode::BadRequest,
                    format!("{} takes {n} field(s), got {}", frame.op, frame.fields.len()),
                ))
            }
        };
        match &frame.op {
            Op::Ping | Op::Quit => {
                arity(0)?;
                Ok(vec![])
            }
            Op::Save => {
                arity(2)?;
                self.cache.save_object(&frame.fields[0], &frame.fields[1])?;
                Ok(vec![])
            }
            Op::Query => {
                arity(1)?;
                Ok(vec![self.cache.query(&frame.fields[0])?])
            }
            Op::Reenc => {
                arity(3)?;
                let from = self.load_key(&frame.fields[0])?;
                let to = self.load_key(&frame.fields[1])?;
                let envelope = CipherEnvelope::from_bytes(&frame.fields[2])?;
                let out = crypto::reencrypt(&from, &to, &envelope)?;
                Ok(vec![out.to_bytes()])
            }
            Op::Ok | Op::Err | Op::Unknown(_) => Err(RequestError::new(
                ErrorCode::BadRequest,
                format!("unsupported operation {:?}", frame.op.as_str()),
            )),
        }
    }

    fn load_key(&mut self, id: &[u8]) -> Result<SymmetricKey, RequestError> {
        let mut bytes = self.cache.query(id)?;
        let key = SymmetricKey::try_from(bytes.as_slice()).map_err(|_| {
            RequestError::new(ErrorCode::CryptoFail, "stored value is not a 32-byte key")
        });
        bytes.iter_mut().for_each(|b| *b = 0);
        key
    }
}

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("cache: {0}")]
    Cache(#[from] CacheError),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("daemon thread panicked")]
    Panicked,
}

#[derive(Debug, Clone)]
pub struct DaemonConfig {
    pub endpoint: Endpoint,
    pub store_dir: PathBuf,
    pub keyfile: PathBuf,
    pub cache: CacheConfig,
    pub max_frame: usize,
    /// Reverse-connect: how long one dial attempt may take.
    pub connect_timeout: Duration,
    /// Reverse-connect: pause between failed dials.
    pub retry_interval: Duration,
}

impl DaemonConfig {
    pub fn new(endpoint: Endpoint, store_dir: PathBuf, keyfile: PathBuf, cache: CacheConfig) -> Self {
        DaemonConfig {
            endpoint,
            store_dir,
            keyfile,
            cache,
            max_frame: crate::wire::DEFAULT_MAX_FRAME,
            connect_timeout: transport::DEFAULT_CONNECT_TIMEOUT,
            retry_interval: Duration::from_millis(50),
        }
    }
}

struct Request {
    line: Vec<u8>,
    reply: mpsc::Sender<Reply>,
}

struct Reply {
    bytes: Vec<u8>,
    control: Control,
    /// Dropped by the connection thread once the reply is written, so QUIT
    /// does not stop the process before its OK reaches the peer.
    _written: Option<mpsc::Sender<()>>,
}

/// A running daemon.
pub struct DaemonHandle {
    local_addr: Option<SocketAddr>,
    shutdown: Arc<AtomicBool>,
    owner: JoinHandle<Result<(), DaemonError>>,
}

impl DaemonHandle {
    /// Bound address in listen mode.
    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.local_addr
    }

    pub fn shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }

    pub fn is_finished(&self) -> bool {
        self.owner.is_finished()
    }

    /// Waits for the daemon to stop (after QUIT or [`DaemonHandle::shutdown`]).
    pub fn join(self) -> Result<(), DaemonError> {
        self.owner.join().map_err(|_| DaemonError::Panicked)?
    }
}

/// Runs the daemon on the calling thread until QUIT.
pub fn run_daemon(cfg: DaemonConfig) -> Result<(), DaemonError> {
    spawn_daemon(cfg)?.join()
}

/// Opens the store, builds the cache and starts serving in the background.
pub fn spawn_daemon(cfg: DaemonConfig) -> Result<DaemonHandle, DaemonError> {
    let store = SecureStore::open(&cfg.store_dir, &cfg.keyfile)?;
    let cache = Cache::init(cfg.cache, store)?;
    let max_frame = cfg_max_frame(&cfg);
    spawn_service(cfg, Service::new(cache, max_frame))
}

fn cfg_max_frame(cfg: &DaemonConfig) -> usize {
    cfg.max_frame.max(1)
}

/// Serves an already-built [`Service`] per `cfg.endpoint`.
pub fn spawn_service<B>(cfg: DaemonConfig, mut service: Service<B>) -> Result<DaemonHandle, DaemonError>
where
    B: Backend + Send + 'static,
{
    let shutdown = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel::<Request>();
    let max_frame = cfg_max_frame(&cfg);

    let local_addr = match cfg.endpoint.mode {
        Mode::Listen => {
            let listener = cfg.endpoint.bind()?;
            let addr = listener.local_addr()?;
            info!("listening on {addr}");
            listener.set_nonblocking(true)?;
            let flag = shutdown.clone();
            thread::Builder::new()
                .name("kevlar-accept".into())
                .spawn(move || accept_loop(listener, tx, flag, max_frame))?;
            Some(addr)
        }
        Mode::ReverseConnect => {
            info!(
                "dialing out to {}:{}",
                cfg.endpoint.host, cfg.endpoint.port
            );
            let flag = shutdown.clone();
            let endpoint = cfg.endpoint.clone();
            let (timeout, retry) = (cfg.connect_timeout, cfg.retry_interval);
            thread::Builder::new()
                .name("kevlar-dial".into())
                .spawn(move || dial_loop(endpoint, timeout, retry, tx, flag, max_frame))?;
            None
        }
    };

    let flag = shutdown.clone();
    let owner = thread::Builder::new().name("kevlar-owner".into()).spawn(move || {
        loop {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            match rx.recv_timeout(Duration::from_millis(50)) {
                Ok(req) => {
                    let (bytes, control) = service.handle_line(&req.line);
                    let (written_tx, written_rx) = mpsc::channel();
                    let _written = (control == Control::Quit).then_some(written_tx);
                    let _ = req.reply.send(Reply { bytes, control, _written });
                    if control == Control::Quit {
                        let _ = written_rx.recv_timeout(Duration::from_secs(2));
                        info!("QUIT received, shutting down");
                        flag.store(true, Ordering::SeqCst);
                        break;
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        Ok(())
    })?;

    Ok(DaemonHandle {
        local_addr,
        shutdown,
        owner,
    })
}

fn accept_loop(
    listener: std::net::TcpListener,
    tx: mpsc::Sender<Request>,
    shutdown: Arc<AtomicBool>,
    max_frame: usize,
) {
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let conn = stream
                    .set_nonblocking(false)
                    .map_err(TransportError::from)
                    .and_then(|_| Connection::from_stream(stream));
                match conn {
                    Ok(conn) => {
                        let tx = tx.clone();
                        let flag = shutdown.clone();
                        let spawned = thread::Builder::new()
                            .name(format!("kevlar-conn-{peer}"))
                            .spawn(move || serve_connection(conn.with_max_frame(max_frame), &tx, &flag));
                        if let Err(e) = spawned {
                            warn!("could not spawn connection thread: {e}");
                        }
                    }
                    Err(e) => warn!("dropping connection from {peer}: {e}"),
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn dial_loop(
    endpoint: Endpoint,
    timeout: Duration,
    retry: Duration,
    tx: mpsc::Sender<Request>,
    shutdown: Arc<AtomicBool>,
    max_frame: usize,
) {
    while !shutdown.load(Ordering::SeqCst) {
        match transport::net_connect(&endpoint, timeout) {
            Ok(conn) => {
                info!("connected to {}", conn.peer());
                serve_connection(conn.with_max_frame(max_frame), &tx, &shutdown);
            }
            Err(e) => {
                debug!("dial failed: {e}");
                thread::sleep(retry);
            }
        }
    }
}

/// Request/response loop for one peer. Returns when the peer leaves, sends
/// QUIT, violates the frame limit, or the daemon stops.
fn serve_connection(mut conn: Connection, tx: &mpsc::Sender<Request>, shutdown: &AtomicBool) {
    // Periodic wakeups so a stopped daemon does not leave readers parked.
    let _ = conn.set_read_timeout(Some(Duration::from_millis(200)));
    let peer = conn.peer();
    loop {
        let line = match conn.receive_frame() {
            Ok(line) => line,
            Err(TransportError::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
            {
                if shutdown.load(Ordering::SeqCst) {
                    break;
                }
                continue;
            }
            Err(TransportError::PeerClosed) => {
                debug!("{peer} closed the connection");
                break;
            }
            Err(e) => {
                warn!("closing connection to {peer}: {e}");
                break;
            }
        };
        let (reply_tx, reply_rx) = mpsc::channel();
        if tx.send(Request { line, reply: reply_tx }).is_err() {
            break;
        }
        let Ok(reply) = reply_rx.recv() else { break };
        if let Err(e) = conn.send(&reply.bytes) {
            debug!("reply to {peer} failed: {e}");
            break;
        }
        if reply.control == Control::Quit {
            break;
        }
    }
    conn.disconnect();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{MemoryBackend, Policy};
    use crate::wire::DEFAULT_MAX_FRAME;

    fn service() -> Service<MemoryBackend> {
        let config = CacheConfig::new(4, 8, 16, 64, Policy::Lru).unwrap();
        Service::new(Cache::init(config, MemoryBackend::new()).unwrap(), DEFAULT_MAX_FRAME)
    }

    fn req(op: Op, fields: &[&[u8]]) -> WireFrame {
        WireFrame::new(op, fields.iter().map(|f| f.to_vec()).collect())
    }

    fn err_code(frame: &WireFrame) -> ErrorCode {
        assert_eq!(frame.op, Op::Err, "{frame:?}");
        ErrorCode::parse(&frame.fields[0]).unwrap()
    }

    #[test]
    fn ping_and_quit() {
        let mut s = service();
        assert_eq!(s.handle_line(b"PING\n"), (b"OK\n".to_vec(), Control::Continue));
        assert_eq!(s.handle_line(b"QUIT\n"), (b"OK\n".to_vec(), Control::Quit));
        assert_eq!(err_code(&s.dispatch(&req(Op::Ping, &[b"x"]))), ErrorCode::BadRequest);
    }

    #[test]
    fn save_then_query() {
        let mut s = service();
        assert_eq!(s.dispatch(&req(Op::Save, &[b"k", b"value"])), WireFrame::ok(vec![]));
        assert_eq!(
            s.dispatch(&req(Op::Query, &[b"k"])),
            WireFrame::ok(vec![b"value".to_vec()])
        );
        assert_eq!(err_code(&s.dispatch(&req(Op::Query, &[b"nope"]))), ErrorCode::NotFound);
    }

    #[test]
    fn error_mapping() {
        let mut s = service();
        assert_eq!(err_code(&s.dispatch(&req(Op::Save, &[b"k"]))), ErrorCode::BadRequest);
        assert_eq!(err_code(&s.dispatch(&req(Op::Save, &[&[1; 17], b"v"]))), ErrorCode::TooLarge);
        assert_eq!(err_code(&s.dispatch(&req(Op::Save, &[b"k", &[1; 65]]))), ErrorCode::TooLarge);
        assert_eq!(err_code(&s.dispatch(&req(Op::Save, &[b"", b"v"]))), ErrorCode::BadRequest);
        assert_eq!(err_code(&s.dispatch(&req(Op::Ok, &[]))), ErrorCode::BadRequest);
        assert_eq!(
            err_code(&s.dispatch(&req(Op::Unknown("XYZ".into()), &[]))),
            ErrorCode::BadRequest
        );
        let (reply, control) = s.handle_line(b"XYZ|!!\n");
        assert_eq!(control, Control::Continue);
        let frame = WireFrame::parse(&reply, DEFAULT_MAX_FRAME).unwrap();
        assert_eq!(err_code(&frame), ErrorCode::BadRequest);
        assert!(reply.starts_with(b"ERR|QkFEX1JFUVVFU1Q=|"));
    }

    #[test]
    fn reenc_roundtrip() {
        let mut s = service();
        let (k1, k2) = (SymmetricKey::generate(), SymmetricKey::generate());
        s.dispatch(&req(Op::Save, &[b"k1", k1.as_bytes()]));
        s.dispatch(&req(Op::Save, &[b"k2", k2.as_bytes()]));
        let c = crypto::encrypt(&k1, b"ecg batch").to_bytes();
        let reply = s.dispatch(&req(Op::Reenc, &[b"k1", b"k2", &c]));
        assert_eq!(reply.op, Op::Ok);
        let c2 = CipherEnvelope::from_bytes(&reply.fields[0]).unwrap();
        assert_eq!(crypto::decrypt(&k2, &c2).unwrap(), b"ecg batch");
        assert_eq!(s.cache().stats().hits, 2);
    }

    #[test]
    fn reenc_failures() {
        let mut s = service();
        let k1 = SymmetricKey::generate();
        s.dispatch(&req(Op::Save, &[b"k1", k1.as_bytes()]));
        s.dispatch(&req(Op::Save, &[b"short", b"12345"]));
        let c = crypto::encrypt(&k1, b"m").to_bytes();
        assert_eq!(err_code(&s.dispatch(&req(Op::Reenc, &[b"short", b"k1", &c]))), ErrorCode::CryptoFail);
        assert_eq!(err_code(&s.dispatch(&req(Op::Reenc, &[b"k1", b"none", &c]))), ErrorCode::NotFound);
        assert_eq!(
            err_code(&s.dispatch(&req(Op::Reenc, &[b"k1", b"k1", &c[..24]]))),
            ErrorCode::CryptoFail
        );
        assert_eq!(err_code(&s.dispatch(&req(Op::Reenc, &[b"k1", b"k1"]))), ErrorCode::BadRequest);
    }

    #[test]
    fn oversized_reply_becomes_too_large() {
        let config = CacheConfig::new(4, 8, 16, 64, Policy::Lru).unwrap();
        let mut backend = MemoryBackend::new();
        backend.write(b"k", &[b'A'; 40]).unwrap();
        let mut s = Service::new(Cache::init(config, backend).unwrap(), 40);
        let (reply, _) = s.handle_line(b"QUERY|aw==\n");
        let frame = WireFrame::parse(&reply, usize::MAX).unwrap();
        assert_eq!(err_code(&frame), ErrorCode::TooLarge);
    }
}

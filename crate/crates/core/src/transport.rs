//! TCP connection lifecycle and newline frame extraction.
//!
//! The default connection model is inverted: the untrusted side listens and
//! the daemon dials out to it ([`Mode::ReverseConnect`]). [`Mode::Listen`]
//! flips this for tests and local tooling.

use std::fmt;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::wire::DEFAULT_MAX_FRAME;

pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
const READ_CHUNK: usize = 8192;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("connection timed out")]
    ConnectTimeout,
    #[error("connection refused")]
    Refused,
    #[error("bind failed: {0}")]
    Bind(#[source] io::Error),
    #[error("peer closed the connection")]
    PeerClosed,
    #[error("frame exceeds {max} bytes")]
    FrameTooLarge { max: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    ReverseConnect,
    Listen,
}

impl FromStr for Mode {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reverse" | "reverse-connect" | "reverse_connect" => Ok(Mode::ReverseConnect),
            "listen" => Ok(Mode::Listen),
            other => Err(TransportError::InvalidEndpoint(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::ReverseConnect => "reverse",
            Mode::Listen => "listen",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
    pub mode: Mode,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16, mode: Mode) -> Result<Self, TransportError> {
        let host = host.into();
        if host.is_empty() {
            return Err(TransportError::InvalidEndpoint("empty host".into()));
        }
        if port == 0 && mode == Mode::ReverseConnect {
            return Err(TransportError::InvalidEndpoint("port must be 1..65535".into()));
        }
        Ok(Endpoint { host, port, mode })
    }

    /// Parses `host:port`.
    pub fn parse(addr: &str, mode: Mode) -> Result<Self, TransportError> {
        let (host, port) = addr
            .rsplit_once(':')
            .ok_or_else(|| TransportError::InvalidEndpoint(format!("{addr:?} is not host:port")))?;
        let port = port
            .parse::<u16>()
            .map_err(|_| TransportError::InvalidEndpoint(format!("bad port in {addr:?}")))?;
        let host = host.trim_start_matches('[').trim_end_matches(']');
        Endpoint::new(host, port, mode)
    }

    pub fn addrs(&self) -> Result<Vec<SocketAddr>, TransportError> {
        let addrs: Vec<_> = (self.host.as_str(), self.port)
            .to_socket_addrs()
            .map_err(|e| TransportError::InvalidEndpoint(format!("{}: {e}", self.host)))?
            .collect();
        if addrs.is_empty() {
            return Err(TransportError::InvalidEndpoint(format!("{} resolves to nothing", self.host)));
        }
        Ok(addrs)
    }

    /// Binds a listening socket on this endpoint's address.
    pub fn bind(&self) -> Result<TcpListener, TransportError> {
        TcpListener::bind((self.host.as_str(), self.port)).map_err(TransportError::Bind)
    }
}

/// An open connection with a frame reassembly buffer.
#[derive(Debug)]
pub struct Connection {
    stream: Option<TcpStream>,
    peer: SocketAddr,
    buf: Vec<u8>,
    scanned: usize,
    max_frame: usize,
}

/// Opens a connection per `endpoint.mode`: dial out for reverse-connect, or
/// bind and accept exactly one peer for listen.
pub fn net_connect(endpoint: &Endpoint, timeout: Duration) -> Result<Connection, TransportError> {
    match endpoint.mode {
        Mode::ReverseConnect => dial(endpoint, timeout),
        Mode::Listen => {
            let listener = endpoint.bind()?;
            accept_timeout(&listener, timeout)
        }
    }
}

fn dial(endpoint: &Endpoint, timeout: Duration) -> Result<Connection, TransportError> {
    let mut last = TransportError::Refused;
    for addr in endpoint.addrs()? {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(stream) => return Connection::from_stream(stream),
            Err(e) => {
                last = match e.kind() {
                    io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => TransportError::ConnectTimeout,
                    io::ErrorKind::ConnectionRefused => TransportError::Refused,
                    _ => TransportError::Io(e),
                }
            }
        }
    }
    Err(last)
}

/// Accepts one peer from `listener`, giving up after `timeout`.
pub fn accept_timeout(listener: &TcpListener, timeout: Duration) -> Result<Connection, TransportError> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + timeout;
    let result = loop {
        match listener.accept() {
            Ok((stream, _)) => break Ok(stream),
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    break Err(TransportError::ConnectTimeout);
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => break Err(e.into()),
        }
    };
    listener.set_nonblocking(false)?;
    let stream = result?;
    stream.set_nonblocking(false)?;
    Connection::from_stream(stream)
}

fn closed_kind(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::BrokenPipe
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::NotConnected
            | io::ErrorKind::UnexpectedEof
    )
}

impl Connection {
    pub fn from_stream(stream: TcpStream) -> Result<Self, TransportError> {
        let peer = stream.peer_addr()?;
        stream.set_nodelay(true)?;
        Ok(Connection {
            stream: Some(stream),
            peer,
            buf: Vec::new(),
            scanned: 0,
            max_frame: DEFAULT_MAX_FRAME,
        })
    }

    pub fn with_max_frame(mut self, max_frame: usize) -> Self {
        self.max_frame = max_frame.max(1);
        self
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }

    pub fn is_open(&self) -> bool {
        self.stream.is_some()
    }

    pub fn max_frame(&self) -> usize {
        self.max_frame
    }

    /// Writes all of `data`.
    pub fn send(&mut self, data: &[u8]) -> Result<(), TransportError> {
        let stream = self.stream.as_mut().ok_or(TransportError::PeerClosed)?;
        stream.write_all(data).map_err(|e| {
            if closed_kind(&e) {
                TransportError::PeerClosed
            } else {
                TransportError::Io(e)
            }
        })
    }

    /// Blocks until a full `\n`-terminated line is available and returns it,
    /// terminator included. Bytes after it stay buffered.
    ///
    /// A line longer than the frame limit closes the connection.
    pub fn receive_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        loop {
            if let Some(pos) = self.buf[self.scanned..].iter().position(|&b| b == b'\n') {
                let end = self.scanned + pos + 1;
                if end > self.max_frame {
                    return Err(self.too_large());
                }
                let frame: Vec<u8> = self.buf.drain(..end).collect();
                self.scanned = 0;
                return Ok(frame);
            }
            self.scanned = self.buf.len();
            if self.buf.len() >= self.max_frame {
                return Err(self.too_large());
            }
            let want = (self.max_frame - self.buf.len()).min(READ_CHUNK);
            let stream = self.stream.as_mut().ok_or(TransportError::PeerClosed)?;
            let start = self.buf.len();
            self.buf.resize(start + want, 0);
            let n = match stream.read(&mut self.buf[start..]) {
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {
                    self.buf.truncate(start);
                    continue;
                }
                Err(e) => {
                    self.buf.truncate(start);
                    return Err(if closed_kind(&e) {
                        TransportError::PeerClosed
                    } else {
                        TransportError::Io(e)
                    });
                }
            };
            self.buf.truncate(start + n);
            if n == 0 {
                return Err(TransportError::PeerClosed);
            }
        }
    }

    fn too_large(&mut self) -> TransportError {
        self.disconnect();
        TransportError::FrameTooLarge { max: self.max_frame }
    }

    /// Closes the connection. Calling it again is a no-op.
    pub fn disconnect(&mut self) {
        if let Some(stream) = self.stream.take() {
            let _ = stream.shutdown(Shutdown::Both);
        }
        self.buf.clear();
        self.scanned = 0;
    }

    /// Sets a read timeout on the underlying socket.
    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> Result<(), TransportError> {
        if let Some(stream) = &self.stream {
            stream.set_read_timeout(timeout)?;
        }
        Ok(())
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.disconnect();
    }
}

//! The untrusted application's side of the protocol.

use std::time::Duration;

use thiserror::Error;

use super::ErrorCode;
use crate::transport::{self, Connection, Endpoint, Mode, TransportError};
use crate::wire::{Op, WireError, WireFrame, DEFAULT_MAX_FRAME};

/// Process exit codes used by the client CLI.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const CONNECT: i32 = 3;
    pub const NOT_FOUND: i32 = 4;
    pub const OTHER_ERR: i32 = 5;
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("could not reach the daemon: {0}")]
    Connect(#[source] TransportError),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("malformed reply: {0}")]
    Reply(#[from] WireError),
    #[error("unexpected reply op {0}")]
    UnexpectedReply(String),
    #[error("{code}: {message}")]
    Remote { code: ErrorCode, message: String },
}

impl ClientError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Connect(_) => exit::CONNECT,
            ClientError::Remote {
                code: ErrorCode::NotFound,
                ..
            } => exit::NOT_FOUND,
            _ => exit::OTHER_ERR,
        }
    }
}

pub struct Client {
    conn: Connection,
    max_frame: usize,
}

impl Client {
    /// Connects to a daemon. `daemon_endpoint.mode` is the DAEMON's mode:
    /// for reverse-connect the client binds the endpoint and waits for the
    /// daemon to dial in; for listen the client dials the daemon.
    pub fn connect(daemon_endpoint: &Endpoint, timeout: Duration) -> Result<Self, ClientError> {
        let ours = Endpoint {
            mode: match daemon_endpoint.mode {
                Mode::ReverseConnect => Mode::Listen,
                Mode::Listen => Mode::ReverseConnect,
            },
            ..daemon_endpoint.clone()
        };
        let conn = transport::net_connect(&ours, timeout).map_err(ClientError::Connect)?;
        Ok(Client::from_connection(conn))
    }

    pub fn from_connection(conn: Connection) -> Self {
        Client {
            conn,
            max_frame: DEFAULT_MAX_FRAME,
        }
    }

    pub fn with_max_frame(mut self, max_frame: usize) -> Self {
        self.max_frame = max_frame;
        self
    }

    /// Sends one frame and waits for its reply. ERR replies become
    /// [`ClientError::Remote`].
    pub fn request(&mut self, frame: &WireFrame) -> Result<Vec<Vec<u8>>, ClientError> {
        let line = frame.serialize(self.max_frame)?;
        self.conn.send(&line)?;
        let reply = WireFrame::parse(&self.conn.receive_frame()?, usize::MAX)?;
        match reply.op {
            Op::Ok => Ok(reply.fields),
            Op::Err => {
                let code = reply
                    .fields
                    .first()
                    .and_then(|c| ErrorCode::parse(c))
                    .ok_or_else(|| ClientError::UnexpectedReply("ERR without a known code".into()))?;
                let message = reply
                    .fields
                    .get(1)
                    .map(|m| String::from_utf8_lossy(m).into_owned())
                    .unwrap_or_default();
                Err(ClientError::Remote { code, message })
            }
            other => Err(ClientError::UnexpectedReply(other.to_string())),
        }
    }

    pub fn ping(&mut self) -> Result<(), ClientError> {
        self.request(&WireFrame::new(Op::Ping, vec![])).map(drop)
    }

    pub fn quit(&mut self) -> Result<(), ClientError> {
        self.request(&WireFrame::new(Op::Quit, vec![])).map(drop)
    }

    pub fn save(&mut self, id: &[u8], value: &[u8]) -> Result<(), ClientError> {
        self.request(&WireFrame::new(Op::Save, vec![id.to_vec(), value.to_vec()]))
            .map(drop)
    }

    pub fn query(&mut self, id: &[u8]) -> Result<Vec<u8>, ClientError> {
        let fields = self.request(&WireFrame::new(Op::Query, vec![id.to_vec()]))?;
        single(fields)
    }

    /// Asks the daemon to move `cipher` from the key stored under `src_id` to
    /// the key stored under `dst_id`.
    pub fn reencrypt(&mut self, src_id: &[u8], dst_id: &[u8], cipher: &[u8]) -> Result<Vec<u8>, ClientError> {
        let fields = self.request(&WireFrame::new(
            Op::Reenc,
            vec![src_id.to_vec(), dst_id.to_vec(), cipher.to_vec()],
        ))?;
        single(fields)
    }

    pub fn connection_mut(&mut self) -> &mut Connection {
        &mut self.conn
    }
}

fn single(mut fields: Vec<Vec<u8>>) -> Result<Vec<u8>, ClientError> {
    if fields.len() != 1 {
        return Err(ClientError::UnexpectedReply(format!("OK with {} fields", fields.len())));
    }
    Ok(fields.pop().unwrap())
}

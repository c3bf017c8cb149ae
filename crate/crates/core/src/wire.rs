//! Base64 codec and protocol line framing.
//!
//! A frame is one line: `OP *("|" BASE64) "\n"`. Fields are always standard
//! padded base64, so neither `|` nor `\n` can occur inside them. Decoding is
//! strict (canonical padding and zero trailing bits only), which keeps
//! serialize/parse a bijection.

use std::fmt;

use thiserror::Error;

pub const DEFAULT_MAX_FRAME: usize = 1 << 20;

const ALPHABET: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
const INVALID: u8 = 0xFF;

const DECODE_TABLE: [u8; 256] = {
    let mut table = [INVALID; 256];
    let mut i = 0;
    while i < 64 {
        table[ALPHABET[i] as usize] = i as u8;
        i += 1;
    }
    table
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("invalid base64: {0}")]
    InvalidBase64(&'static str),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("frame of {len} bytes exceeds limit of {max}")]
    FrameTooLarge { len: usize, max: usize },
}

pub fn base64_encode(data: &[u8]) -> String {
    let mut out = Vec::with_capacity(data.len().div_ceil(3) * 4);
    let mut chunks = data.chunks_exact(3);
    for c in &mut chunks {
        let n = (u32::from(c[0]) << 16) | (u32::from(c[1]) << 8) | u32::from(c[2]);
        out.extend_from_slice(&[
            ALPHABET[(n >> 18) as usize & 63],
            ALPHABET[(n >> 12) as usize & 63],
            ALPHABET[(n >> 6) as usize & 63],
            ALPHABET[n as usize & 63],
        ]);
    }
    match *chunks.remainder() {
        [a] => {
            let n = u32::from(a) << 16;
            out.extend_from_slice(&[
                ALPHABET[(n >> 18) as usize & 63],
                ALPHABET[(n >> 12) as usize & 63],
                b'=',
                b'=',
            ]);
        }
        [a, b] => {
            let n = (u32::from(a) << 16) | (u32::from(b) << 8);
            out.extend_from_slice(&[
                ALPHABET[(n >> 18) as usize & 63],
                ALPHABET[(n >> 12) as usize & 63],
                ALPHABET[(n >> 6) as usize & 63],
                b'=',
            ]);
        }
        _ => {}
    }
    String::from_utf8(out).expect("base64 alphabet is ASCII")
}

/// Validates `text` and returns its padding count.
fn validate(text: &[u8]) -> Result<usize, WireError> {
    if !text.len().is_multiple_of(4) {
        return Err(WireError::InvalidBase64("length is not a multiple of 4"));
    }
    let Some(last) = text.rchunks_exact(4).next() else {
        return Ok(0);
    };
    let pad = match (last[2], last[3]) {
        (b'=', b'=') => 2,
        (_, b'=') => 1,
        _ => 0,
    };
    let data_len = text.len() - pad;
    if let Some(&b) = text[..data_len].iter().find(|&&b| DECODE_TABLE[b as usize] == INVALID) {
        return Err(if b == b'=' {
            WireError::InvalidBase64("misplaced padding")
        } else {
            WireError::InvalidBase64("byte outside the base64 alphabet")
        });
    }
    let tail = DECODE_TABLE[text[data_len - 1] as usize];
    let stray = match pad {
        2 => tail & 0x0F,
        1 => tail & 0x03,
        _ => 0,
    };
    if stray != 0 {
        return Err(WireError::InvalidBase64("non-zero trailing bits"));
    }
    Ok(pad)
}

pub fn base64_decode(text: &[u8]) -> Result<Vec<u8>, WireError> {
    let pad = validate(text)?;
    let mut out = Vec::with_capacity(text.len() / 4 * 3);
    for quad in text.chunks_exact(4) {
        let n = quad.iter().fold(0u32, |acc, &c| {
            let v = if c == b'=' { 0 } else { DECODE_TABLE[c as usize] };
            (acc << 6) | u32::from(v)
        });
        out.extend_from_slice(&[(n >> 16) as u8, (n >> 8) as u8, n as u8]);
    }
    out.truncate(out.len() - pad);
    Ok(out)
}

/// Decoded length of valid base64 `text`, computed without decoding.
pub fn base64_decode_length(text: &[u8]) -> Result<usize, WireError> {
    let pad = validate(text)?;
    Ok(text.len() / 4 * 3 - pad)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Op {
    Save,
    Query,
    Reenc,
    Ping,
    Quit,
    Ok,
    Err,
    /// Any other tag; carried through so the daemon can reject it.
    Unknown(String),
}

impl Op {
    pub fn as_str(&self) -> &str {
        match self {
            Op::Save => "SAVE",
            Op::Query => "QUERY",
            Op::Reenc => "REENC",
            Op::Ping => "PING",
            Op::Quit => "QUIT",
            Op::Ok => "OK",
            Op::Err => "ERR",
            Op::Unknown(tag) => tag,
        }
    }

    pub fn from_tag(tag: &str) -> Op {
        match tag {
            "SAVE" => Op::Save,
            "QUERY" => Op::Query,
            "REENC" => Op::Reenc,
            "PING" => Op::Ping,
            "QUIT" => Op::Quit,
            "OK" => Op::Ok,
            "ERR" => Op::Err,
            other => Op::Unknown(other.to_string()),
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn valid_tag(tag: &[u8]) -> bool {
    !tag.is_empty() && tag.iter().all(|&b| b.is_ascii_graphic() && b != b'|')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub op: Op,
    pub fields: Vec<Vec<u8>>,
}

impl WireFrame {
    pub fn new(op: Op, fields: Vec<Vec<u8>>) -> Self {
        WireFrame { op, fields }
    }

    pub fn ok(fields: Vec<Vec<u8>>) -> Self {
        WireFrame::new(Op::Ok, fields)
    }

    /// Serialized length, without building the line.
    pub fn encoded_len(&self) -> usize {
        self.op.as_str().len()
            + self
                .fields
                .iter()
                .map(|f| 1 + f.len().div_ceil(3) * 4)
                .sum::<usize>()
            + 1
    }

    pub fn serialize(&self, max_frame: usize) -> Result<Vec<u8>, WireError> {
        let tag = self.op.as_str();
        if !valid_tag(tag.as_bytes()) {
            return Err(WireError::InvalidFrame(format!("bad op tag {tag:?}")));
        }
        let len = self.encoded_len();
        if len > max_frame {
            return Err(WireError::FrameTooLarge { len, max: max_frame });
        }
        let mut line = Vec::with_capacity(len);
        line.extend_from_slice(tag.as_bytes());
        for field in &self.fields {
            line.push(b'|');
            line.extend_from_slice(base64_encode(field).as_bytes());
        }
        line.push(b'\n');
        Ok(line)
    }

    /// Parses one complete line, terminator included.
    pub fn parse(line: &[u8], max_frame: usize) -> Result<Self, WireError> {
        if line.len() > max_frame {
            return Err(WireError::FrameTooLarge {
                len: line.len(),
                max: max_frame,
            });
        }
        let body = line
            .strip_suffix(b"\n")
            .ok_or_else(|| WireError::InvalidFrame("missing newline terminator".into()))?;
        if body.contains(&b'\n') {
            return Err(WireError::InvalidFrame("embedded newline".into()));
        }
        let mut parts = body.split(|&b| b == b'|');
        let tag = parts.next().unwrap_or_default();
        if !valid_tag(tag) {
            return Err(WireError::InvalidFrame("empty or non-printable op tag".into()));
        }
        let op = Op::from_tag(std::str::from_utf8(tag).expect("ASCII tag"));
        let fields = parts
            .enumerate()
            .map(|(i, f)| {
                base64_decode(f).map_err(|e| WireError::InvalidFrame(format!("field {i}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(WireFrame { op, fields })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rfc4648_vectors() {
        let vectors: [(&str, &str); 7] = [
            ("", ""),
            ("f", "Zg=="),
            ("fo", "Zm8="),
            ("foo", "Zm9v"),
            ("foob", "Zm9vYg=="),
            ("fooba", "Zm9vYmE="),
            ("foobar", "Zm9vYmFy"),
        ];
        for (plain, enc) in vectors {
            assert_eq!(base64_encode(plain.as_bytes()), enc);
            assert_eq!(base64_decode(enc.as_bytes()).unwrap(), plain.as_bytes());
            assert_eq!(base64_decode_length(enc.as_bytes()).unwrap(), plain.len());
        }
    }

    #[test]
    fn strict_rejections() {
        for bad in ["Zg=", "Zg==!", "Zh==", "Zm9=", "Z===", "====", "Zg==Zg==", "Zm=v", "Zm9v\n", "Zg\0="] {
            assert!(base64_decode(bad.as_bytes()).is_err(), "{bad:?}");
            assert!(base64_decode_length(bad.as_bytes()).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn frame_examples() {
        let max = DEFAULT_MAX_FRAME;
        assert_eq!(WireFrame::new(Op::Ping, vec![]).serialize(max).unwrap(), b"PING\n");
        assert_eq!(
            WireFrame::new(Op::Query, vec![b"f".to_vec()]).serialize(max).unwrap(),
            b"QUERY|Zg==\n"
        );
        assert_eq!(
            WireFrame::ok(vec![b"foo".to_vec(), b"".to_vec()]).serialize(max).unwrap(),
            b"OK|Zm9v|\n"
        );
        assert_eq!(
            WireFrame::parse(b"QUERY|Zg==\n", max).unwrap(),
            WireFrame::new(Op::Query, vec![b"f".to_vec()])
        );
        assert_eq!(
            WireFrame::parse(b"XYZ|Zg==\n", max).unwrap().op,
            Op::Unknown("XYZ".into())
        );
    }

    #[test]
    fn frame_rejections() {
        let max = DEFAULT_MAX_FRAME;
        for bad in [
            &b"QUERY|Zg\x00==\n"[..],
            b"QUERY|Zg==",
            b"\n",
            b"|Zg==\n",
            b"QUERY|Zg=\n",
            b"QU ERY\n",
            b"PING\nPING\n",
            b"QUERY|Zg==\r\n",
        ] {
            assert!(
                matches!(WireFrame::parse(bad, max), Err(WireError::InvalidFrame(_))),
                "{bad:?}"
            );
        }
        assert_eq!(
            WireFrame::parse(b"PING\n", 4),
            Err(WireError::FrameTooLarge { len: 5, max: 4 })
        );
    }

    #[test]
    fn serialize_enforces_max_frame() {
        let f = WireFrame::ok(vec![vec![0; 30]]);
        let len = f.serialize(usize::MAX).unwrap().len();
        assert_eq!(len, f.encoded_len());
        assert!(f.serialize(len).is_ok());
        assert_eq!(f.serialize(len - 1), Err(WireError::FrameTooLarge { len, max: len - 1 }));
    }
}

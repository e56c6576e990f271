//! Length-prefixed binary frames exchanged between client and servers.
//!
//! Every frame is `"SPIR"`, a version byte, a type byte, the payload length
//! as a little-endian `u64`, then the payload. All integers in payloads are
//! little-endian `u64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::field::SymbolVector;
use crate::params::SchemeParams;

pub const MAGIC: [u8; 4] = *b"SPIR";
pub const VERSION: u8 = 1;
/// Frames larger than this are rejected before allocation.
pub const MAX_PAYLOAD: u64 = 1 << 30;

const TYPE_QUERY: u8 = 1;
const TYPE_FETCH: u8 = 2;
const TYPE_RESPONSE: u8 = 3;
const TYPE_ERROR: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum ErrorCode {
    HandshakeMismatch = 1,
    Malformed = 2,
    BadSession = 3,
    ColumnOutOfRange = 4,
    Internal = 5,
    /// The exact same query was already answered by this server.
    Replayed = 6,
}

/// The `(n, k, t, m, q, s)` block carried by a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub n: u64,
    pub k: u64,
    pub t: u64,
    pub m: u64,
    pub q: u64,
    pub s: u64,
}

impl From<&SchemeParams> for ParamBlock {
    fn from(p: &SchemeParams) -> Self {
        ParamBlock {
            n: p.n() as u64,
            k: p.k() as u64,
            t: p.t() as u64,
            m: p.m() as u64,
            q: p.q(),
            s: p.s() as u64,
        }
    }
}

impl ParamBlock {
    pub fn to_params(self) -> Result<SchemeParams> {
        let u = |x: u64| {
            usize::try_from(x)
                .map_err(|_| Error::MalformedFrame(format!("parameter {x} too large")))
        };
        SchemeParams::with_small_field(
            u(self.n)?,
            u(self.k)?,
            u(self.t)?,
            u(self.m)?,
            self.q,
            u(self.s)?,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryFrame {
    pub params: ParamBlock,
    pub fingerprint: [u8; 32],
    pub server: u64,
    pub sub_queries: Vec<SymbolVector>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Query(QueryFrame),
    Fetch {
        session: u64,
        columns: Vec<u64>,
    },
    /// Zero columns acknowledges a query.
    Response {
        session: u64,
        columns: Vec<SymbolVector>,
    },
    Error {
        code: u64,
        message: String,
    },
}

impl Message {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Message::Error {
            code: code as u64,
            message: message.into(),
        }
    }

    fn type_byte(&self) -> u8 {
        match self {
            Message::Query(_) => TYPE_QUERY,
            Message::Fetch { .. } => TYPE_FETCH,
            Message::Response { .. } => TYPE_RESPONSE,
            Message::Error { .. } => TYPE_ERROR,
        }
    }
}

fn put(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn encode_payload(msg: &Message) -> Vec<u8> {
    let mut buf = Vec::new();
    match msg {
        Message::Query(q) => {
            let p = q.params;
            for x in [p.n, p.k, p.t, p.m, p.q, p.s] {
                put(&mut buf, x);
            }
            buf.extend_from_slice(&q.fingerprint);
            put(&mut buf, q.server);
            put(&mut buf, q.sub_queries.len() as u64);
            for sub in &q.sub_queries {
                for &x in sub.as_slice() {
                    put(&mut buf, x);
                }
            }
        }
        Message::Fetch { session, columns } => {
            put(&mut buf, *session);
            put(&mut buf, columns.len() as u64);
            for &c in columns {
                put(&mut buf, c);
            }
        }
        Message::Response { session, columns } => {
            put(&mut buf, *session);
            put(&mut buf, columns.len() as u64);
            for col in columns {
                for &x in col.as_slice() {
                    put(&mut buf, x);
                }
            }
        }
        Message::Error { code, message } => {
            put(&mut buf, *code);
            buf.extend_from_slice(message.as_bytes());
        }
    }
    buf
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let payload = encode_payload(msg);
    let mut out = Vec::with_capacity(14 + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.type_byte());
    put(&mut out, payload.len() as u64);
    out.extend_from_slice(&payload);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl Cursor<'_> {
    fn u64(&mut self) -> Result<u64> {
        if self.buf.len() < 8 {
            return Err(Error::MalformedFrame("truncated payload".into()));
        }
        let (head, rest) = self.buf.split_at(8);
        self.buf = rest;
        Ok(u64::from_le_bytes(head.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::MalformedFrame("truncated payload".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn symbols(&mut self, n: usize) -> Result<SymbolVector> {
        if self.buf.len() / 8 < n {
            return Err(Error::MalformedFrame("truncated payload".into()));
        }
        (0..n)
            .map(|_| self.u64())
            .collect::<Result<Vec<_>>>()
            .map(SymbolVector)
    }

    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::MalformedFrame(format!(
                "{} trailing bytes",
                self.buf.len()
            )))
        }
    }
}

fn decode_payload(kind: u8, payload: &[u8]) -> Result<Message> {
    let mut c = Cursor { buf: payload };
    let msg = match kind {
        TYPE_QUERY => {
            let mut v = [0u64; 6];
            for x in &mut v {
                *x = c.u64()?;
            }
            let params = ParamBlock {
                n: v[0],
                k: v[1],
                t: v[2],
                m: v[3],
                q: v[4],
                s: v[5],
            };
            let derived = params.to_params()?;
            let fingerprint: [u8; 32] = c.bytes(32)?.try_into().expect("32 bytes");
            let server = c.u64()?;
            let alpha = c.u64()?;
            if alpha != derived.alpha() as u64 {
                return Err(Error::MalformedFrame(format!(
                    "query carries {alpha} sub-queries, parameters imply {}",
                    derived.alpha()
                )));
            }
            let len = derived.vector_len();
            let sub_queries = (0..derived.alpha())
                .map(|_| c.symbols(len))
                .collect::<Result<Vec<_>>>()?;
            if sub_queries
                .iter()
                .flat_map(|s| s.as_slice())
                .any(|&x| x >= params.q)
            {
                return Err(Error::MalformedFrame("symbol outside the field".into()));
            }
            Message::Query(QueryFrame {
                params,
                fingerprint,
                server,
                sub_queries,
            })
        }
        TYPE_FETCH => {
            let session = c.u64()?;
            let count = c.u64()?;
            if count > (c.buf.len() / 8) as u64 {
                return Err(Error::MalformedFrame("column count exceeds payload".into()));
            }
            let columns = (0..count).map(|_| c.u64()).collect::<Result<Vec<_>>>()?;
            Message::Fetch { session, columns }
        }
        TYPE_RESPONSE => {
            let session = c.u64()?;
            let count = c.u64()?;
            let columns = if count == 0 {
                Vec::new()
            } else {
                let symbols = (c.buf.len() / 8) as u64;
                if !c.buf.len().is_multiple_of(8) || !symbols.is_multiple_of(count) {
                    return Err(Error::MalformedFrame(
                        "response length is not a multiple of the column count".into(),
                    ));
                }
                let width = (symbols / count) as usize;
                (0..count)
                    .map(|_| c.symbols(width))
                    .collect::<Result<Vec<_>>>()?
            };
            Message::Response { session, columns }
        }
        TYPE_ERROR => {
            let code = c.u64()?;
            let message = String::from_utf8(c.buf.to_vec())
                .map_err(|_| Error::MalformedFrame("error message is not UTF-8".into()))?;
            c.buf = &[];
            Message::Error { code, message }
        }
        other => {
            return Err(Error::MalformedFrame(format!(
                "unknown message type {other}"
            )))
        }
    };
    c.finish()?;
    Ok(msg)
}

/// Decodes exactly one frame occupying all of `frame`.
pub fn decode(frame: &[u8]) -> Result<Message> {
    let mut r = frame;
    let msg = read_message(&mut r)?;
    if !r.is_empty() {
        return Err(Error::MalformedFrame("bytes after frame".into()));
    }
    Ok(msg)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()?;
    Ok(())
}

pub fn read_message<R: Read>(r: &mut R) -> Result<Message> {
    let mut header = [0u8; 14];
    r.read_exact(&mut header)?;
    if header[..4] != MAGIC {
        return Err(Error::MalformedFrame("bad magic".into()));
    }
    if header[4] != VERSION {
        return Err(Error::MalformedFrame(format!(
            "unsupported version {}",
            header[4]
        )));
    }
    let kind = header[5];
    let len = u64::from_le_bytes(header[6..].try_into().expect("8 bytes"));
    if len > MAX_PAYLOAD {
        return Err(Error::MalformedFrame(format!(
            "payload of {len} bytes exceeds limit"
        )));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    decode_payload(kind, &payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{make_queries, scheme_fingerprint};
    use crate::staircase::StaircaseCode;

    fn query_frame() -> QueryFrame {
        let p = SchemeParams::new(3, 2, 1, 2, 5, 2).unwrap();
        let code = StaircaseCode::vandermonde(p.clone()).unwrap();
        let q = make_queries(&code, 1, 4).unwrap().remove(2);
        QueryFrame {
            params: ParamBlock::from(&p),
            fingerprint: scheme_fingerprint(&code),
            server: 2,
            sub_queries: q.sub_queries,
        }
    }

    #[test]
    fn round_trips() {
        let msgs = [
            Message::Query(query_frame()),
            Message::Fetch {
                session: 7,
                columns: vec![0, 1],
            },
            Message::Fetch {
                session: 7,
                columns: vec![],
            },
            Message::Response {
                session: 7,
                columns: vec![SymbolVector(vec![1, 2]), SymbolVector(vec![3, 4])],
            },
            Message::Response {
                session: 9,
                columns: vec![],
            },
            Message::error(ErrorCode::ColumnOutOfRange, "column 5 ≥ 2"),
        ];
        for m in msgs {
            assert_eq!(decode(&encode(&m)).unwrap(), m);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&Message::Fetch {
            session: 1,
            columns: vec![3],
        });
        assert_eq!(&bytes[..4], b"SPIR");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 2);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 24);
        assert_eq!(bytes.len(), 14 + 24);
    }

    #[test]
    fn rejects_malformed_frames() {
        let good = encode(&Message::Query(query_frame()));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::MalformedFrame(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode(&bad), Err(Error::MalformedFrame(_))));
        let mut bad = good.clone();
        bad[5] = 9;
        assert!(matches!(decode(&bad), Err(Error::MalformedFrame(_))));
        // symbol >= q
        let mut bad = good.clone();
        let last = bad.len() - 8;
        bad[last..].copy_from_slice(&5u64.to_le_bytes());
        assert!(matches!(decode(&bad), Err(Error::MalformedFrame(_))));
        // truncated body
        assert!(decode(&good[..good.len() - 1]).is_err());
        // oversize length
        let mut bad = good[..14].to_vec();
        bad[6..14].copy_from_slice(&(MAX_PAYLOAD + 1).to_le_bytes());
        assert!(matches!(decode(&bad), Err(Error::MalformedFrame(_))));
        // response width not dividing
        let mut payload = encode(&Message::Response {
            session: 1,
            columns: vec![SymbolVector(vec![1, 2, 3])],
        });
        payload[22..30].copy_from_slice(&2u64.to_le_bytes());
        assert!(matches!(decode(&payload), Err(Error::MalformedFrame(_))));
    }
}

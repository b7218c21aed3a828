//! Message bodies and length-prefixed frames.
//!
//! Frame layout: `phase u8 | sender u8 | receiver u8 | 0 u8 | body_len u32`,
//! then the body, then the first 8 bytes of SHA-256 over header and body.

use sha2::{Digest, Sha256};

use super::{ProtocolError, Result, RiskReport, Role};
use crate::dataset::Source;

pub const FRAME_HEADER: usize = 8;
pub const FRAME_TRAILER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Collect,
    InferRequest,
    DecryptRequest,
    DecryptResponse,
    RiskReport,
}

impl Phase {
    pub const ALL: [Phase; 5] =
        [Phase::Collect, Phase::InferRequest, Phase::DecryptRequest, Phase::DecryptResponse, Phase::RiskReport];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Collect => "collect",
            Phase::InferRequest => "infer_request",
            Phase::DecryptRequest => "decrypt_request",
            Phase::DecryptResponse => "decrypt_response",
            Phase::RiskReport => "risk_report",
        }
    }

    fn code(self) -> u8 {
        Phase::ALL.iter().position(|p| *p == self).unwrap() as u8
    }

    fn from_code(c: u8) -> Result<Phase> {
        Phase::ALL.get(c as usize).copied().ok_or_else(|| ProtocolError::Malformed(format!("phase {c}")))
    }
}

/// One encrypted feature row as sent by a client.
#[derive(Debug, Clone, PartialEq)]
pub struct RowCiphertext {
    pub source: Source,
    pub seq: u32,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    /// Encrypted rows of one slice. `enroll` rows feed the history store.
    Collect { user: String, session: u32, slice: u32, enroll: bool, rows: Vec<RowCiphertext> },
    InferRequest { user: String, session: u32, slice: u32 },
    DecryptRequest { auth_id: u64, ciphertexts: Vec<Vec<u8>> },
    /// Slot 0 of each requested ciphertext, or a refusal.
    DecryptResponse { auth_id: u64, values: Vec<f64>, refused: Option<String> },
    RiskReport(Box<RiskReport>),
}

impl Body {
    pub fn phase(&self) -> Phase {
        match self {
            Body::Collect { .. } => Phase::Collect,
            Body::InferRequest { .. } => Phase::InferRequest,
            Body::DecryptRequest { .. } => Phase::DecryptRequest,
            Body::DecryptResponse { .. } => Phase::DecryptResponse,
            Body::RiskReport(_) => Phase::RiskReport,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            Body::Collect { user, session, slice, enroll, rows } => {
                w.str(user);
                w.u32(*session);
                w.u32(*slice);
                w.u8(*enroll as u8);
                w.u32(rows.len() as u32);
                for r in rows {
                    w.u8(r.source.index() as u8);
                    w.u32(r.seq);
                    w.bytes(&r.bytes);
                }
            }
            Body::InferRequest { user, session, slice } => {
                w.str(user);
                w.u32(*session);
                w.u32(*slice);
            }
            Body::DecryptRequest { auth_id, ciphertexts } => {
                w.u64(*auth_id);
                w.u32(ciphertexts.len() as u32);
                for c in ciphertexts {
                    w.bytes(c);
                }
            }
            Body::DecryptResponse { auth_id, values, refused } => {
                w.u64(*auth_id);
                w.u32(values.len() as u32);
                for v in values {
                    w.f64(*v);
                }
                match refused {
                    Some(r) => {
                        w.u8(1);
                        w.str(r);
                    }
                    None => w.u8(0),
                }
            }
            Body::RiskReport(r) => w.bytes(&serde_json::to_vec(r).expect("report serializes")),
        }
        w.0
    }

    pub fn decode(phase: Phase, bytes: &[u8]) -> Result<Body> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let body = match phase {
            Phase::Collect => {
                let user = r.str()?;
                let (session, slice, enroll) = (r.u32()?, r.u32()?, r.u8()? != 0);
                let n = r.u32()? as usize;
                let mut rows = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    let src = r.u8()? as usize;
                    let source = *Source::ALL.get(src).ok_or_else(|| ProtocolError::Malformed(format!("source {src}")))?;
                    rows.push(RowCiphertext { source, seq: r.u32()?, bytes: r.bytes()? });
                }
                Body::Collect { user, session, slice, enroll, rows }
            }
            Phase::InferRequest => Body::InferRequest { user: r.str()?, session: r.u32()?, slice: r.u32()? },
            Phase::DecryptRequest => {
                let auth_id = r.u64()?;
                let n = r.u32()? as usize;
                let ciphertexts = (0..n).map(|_| r.bytes()).collect::<Result<_>>()?;
                Body::DecryptRequest { auth_id, ciphertexts }
            }
            Phase::DecryptResponse => {
                let auth_id = r.u64()?;
                let n = r.u32()? as usize;
                let values = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
                let refused = if r.u8()? == 1 { Some(r.str()?) } else { None };
                Body::DecryptResponse { auth_id, values, refused }
            }
            Phase::RiskReport => {
                let raw = r.bytes()?;
                Body::RiskReport(Box::new(
                    serde_json::from_slice(&raw).map_err(|e| ProtocolError::Malformed(e.to_string()))?,
                ))
            }
        };
        if r.pos != bytes.len() {
            return Err(ProtocolError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(body)
    }
}

fn role_code(r: Role) -> u8 {
    match r {
        Role::Frontend => 0,
        Role::Backend => 1,
        Role::AuthServer => 2,
    }
}

fn role_from(c: u8) -> Result<Role> {
    match c {
        0 => Ok(Role::Frontend),
        1 => Ok(Role::Backend),
        2 => Ok(Role::AuthServer),
        _ => Err(ProtocolError::Malformed(format!("role {c}"))),
    }
}

fn checksum(data: &[u8]) -> [u8; FRAME_TRAILER] {
    let digest = Sha256::digest(data);
    let mut out = [0u8; FRAME_TRAILER];
    out.copy_from_slice(&digest[..FRAME_TRAILER]);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub sender: Role,
    pub receiver: Role,
    pub body: Body,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let body = self.body.encode();
        let mut out = Vec::with_capacity(FRAME_HEADER + body.len() + FRAME_TRAILER);
        out.extend([self.body.phase().code(), role_code(self.sender), role_code(self.receiver), 0]);
        out.extend((body.len() as u32).to_le_bytes());
        out.extend(body);
        let sum = checksum(&out);
        out.extend(sum);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame> {
        if bytes.len() < FRAME_HEADER + FRAME_TRAILER {
            return Err(ProtocolError::Malformed("frame too short".into()));
        }
        let (data, trailer) = bytes.split_at(bytes.len() - FRAME_TRAILER);
        if checksum(data) != trailer {
            return Err(ProtocolError::Integrity);
        }
        let len = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
        if len != data.len() - FRAME_HEADER {
            return Err(ProtocolError::Malformed("body length mismatch".into()));
        }
        let phase = Phase::from_code(data[0])?;
        Ok(Frame {
            sender: role_from(data[1])?,
            receiver: role_from(data[2])?,
            body: Body::decode(phase, &data[FRAME_HEADER..])?,
        })
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend(b);
    }
    fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(ProtocolError::Malformed("truncated body".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn str(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

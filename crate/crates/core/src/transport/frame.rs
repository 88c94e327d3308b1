//! Frame layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "FLMU"
//!      4     1  version (1)
//!      5     1  message type
//!      6     4  round (u32)
//!     10     4  sender id (u32)
//!     14     8  payload length (u64)
//!     22     n  payload
//!   22+n     4  CRC-32 (IEEE) of the payload
//! ```

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FLMU";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;
pub const TRAILER_LEN: usize = 4;
/// Largest accepted payload.
pub const MAX_PAYLOAD: u64 = u32::MAX as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    ModelParams = 0x02,
    ModelUpdate = 0x03,
    Release = 0x04,
    MetricsReport = 0x05,
    PredictRequest = 0x06,
    PredictResponse = 0x07,
}

impl MessageType {
    pub const ALL: [MessageType; 7] = [
        MessageType::Hello,
        MessageType::ModelParams,
        MessageType::ModelUpdate,
        MessageType::Release,
        MessageType::MetricsReport,
        MessageType::PredictRequest,
        MessageType::PredictResponse,
    ];
}

impl TryFrom<u8> for MessageType {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        MessageType::ALL
            .into_iter()
            .find(|t| *t as u8 == code)
            .ok_or_else(|| Error::Protocol(format!("unknown message type {code:#04x}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MessageType,
    pub round: u32,
    pub sender_id: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MessageType, round: u32, sender_id: u32, payload: Vec<u8>) -> Self {
        Frame { msg_type, round, sender_id, payload }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        encode(self.msg_type, self.round, self.sender_id, &self.payload)
    }

    /// Bails with a protocol error unless the frame has the given type.
    pub fn expect(self, msg_type: MessageType) -> Result<Frame> {
        if self.msg_type == msg_type {
            Ok(self)
        } else {
            Err(Error::Protocol(format!("expected {msg_type:?}, got {:?} from {}", self.msg_type, self.sender_id)))
        }
    }
}

pub fn encode(msg_type: MessageType, round: u32, sender_id: u32, payload: &[u8]) -> Result<Vec<u8>> {
    if payload.len() as u64 > MAX_PAYLOAD {
        return Err(Error::Encoding(format!("payload of {} bytes exceeds {MAX_PAYLOAD}", payload.len())));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg_type as u8);
    out.extend_from_slice(&round.to_le_bytes());
    out.extend_from_slice(&sender_id.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    Ok(out)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Frame> {
    let mut decoder = FrameDecoder::new();
    decoder.push(bytes);
    let frame = decoder.next_frame()?.ok_or_else(|| decoder.truncation())?;
    if decoder.buffered() != 0 {
        return Err(Error::Protocol(format!("{} trailing bytes after frame", decoder.buffered())));
    }
    Ok(frame)
}

/// Incremental decoder that accepts arbitrary fragments of a byte stream.
///
/// Header fields are validated as soon as their bytes arrive, so a stream
/// that starts with garbage fails without waiting for a full header.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buffer: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        FrameDecoder::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buffer.extend_from_slice(bytes);
    }

    /// Bytes received but not yet consumed by a complete frame.
    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// The error to report when the stream ends now.
    pub fn truncation(&self) -> Error {
        let need = if self.buffer.len() < HEADER_LEN {
            HEADER_LEN + TRAILER_LEN
        } else {
            HEADER_LEN + payload_len(&self.buffer) as usize + TRAILER_LEN
        };
        Error::Truncated { have: self.buffer.len(), need }
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame>> {
        let buf = &self.buffer;
        let have_magic = buf.len().min(4);
        if buf[..have_magic] != MAGIC[..have_magic] {
            return Err(Error::Protocol(format!("bad magic {:?}", String::from_utf8_lossy(&buf[..have_magic]))));
        }
        if buf.len() > 4 && buf[4] != VERSION {
            return Err(Error::Protocol(format!("unsupported version {}", buf[4])));
        }
        if buf.len() > 5 {
            MessageType::try_from(buf[5])?;
        }
        if buf.len() < HEADER_LEN {
            return Ok(None);
        }
        let len = payload_len(buf);
        if len > MAX_PAYLOAD {
            return Err(Error::Protocol(format!("declared payload of {len} bytes exceeds {MAX_PAYLOAD}")));
        }
        let total = HEADER_LEN + len as usize + TRAILER_LEN;
        if buf.len() < total {
            return Ok(None);
        }
        let payload = &buf[HEADER_LEN..HEADER_LEN + len as usize];
        let expected = u32::from_le_bytes(buf[total - 4..total].try_into().expect("4 bytes"));
        let actual = crc32fast::hash(payload);
        if expected != actual {
            return Err(Error::Corruption { expected, actual });
        }
        let frame = Frame {
            msg_type: MessageType::try_from(buf[5])?,
            round: u32::from_le_bytes(buf[6..10].try_into().expect("4 bytes")),
            sender_id: u32::from_le_bytes(buf[10..14].try_into().expect("4 bytes")),
            payload: payload.to_vec(),
        };
        self.buffer.drain(..total);
        Ok(Some(frame))
    }
}

fn payload_len(buf: &[u8]) -> u64 {
    u64::from_le_bytes(buf[14..22].try_into().expect("8 bytes"))
}

//! Length-prefixed message frames.
//!
//! `length (4, BE) | type tag (1) | payload`, where the length counts the tag
//! and the payload.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageType {
    Enroll = 0x01,
    PadIssue = 0x02,
    Contribution = 0x03,
    RoundResult = 0x04,
    PadRevealRequest = 0x05,
    PadRevealResponse = 0x06,
    AttestRequest = 0x07,
    AttestQuote = 0x08,
    SubmitPrivate = 0x09,
    SignedResult = 0x0A,
    Verdict = 0x0B,
    Challenge = 0x0C,
    ServiceHello = 0x0D,
    ValidatorInstall = 0x0E,
    ValidatorAck = 0x0F,
}

impl MessageType {
    pub const ALL: [MessageType; 15] = [
        MessageType::Enroll,
        MessageType::PadIssue,
        MessageType::Contribution,
        MessageType::RoundResult,
        MessageType::PadRevealRequest,
        MessageType::PadRevealResponse,
        MessageType::AttestRequest,
        MessageType::AttestQuote,
        MessageType::SubmitPrivate,
        MessageType::SignedResult,
        MessageType::Verdict,
        MessageType::Challenge,
        MessageType::ServiceHello,
        MessageType::ValidatorInstall,
        MessageType::ValidatorAck,
    ];

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::Enroll => "ENROLL",
            MessageType::PadIssue => "PAD_ISSUE",
            MessageType::Contribution => "CONTRIBUTION",
            MessageType::RoundResult => "ROUND_RESULT",
            MessageType::PadRevealRequest => "PAD_REVEAL_REQUEST",
            MessageType::PadRevealResponse => "PAD_REVEAL_RESPONSE",
            MessageType::AttestRequest => "ATTEST_REQUEST",
            MessageType::AttestQuote => "ATTEST_QUOTE",
            MessageType::SubmitPrivate => "SUBMIT_PRIVATE",
            MessageType::SignedResult => "SIGNED_RESULT",
            MessageType::Verdict => "VERDICT",
            MessageType::Challenge => "CHALLENGE",
            MessageType::ServiceHello => "SERVICE_HELLO",
            MessageType::ValidatorInstall => "VALIDATOR_INSTALL",
            MessageType::ValidatorAck => "VALIDATOR_ACK",
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame length {0} outside 1..={MAX_FRAME_LEN}")]
    BadLength(usize),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("truncated frame")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: MessageType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: MessageType, payload: Vec<u8>) -> Self {
        Self { kind, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&((self.payload.len() + 1) as u32).to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one frame from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
        if bytes.len() < 4 {
            return Err(FrameError::Truncated);
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        if len == 0 || len > MAX_FRAME_LEN {
            return Err(FrameError::BadLength(len));
        }
        if bytes.len() < 4 + len {
            return Err(FrameError::Truncated);
        }
        let kind = MessageType::from_tag(bytes[4]).ok_or(FrameError::UnknownType(bytes[4]))?;
        Ok((Frame { kind, payload: bytes[5..4 + len].to_vec() }, 4 + len))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), FrameError> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Frame, FrameError> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_be_bytes(len) as usize;
        if len == 0 || len > MAX_FRAME_LEN {
            return Err(FrameError::BadLength(len));
        }
        let mut body = vec![0u8; len];
        r.read_exact(&mut body)?;
        let kind = MessageType::from_tag(body[0]).ok_or(FrameError::UnknownType(body[0]))?;
        body.remove(0);
        Ok(Frame { kind, payload: body })
    }
}

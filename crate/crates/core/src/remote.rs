//! Glimmer-as-a-service for clients without trusted hardware.
//!
//! A client first runs the key exchange with the host and checks that the
//! host's quote attests the approved glimmer and binds the client's fresh
//! handshake value. Only a [`RemoteChannel`], which exists solely after that
//! check, can carry private data.

use std::collections::BTreeMap;
use std::fmt;

use rand_core::{CryptoRng, RngCore};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::client::ClientId;
use crate::codec::{put_bytes32, DecodeError, Reader};
use crate::crypto::akx::{AkxError, Binding, Handshake, HandshakeMessage, PeerCheck, Role, Session};
use crate::crypto::sig::VerifyingKey;
use crate::crypto::ModelVector;
use crate::pipeline::{
    run_glimmer, Disclosure, GlimmerError, PrivateValidationData, RoundSeals, SignedContribution,
    ValidationPolicy,
};
use crate::tee::{EnclaveContext, Measurement, Quote, SealedBlob};
use crate::wire::{Frame, MessageType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("{0} unreachable")]
    Unreachable(String),
    #[error("remote error: {0}")]
    Remote(String),
}

/// Request/response transport to a named actor.
pub trait RemoteLink {
    fn exchange(&mut self, address: &str, frame: Frame) -> Result<Frame, LinkError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RemoteError {
    #[error("remote glimmer failed attestation")]
    AttestationFailure,
    #[error("remote glimmer unreachable")]
    Unreachable,
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("remote glimmer failed: {0}")]
    GlimmerFailed(String),
    #[error("channel error: {0}")]
    ChannelError(String),
}

impl RemoteError {
    pub fn code(&self) -> &str {
        match self {
            RemoteError::AttestationFailure => "attestation_failure",
            RemoteError::Unreachable => "unreachable",
            RemoteError::ValidationFailed(c) | RemoteError::GlimmerFailed(c) => c,
            RemoteError::ChannelError(_) => "channel_error",
        }
    }
}

impl From<LinkError> for RemoteError {
    fn from(e: LinkError) -> Self {
        match e {
            LinkError::Unreachable(_) => RemoteError::Unreachable,
            LinkError::Remote(m) => RemoteError::ChannelError(m),
        }
    }
}

impl From<DecodeError> for RemoteError {
    fn from(e: DecodeError) -> Self {
        RemoteError::ChannelError(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEndpoint {
    pub address: String,
    pub expected_measurement: Measurement,
    pub attestation_root: VerifyingKey,
}

pub struct RemoteChannel {
    address: String,
    session_id: u64,
    session: Session,
}

impl fmt::Debug for RemoteChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteChannel")
            .field("address", &self.address)
            .field("session_id", &self.session_id)
            .finish_non_exhaustive()
    }
}

impl RemoteChannel {
    pub fn transcript_hash(&self) -> [u8; 32] {
        self.session.transcript_hash()
    }
}

fn session_frame(kind: MessageType, session_id: u64, body: &[u8]) -> Frame {
    let mut payload = Vec::with_capacity(8 + body.len());
    payload.extend_from_slice(&session_id.to_be_bytes());
    payload.extend_from_slice(body);
    Frame::new(kind, payload)
}

fn split_session(payload: &[u8]) -> Result<(u64, &[u8]), DecodeError> {
    let mut r = Reader::new(payload);
    let id = r.u64("session id")?;
    Ok((id, r.remaining()))
}

pub fn connect_remote<R: RngCore + CryptoRng>(
    ep: &RemoteEndpoint,
    link: &mut dyn RemoteLink,
    rng: &mut R,
) -> Result<RemoteChannel, RemoteError> {
    let hs = Handshake::new(Role::Initiator, rng);
    let hello = hs.message(Binding::None);
    let reply = link.exchange(&ep.address, Frame::new(MessageType::AttestRequest, hello.to_bytes()))?;
    if reply.kind != MessageType::AttestQuote {
        return Err(RemoteError::AttestationFailure);
    }
    let (session_id, body) = split_session(&reply.payload)?;
    let host_msg = HandshakeMessage::from_bytes(body).map_err(|_| RemoteError::AttestationFailure)?;
    let check = PeerCheck::Attested { expected: ep.expected_measurement, root: ep.attestation_root };
    let keys = hs.finish(&hello, &host_msg, &check).map_err(|e| match e {
        AkxError::BindingFailure | AkxError::WeakKey => RemoteError::AttestationFailure,
        other => RemoteError::ChannelError(other.to_string()),
    })?;
    Ok(RemoteChannel { address: ep.address.clone(), session_id, session: Session::new(keys) })
}

/// Everything the local pipeline would take, bundled for the channel.
pub struct SubmitRequest {
    pub client_id: ClientId,
    pub x: ModelVector,
    pub d: PrivateValidationData,
    pub seals: RoundSeals,
    pub policy: ValidationPolicy,
    pub disclosure: Disclosure,
}

impl SubmitRequest {
    fn to_bytes(&self) -> Zeroizing<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.client_id.to_be_bytes());
        out.push(matches!(self.disclosure, Disclosure::Public) as u8);
        put_bytes32(&mut out, &self.x.to_bytes());
        put_bytes32(&mut out, &self.d.to_bytes());
        put_bytes32(&mut out, &self.policy.to_bytes());
        match &self.seals.pad {
            Some(p) => {
                out.push(1);
                put_bytes32(&mut out, &p.to_bytes());
            }
            None => out.push(0),
        }
        put_bytes32(&mut out, &self.seals.signing_key.to_bytes());
        Zeroizing::new(out)
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let client_id = r.u64("client id")?;
        let disclosure = if r.u8("disclosure")? == 1 { Disclosure::Public } else { Disclosure::Blinded };
        let x = ModelVector::from_bytes(r.bytes32("model")?)?;
        let d = PrivateValidationData::from_bytes(r.bytes32("private data")?)?;
        let policy = ValidationPolicy::from_bytes(r.bytes32("policy")?)?;
        let pad = match r.u8("pad flag")? {
            1 => Some(SealedBlob::from_bytes(r.bytes32("sealed pad")?)?),
            _ => None,
        };
        let signing_key = SealedBlob::from_bytes(r.bytes32("sealed key")?)?;
        r.finish("submit request")?;
        Ok(Self { client_id, x, d, seals: RoundSeals { pad, signing_key }, policy, disclosure })
    }
}

const RESULT_OK: u8 = 0;
const RESULT_INVALID: u8 = 1;
const RESULT_FAILED: u8 = 2;

/// Asks the host to quote `envelope_key` for enrollment.
pub fn remote_enrollment_quote(
    address: &str,
    envelope_key: &[u8; 32],
    link: &mut dyn RemoteLink,
) -> Result<Quote, RemoteError> {
    let reply = link.exchange(address, Frame::new(MessageType::Enroll, envelope_key.to_vec()))?;
    if reply.kind != MessageType::Enroll {
        return Err(RemoteError::ChannelError(format!("unexpected {}", reply.kind.name())));
    }
    Ok(Quote::from_bytes(&reply.payload)?)
}

pub fn remote_submit(
    channel: &mut RemoteChannel,
    link: &mut dyn RemoteLink,
    request: SubmitRequest,
) -> Result<SignedContribution, RemoteError> {
    let record = channel.session.encrypt(&request.to_bytes());
    drop(request);
    let frame = session_frame(MessageType::SubmitPrivate, channel.session_id, &record);
    let reply = link.exchange(&channel.address, frame)?;
    if reply.kind != MessageType::SignedResult {
        return Err(RemoteError::ChannelError(format!("unexpected {}", reply.kind.name())));
    }
    let (sid, body) = split_session(&reply.payload)?;
    if sid != channel.session_id {
        return Err(RemoteError::ChannelError("session id mismatch".into()));
    }
    let plain = channel.session.decrypt(body).map_err(|e| RemoteError::ChannelError(e.to_string()))?;
    let (status, rest) = plain.split_first().ok_or_else(|| RemoteError::ChannelError("empty result".into()))?;
    match *status {
        RESULT_OK => Ok(SignedContribution::from_bytes(rest)?),
        RESULT_INVALID => Err(RemoteError::ValidationFailed(String::from_utf8_lossy(rest).into_owned())),
        _ => Err(RemoteError::GlimmerFailed(String::from_utf8_lossy(rest).into_owned())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("unexpected message {0}")]
    Unexpected(&'static str),
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("bad record: {0}")]
    BadRecord(String),
}

/// A network-reachable glimmer host ("set-top box", "university", ...).
pub struct RemoteGlimmerHost {
    label: String,
    trust: String,
    ctx: EnclaveContext,
    sessions: BTreeMap<u64, Session>,
    next_session: u64,
    served: u64,
}

impl RemoteGlimmerHost {
    pub fn new(label: &str, trust: &str, ctx: EnclaveContext) -> Self {
        Self {
            label: label.to_owned(),
            trust: trust.to_owned(),
            ctx,
            sessions: BTreeMap::new(),
            next_session: 1,
            served: 0,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn trust(&self) -> &str {
        &self.trust
    }

    pub fn measurement(&self) -> Measurement {
        self.ctx.measurement()
    }

    pub fn served(&self) -> u64 {
        self.served
    }

    /// Debug hook over the host enclave's heap.
    pub fn heap_stats(&self) -> crate::tee::HeapStats {
        self.ctx.heap_stats()
    }

    pub fn handle(&mut self, frame: Frame) -> Result<Frame, HostError> {
        match frame.kind {
            MessageType::AttestRequest => self.attest(&frame.payload),
            MessageType::SubmitPrivate => self.submit(&frame.payload),
            MessageType::Enroll => self.enroll(&frame.payload),
            other => Err(HostError::Unexpected(other.name())),
        }
    }

    /// Quotes a remote client's envelope key so it can enroll through this
    /// host's glimmer.
    fn enroll(&mut self, payload: &[u8]) -> Result<Frame, HostError> {
        if payload.len() != 32 {
            return Err(HostError::BadRecord(format!("envelope key of {} bytes", payload.len())));
        }
        let quote = self.ctx.quote(payload).expect("32 bytes fit");
        Ok(Frame::new(MessageType::Enroll, quote.to_bytes().to_vec()))
    }

    fn attest(&mut self, payload: &[u8]) -> Result<Frame, HostError> {
        let hello = HandshakeMessage::from_bytes(payload).map_err(|e| HostError::BadRecord(e.to_string()))?;
        let hs = Handshake::new(Role::Responder, self.ctx.rng());
        let quote = self
            .ctx
            .quote(&hs.payload(Some(&hello.ephemeral)))
            .expect("payload is 64 bytes");
        let reply = hs.message(Binding::Quote(quote));
        let keys = hs
            .finish(&reply, &hello, &PeerCheck::Anonymous)
            .map_err(|e| HostError::BadRecord(e.to_string()))?;
        let id = self.next_session;
        self.next_session += 1;
        self.sessions.insert(id, Session::new(keys));
        Ok(session_frame(MessageType::AttestQuote, id, &reply.to_bytes()))
    }

    fn submit(&mut self, payload: &[u8]) -> Result<Frame, HostError> {
        let (sid, record) = split_session(payload).map_err(|e| HostError::BadRecord(e.to_string()))?;
        let session = self.sessions.get_mut(&sid).ok_or(HostError::UnknownSession(sid))?;
        let plain = session.decrypt(record).map_err(|e| HostError::BadRecord(e.to_string()))?;
        let req = SubmitRequest::from_bytes(&plain).map_err(|e| HostError::BadRecord(e.to_string()))?;
        drop(plain);
        let SubmitRequest { client_id, x, d, seals, policy, disclosure } = req;
        let result = run_glimmer(&mut self.ctx, client_id, x, d, &seals, &policy, disclosure);
        self.served += 1;
        let mut body = Vec::new();
        match result {
            Ok(sc) => {
                body.push(RESULT_OK);
                body.extend_from_slice(&sc.to_bytes());
            }
            Err(GlimmerError::ValidationFailed(v)) => {
                body.push(RESULT_INVALID);
                body.extend_from_slice(v.reason.code().as_bytes());
            }
            Err(e) => {
                body.push(RESULT_FAILED);
                body.extend_from_slice(e.code().as_bytes());
            }
        }
        let session = self.sessions.get_mut(&sid).expect("present above");
        let out = session.encrypt(&body);
        Ok(session_frame(MessageType::SignedResult, sid, &out))
    }
}

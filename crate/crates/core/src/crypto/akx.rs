//! Attestation-bound key exchange.
//!
//! Two messages, each an ephemeral X25519 value plus optional binding
//! material. A binding is either an enclave [`Quote`] whose report data
//! carries the sender's handshake payload, or a signature over that payload
//! by a long-term service key. The payload is
//! `ephemeral (32) | SHA-256(label | role | peer ephemeral or zeros) (32)`,
//! so a responder's binding also covers the initiator's fresh value.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use hkdf::Hkdf;
use rand_core::{CryptoRng, RngCore};
use sha2::Sha256;
use thiserror::Error;
use x25519_dalek::{EphemeralSecret, PublicKey};
use zeroize::{Zeroize, ZeroizeOnDrop, Zeroizing};

use crate::codec::{DecodeError, Reader};
use crate::crypto::sha256;
use crate::crypto::sig::{self, Signature, SigningKey, VerifyingKey};
use crate::tee::{self, Measurement, Quote, QUOTE_LEN, REPORT_DATA_LEN};

const LABEL: &[u8] = b"glimmer-akx-v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AkxError {
    #[error("peer binding does not cover the handshake values")]
    BindingFailure,
    #[error("handshake message does not belong to this handshake")]
    TranscriptMismatch,
    #[error("degenerate key agreement")]
    WeakKey,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("record failed authentication")]
    Authentication,
    #[error("record out of sequence: expected {expected}, got {got}")]
    Sequence { expected: u64, got: u64 },
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Responder,
}

impl Role {
    fn byte(self) -> u8 {
        match self {
            Role::Initiator => 0x49,
            Role::Responder => 0x52,
        }
    }

    fn peer(self) -> Role {
        match self {
            Role::Initiator => Role::Responder,
            Role::Responder => Role::Initiator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Binding {
    None,
    Quote(Quote),
    Signature(Signature),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeMessage {
    pub ephemeral: [u8; 32],
    pub binding: Binding,
}

impl HandshakeMessage {
    /// `ephemeral (32) | kind (1) | quote (160) or signature (64) or nothing`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(33 + QUOTE_LEN);
        out.extend_from_slice(&self.ephemeral);
        match &self.binding {
            Binding::None => out.push(0),
            Binding::Quote(q) => {
                out.push(1);
                out.extend_from_slice(&q.to_bytes());
            }
            Binding::Signature(s) => {
                out.push(2);
                out.extend_from_slice(&s.to_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let ephemeral = r.array("handshake ephemeral")?;
        let binding = match r.u8("handshake binding kind")? {
            0 => Binding::None,
            1 => Binding::Quote(Quote::from_bytes(r.take(QUOTE_LEN, "handshake quote")?)?),
            2 => Binding::Signature(Signature::from_bytes(&r.array("handshake signature")?)),
            k => {
                return Err(DecodeError::Invalid {
                    what: "handshake binding kind",
                    detail: format!("unknown kind {k}"),
                })
            }
        };
        r.finish("handshake message")?;
        Ok(Self { ephemeral, binding })
    }
}

/// What a party demands of its peer's binding.
#[derive(Debug, Clone)]
pub enum PeerCheck {
    Anonymous,
    Attested { expected: Measurement, root: VerifyingKey },
    SignedBy(VerifyingKey),
}

fn binding_payload(role: Role, own: &[u8; 32], peer: Option<&[u8; 32]>) -> [u8; REPORT_DATA_LEN] {
    let zero = [0u8; 32];
    let ctx = sha256(&[LABEL, &[role.byte()], peer.unwrap_or(&zero)]);
    let mut out = [0u8; REPORT_DATA_LEN];
    out[..32].copy_from_slice(own);
    out[32..].copy_from_slice(&ctx);
    out
}

pub struct Handshake {
    role: Role,
    secret: EphemeralSecret,
    public: [u8; 32],
}

impl Handshake {
    pub fn new<R: RngCore + CryptoRng>(role: Role, rng: &mut R) -> Self {
        let secret = EphemeralSecret::random_from_rng(rng);
        let public = *PublicKey::from(&secret).as_bytes();
        Self { role, secret, public }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn ephemeral(&self) -> [u8; 32] {
        self.public
    }

    /// The 64 bytes this party's binding must cover. A responder passes the
    /// initiator's ephemeral value; an initiator passes `None`.
    pub fn payload(&self, peer_ephemeral: Option<&[u8; 32]>) -> [u8; REPORT_DATA_LEN] {
        let peer = match self.role {
            Role::Initiator => None,
            Role::Responder => peer_ephemeral,
        };
        binding_payload(self.role, &self.public, peer)
    }

    pub fn message(&self, binding: Binding) -> HandshakeMessage {
        HandshakeMessage { ephemeral: self.public, binding }
    }

    /// Signs this party's payload with a long-term key.
    pub fn signed_message(&self, peer_ephemeral: Option<&[u8; 32]>, key: &SigningKey) -> HandshakeMessage {
        let payload = self.payload(peer_ephemeral);
        self.message(Binding::Signature(sig::sign(&payload, key)))
    }

    pub fn finish(
        self,
        mine: &HandshakeMessage,
        peer: &HandshakeMessage,
        check: &PeerCheck,
    ) -> Result<SessionKeys, AkxError> {
        if mine.ephemeral != self.public {
            return Err(AkxError::TranscriptMismatch);
        }
        let peer_role = self.role.peer();
        let expected = binding_payload(
            peer_role,
            &peer.ephemeral,
            (peer_role == Role::Responder).then_some(&self.public),
        );
        check_binding(&peer.binding, &expected, check)?;

        let shared = self.secret.diffie_hellman(&PublicKey::from(peer.ephemeral));
        if !shared.was_contributory() {
            return Err(AkxError::WeakKey);
        }
        let (init, resp) = match self.role {
            Role::Initiator => (mine, peer),
            Role::Responder => (peer, mine),
        };
        let transcript = sha256(&[LABEL, &init.to_bytes(), &resp.to_bytes()]);
        let hk = Hkdf::<Sha256>::new(Some(&transcript), shared.as_bytes());
        let mut i2r = [0u8; 32];
        let mut r2i = [0u8; 32];
        hk.expand(b"initiator->responder", &mut i2r).expect("valid length");
        hk.expand(b"responder->initiator", &mut r2i).expect("valid length");
        let (send, recv) = match self.role {
            Role::Initiator => (i2r, r2i),
            Role::Responder => (r2i, i2r),
        };
        Ok(SessionKeys { send, recv, transcript })
    }
}

fn check_binding(binding: &Binding, expected: &[u8; 64], check: &PeerCheck) -> Result<(), AkxError> {
    let ok = match (check, binding) {
        (PeerCheck::Anonymous, _) => true,
        (PeerCheck::Attested { expected: m, root }, Binding::Quote(q)) => {
            q.report_data == *expected && tee::verify_quote(q, m, root)
        }
        (PeerCheck::SignedBy(pk), Binding::Signature(s)) => sig::verify(expected, s, pk),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(AkxError::BindingFailure)
    }
}

#[derive(Zeroize, ZeroizeOnDrop)]
pub struct SessionKeys {
    pub send: [u8; 32],
    pub recv: [u8; 32],
    pub transcript: [u8; 32],
}

/// An established channel: sequenced AEAD records in each direction.
pub struct Session {
    keys: SessionKeys,
    send_seq: u64,
    recv_seq: u64,
}

fn record_nonce(seq: u64) -> XNonce {
    let mut n = [0u8; 24];
    n[16..].copy_from_slice(&seq.to_be_bytes());
    *XNonce::from_slice(&n)
}

impl Session {
    pub fn new(keys: SessionKeys) -> Self {
        Self { keys, send_seq: 0, recv_seq: 0 }
    }

    pub fn transcript_hash(&self) -> [u8; 32] {
        self.keys.transcript
    }

    /// `sequence (8) | ciphertext`
    pub fn encrypt(&mut self, plaintext: &[u8]) -> Vec<u8> {
        let seq = self.send_seq;
        self.send_seq += 1;
        let ct = XChaCha20Poly1305::new((&self.keys.send).into())
            .encrypt(&record_nonce(seq), Payload { msg: plaintext, aad: &self.keys.transcript })
            .expect("in-memory encryption does not fail");
        let mut out = Vec::with_capacity(8 + ct.len());
        out.extend_from_slice(&seq.to_be_bytes());
        out.extend_from_slice(&ct);
        out
    }

    pub fn decrypt(&mut self, record: &[u8]) -> Result<Zeroizing<Vec<u8>>, ChannelError> {
        let mut r = Reader::new(record);
        let seq = r.u64("record sequence")?;
        if seq != self.recv_seq {
            return Err(ChannelError::Sequence { expected: self.recv_seq, got: seq });
        }
        let pt = XChaCha20Poly1305::new((&self.keys.recv).into())
            .decrypt(&record_nonce(seq), Payload { msg: r.remaining(), aad: &self.keys.transcript })
            .map_err(|_| ChannelError::Authentication)?;
        self.recv_seq += 1;
        Ok(Zeroizing::new(pt))
    }
}

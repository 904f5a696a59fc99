//! Secret validation policies.
//!
//! The service ships an encrypted policy into the glimmer over a channel bound
//! to the glimmer's quote on one side and to the service's signing key (which
//! the glimmer code embeds) on the other. The glimmer answers each challenge
//! with a fixed-format one-bit [`VerdictMessage`], which a host-side
//! [`RuntimeAuditor`] checks before it leaves the device.

use std::collections::BTreeMap;
use std::fmt;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::codec::{DecodeError, Reader};
use crate::crypto::akx::{AkxError, Binding, Handshake, HandshakeMessage, PeerCheck, Role, Session};
use crate::crypto::sig::{self, Signature, SigningKey, VerifyingKey, SIGNATURE_LEN};
use crate::pipeline::GlimmerImage;
use crate::tee::{EnclaveContext, Measurement, SealedBlob};
use crate::wire::{Frame, MessageType};

pub const VERDICT_LEN: usize = 8 + NONCE_LEN + 1 + SIGNATURE_LEN;
pub const NONCE_LEN: usize = 16;
const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfidentialError {
    #[error("glimmer code embeds no service verification key")]
    NoServiceKey,
    #[error("handshake binding failed")]
    BindingFailure,
    #[error("no session established")]
    NoSession,
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("validator decryption failed")]
    DecryptFailure,
    #[error("malformed policy: {0}")]
    MalformedPolicy(String),
    #[error("no validator installed")]
    NotInstalled,
    #[error("verdict key unavailable to this enclave")]
    KeyUnavailable,
    #[error("unexpected message {0}")]
    Unexpected(&'static str),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

impl From<AkxError> for ConfidentialError {
    fn from(_: AkxError) -> Self {
        ConfidentialError::BindingFailure
    }
}

// ---------------------------------------------------------------------------
// Policy language

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

/// Parsed policy expression.
///
/// ```text
/// expr := integer | (signal NAME) | (count KIND WINDOW_MS)
///       | (and expr...) | (or expr...) | (not expr)
///       | (< a b) | (<= a b) | (> a b) | (>= a b) | (= a b) | (+ expr...)
/// ```
/// `;` starts a comment running to end of line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    Signal(String),
    Count { kind: String, window_ms: u64 },
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Not(Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Add(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Open,
    Close,
    Atom(String),
}

fn tokenize(src: &str) -> Result<Vec<Token>, String> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '(' => {
                chars.next();
                out.push(Token::Open);
            }
            ')' => {
                chars.next();
                out.push(Token::Close);
            }
            ';' => {
                while chars.next().is_some_and(|c| c != '\n') {}
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some(c) => s.push(c),
                        None => return Err("unterminated string".into()),
                    }
                }
                out.push(Token::Atom(s));
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    s.push(c);
                    chars.next();
                }
                out.push(Token::Atom(s));
            }
        }
    }
    Ok(out)
}

pub fn parse_policy(src: &str) -> Result<Expr, ConfidentialError> {
    let tokens = tokenize(src).map_err(ConfidentialError::MalformedPolicy)?;
    let mut pos = 0;
    let expr = parse_expr(&tokens, &mut pos, 0).map_err(ConfidentialError::MalformedPolicy)?;
    if pos != tokens.len() {
        return Err(ConfidentialError::MalformedPolicy("trailing tokens".into()));
    }
    Ok(expr)
}

fn parse_expr(tokens: &[Token], pos: &mut usize, depth: usize) -> Result<Expr, String> {
    if depth > MAX_DEPTH {
        return Err("nesting too deep".into());
    }
    let tok = tokens.get(*pos).ok_or("unexpected end of policy")?;
    *pos += 1;
    match tok {
        Token::Close => Err("unexpected ')'".into()),
        Token::Atom(a) => a.parse::<i64>().map(Expr::Int).map_err(|_| format!("bare atom {a:?}")),
        Token::Open => {
            let head = match tokens.get(*pos) {
                Some(Token::Atom(h)) => h.clone(),
                _ => return Err("expected operator".into()),
            };
            *pos += 1;
            let expr = match head.as_str() {
                "signal" => Expr::Signal(atom(tokens, pos)?),
                "count" => {
                    let kind = atom(tokens, pos)?;
                    let window = atom(tokens, pos)?;
                    let window_ms = window.parse().map_err(|_| format!("bad window {window:?}"))?;
                    Expr::Count { kind, window_ms }
                }
                "and" | "or" | "+" => {
                    let args = args(tokens, pos, depth)?;
                    if args.is_empty() {
                        return Err(format!("{head} needs arguments"));
                    }
                    return Ok(match head.as_str() {
                        "and" => Expr::And(args),
                        "or" => Expr::Or(args),
                        _ => Expr::Add(args),
                    });
                }
                "not" => Expr::Not(Box::new(parse_expr(tokens, pos, depth + 1)?)),
                "<" | "<=" | ">" | ">=" | "=" => {
                    let op = match head.as_str() {
                        "<" => CmpOp::Lt,
                        "<=" => CmpOp::Le,
                        ">" => CmpOp::Gt,
                        ">=" => CmpOp::Ge,
                        _ => CmpOp::Eq,
                    };
                    let a = parse_expr(tokens, pos, depth + 1)?;
                    let b = parse_expr(tokens, pos, depth + 1)?;
                    Expr::Cmp(op, Box::new(a), Box::new(b))
                }
                other => return Err(format!("unknown operator {other:?}")),
            };
            match tokens.get(*pos) {
                Some(Token::Close) => {
                    *pos += 1;
                    Ok(expr)
                }
                _ => Err(format!("expected ')' after {head}")),
            }
        }
    }
}

fn atom(tokens: &[Token], pos: &mut usize) -> Result<String, String> {
    match tokens.get(*pos) {
        Some(Token::Atom(a)) => {
            *pos += 1;
            Ok(a.clone())
        }
        _ => Err("expected name".into()),
    }
}

fn args(tokens: &[Token], pos: &mut usize, depth: usize) -> Result<Vec<Expr>, String> {
    let mut out = Vec::new();
    loop {
        match tokens.get(*pos) {
            Some(Token::Close) => {
                *pos += 1;
                return Ok(out);
            }
            None => return Err("unexpected end of policy".into()),
            _ => out.push(parse_expr(tokens, pos, depth + 1)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalEvent {
    pub ts_ms: u64,
    pub kind: String,
}

/// What the client device observed about its user.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientSignals {
    pub values: BTreeMap<String, i64>,
    pub events: Vec<SignalEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Value {
    Int(i64),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("missing signal {0:?}")]
    MissingSignal(String),
    #[error("type error in {0}")]
    Type(&'static str),
    #[error("arithmetic overflow")]
    Overflow,
}

impl Expr {
    /// Evaluates to a verdict. The top level must be boolean.
    pub fn eval(&self, signals: &ClientSignals) -> Result<bool, EvalError> {
        match self.value(signals)? {
            Value::Bool(b) => Ok(b),
            Value::Int(_) => Err(EvalError::Type("policy result")),
        }
    }

    fn int(&self, s: &ClientSignals, ctx: &'static str) -> Result<i64, EvalError> {
        match self.value(s)? {
            Value::Int(i) => Ok(i),
            Value::Bool(_) => Err(EvalError::Type(ctx)),
        }
    }

    fn bool(&self, s: &ClientSignals, ctx: &'static str) -> Result<bool, EvalError> {
        match self.value(s)? {
            Value::Bool(b) => Ok(b),
            Value::Int(_) => Err(EvalError::Type(ctx)),
        }
    }

    fn value(&self, s: &ClientSignals) -> Result<Value, EvalError> {
        Ok(match self {
            Expr::Int(i) => Value::Int(*i),
            Expr::Signal(name) => {
                Value::Int(*s.values.get(name).ok_or_else(|| EvalError::MissingSignal(name.clone()))?)
            }
            Expr::Count { kind, window_ms } => {
                let now = s.events.iter().map(|e| e.ts_ms).max().unwrap_or(0);
                let from = now.saturating_sub(*window_ms);
                let n = s.events.iter().filter(|e| e.kind == *kind && e.ts_ms >= from).count();
                Value::Int(n as i64)
            }
            Expr::And(xs) => {
                let mut all = true;
                for x in xs {
                    all &= x.bool(s, "and")?;
                }
                Value::Bool(all)
            }
            Expr::Or(xs) => {
                let mut any = false;
                for x in xs {
                    any |= x.bool(s, "or")?;
                }
                Value::Bool(any)
            }
            Expr::Not(x) => Value::Bool(!x.bool(s, "not")?),
            Expr::Cmp(op, a, b) => {
                let (a, b) = (a.int(s, "comparison")?, b.int(s, "comparison")?);
                Value::Bool(match op {
                    CmpOp::Lt => a < b,
                    CmpOp::Le => a <= b,
                    CmpOp::Gt => a > b,
                    CmpOp::Ge => a >= b,
                    CmpOp::Eq => a == b,
                })
            }
            Expr::Add(xs) => {
                let mut sum = 0i64;
                for x in xs {
                    sum = sum.checked_add(x.int(s, "+")?).ok_or(EvalError::Overflow)?;
                }
                Value::Int(sum)
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Messages

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Challenge {
    pub round_id: u64,
    pub nonce: [u8; NONCE_LEN],
}

impl Challenge {
    pub fn to_bytes(&self) -> [u8; 8 + NONCE_LEN] {
        let mut out = [0u8; 8 + NONCE_LEN];
        out[..8].copy_from_slice(&self.round_id.to_be_bytes());
        out[8..].copy_from_slice(&self.nonce);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let round_id = r.u64("round id")?;
        let nonce = r.array::<NONCE_LEN>("nonce")?;
        r.finish("challenge")?;
        Ok(Self { round_id, nonce })
    }
}

/// `round_id (8) | nonce (16) | verdict (1) | signature (64)`.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct VerdictMessage {
    pub round_id: u64,
    pub nonce: [u8; NONCE_LEN],
    pub verdict: u8,
    pub signature: [u8; SIGNATURE_LEN],
}

impl fmt::Debug for VerdictMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VerdictMessage")
            .field("round_id", &self.round_id)
            .field("nonce", &hex::encode(self.nonce))
            .field("verdict", &self.verdict)
            .finish_non_exhaustive()
    }
}

fn verdict_signed_bytes(round_id: u64, nonce: &[u8; NONCE_LEN], verdict: u8) -> [u8; 25] {
    let mut out = [0u8; 25];
    out[..8].copy_from_slice(&round_id.to_be_bytes());
    out[8..24].copy_from_slice(nonce);
    out[24] = verdict;
    out
}

impl VerdictMessage {
    pub fn to_bytes(&self) -> [u8; VERDICT_LEN] {
        let mut out = [0u8; VERDICT_LEN];
        out[..25].copy_from_slice(&verdict_signed_bytes(self.round_id, &self.nonce, self.verdict));
        out[25..].copy_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let round_id = r.u64("round id")?;
        let nonce = r.array::<NONCE_LEN>("nonce")?;
        let verdict = r.u8("verdict")?;
        let signature = r.array::<SIGNATURE_LEN>("signature")?;
        r.finish("verdict message")?;
        Ok(Self { round_id, nonce, verdict, signature })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditFailure {
    BadLength,
    BadVerdictByte,
    BadNonce,
    BadSignature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditResult {
    Pass,
    Fail(AuditFailure),
}

/// Checks one outbound message against the public verdict format.
pub fn audit_message(bytes: &[u8], outstanding: &Challenge, verdict_key: &VerifyingKey) -> AuditResult {
    use AuditFailure::*;
    if bytes.len() != VERDICT_LEN {
        return AuditResult::Fail(BadLength);
    }
    let m = VerdictMessage::from_bytes(bytes).expect("length checked");
    if m.verdict > 1 {
        return AuditResult::Fail(BadVerdictByte);
    }
    if m.round_id != outstanding.round_id || m.nonce != outstanding.nonce {
        return AuditResult::Fail(BadNonce);
    }
    let msg = verdict_signed_bytes(m.round_id, &m.nonce, m.verdict);
    if !sig::verify(&msg, &Signature::from_bytes(&m.signature), verdict_key) {
        return AuditResult::Fail(BadSignature);
    }
    AuditResult::Pass
}

/// Host-side interposer on the glimmer's outbound verdict channel. Holds at
/// most one outstanding challenge.
#[derive(Debug)]
pub struct RuntimeAuditor {
    verdict_key: VerifyingKey,
    outstanding: Option<Challenge>,
    passed: u64,
    blocked: Vec<AuditFailure>,
}

impl RuntimeAuditor {
    pub fn new(verdict_key: VerifyingKey) -> Self {
        Self { verdict_key, outstanding: None, passed: 0, blocked: Vec::new() }
    }

    pub fn observe_challenge(&mut self, c: Challenge) {
        self.outstanding = Some(c);
    }

    /// Forwards `bytes` only if they pass the audit; the challenge is spent
    /// either way.
    pub fn forward(&mut self, bytes: &[u8]) -> Option<Vec<u8>> {
        let result = match &self.outstanding {
            Some(c) => audit_message(bytes, c, &self.verdict_key),
            None => AuditResult::Fail(AuditFailure::BadNonce),
        };
        self.outstanding = None;
        match result {
            AuditResult::Pass => {
                self.passed += 1;
                Some(bytes.to_vec())
            }
            AuditResult::Fail(reason) => {
                self.blocked.push(reason);
                None
            }
        }
    }

    pub fn passed(&self) -> u64 {
        self.passed
    }

    pub fn blocked(&self) -> &[AuditFailure] {
        &self.blocked
    }
}

// ---------------------------------------------------------------------------
// Actors

/// Service-side secret validator, before encryption.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretValidator {
    pub version: u32,
    pub source: String,
}

impl fmt::Debug for SecretValidator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretValidator").field("version", &self.version).finish_non_exhaustive()
    }
}

fn session_frame(kind: MessageType, session_id: u64, body: &[u8]) -> Frame {
    let mut payload = session_id.to_be_bytes().to_vec();
    payload.extend_from_slice(body);
    Frame::new(kind, payload)
}

fn split_session(payload: &[u8]) -> Result<(u64, &[u8]), DecodeError> {
    let mut r = Reader::new(payload);
    let id = r.u64("session id")?;
    Ok((id, r.remaining()))
}

fn expect_kind(frame: &Frame, kind: MessageType) -> Result<(), ConfidentialError> {
    if frame.kind == kind {
        Ok(())
    } else {
        Err(ConfidentialError::Unexpected(frame.kind.name()))
    }
}

pub struct ConfidentialService {
    ctx: EnclaveContext,
    credential: SigningKey,
    verdict_vk: Option<VerifyingKey>,
    approved: Measurement,
    root: VerifyingKey,
    validator: SecretValidator,
    rng: ChaCha20Rng,
    sessions: BTreeMap<u64, Session>,
    acked: BTreeMap<u64, u32>,
    next_session: u64,
}

impl ConfidentialService {
    /// `ctx` is only used to seal the verdict key to the approved glimmer.
    pub fn new(
        ctx: EnclaveContext,
        credential: SigningKey,
        approved: Measurement,
        root: VerifyingKey,
        validator: SecretValidator,
        seed: [u8; 32],
    ) -> Self {
        Self {
            ctx,
            credential,
            verdict_vk: None,
            approved,
            root,
            validator,
            rng: ChaCha20Rng::from_seed(seed),
            sessions: BTreeMap::new(),
            acked: BTreeMap::new(),
            next_session: 1,
        }
    }

    pub fn credential_public(&self) -> VerifyingKey {
        self.credential.verifying_key()
    }

    pub fn verdict_key(&self) -> Option<VerifyingKey> {
        self.verdict_vk
    }

    /// Creates the verdict signing key, sealed to the approved glimmer.
    pub fn provision_verdict_key(&mut self) -> SealedBlob {
        let mut seed = Zeroizing::new([0u8; 32]);
        self.rng.fill_bytes(seed.as_mut());
        let key = SigningKey::from_bytes(&seed);
        self.verdict_vk = Some(key.verifying_key());
        self.ctx.seal(&key.to_bytes(), &self.approved)
    }

    /// Answers a glimmer hello; refuses unless the quote attests the approved
    /// glimmer and binds the hello's ephemeral value.
    pub fn accept_hello(&mut self, frame: &Frame) -> Result<(u64, Frame), ConfidentialError> {
        expect_kind(frame, MessageType::AttestQuote)?;
        let hello = HandshakeMessage::from_bytes(&frame.payload)?;
        let hs = Handshake::new(Role::Responder, &mut self.rng);
        let reply = hs.signed_message(Some(&hello.ephemeral), &self.credential);
        let keys = hs.finish(&reply, &hello, &PeerCheck::Attested { expected: self.approved, root: self.root })?;
        let id = self.next_session;
        self.next_session += 1;
        self.sessions.insert(id, Session::new(keys));
        Ok((id, session_frame(MessageType::ServiceHello, id, &reply.to_bytes())))
    }

    pub fn install_frame(&mut self, session_id: u64) -> Result<Frame, ConfidentialError> {
        let session = self.sessions.get_mut(&session_id).ok_or(ConfidentialError::UnknownSession(session_id))?;
        let mut plain = Zeroizing::new(self.validator.version.to_be_bytes().to_vec());
        plain.extend_from_slice(self.validator.source.as_bytes());
        Ok(session_frame(MessageType::ValidatorInstall, session_id, &session.encrypt(&plain)))
    }

    pub fn handle_ack(&mut self, frame: &Frame) -> Result<u32, ConfidentialError> {
        expect_kind(frame, MessageType::ValidatorAck)?;
        let (id, body) = split_session(&frame.payload)?;
        if !self.sessions.contains_key(&id) {
            return Err(ConfidentialError::UnknownSession(id));
        }
        let mut r = Reader::new(body);
        let version = r.u32("version")?;
        r.finish("validator ack")?;
        self.acked.insert(id, version);
        Ok(version)
    }

    pub fn challenge(&mut self, round_id: u64) -> Challenge {
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        Challenge { round_id, nonce }
    }
}

/// The glimmer's confidential-validation program.
pub struct ConfidentialGlimmer {
    ctx: EnclaveContext,
    service_key: VerifyingKey,
    verdict_key: SealedBlob,
    pending: Option<(Handshake, HandshakeMessage)>,
    session: Option<(u64, Session)>,
    installed: Option<u32>,
    eval_log: Vec<String>,
}

impl ConfidentialGlimmer {
    pub fn new(ctx: EnclaveContext, verdict_key: SealedBlob) -> Result<Self, ConfidentialError> {
        let service_key = GlimmerImage::embedded_service_key(ctx.code()).ok_or(ConfidentialError::NoServiceKey)?;
        Ok(Self { ctx, service_key, verdict_key, pending: None, session: None, installed: None, eval_log: Vec::new() })
    }

    pub fn measurement(&self) -> Measurement {
        self.ctx.measurement()
    }

    pub fn installed_version(&self) -> Option<u32> {
        self.installed
    }

    /// Local-only record of evaluation failures.
    pub fn eval_log(&self) -> &[String] {
        &self.eval_log
    }

    pub fn heap_stats(&self) -> crate::tee::HeapStats {
        self.ctx.heap_stats()
    }

    /// First handshake message, bound to this enclave by a quote.
    pub fn hello(&mut self) -> Frame {
        let hs = Handshake::new(Role::Initiator, self.ctx.rng());
        let quote = self.ctx.quote(&hs.payload(None)).expect("payload is 64 bytes");
        let msg = hs.message(Binding::Quote(quote));
        let frame = Frame::new(MessageType::AttestQuote, msg.to_bytes());
        self.pending = Some((hs, msg));
        frame
    }

    /// Completes the channel if the service signed with the embedded key.
    pub fn on_service_hello(&mut self, frame: &Frame) -> Result<(), ConfidentialError> {
        expect_kind(frame, MessageType::ServiceHello)?;
        let (hs, mine) = self.pending.take().ok_or(ConfidentialError::NoSession)?;
        let (id, body) = split_session(&frame.payload)?;
        let reply = HandshakeMessage::from_bytes(body)?;
        let keys = hs.finish(&mine, &reply, &PeerCheck::SignedBy(self.service_key))?;
        self.session = Some((id, Session::new(keys)));
        Ok(())
    }

    /// Decrypts and installs the validator; acknowledges with the version only.
    pub fn deliver_validator(&mut self, frame: &Frame) -> Result<Frame, ConfidentialError> {
        expect_kind(frame, MessageType::ValidatorInstall)?;
        let (id, session) = self.session.as_mut().ok_or(ConfidentialError::NoSession)?;
        let id = *id;
        let (fid, body) = split_session(&frame.payload)?;
        if fid != id {
            return Err(ConfidentialError::UnknownSession(fid));
        }
        let plain = session.decrypt(body).map_err(|_| ConfidentialError::DecryptFailure)?;
        if plain.len() < 4 {
            return Err(ConfidentialError::MalformedPolicy("missing version".into()));
        }
        let version = u32::from_be_bytes(plain[..4].try_into().expect("4 bytes"));
        let source = std::str::from_utf8(&plain[4..]).map_err(|_| ConfidentialError::MalformedPolicy("not utf-8".into()))?;
        parse_policy(source)?;
        self.ctx.ecall(|ctx| ctx.heap().put("validator", plain[4..].to_vec()));
        self.installed = Some(version);
        Ok(session_frame(MessageType::ValidatorAck, id, &version.to_be_bytes()))
    }

    /// Evaluates the installed policy and signs the one-bit verdict.
    pub fn run_confidential(
        &mut self,
        signals: &ClientSignals,
        challenge: &Challenge,
    ) -> Result<VerdictMessage, ConfidentialError> {
        if self.installed.is_none() {
            return Err(ConfidentialError::NotInstalled);
        }
        let key_bytes = self.ctx.unseal(&self.verdict_key).map_err(|_| ConfidentialError::KeyUnavailable)?;
        let key_bytes: [u8; 32] = key_bytes.as_slice().try_into().map_err(|_| ConfidentialError::KeyUnavailable)?;
        let key = SigningKey::from_bytes(&key_bytes);
        let outcome = self.ctx.ecall(|ctx| {
            let src = ctx.heap().get("validator").expect("installed").to_vec();
            let src = Zeroizing::new(src);
            let expr = parse_policy(std::str::from_utf8(&src).expect("checked at install"))
                .expect("checked at install");
            expr.eval(signals)
        });
        let verdict = match outcome {
            Ok(b) => b as u8,
            Err(e) => {
                self.eval_log.push(format!("round {}: {e}", challenge.round_id));
                0
            }
        };
        let msg = verdict_signed_bytes(challenge.round_id, &challenge.nonce, verdict);
        let signature = sig::sign(&msg, &key).to_bytes();
        Ok(VerdictMessage { round_id: challenge.round_id, nonce: challenge.nonce, verdict, signature })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tee::{measure, TeePlatform};
    use proptest::prelude::*;

    const POLICY: &str = r#"
        ; POLICY-SENTINEL-7f3a
        (and (>= (count keypress 10000) 3)
             (< (signal mouse_jitter) 40))
    "#;

    fn human() -> ClientSignals {
        ClientSignals {
            values: [("mouse_jitter".to_string(), 12)].into(),
            events: (0..5).map(|i| SignalEvent { ts_ms: 1000 + 700 * i, kind: "keypress".into() }).collect(),
        }
    }

    struct Setup {
        service: ConfidentialService,
        glimmer: ConfidentialGlimmer,
        wire: Vec<Frame>,
    }

    fn setup_with(code_for: impl FnOnce(Vec<u8>) -> Vec<u8>, service_seed: u8) -> Result<Setup, ConfidentialError> {
        let platform = TeePlatform::from_seed([31u8; 32]);
        let credential = sig::signing_key_from_seed(&[32u8; 32]);
        let code = GlimmerImage::new("conf-1", Some(credential.verifying_key())).build();
        let approved = measure(&code);
        let svc_cred = sig::signing_key_from_seed(&[service_seed; 32]);
        let mut service = ConfidentialService::new(
            platform.launch(b"svc".to_vec(), "svc"),
            svc_cred,
            approved,
            platform.attestation_public(),
            SecretValidator { version: 7, source: POLICY.into() },
            [33u8; 32],
        );
        let sealed = service.provision_verdict_key();
        let glimmer = ConfidentialGlimmer::new(platform.launch(code_for(code), "glimmer"), sealed)?;
        Ok(Setup { service, glimmer, wire: Vec::new() })
    }

    fn establish(s: &mut Setup) -> Result<u64, ConfidentialError> {
        let hello = s.glimmer.hello();
        s.wire.push(hello.clone());
        let (id, reply) = s.service.accept_hello(&hello)?;
        s.wire.push(reply.clone());
        s.glimmer.on_service_hello(&reply)?;
        let install = s.service.install_frame(id)?;
        s.wire.push(install.clone());
        let ack = s.glimmer.deliver_validator(&install)?;
        s.wire.push(ack.clone());
        assert_eq!(s.service.handle_ack(&ack)?, 7);
        Ok(id)
    }

    #[test]
    fn parses_and_evaluates() {
        let e = parse_policy(POLICY).unwrap();
        assert!(e.eval(&human()).unwrap());
        assert!(!e.eval(&ClientSignals { values: human().values, events: vec![] }).unwrap());
        assert_eq!(
            parse_policy("(+ 1 (signal mouse_jitter))").unwrap().eval(&human()),
            Err(EvalError::Type("policy result"))
        );
        assert_eq!(
            parse_policy("(= (signal nope) 1)").unwrap().eval(&human()),
            Err(EvalError::MissingSignal("nope".into()))
        );
        assert!(parse_policy("(or (not (= 1 2)) (> 0 1))").unwrap().eval(&human()).unwrap());
        for bad in ["", "(", "(and)", "(frob 1)", "(< 1)", "1 2", "x", "(count k soon)", "(\"unterminated"] {
            assert!(matches!(parse_policy(bad), Err(ConfidentialError::MalformedPolicy(_))), "{bad}");
        }
        let deep = "(not ".repeat(100) + "(= 1 1)" + &")".repeat(100);
        assert!(parse_policy(&deep).is_err());
    }

    #[test]
    fn count_windows_back_from_latest_event() {
        let s = ClientSignals {
            values: BTreeMap::new(),
            events: vec![
                SignalEvent { ts_ms: 0, kind: "k".into() },
                SignalEvent { ts_ms: 5000, kind: "k".into() },
                SignalEvent { ts_ms: 5500, kind: "m".into() },
            ],
        };
        assert!(parse_policy("(= (count k 1000) 1)").unwrap().eval(&s).unwrap());
        assert!(parse_policy("(= (count k 5500) 2)").unwrap().eval(&s).unwrap());
    }

    #[test]
    fn end_to_end_verdicts_pass_audit() {
        let mut s = setup_with(|c| c, 32).unwrap();
        establish(&mut s).unwrap();
        let vk = s.service.verdict_key().unwrap();
        let mut auditor = RuntimeAuditor::new(vk);

        let c = s.service.challenge(1);
        auditor.observe_challenge(c);
        let m = s.glimmer.run_confidential(&human(), &c).unwrap();
        assert_eq!(m.verdict, 1);
        assert!(auditor.forward(&m.to_bytes()).is_some());

        let c2 = s.service.challenge(2);
        auditor.observe_challenge(c2);
        let m2 = s.glimmer.run_confidential(&ClientSignals::default(), &c2).unwrap();
        assert_eq!(m2.verdict, 0);
        assert!(auditor.forward(&m2.to_bytes()).is_some());
        assert_eq!(s.glimmer.eval_log().len(), 1);
        assert_eq!(auditor.passed(), 2);

        // Plaintext policy never crosses the wire.
        for f in &s.wire {
            assert!(!f.encode().windows(20).any(|w| w == b"POLICY-SENTINEL-7f3a"));
            assert!(!f.encode().windows(8).any(|w| w == b"keypress"));
        }
    }

    #[test]
    fn same_inputs_give_identical_bytes_and_nonces_only_change_echo_and_signature() {
        let mut s = setup_with(|c| c, 32).unwrap();
        establish(&mut s).unwrap();
        let c = Challenge { round_id: 5, nonce: [7u8; 16] };
        let a = s.glimmer.run_confidential(&human(), &c).unwrap().to_bytes();
        let b = s.glimmer.run_confidential(&human(), &c).unwrap().to_bytes();
        assert_eq!(a, b);
        let c2 = Challenge { round_id: 5, nonce: [8u8; 16] };
        let d = s.glimmer.run_confidential(&human(), &c2).unwrap().to_bytes();
        let diff: Vec<usize> = (0..VERDICT_LEN).filter(|i| a[*i] != d[*i]).collect();
        assert!(diff.iter().all(|i| (8..24).contains(i) || *i >= 25));
        assert_eq!(a[..8], d[..8]);
        assert_eq!(a[24], d[24]);
    }

    #[test]
    fn audit_rules() {
        let key = sig::signing_key_from_seed(&[1u8; 32]);
        let vk = key.verifying_key();
        let c = Challenge { round_id: 3, nonce: [9u8; 16] };
        let make = |verdict: u8| {
            let msg = verdict_signed_bytes(3, &c.nonce, verdict);
            VerdictMessage { round_id: 3, nonce: c.nonce, verdict, signature: sig::sign(&msg, &key).to_bytes() }
                .to_bytes()
                .to_vec()
        };
        assert_eq!(audit_message(&make(1), &c, &vk), AuditResult::Pass);
        assert_eq!(audit_message(&make(0), &c, &vk), AuditResult::Pass);
        let mut long = make(1);
        long.push(0);
        assert_eq!(audit_message(&long, &c, &vk), AuditResult::Fail(AuditFailure::BadLength));
        assert_eq!(audit_message(&make(2), &c, &vk), AuditResult::Fail(AuditFailure::BadVerdictByte));
        let other = Challenge { round_id: 3, nonce: [1u8; 16] };
        assert_eq!(audit_message(&make(1), &other, &vk), AuditResult::Fail(AuditFailure::BadNonce));
        let mut flipped = make(1);
        flipped[24] = 0;
        assert_eq!(audit_message(&flipped, &c, &vk), AuditResult::Fail(AuditFailure::BadSignature));
    }

    #[test]
    fn fake_service_is_refused() {
        let mut s = setup_with(|c| c, 99).unwrap();
        assert_eq!(establish(&mut s), Err(ConfidentialError::BindingFailure));
    }

    #[test]
    fn fake_glimmer_is_refused_and_cannot_sign() {
        let mut s = setup_with(|c| crate::pipeline::tamper_code(&c), 32).unwrap();
        assert_eq!(establish(&mut s), Err(ConfidentialError::BindingFailure));
        let c = Challenge { round_id: 1, nonce: [0u8; 16] };
        assert_eq!(s.glimmer.run_confidential(&human(), &c), Err(ConfidentialError::NotInstalled));
    }

    #[test]
    fn glimmer_without_embedded_key_refuses() {
        let platform = TeePlatform::from_seed([31u8; 32]);
        let code = GlimmerImage::new("conf-1", None).build();
        let blob = platform.launch(b"x".to_vec(), "x").seal(b"k", &measure(&code));
        assert!(matches!(
            ConfidentialGlimmer::new(platform.launch(code, "g"), blob),
            Err(ConfidentialError::NoServiceKey)
        ));
    }

    #[test]
    fn corrupted_install_is_rejected() {
        let mut s = setup_with(|c| c, 32).unwrap();
        let hello = s.glimmer.hello();
        let (id, reply) = s.service.accept_hello(&hello).unwrap();
        s.glimmer.on_service_hello(&reply).unwrap();
        let mut install = s.service.install_frame(id).unwrap();
        let last = install.payload.len() - 1;
        install.payload[last] ^= 1;
        assert_eq!(s.glimmer.deliver_validator(&install), Err(ConfidentialError::DecryptFailure));
    }

    proptest! {
        #[test]
        fn auditor_passes_only_well_formed(bytes in prop::collection::vec(any::<u8>(), 0..=256)) {
            let key = sig::signing_key_from_seed(&[1u8; 32]);
            let c = Challenge { round_id: 3, nonce: [9u8; 16] };
            prop_assert_ne!(audit_message(&bytes, &c, &key.verifying_key()), AuditResult::Pass);
        }
    }
}

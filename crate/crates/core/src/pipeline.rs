//! The enclave program: Validation, then Blinding, then Signing.
//!
//! [`run_glimmer`] copies its inputs into the enclave heap, unseals the
//! round pad and the service signing key, validates, blinds and signs. Every
//! exit path wipes the heap, and the only bytes produced are one
//! [`SignedContribution`] in its canonical layout.

use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop, Zeroizing};

use crate::client::{self, ClientId, EventLog, KeyEvent, Normalization};
use crate::codec::{put_bytes32, DecodeError, Reader};
use crate::crypto::sig::{self, Signature, SigningKey, VerifyingKey, SIGNATURE_LEN};
use crate::crypto::{blind, FixedWeight, ModelVector, Pad};
use crate::tee::{EnclaveContext, SealedBlob, TeeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    RangeCheck,
    Corroboration,
    /// Range check and corroboration must both pass.
    Composite,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationPolicy {
    pub kind: PolicyKind,
    pub lo: FixedWeight,
    pub hi: FixedWeight,
    /// Largest allowed per-entry deviation from the retrained model, raw units.
    pub tolerance: u64,
    pub vocab_size: usize,
    pub normalization: Normalization,
}

impl ValidationPolicy {
    pub fn range() -> Self {
        Self {
            kind: PolicyKind::RangeCheck,
            lo: FixedWeight::ZERO,
            hi: FixedWeight::ONE,
            tolerance: 0,
            vocab_size: 0,
            normalization: Normalization::Joint,
        }
    }

    pub fn corroboration(vocab_size: usize, tolerance: u64) -> Self {
        Self { kind: PolicyKind::Corroboration, tolerance, vocab_size, ..Self::range() }
    }

    pub fn composite(vocab_size: usize, tolerance: u64) -> Self {
        Self { kind: PolicyKind::Composite, ..Self::corroboration(vocab_size, tolerance) }
    }

    pub fn is_well_formed(&self) -> bool {
        self.lo <= self.hi
    }

    /// `kind (1) | lo (8) | hi (8) | tolerance (8) | vocab (4) | normalization (1)`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(30);
        out.push(match self.kind {
            PolicyKind::RangeCheck => 1,
            PolicyKind::Corroboration => 2,
            PolicyKind::Composite => 3,
        });
        out.extend_from_slice(&self.lo.0.to_be_bytes());
        out.extend_from_slice(&self.hi.0.to_be_bytes());
        out.extend_from_slice(&self.tolerance.to_be_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_be_bytes());
        out.push(match self.normalization {
            Normalization::Joint => 0,
            Normalization::Conditional => 1,
        });
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let kind = match r.u8("policy kind")? {
            1 => PolicyKind::RangeCheck,
            2 => PolicyKind::Corroboration,
            3 => PolicyKind::Composite,
            k => return Err(DecodeError::Invalid { what: "policy kind", detail: k.to_string() }),
        };
        let lo = FixedWeight(r.u64("policy lo")?);
        let hi = FixedWeight(r.u64("policy hi")?);
        let tolerance = r.u64("policy tolerance")?;
        let vocab_size = r.u32("policy vocab")? as usize;
        let normalization = match r.u8("policy normalization")? {
            0 => Normalization::Joint,
            1 => Normalization::Conditional,
            k => return Err(DecodeError::Invalid { what: "policy normalization", detail: k.to_string() }),
        };
        r.finish("policy")?;
        Ok(Self { kind, lo, hi, tolerance, vocab_size, normalization })
    }
}

/// A rational confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confidence {
    num: u64,
    den: u64,
}

impl Confidence {
    pub const ONE: Confidence = Confidence { num: 1, den: 1 };
    pub const ZERO: Confidence = Confidence { num: 0, den: 1 };

    /// Clamps `num / den` into `[0, 1]`.
    pub fn ratio(num: u64, den: u64) -> Self {
        assert!(den > 0, "zero denominator");
        Confidence { num: num.min(den), den }
    }

    /// `floor(confidence × 255)`
    pub fn to_byte(self) -> u8 {
        (self.num as u128 * 255 / self.den as u128) as u8
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn min(self, other: Confidence) -> Confidence {
        if (self.num as u128 * other.den as u128) <= (other.num as u128 * self.den as u128) {
            self
        } else {
            other
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictReason {
    Ok,
    OutOfRange { index: usize, raw: u64 },
    Deviation { index: usize, deviation: u64 },
    EmptyLog,
    BadLog,
    LengthMismatch { expected: usize, got: usize },
    MalformedPolicy,
}

impl VerdictReason {
    pub fn code(&self) -> &'static str {
        match self {
            VerdictReason::Ok => "ok",
            VerdictReason::OutOfRange { .. } => "out_of_range",
            VerdictReason::Deviation { .. } => "deviation",
            VerdictReason::EmptyLog => "empty_log",
            VerdictReason::BadLog => "bad_log",
            VerdictReason::LengthMismatch { .. } => "length_mismatch",
            VerdictReason::MalformedPolicy => "malformed_policy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationVerdict {
    pub valid: bool,
    pub confidence: Confidence,
    pub reason: VerdictReason,
}

impl ValidationVerdict {
    fn pass(confidence: Confidence) -> Self {
        Self { valid: true, confidence, reason: VerdictReason::Ok }
    }

    fn fail(reason: VerdictReason) -> Self {
        Self { valid: false, confidence: Confidence::ZERO, reason }
    }
}

/// Private data the validator may consult. Never leaves the enclave.
#[derive(Debug, Clone, Default, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct PrivateValidationData {
    pub keyboard_event_log: Vec<KeyEvent>,
    pub auxiliary: Vec<u8>,
}

impl PrivateValidationData {
    pub fn from_log(log: &EventLog) -> Self {
        Self { keyboard_event_log: log.events().to_vec(), auxiliary: Vec::new() }
    }

    pub fn to_bytes(&self) -> Zeroizing<Vec<u8>> {
        let mut out = Vec::with_capacity(8 + self.keyboard_event_log.len() * 12 + self.auxiliary.len());
        out.extend_from_slice(&(self.keyboard_event_log.len() as u32).to_be_bytes());
        for e in &self.keyboard_event_log {
            out.extend_from_slice(&e.ts_ms.to_be_bytes());
            out.extend_from_slice(&e.word.to_be_bytes());
        }
        put_bytes32(&mut out, &self.auxiliary);
        Zeroizing::new(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let n = r.u32("event count")? as usize;
        let mut events = Vec::with_capacity(n.min(bytes.len() / 12));
        for _ in 0..n {
            let ts_ms = r.u64("event timestamp")?;
            let word = r.u32("event word")?;
            events.push(KeyEvent { ts_ms, word });
        }
        let auxiliary = r.bytes32("auxiliary")?.to_vec();
        r.finish("private validation data")?;
        Ok(Self { keyboard_event_log: events, auxiliary })
    }
}

pub fn validate_range(x: &ModelVector, policy: &ValidationPolicy) -> ValidationVerdict {
    if !policy.is_well_formed() {
        return ValidationVerdict::fail(VerdictReason::MalformedPolicy);
    }
    match x.entries.iter().position(|w| *w < policy.lo || *w > policy.hi) {
        Some(index) => ValidationVerdict::fail(VerdictReason::OutOfRange { index, raw: x.entries[index].0 }),
        None => ValidationVerdict::pass(Confidence::ONE),
    }
}

/// Retrains from the private log and compares entry by entry.
pub fn validate_corroboration(
    x: &ModelVector,
    d: &PrivateValidationData,
    policy: &ValidationPolicy,
) -> ValidationVerdict {
    if d.keyboard_event_log.is_empty() {
        return ValidationVerdict::fail(VerdictReason::EmptyLog);
    }
    let v = policy.vocab_size;
    if x.len() != v * v {
        return ValidationVerdict::fail(VerdictReason::LengthMismatch { expected: v * v, got: x.len() });
    }
    let Ok(log) = EventLog::new(d.keyboard_event_log.clone(), v) else {
        return ValidationVerdict::fail(VerdictReason::BadLog);
    };
    let recomputed = client::train_log(&log, v, policy.normalization);
    let (index, deviation) = x
        .entries
        .iter()
        .zip(&recomputed.entries)
        .map(|(a, b)| a.0.abs_diff(b.0))
        .enumerate()
        .fold((0, 0), |best, (i, dev)| if dev > best.1 { (i, dev) } else { best });
    if deviation > policy.tolerance {
        return ValidationVerdict::fail(VerdictReason::Deviation { index, deviation });
    }
    let confidence = if policy.tolerance == 0 {
        Confidence::ONE
    } else {
        Confidence::ratio(policy.tolerance - deviation, policy.tolerance)
    };
    ValidationVerdict::pass(confidence)
}

pub fn validate(x: &ModelVector, d: &PrivateValidationData, policy: &ValidationPolicy) -> ValidationVerdict {
    match policy.kind {
        PolicyKind::RangeCheck => validate_range(x, policy),
        PolicyKind::Corroboration => validate_corroboration(x, d, policy),
        PolicyKind::Composite => {
            let range = validate_range(x, policy);
            if !range.valid {
                return range;
            }
            let corr = validate_corroboration(x, d, policy);
            if !corr.valid {
                return corr;
            }
            ValidationVerdict::pass(range.confidence.min(corr.confidence))
        }
    }
}

/// A validated, (optionally) blinded and signed contribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedContribution {
    pub round_id: u64,
    pub client_id: ClientId,
    /// Plaintext entries when set, blinded entries otherwise.
    pub public: bool,
    pub entries: Vec<u64>,
    pub confidence: u8,
    pub signature: [u8; SIGNATURE_LEN],
}

/// Size of the canonical layout for `v` entries.
pub const fn canonical_len(v: usize) -> usize {
    8 + 8 + 1 + 4 + 8 * v + 1 + SIGNATURE_LEN
}

impl SignedContribution {
    /// Everything the signature covers:
    /// `round_id (8) | client_id (8) | public_flag (1) | len (4) | entries (8 each) | confidence (1)`
    pub fn signed_bytes(round_id: u64, client_id: ClientId, public: bool, entries: &[u64], confidence: u8) -> Vec<u8> {
        let mut out = Vec::with_capacity(canonical_len(entries.len()));
        out.extend_from_slice(&round_id.to_be_bytes());
        out.extend_from_slice(&client_id.to_be_bytes());
        out.push(public as u8);
        out.extend_from_slice(&(entries.len() as u32).to_be_bytes());
        for e in entries {
            out.extend_from_slice(&e.to_be_bytes());
        }
        out.push(confidence);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Self::signed_bytes(self.round_id, self.client_id, self.public, &self.entries, self.confidence);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let round_id = r.u64("round id")?;
        let client_id = r.u64("client id")?;
        let public = match r.u8("public flag")? {
            0 => false,
            1 => true,
            b => return Err(DecodeError::Invalid { what: "public flag", detail: b.to_string() }),
        };
        let entries = r.u64_vec("entries")?;
        let confidence = r.u8("confidence")?;
        let signature = r.array("signature")?;
        r.finish("signed contribution")?;
        Ok(Self { round_id, client_id, public, entries, confidence, signature })
    }

    pub fn verify(&self, vk: &VerifyingKey) -> bool {
        let msg = Self::signed_bytes(self.round_id, self.client_id, self.public, &self.entries, self.confidence);
        sig::verify(&msg, &Signature::from_bytes(&self.signature), vk)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GlimmerError {
    #[error("validation failed: {}", .0.reason.code())]
    ValidationFailed(ValidationVerdict),
    #[error("unseal failed: {0}")]
    UnsealFailure(TeeError),
    #[error("round mismatch: pad for {pad}, contribution for {contribution}")]
    RoundMismatch { pad: u64, contribution: u64 },
    #[error("length mismatch: pad {pad}, contribution {contribution}")]
    LengthMismatch { pad: usize, contribution: usize },
    #[error("blinded contribution requires a sealed pad")]
    MissingPad,
    #[error("policy differs from the one provisioned with the signing key")]
    PolicyRejected,
    #[error("sealed signing key is malformed")]
    BadSealedKey,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

impl GlimmerError {
    pub fn code(&self) -> &'static str {
        match self {
            GlimmerError::ValidationFailed(v) => v.reason.code(),
            GlimmerError::UnsealFailure(_) => "unseal_failure",
            GlimmerError::RoundMismatch { .. } => "round_mismatch",
            GlimmerError::LengthMismatch { .. } => "length_mismatch",
            GlimmerError::MissingPad => "missing_pad",
            GlimmerError::PolicyRejected => "policy_rejected",
            GlimmerError::BadSealedKey => "bad_sealed_key",
            GlimmerError::Decode(_) => "decode",
        }
    }
}

/// Signing material sealed by the service: the key and, optionally, the only
/// policy this key may endorse under.
pub struct ProvisionedKey {
    pub signing_key: SigningKey,
    pub policy: Option<ValidationPolicy>,
}

impl ProvisionedKey {
    pub fn to_bytes(&self) -> Zeroizing<Vec<u8>> {
        let mut out = Zeroizing::new(Vec::with_capacity(64));
        out.extend_from_slice(&self.signing_key.to_bytes());
        if let Some(p) = &self.policy {
            out.extend_from_slice(&p.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GlimmerError> {
        if bytes.len() < 32 {
            return Err(GlimmerError::BadSealedKey);
        }
        let mut seed = Zeroizing::new([0u8; 32]);
        seed.copy_from_slice(&bytes[..32]);
        let policy = if bytes.len() > 32 {
            Some(ValidationPolicy::from_bytes(&bytes[32..]).map_err(|_| GlimmerError::BadSealedKey)?)
        } else {
            None
        };
        Ok(Self { signing_key: SigningKey::from_bytes(&seed), policy })
    }
}

/// Sealed inputs for one round.
#[derive(Debug, Clone)]
pub struct RoundSeals {
    pub pad: Option<SealedBlob>,
    pub signing_key: SealedBlob,
}

/// Whether the contribution is blinded before signing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disclosure {
    Blinded,
    /// Non-private contributions are signed in the clear.
    Public,
}

/// Runs the three-stage pipeline inside `ctx`.
pub fn run_glimmer(
    ctx: &mut EnclaveContext,
    client_id: ClientId,
    mut x: ModelVector,
    d: PrivateValidationData,
    seals: &RoundSeals,
    policy: &ValidationPolicy,
    disclosure: Disclosure,
) -> Result<SignedContribution, GlimmerError> {
    ctx.ecall(|ctx| {
        ctx.heap().put("x", x.to_bytes());
        ctx.heap().put("d", d.to_bytes().to_vec());
        x.zeroize();
        drop(d);
        let out = pipeline(ctx, client_id, seals, policy, disclosure);
        ctx.heap().wipe();
        out
    })
}

fn pipeline(
    ctx: &mut EnclaveContext,
    client_id: ClientId,
    seals: &RoundSeals,
    policy: &ValidationPolicy,
    disclosure: Disclosure,
) -> Result<SignedContribution, GlimmerError> {
    let key_bytes = ctx.unseal(&seals.signing_key).map_err(GlimmerError::UnsealFailure)?;
    let key = ProvisionedKey::from_bytes(&key_bytes)?;
    drop(key_bytes);
    let pad = match (disclosure, &seals.pad) {
        (Disclosure::Blinded, None) => return Err(GlimmerError::MissingPad),
        (Disclosure::Blinded, Some(blob)) => {
            let bytes = ctx.unseal(blob).map_err(GlimmerError::UnsealFailure)?;
            Some(Pad::from_bytes(&bytes)?)
        }
        (Disclosure::Public, _) => None,
    };
    if key.policy.as_ref().is_some_and(|p| p != policy) {
        return Err(GlimmerError::PolicyRejected);
    }

    let x = ModelVector::from_bytes(ctx.heap().get("x").expect("copied in"))?;
    let d = PrivateValidationData::from_bytes(ctx.heap().get("d").expect("copied in"))?;
    let mut x = Zeroizing::new(x);

    if let Some(p) = &pad {
        if p.round_id != x.round_id {
            return Err(GlimmerError::RoundMismatch { pad: p.round_id, contribution: x.round_id });
        }
        if p.entries.len() != x.len() {
            return Err(GlimmerError::LengthMismatch { pad: p.entries.len(), contribution: x.len() });
        }
    }

    let verdict = validate(&x, &d, policy);
    drop(d);
    if !verdict.valid {
        return Err(GlimmerError::ValidationFailed(verdict));
    }

    let entries = match pad {
        Some(mut p) => {
            let y = blind(&x, &p).expect("round and length checked above");
            p.zeroize();
            y.entries
        }
        None => x.raw(),
    };
    let confidence = verdict.confidence.to_byte();
    let public = disclosure == Disclosure::Public;
    let msg = SignedContribution::signed_bytes(x.round_id, client_id, public, &entries, confidence);
    let signature = sig::sign(&msg, &key.signing_key).to_bytes();
    let sc = SignedContribution { round_id: x.round_id, client_id, public, entries, confidence, signature };
    x.zeroize();
    assert_eq!(msg.len() + SIGNATURE_LEN, canonical_len(sc.entries.len()));
    Ok(sc)
}

/// Builder for glimmer code blobs. The measured code embeds the version and
/// the service's handshake verification key.
#[derive(Debug, Clone)]
pub struct GlimmerImage {
    pub version: String,
    pub service_key: Option<VerifyingKey>,
}

const IMAGE_MAGIC: &[u8; 8] = b"GLIMMER\0";

impl GlimmerImage {
    pub fn new(version: &str, service_key: Option<VerifyingKey>) -> Self {
        Self { version: version.to_owned(), service_key }
    }

    pub fn build(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(IMAGE_MAGIC);
        put_bytes32(&mut out, self.version.as_bytes());
        match &self.service_key {
            Some(k) => {
                out.push(1);
                out.extend_from_slice(k.as_bytes());
            }
            None => out.push(0),
        }
        // Stand-in for the validation/blinding/signing program text.
        out.extend_from_slice(b"validate;blind;sign;discard");
        out
    }

    /// The service verification key embedded in `code`, if any.
    pub fn embedded_service_key(code: &[u8]) -> Option<VerifyingKey> {
        let mut r = Reader::new(code);
        if r.take(8, "magic").ok()? != IMAGE_MAGIC {
            return None;
        }
        r.bytes32("version").ok()?;
        match r.u8("key flag").ok()? {
            1 => VerifyingKey::from_bytes(&r.array("service key").ok()?).ok(),
            _ => None,
        }
    }
}

/// `code` with one byte flipped in the program text.
pub fn tamper_code(code: &[u8]) -> Vec<u8> {
    let mut c = code.to_vec();
    let last = c.len() - 1;
    c[last] ^= 0x01;
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{bigram_id, train_local};
    use crate::crypto::{gen_pads, SCALE};
    use crate::tee::TeePlatform;

    fn x_with(raw: Vec<u64>) -> ModelVector {
        ModelVector::from_raw(1, raw)
    }

    #[test]
    fn range_check_examples() {
        let p = ValidationPolicy::range();
        let ok = validate_range(&x_with(vec![0, 5, SCALE]), &p);
        assert!(ok.valid);
        assert_eq!(ok.confidence, Confidence::ONE);

        let attack = validate_range(&x_with(vec![0, 538 * SCALE, 9]), &p);
        assert!(!attack.valid);
        assert_eq!(attack.reason, VerdictReason::OutOfRange { index: 1, raw: 538_000_000 });

        assert!(validate_range(&x_with(vec![SCALE]), &p).valid);
        assert!(!validate_range(&x_with(vec![SCALE + 1]), &p).valid);

        let inverted = ValidationPolicy { lo: FixedWeight(5), hi: FixedWeight(4), ..ValidationPolicy::range() };
        assert_eq!(validate_range(&x_with(vec![4]), &inverted).reason, VerdictReason::MalformedPolicy);
    }

    fn words_log(words: &[u32], v: usize) -> (EventLog, PrivateValidationData) {
        let log = EventLog::from_words(words, v).unwrap();
        let d = PrivateValidationData::from_log(&log);
        (log, d)
    }

    #[test]
    fn corroboration_examples() {
        let v = 3;
        let words = [0, 1, 2, 0, 1];
        let (_, d) = words_log(&words, v);
        let honest = train_local(&words, v, Normalization::Joint);

        let exact = validate_corroboration(&honest, &d, &ValidationPolicy::corroboration(v, 0));
        assert!(exact.valid);
        assert_eq!(exact.confidence, Confidence::ONE);

        // In range but unrelated to the log: deviation 1_000_000 at (2,2).
        let mut fabricated = ModelVector::zeros(0, v * v);
        fabricated.entries[bigram_id(2, 2, v)] = FixedWeight(SCALE);
        let verdict = validate_corroboration(&fabricated, &d, &ValidationPolicy::corroboration(v, 1_000));
        assert!(!verdict.valid);
        assert!(validate_range(&fabricated, &ValidationPolicy::range()).valid);

        // Perturbed by exactly the tolerance.
        let mut nudged = honest.clone();
        nudged.entries[bigram_id(0, 1, v)].0 += 1_000;
        let verdict = validate_corroboration(&nudged, &d, &ValidationPolicy::corroboration(v, 1_000));
        assert!(verdict.valid);
        assert_eq!(verdict.confidence.to_byte(), 0);
        nudged.entries[bigram_id(0, 1, v)].0 += 1;
        assert!(!validate_corroboration(&nudged, &d, &ValidationPolicy::corroboration(v, 1_000)).valid);

        let half = {
            let mut m = honest.clone();
            m.entries[0].0 += 500;
            m
        };
        let c = validate_corroboration(&half, &d, &ValidationPolicy::corroboration(v, 1_000)).confidence;
        assert_eq!(c.to_byte(), 127); // floor(0.5 * 255)
    }

    #[test]
    fn corroboration_rejects_empty_or_bad_logs() {
        let v = 2;
        let zero = ModelVector::zeros(0, 4);
        let empty = PrivateValidationData::default();
        assert_eq!(
            validate_corroboration(&zero, &empty, &ValidationPolicy::corroboration(v, 0)).reason,
            VerdictReason::EmptyLog
        );
        let bad = PrivateValidationData {
            keyboard_event_log: vec![KeyEvent { ts_ms: 1, word: 7 }],
            auxiliary: vec![],
        };
        assert_eq!(
            validate_corroboration(&zero, &bad, &ValidationPolicy::corroboration(v, 0)).reason,
            VerdictReason::BadLog
        );
        assert!(matches!(
            validate_corroboration(&ModelVector::zeros(0, 3), &bad, &ValidationPolicy::corroboration(v, 0)).reason,
            VerdictReason::LengthMismatch { .. }
        ));
    }

    #[test]
    fn composite_needs_both() {
        let v = 2;
        let words = [0, 1];
        let (_, d) = words_log(&words, v);
        let honest = train_local(&words, v, Normalization::Joint);
        assert!(validate(&honest, &d, &ValidationPolicy::composite(v, 0)).valid);
        let mut over = honest.clone();
        over.entries[1] = FixedWeight::from_units(538);
        let verdict = validate(&over, &d, &ValidationPolicy::composite(v, u64::MAX));
        assert_eq!(verdict.reason.code(), "out_of_range");
    }

    struct Fixture {
        ctx: EnclaveContext,
        seals: RoundSeals,
        vk: VerifyingKey,
        pads: Vec<Pad>,
    }

    fn fixture(v: usize) -> Fixture {
        let platform = TeePlatform::from_seed([3u8; 32]);
        let code = GlimmerImage::new("1.0", None).build();
        let ctx = platform.launch(code, "client");
        let mut service = platform.launch(b"service".to_vec(), "svc");
        let sk = sig::signing_key_from_seed(&[4u8; 32]);
        let vk = sk.verifying_key();
        let pads = gen_pads(1, 2, v, [6u8; 32]).unwrap();
        let m = ctx.measurement();
        let seals = RoundSeals {
            pad: Some(service.seal(&pads[0].to_bytes(), &m)),
            signing_key: service.seal(&ProvisionedKey { signing_key: sk, policy: None }.to_bytes(), &m),
        };
        Fixture { ctx, seals, vk, pads }
    }

    #[test]
    fn honest_pipeline_signs_blinded_vector() {
        let mut f = fixture(2);
        let x = x_with(vec![SCALE, 0]);
        let sc = run_glimmer(
            &mut f.ctx,
            7,
            x.clone(),
            PrivateValidationData::default(),
            &f.seals,
            &ValidationPolicy::range(),
            Disclosure::Blinded,
        )
        .unwrap();
        assert!(sc.verify(&f.vk));
        assert!(!sc.public);
        assert_eq!(sc.confidence, 255);
        assert_eq!(sc.entries, blind(&x, &f.pads[0]).unwrap().entries);
        assert_eq!(sc.to_bytes().len(), canonical_len(2));
        assert_eq!(SignedContribution::from_bytes(&sc.to_bytes()).unwrap(), sc);

        let stats = f.ctx.heap_stats();
        assert_eq!((stats.live_slots, stats.nonzero_bytes), (0, 0));
        assert!(stats.wiped_bytes > 0);

        let again = run_glimmer(
            &mut f.ctx,
            7,
            x,
            PrivateValidationData::default(),
            &f.seals,
            &ValidationPolicy::range(),
            Disclosure::Blinded,
        )
        .unwrap();
        assert_eq!(again.to_bytes(), sc.to_bytes());
    }

    #[test]
    fn out_of_range_is_never_signed() {
        let mut f = fixture(2);
        let err = run_glimmer(
            &mut f.ctx,
            7,
            x_with(vec![FixedWeight::from_units(538).0, 0]),
            PrivateValidationData::default(),
            &f.seals,
            &ValidationPolicy::range(),
            Disclosure::Blinded,
        )
        .unwrap_err();
        assert!(matches!(err, GlimmerError::ValidationFailed(v) if v.reason.code() == "out_of_range"));
        assert_eq!(f.ctx.heap_stats().nonzero_bytes, 0);
    }

    #[test]
    fn tampered_enclave_cannot_unseal() {
        let f = fixture(2);
        let mut bad = f.ctx.platform().launch(tamper_code(f.ctx.code()), "bad");
        let err = run_glimmer(
            &mut bad,
            7,
            x_with(vec![1, 2]),
            PrivateValidationData::default(),
            &f.seals,
            &ValidationPolicy::range(),
            Disclosure::Blinded,
        )
        .unwrap_err();
        assert_eq!(err, GlimmerError::UnsealFailure(TeeError::PolicyMismatch));
        assert_eq!(bad.heap_stats().nonzero_bytes, 0);
    }

    #[test]
    fn public_mode_signs_plaintext() {
        let mut f = fixture(2);
        let sc = run_glimmer(
            &mut f.ctx,
            1,
            x_with(vec![3, 4]),
            PrivateValidationData::default(),
            &RoundSeals { pad: None, signing_key: f.seals.signing_key.clone() },
            &ValidationPolicy::range(),
            Disclosure::Public,
        )
        .unwrap();
        assert!(sc.public && sc.verify(&f.vk));
        assert_eq!(sc.entries, vec![3, 4]);

        let err = run_glimmer(
            &mut f.ctx,
            1,
            x_with(vec![3, 4]),
            PrivateValidationData::default(),
            &RoundSeals { pad: None, signing_key: f.seals.signing_key.clone() },
            &ValidationPolicy::range(),
            Disclosure::Blinded,
        )
        .unwrap_err();
        assert_eq!(err, GlimmerError::MissingPad);
    }

    #[test]
    fn round_and_length_mismatch() {
        let mut f = fixture(2);
        let err = run_glimmer(
            &mut f.ctx,
            1,
            ModelVector::from_raw(2, vec![0, 0]),
            PrivateValidationData::default(),
            &f.seals,
            &ValidationPolicy::range(),
            Disclosure::Blinded,
        )
        .unwrap_err();
        assert_eq!(err, GlimmerError::RoundMismatch { pad: 1, contribution: 2 });
        let err = run_glimmer(
            &mut f.ctx,
            1,
            x_with(vec![0, 0, 0]),
            PrivateValidationData::default(),
            &f.seals,
            &ValidationPolicy::range(),
            Disclosure::Blinded,
        )
        .unwrap_err();
        assert!(matches!(err, GlimmerError::LengthMismatch { .. }));
    }

    #[test]
    fn provisioned_policy_is_enforced() {
        let mut f = fixture(2);
        let sk = sig::signing_key_from_seed(&[4u8; 32]);
        let mut svc = f.ctx.platform().launch(b"service".to_vec(), "svc2");
        f.seals.signing_key = svc.seal(
            &ProvisionedKey { signing_key: sk, policy: Some(ValidationPolicy::range()) }.to_bytes(),
            &f.ctx.measurement(),
        );
        let lax = ValidationPolicy { hi: FixedWeight::from_units(1000), ..ValidationPolicy::range() };
        let err = run_glimmer(
            &mut f.ctx,
            1,
            x_with(vec![FixedWeight::from_units(538).0, 0]),
            PrivateValidationData::default(),
            &f.seals,
            &lax,
            Disclosure::Blinded,
        )
        .unwrap_err();
        assert_eq!(err, GlimmerError::PolicyRejected);
    }

    #[test]
    fn image_embeds_service_key() {
        let vk = sig::signing_key_from_seed(&[1u8; 32]).verifying_key();
        let code = GlimmerImage::new("1.0", Some(vk)).build();
        assert_eq!(GlimmerImage::embedded_service_key(&code), Some(vk));
        assert_eq!(GlimmerImage::embedded_service_key(&GlimmerImage::new("1.0", None).build()), None);
        assert_ne!(code, tamper_code(&code));
    }

    #[test]
    fn private_data_codec() {
        let d = PrivateValidationData {
            keyboard_event_log: vec![KeyEvent { ts_ms: 5, word: 1 }, KeyEvent { ts_ms: 9, word: 0 }],
            auxiliary: b"aux".to_vec(),
        };
        assert_eq!(PrivateValidationData::from_bytes(&d.to_bytes()).unwrap(), d);
        let p = ValidationPolicy::composite(7, 12);
        assert_eq!(ValidationPolicy::from_bytes(&p.to_bytes()).unwrap(), p);
    }
}

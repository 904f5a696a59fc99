//! Software emulation of an SGX-style trusted execution environment.
//!
//! A [`TeePlatform`] stands in for the CPU: it owns the attestation root key
//! and the sealing root key, both derived from a harness seed. Enclaves are
//! launched from a code blob and identified by their [`Measurement`]. Sealing
//! keys are derived from the sealing root and the policy measurement, so an
//! enclave with a different measurement cannot derive the key at all.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use hkdf::Hkdf;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::Sha256;
use thiserror::Error;
use zeroize::{Zeroize, Zeroizing};

use crate::codec::{put_bytes32, DecodeError, Reader};
use crate::crypto::sig::{self, Signature, SigningKey, VerifyingKey};
use crate::crypto::{derive_seed, sha256};

pub const MEASUREMENT_LEN: usize = 32;
pub const REPORT_DATA_LEN: usize = 64;
pub const QUOTE_LEN: usize = MEASUREMENT_LEN + REPORT_DATA_LEN + sig::SIGNATURE_LEN;
pub const SEAL_NONCE_LEN: usize = 24;

const QUOTE_DOMAIN: &[u8] = b"glimmer-quote-v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TeeError {
    #[error("sealed blob policy does not match this enclave's measurement")]
    PolicyMismatch,
    #[error("sealed blob failed authentication")]
    IntegrityFailure,
    #[error("report data is {0} bytes, at most 64 allowed")]
    ReportDataTooLong(usize),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Identity of an enclave: SHA-256 over its code blob.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Measurement(pub [u8; MEASUREMENT_LEN]);

impl Measurement {
    pub fn to_bytes(&self) -> [u8; MEASUREMENT_LEN] {
        self.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let m = Measurement(r.array("measurement")?);
        r.finish("measurement")?;
        Ok(m)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Measurement({})", &self.to_hex()[..16])
    }
}

pub fn measure(code: &[u8]) -> Measurement {
    Measurement(sha256(&[code]))
}

/// Data sealed to a policy measurement.
#[derive(Clone, PartialEq, Eq)]
pub struct SealedBlob {
    pub policy: Measurement,
    pub nonce: [u8; SEAL_NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

impl fmt::Debug for SealedBlob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SealedBlob")
            .field("policy", &self.policy)
            .field("ciphertext_len", &self.ciphertext.len())
            .finish()
    }
}

impl SealedBlob {
    /// `policy (32) | nonce (24) | ciphertext length (4, BE) | ciphertext`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MEASUREMENT_LEN + SEAL_NONCE_LEN + 4 + self.ciphertext.len());
        out.extend_from_slice(&self.policy.0);
        out.extend_from_slice(&self.nonce);
        put_bytes32(&mut out, &self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let policy = Measurement(r.array("sealed blob policy")?);
        let nonce = r.array("sealed blob nonce")?;
        let ciphertext = r.bytes32("sealed blob ciphertext")?.to_vec();
        r.finish("sealed blob")?;
        Ok(Self { policy, nonce, ciphertext })
    }
}

/// Attestation evidence binding a measurement to caller-chosen report data.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Quote {
    pub measurement: Measurement,
    pub report_data: [u8; REPORT_DATA_LEN],
    pub signature: [u8; sig::SIGNATURE_LEN],
}

impl Quote {
    fn signed_bytes(measurement: &Measurement, report_data: &[u8; REPORT_DATA_LEN]) -> Vec<u8> {
        let mut m = Vec::with_capacity(QUOTE_DOMAIN.len() + MEASUREMENT_LEN + REPORT_DATA_LEN);
        m.extend_from_slice(QUOTE_DOMAIN);
        m.extend_from_slice(&measurement.0);
        m.extend_from_slice(report_data);
        m
    }

    pub fn to_bytes(&self) -> [u8; QUOTE_LEN] {
        let mut out = [0u8; QUOTE_LEN];
        out[..32].copy_from_slice(&self.measurement.0);
        out[32..96].copy_from_slice(&self.report_data);
        out[96..].copy_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let q = Quote {
            measurement: Measurement(r.array("quote measurement")?),
            report_data: r.array("quote report data")?,
            signature: r.array("quote signature")?,
        };
        r.finish("quote")?;
        Ok(q)
    }
}

pub fn verify_quote(q: &Quote, expected: &Measurement, root_pub: &VerifyingKey) -> bool {
    if q.measurement != *expected {
        return false;
    }
    let msg = Quote::signed_bytes(&q.measurement, &q.report_data);
    sig::verify(&msg, &Signature::from_bytes(&q.signature), root_pub)
}

/// Right-zero-pads report data to 64 bytes.
pub fn pad_report_data(data: &[u8]) -> Result<[u8; REPORT_DATA_LEN], TeeError> {
    if data.len() > REPORT_DATA_LEN {
        return Err(TeeError::ReportDataTooLong(data.len()));
    }
    let mut out = [0u8; REPORT_DATA_LEN];
    out[..data.len()].copy_from_slice(data);
    Ok(out)
}

/// The emulated CPU: fused attestation and sealing roots.
pub struct TeePlatform {
    seed: [u8; 32],
    attestation_key: SigningKey,
    sealing_root: Zeroizing<[u8; 32]>,
    launches: AtomicU64,
}

impl fmt::Debug for TeePlatform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TeePlatform")
            .field("attestation_root", &hex::encode(self.attestation_key.verifying_key().as_bytes()))
            .finish_non_exhaustive()
    }
}

impl TeePlatform {
    pub fn from_seed(seed: [u8; 32]) -> Arc<Self> {
        let attestation_key = sig::signing_key_from_seed(&derive_seed(&seed, b"attestation-root"));
        let sealing_root = Zeroizing::new(derive_seed(&seed, b"sealing-root"));
        Arc::new(Self {
            seed,
            attestation_key,
            sealing_root,
            launches: AtomicU64::new(0),
        })
    }

    pub fn attestation_public(&self) -> VerifyingKey {
        self.attestation_key.verifying_key()
    }

    /// Launches an enclave from `code`. `label` distinguishes the nonce stream
    /// of enclaves launched from the same code.
    pub fn launch(self: &Arc<Self>, code: Vec<u8>, label: &str) -> EnclaveContext {
        let measurement = measure(&code);
        let n = self.launches.fetch_add(1, Ordering::Relaxed);
        let mut seed_input = Vec::with_capacity(32 + 8 + label.len());
        seed_input.extend_from_slice(&measurement.0);
        seed_input.extend_from_slice(&n.to_be_bytes());
        seed_input.extend_from_slice(label.as_bytes());
        let rng = ChaCha20Rng::from_seed(derive_seed(&self.seed, &seed_input));
        EnclaveContext {
            code,
            measurement,
            platform: Arc::clone(self),
            rng,
            heap: PrivateHeap::default(),
        }
    }

    fn sealing_key(&self, policy: &Measurement) -> Zeroizing<[u8; 32]> {
        let hk = Hkdf::<Sha256>::new(Some(b"glimmer-seal-v1"), self.sealing_root.as_slice());
        let mut key = Zeroizing::new([0u8; 32]);
        hk.expand(&policy.0, key.as_mut_slice())
            .expect("32 bytes is a valid HKDF output length");
        key
    }
}

/// Counters exposed to tests for checking that the enclave discards inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeapStats {
    pub live_slots: usize,
    pub nonzero_bytes: usize,
    pub wiped_bytes: u64,
    pub wipes: u64,
}

/// Enclave-private memory. Only reachable from inside [`EnclaveContext::ecall`].
#[derive(Default)]
pub struct PrivateHeap {
    slots: Vec<(&'static str, Vec<u8>)>,
    entered: bool,
    wiped_bytes: u64,
    wipes: u64,
}

impl PrivateHeap {
    fn check_entered(&self) {
        debug_assert!(self.entered, "host code path touched enclave private heap");
    }

    pub(crate) fn put(&mut self, name: &'static str, bytes: Vec<u8>) {
        self.check_entered();
        self.remove(name);
        self.slots.push((name, bytes));
    }

    pub(crate) fn get(&self, name: &'static str) -> Option<&[u8]> {
        self.check_entered();
        self.slots.iter().find(|(n, _)| *n == name).map(|(_, b)| b.as_slice())
    }

    pub(crate) fn remove(&mut self, name: &'static str) {
        self.check_entered();
        if let Some(i) = self.slots.iter().position(|(n, _)| *n == name) {
            let (_, mut bytes) = self.slots.swap_remove(i);
            self.wiped_bytes += bytes.len() as u64;
            bytes.zeroize();
        }
    }

    /// Zeroes every slot and releases it.
    pub(crate) fn wipe(&mut self) {
        self.check_entered();
        for (_, bytes) in self.slots.iter_mut() {
            self.wiped_bytes += bytes.len() as u64;
            bytes.zeroize();
        }
        self.slots.clear();
        self.wipes += 1;
    }

    fn stats(&self) -> HeapStats {
        HeapStats {
            live_slots: self.slots.len(),
            nonzero_bytes: self
                .slots
                .iter()
                .map(|(_, b)| b.iter().filter(|x| **x != 0).count())
                .sum(),
            wiped_bytes: self.wiped_bytes,
            wipes: self.wipes,
        }
    }
}

impl Drop for PrivateHeap {
    fn drop(&mut self) {
        for (_, bytes) in self.slots.iter_mut() {
            bytes.zeroize();
        }
    }
}

/// A launched enclave. Single-owner; never shared between actors.
pub struct EnclaveContext {
    code: Vec<u8>,
    measurement: Measurement,
    platform: Arc<TeePlatform>,
    rng: ChaCha20Rng,
    heap: PrivateHeap,
}

impl fmt::Debug for EnclaveContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnclaveContext")
            .field("measurement", &self.measurement)
            .field("code_len", &self.code.len())
            .finish_non_exhaustive()
    }
}

impl EnclaveContext {
    pub fn code(&self) -> &[u8] {
        &self.code
    }

    pub fn measurement(&self) -> Measurement {
        self.measurement
    }

    pub fn platform(&self) -> &Arc<TeePlatform> {
        &self.platform
    }

    pub fn attestation_public(&self) -> VerifyingKey {
        self.platform.attestation_public()
    }

    /// Seals `payload` so only an enclave measuring `policy` can open it.
    pub fn seal(&mut self, payload: &[u8], policy: &Measurement) -> SealedBlob {
        let mut nonce = [0u8; SEAL_NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        let key = self.platform.sealing_key(policy);
        let cipher = XChaCha20Poly1305::new(key.as_slice().into());
        let ciphertext = cipher
            .encrypt(XNonce::from_slice(&nonce), Payload { msg: payload, aad: &policy.0 })
            .expect("XChaCha20-Poly1305 encryption does not fail for in-memory buffers");
        SealedBlob { policy: *policy, nonce, ciphertext }
    }

    pub fn unseal(&self, blob: &SealedBlob) -> Result<Zeroizing<Vec<u8>>, TeeError> {
        if blob.policy != self.measurement {
            return Err(TeeError::PolicyMismatch);
        }
        // Key comes from our own measurement, never from the blob's claim.
        let key = self.platform.sealing_key(&self.measurement);
        let cipher = XChaCha20Poly1305::new(key.as_slice().into());
        cipher
            .decrypt(
                XNonce::from_slice(&blob.nonce),
                Payload { msg: &blob.ciphertext, aad: &self.measurement.0 },
            )
            .map(Zeroizing::new)
            .map_err(|_| TeeError::IntegrityFailure)
    }

    /// Produces a quote over this enclave's measurement. Report data shorter
    /// than 64 bytes is right-zero-padded.
    pub fn quote(&self, report_data: &[u8]) -> Result<Quote, TeeError> {
        let report_data = pad_report_data(report_data)?;
        let msg = Quote::signed_bytes(&self.measurement, &report_data);
        let signature = sig::sign(&msg, &self.platform.attestation_key).to_bytes();
        Ok(Quote { measurement: self.measurement, report_data, signature })
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    /// Runs `f` as enclave code with access to the private heap.
    pub(crate) fn ecall<R>(&mut self, f: impl FnOnce(&mut Self) -> R) -> R {
        let was = self.heap.entered;
        self.heap.entered = true;
        let out = f(self);
        self.heap.entered = was;
        out
    }

    pub(crate) fn heap(&mut self) -> &mut PrivateHeap {
        &mut self.heap
    }

    /// Debug hook: occupancy counters only, never contents.
    pub fn heap_stats(&self) -> HeapStats {
        self.heap.stats()
    }
}

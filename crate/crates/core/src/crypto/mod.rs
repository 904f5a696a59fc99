//! Cryptographic building blocks: fixed-point modular vectors, zero-sum pads,
//! signatures, public-key envelopes and the attestation-bound key exchange.

pub mod akx;
pub mod envelope;
pub mod fixed;
pub mod sig;

use sha2::{Digest, Sha256};

pub use fixed::{
    aggregate_unblind, blind, gen_pads, BlindedVector, FixedError, FixedWeight, ModelVector, Pad,
    SCALE,
};
pub use sig::{sign, verify, Signature, SigningKey, VerifyingKey};

/// Derives an independent 32-byte seed for `label` from a parent seed.
pub fn derive_seed(parent: &[u8], label: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"glimmer-seed-v1");
    h.update((parent.len() as u32).to_be_bytes());
    h.update(parent);
    h.update(label);
    h.finalize().into()
}

pub fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

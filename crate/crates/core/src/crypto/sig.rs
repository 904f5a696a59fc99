//! Ed25519 signatures. Signing is deterministic, which the verdict channel
//! relies on for its byte-equality bound.

pub use ed25519_dalek::{Signature, SigningKey, VerifyingKey};
use ed25519_dalek::{Signer, Verifier};

pub const SIGNATURE_LEN: usize = 64;
pub const PUBLIC_KEY_LEN: usize = 32;

pub fn sign(msg: &[u8], sk: &SigningKey) -> Signature {
    sk.sign(msg)
}

pub fn verify(msg: &[u8], sig: &Signature, pk: &VerifyingKey) -> bool {
    pk.verify(msg, sig).is_ok()
}

pub fn signing_key_from_seed(seed: &[u8; 32]) -> SigningKey {
    SigningKey::from_bytes(seed)
}

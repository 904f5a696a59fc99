//! Public-key envelopes: ephemeral X25519 to the recipient's static key,
//! HKDF-SHA256, then XChaCha20-Poly1305.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use hkdf::Hkdf;
use rand_core::{CryptoRng, RngCore};
use sha2::Sha256;
use thiserror::Error;
use x25519_dalek::{EphemeralSecret, PublicKey, StaticSecret};
use zeroize::Zeroizing;

use crate::codec::{put_bytes32, DecodeError, Reader};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("envelope could not be opened with this key")]
    DecryptFailure,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub ephemeral: [u8; 32],
    pub nonce: [u8; 24],
    pub ciphertext: Vec<u8>,
}

fn envelope_key(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> Zeroizing<[u8; 32]> {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut key = Zeroizing::new([0u8; 32]);
    hk.expand(b"glimmer-envelope-v1", key.as_mut_slice())
        .expect("32 bytes is a valid HKDF output length");
    key
}

pub fn seal_to<R: RngCore + CryptoRng>(
    recipient: &PublicKey,
    plaintext: &[u8],
    aad: &[u8],
    rng: &mut R,
) -> Envelope {
    let eph = EphemeralSecret::random_from_rng(&mut *rng);
    let eph_pub = PublicKey::from(&eph);
    let shared = eph.diffie_hellman(recipient);
    let key = envelope_key(shared.as_bytes(), eph_pub.as_bytes(), recipient.as_bytes());
    let mut nonce = [0u8; 24];
    rng.fill_bytes(&mut nonce);
    let ciphertext = XChaCha20Poly1305::new(key.as_slice().into())
        .encrypt(XNonce::from_slice(&nonce), Payload { msg: plaintext, aad })
        .expect("in-memory encryption does not fail");
    Envelope { ephemeral: *eph_pub.as_bytes(), nonce, ciphertext }
}

pub fn open(secret: &StaticSecret, env: &Envelope, aad: &[u8]) -> Result<Zeroizing<Vec<u8>>, EnvelopeError> {
    let recipient = PublicKey::from(secret);
    let shared = secret.diffie_hellman(&PublicKey::from(env.ephemeral));
    let key = envelope_key(shared.as_bytes(), &env.ephemeral, recipient.as_bytes());
    XChaCha20Poly1305::new(key.as_slice().into())
        .decrypt(XNonce::from_slice(&env.nonce), Payload { msg: &env.ciphertext, aad })
        .map(Zeroizing::new)
        .map_err(|_| EnvelopeError::DecryptFailure)
}

impl Envelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(60 + self.ciphertext.len());
        out.extend_from_slice(&self.ephemeral);
        out.extend_from_slice(&self.nonce);
        put_bytes32(&mut out, &self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let env = Envelope {
            ephemeral: r.array("envelope ephemeral")?,
            nonce: r.array("envelope nonce")?,
            ciphertext: r.bytes32("envelope ciphertext")?.to_vec(),
        };
        r.finish("envelope")?;
        Ok(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha20Rng;
    use rand_core::SeedableRng;

    #[test]
    fn only_addressee_can_open() {
        let mut rng = ChaCha20Rng::from_seed([2u8; 32]);
        let alice = StaticSecret::random_from_rng(&mut rng);
        let bob = StaticSecret::random_from_rng(&mut rng);
        let env = seal_to(&PublicKey::from(&alice), b"sealed pad", b"round-1", &mut rng);
        assert_eq!(open(&alice, &env, b"round-1").unwrap().as_slice(), b"sealed pad");
        assert_eq!(open(&bob, &env, b"round-1"), Err(EnvelopeError::DecryptFailure));
        assert_eq!(open(&alice, &env, b"round-2"), Err(EnvelopeError::DecryptFailure));
        let parsed = Envelope::from_bytes(&env.to_bytes()).unwrap();
        assert_eq!(parsed, env);
    }
}

//! Fixed-point weights and additive blinding modulo 2^64.
//!
//! Weights are stored as `raw / SCALE`. Pads are uniform in `[0, 2^64)` and
//! a round's pads sum to zero elementwise, so wrapping addition of every
//! blinded vector leaves the exact plaintext sum.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;
use zeroize::Zeroize;

use crate::codec::{put_u64_vec, DecodeError, Reader};

pub const SCALE: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixedError {
    #[error("a round needs at least one party")]
    ZeroParties,
    #[error("vectors must have at least one entry")]
    EmptyVector,
    #[error("vector length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("round mismatch: expected {expected}, got {got}")]
    RoundMismatch { expected: u64, got: u64 },
    #[error("no blinded contributions to aggregate")]
    EmptyRound,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Zeroize)]
pub struct FixedWeight(pub u64);

impl FixedWeight {
    pub const ZERO: FixedWeight = FixedWeight(0);
    pub const ONE: FixedWeight = FixedWeight(SCALE);

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Weight `num / den` rounded half-up to the nearest raw unit.
    pub fn from_ratio(num: u64, den: u64) -> Self {
        assert!(den > 0, "zero denominator");
        let n = num as u128 * SCALE as u128 * 2 + den as u128;
        FixedWeight((n / (2 * den as u128)) as u64)
    }

    /// Raw value for an integral weight, e.g. `from_units(538)`.
    pub fn from_units(units: u64) -> Self {
        FixedWeight(units.saturating_mul(SCALE))
    }

    pub fn in_unit_range(self) -> bool {
        self.0 <= SCALE
    }
}

/// A local model: one weight per bigram id.
#[derive(Debug, Clone, PartialEq, Eq, Zeroize)]
pub struct ModelVector {
    pub round_id: u64,
    pub entries: Vec<FixedWeight>,
}

impl ModelVector {
    pub fn zeros(round_id: u64, len: usize) -> Self {
        Self { round_id, entries: vec![FixedWeight::ZERO; len] }
    }

    pub fn from_raw(round_id: u64, raw: Vec<u64>) -> Self {
        Self { round_id, entries: raw.into_iter().map(FixedWeight).collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn raw(&self) -> Vec<u64> {
        self.entries.iter().map(|w| w.0).collect()
    }

    pub fn with_round(mut self, round_id: u64) -> Self {
        self.round_id = round_id;
        self
    }

    /// `round_id (8) | len (4) | entries (8 each)`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.entries.len() * 8);
        out.extend_from_slice(&self.round_id.to_be_bytes());
        put_u64_vec(&mut out, &self.raw());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let round_id = r.u64("model round")?;
        let raw = r.u64_vec("model entries")?;
        r.finish("model vector")?;
        Ok(Self::from_raw(round_id, raw))
    }
}

#[derive(Clone, PartialEq, Eq, Zeroize)]
pub struct Pad {
    pub round_id: u64,
    pub entries: Vec<u64>,
}

impl std::fmt::Debug for Pad {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pad")
            .field("round_id", &self.round_id)
            .field("len", &self.entries.len())
            .finish()
    }
}

impl Pad {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.entries.len() * 8);
        out.extend_from_slice(&self.round_id.to_be_bytes());
        put_u64_vec(&mut out, &self.entries);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let round_id = r.u64("pad round")?;
        let entries = r.u64_vec("pad entries")?;
        r.finish("pad")?;
        Ok(Self { round_id, entries })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlindedVector {
    pub round_id: u64,
    pub entries: Vec<u64>,
}

/// Generates `n` pads of length `v` whose elementwise sum is zero mod 2^64.
///
/// Pads `0..n-1` come from a ChaCha20 stream keyed by `seed`; the last pad is
/// the negation of their sum.
pub fn gen_pads(round_id: u64, n: usize, v: usize, seed: [u8; 32]) -> Result<Vec<Pad>, FixedError> {
    if n == 0 {
        return Err(FixedError::ZeroParties);
    }
    if v == 0 {
        return Err(FixedError::EmptyVector);
    }
    let mut rng = ChaCha20Rng::from_seed(seed);
    let mut running = vec![0u64; v];
    let mut pads = Vec::with_capacity(n);
    for _ in 0..n - 1 {
        let entries: Vec<u64> = (0..v).map(|_| rng.next_u64()).collect();
        for (acc, e) in running.iter_mut().zip(&entries) {
            *acc = acc.wrapping_add(*e);
        }
        pads.push(Pad { round_id, entries });
    }
    let last = running.iter().map(|s| s.wrapping_neg()).collect();
    running.zeroize();
    pads.push(Pad { round_id, entries: last });
    Ok(pads)
}

pub fn blind(x: &ModelVector, p: &Pad) -> Result<BlindedVector, FixedError> {
    if x.round_id != p.round_id {
        return Err(FixedError::RoundMismatch { expected: p.round_id, got: x.round_id });
    }
    if x.len() != p.entries.len() {
        return Err(FixedError::LengthMismatch { expected: p.entries.len(), got: x.len() });
    }
    Ok(BlindedVector {
        round_id: x.round_id,
        entries: x.entries.iter().zip(&p.entries).map(|(w, p)| w.0.wrapping_add(*p)).collect(),
    })
}

/// Sums blinded vectors plus the pads of non-submitting clients, mod 2^64.
pub fn aggregate_unblind(ys: &[BlindedVector], dropout_pads: &[Pad]) -> Result<Vec<u64>, FixedError> {
    let first = ys.first().ok_or(FixedError::EmptyRound)?;
    let (round_id, len) = (first.round_id, first.entries.len());
    let mut sums = vec![0u64; len];
    let rows = ys
        .iter()
        .map(|y| (y.round_id, &y.entries))
        .chain(dropout_pads.iter().map(|p| (p.round_id, &p.entries)));
    for (rid, entries) in rows {
        if rid != round_id {
            return Err(FixedError::RoundMismatch { expected: round_id, got: rid });
        }
        if entries.len() != len {
            return Err(FixedError::LengthMismatch { expected: len, got: entries.len() });
        }
        for (s, e) in sums.iter_mut().zip(entries) {
            *s = s.wrapping_add(*e);
        }
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plaintext_sum(xs: &[Vec<u64>]) -> Vec<u64> {
        // Oracle: u128 column sums, no pads, no wrapping.
        let v = xs[0].len();
        (0..v)
            .map(|j| {
                let s: u128 = xs.iter().map(|x| x[j] as u128).sum();
                u64::try_from(s).expect("desk-scale sums fit in u64")
            })
            .collect()
    }

    #[test]
    fn single_party_pad_is_zero() {
        let pads = gen_pads(1, 1, 5, [3u8; 32]).unwrap();
        assert_eq!(pads.len(), 1);
        assert_eq!(pads[0].entries, vec![0; 5]);
    }

    #[test]
    fn zero_parties_rejected() {
        assert_eq!(gen_pads(1, 0, 5, [0u8; 32]), Err(FixedError::ZeroParties));
        assert_eq!(gen_pads(1, 2, 0, [0u8; 32]), Err(FixedError::EmptyVector));
    }

    #[test]
    fn three_pads_sum_to_zero_and_are_seed_deterministic() {
        let a = gen_pads(9, 3, 4, [5u8; 32]).unwrap();
        let b = gen_pads(9, 3, 4, [5u8; 32]).unwrap();
        assert_eq!(a, b);
        for j in 0..4 {
            let s = a.iter().fold(0u64, |acc, p| acc.wrapping_add(p.entries[j]));
            assert_eq!(s, 0);
        }
        let c = gen_pads(9, 3, 4, [6u8; 32]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn blind_examples() {
        let x = ModelVector::from_raw(1, vec![500_000, 7]);
        let zero = Pad { round_id: 1, entries: vec![0, 0] };
        assert_eq!(blind(&x, &zero).unwrap().entries, vec![500_000, 7]);

        let p = Pad { round_id: 1, entries: vec![123, 0] };
        assert_eq!(blind(&x, &p).unwrap().entries[0], 500_123);

        let x = ModelVector::from_raw(1, vec![1]);
        let p = Pad { round_id: 1, entries: vec![u64::MAX] };
        assert_eq!(blind(&x, &p).unwrap().entries, vec![0]);
    }

    #[test]
    fn blind_errors() {
        let x = ModelVector::from_raw(1, vec![1, 2]);
        assert_eq!(
            blind(&x, &Pad { round_id: 2, entries: vec![0, 0] }),
            Err(FixedError::RoundMismatch { expected: 2, got: 1 })
        );
        assert_eq!(
            blind(&x, &Pad { round_id: 1, entries: vec![0] }),
            Err(FixedError::LengthMismatch { expected: 1, got: 2 })
        );
    }

    #[test]
    fn aggregate_errors() {
        assert_eq!(aggregate_unblind(&[], &[]), Err(FixedError::EmptyRound));
        let y = BlindedVector { round_id: 1, entries: vec![1, 2] };
        let short = Pad { round_id: 1, entries: vec![1] };
        assert!(matches!(
            aggregate_unblind(std::slice::from_ref(&y), &[short]),
            Err(FixedError::LengthMismatch { .. })
        ));
        let other = Pad { round_id: 5, entries: vec![1, 1] };
        assert!(matches!(
            aggregate_unblind(&[y], &[other]),
            Err(FixedError::RoundMismatch { .. })
        ));
    }

    #[test]
    fn single_client_zero_pad_aggregate_is_identity() {
        let x = ModelVector::from_raw(4, vec![10, 0, SCALE]);
        let pads = gen_pads(4, 1, 3, [1u8; 32]).unwrap();
        let y = blind(&x, &pads[0]).unwrap();
        assert_eq!(aggregate_unblind(&[y], &[]).unwrap(), x.raw());
    }

    #[test]
    fn dropout_pad_restores_exact_sum_over_submitters() {
        let xs: Vec<Vec<u64>> = vec![vec![1, 2, 3], vec![SCALE, 0, 5], vec![9, 9, 9]];
        let pads = gen_pads(2, 3, 3, [8u8; 32]).unwrap();
        let ys: Vec<_> = xs[..2]
            .iter()
            .zip(&pads)
            .map(|(x, p)| blind(&ModelVector::from_raw(2, x.clone()), p).unwrap())
            .collect();
        let got = aggregate_unblind(&ys, &pads[2..]).unwrap();
        assert_eq!(got, plaintext_sum(&xs[..2]));
    }

    #[test]
    fn ratio_rounds_half_up() {
        // Frozen from integer arithmetic: (2*S*c + t) / (2*t).
        assert_eq!(FixedWeight::from_ratio(2, 4).raw(), 500_000);
        assert_eq!(FixedWeight::from_ratio(1, 3).raw(), 333_333);
        assert_eq!(FixedWeight::from_ratio(2, 3).raw(), 666_667);
        assert_eq!(FixedWeight::from_ratio(1, 2_000_000).raw(), 1);
        assert_eq!(FixedWeight::from_ratio(1, 2_000_001).raw(), 0);
    }

    proptest! {
        #[test]
        fn zero_sum_holds(n in 1usize..20, v in 1usize..50, seed in any::<[u8; 32]>()) {
            let pads = gen_pads(0, n, v, seed).unwrap();
            for j in 0..v {
                let s = pads.iter().fold(0u64, |a, p| a.wrapping_add(p.entries[j]));
                prop_assert_eq!(s, 0);
            }
        }

        #[test]
        fn blinded_aggregate_matches_plaintext_oracle(
            xs in (1usize..12, 1usize..40).prop_flat_map(|(n, v)| {
                prop::collection::vec(prop::collection::vec(0..=SCALE, v), n)
            }),
            seed in any::<[u8; 32]>(),
        ) {
            let pads = gen_pads(3, xs.len(), xs[0].len(), seed).unwrap();
            let ys: Vec<_> = xs
                .iter()
                .zip(&pads)
                .map(|(x, p)| blind(&ModelVector::from_raw(3, x.clone()), p).unwrap())
                .collect();
            prop_assert_eq!(aggregate_unblind(&ys, &[]).unwrap(), plaintext_sum(&xs));
        }

        #[test]
        fn codec_round_trip(raw in prop::collection::vec(any::<u64>(), 0..30), round in any::<u64>()) {
            let m = ModelVector::from_raw(round, raw.clone());
            prop_assert_eq!(ModelVector::from_bytes(&m.to_bytes()).unwrap(), m);
            let p = Pad { round_id: round, entries: raw };
            prop_assert_eq!(Pad::from_bytes(&p.to_bytes()).unwrap(), p);
        }
    }
}

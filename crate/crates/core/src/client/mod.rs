//! Per-user side: private keyboard logs, the local bigram trainer, corpus
//! generation for scenarios and the client actor with its adversary modes.

mod agent;
mod corpus;

pub use agent::{AdversaryMode, ClientAgent, ClientOutcome, GlimmerPlacement, RoundContext};
pub use corpus::{expand_corpus, PhraseSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop};

use crate::crypto::{FixedWeight, ModelVector};

pub type WordId = u32;
pub type ClientId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("event {index}: timestamp {ts} not after previous {prev}")]
    NonMonotonic { index: usize, ts: u64, prev: u64 },
    #[error("event {index}: word id {word} outside vocabulary of {vocab}")]
    UnknownWord { index: usize, word: WordId, vocab: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Zeroize)]
pub struct KeyEvent {
    pub ts_ms: u64,
    pub word: WordId,
}

/// A private keyboard log with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Eq, Default, Zeroize, ZeroizeOnDrop)]
pub struct EventLog {
    events: Vec<KeyEvent>,
}

impl EventLog {
    pub fn new(events: Vec<KeyEvent>, vocab_size: usize) -> Result<Self, ClientError> {
        for (i, e) in events.iter().enumerate() {
            if e.word as usize >= vocab_size {
                return Err(ClientError::UnknownWord { index: i, word: e.word, vocab: vocab_size });
            }
            if i > 0 && e.ts_ms <= events[i - 1].ts_ms {
                return Err(ClientError::NonMonotonic { index: i, ts: e.ts_ms, prev: events[i - 1].ts_ms });
            }
        }
        Ok(Self { events })
    }

    /// Words typed 100 ms apart, for tests and examples.
    pub fn from_words(words: &[WordId], vocab_size: usize) -> Result<Self, ClientError> {
        let events = words
            .iter()
            .enumerate()
            .map(|(i, w)| KeyEvent { ts_ms: 100 * (i as u64 + 1), word: *w })
            .collect();
        Self::new(events, vocab_size)
    }

    pub fn events(&self) -> &[KeyEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// How bigram counts become weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `count(a→b) / total bigrams in the log`
    #[default]
    Joint,
    /// `count(a→b) / count(a→·)`
    Conditional,
}

pub fn bigram_id(a: WordId, b: WordId, vocab_size: usize) -> usize {
    a as usize * vocab_size + b as usize
}

pub fn bigram_words(id: usize, vocab_size: usize) -> (WordId, WordId) {
    ((id / vocab_size) as WordId, (id % vocab_size) as WordId)
}

/// Trains the local bigram model. The vector has `vocab_size²` entries and
/// round id 0; weights are rounded half-up to the nearest raw unit.
pub fn train_local(words: &[WordId], vocab_size: usize, normalization: Normalization) -> ModelVector {
    let mut counts = vec![0u64; vocab_size * vocab_size];
    for pair in words.windows(2) {
        counts[bigram_id(pair[0], pair[1], vocab_size)] += 1;
    }
    let total: u64 = counts.iter().sum();
    let mut row_totals = vec![0u64; vocab_size];
    if normalization == Normalization::Conditional {
        for (id, c) in counts.iter().enumerate() {
            row_totals[id / vocab_size.max(1)] += c;
        }
    }
    let entries = counts
        .iter()
        .enumerate()
        .map(|(id, &c)| {
            if c == 0 {
                return FixedWeight::ZERO;
            }
            let den = match normalization {
                Normalization::Joint => total,
                Normalization::Conditional => row_totals[id / vocab_size],
            };
            FixedWeight::from_ratio(c, den)
        })
        .collect();
    ModelVector { round_id: 0, entries }
}

pub fn train_log(log: &EventLog, vocab_size: usize, normalization: Normalization) -> ModelVector {
    let mut words: Vec<WordId> = log.events().iter().map(|e| e.word).collect();
    let model = train_local(&words, vocab_size, normalization);
    words.zeroize();
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SCALE;
    use proptest::prelude::*;

    const DONALD: WordId = 0;
    const TRUMP: WordId = 1;

    #[test]
    fn single_bigram_gets_full_weight() {
        let m = train_local(&[DONALD, TRUMP], 3, Normalization::Joint);
        assert_eq!(m.len(), 9);
        for (id, w) in m.entries.iter().enumerate() {
            let expect = if id == bigram_id(DONALD, TRUMP, 3) { SCALE } else { 0 };
            assert_eq!(w.raw(), expect);
        }
    }

    #[test]
    fn alternating_log_splits_evenly() {
        let (a, b) = (0, 1);
        let m = train_local(&[a, b, a, b, a], 2, Normalization::Joint);
        assert_eq!(m.entries[bigram_id(a, b, 2)].raw(), 500_000);
        assert_eq!(m.entries[bigram_id(b, a, 2)].raw(), 500_000);
        assert_eq!(m.entries[bigram_id(a, a, 2)].raw(), 0);
    }

    #[test]
    fn empty_and_single_word_logs_are_zero() {
        assert!(train_local(&[], 4, Normalization::Joint).entries.iter().all(|w| w.raw() == 0));
        assert!(train_local(&[2], 4, Normalization::Joint).entries.iter().all(|w| w.raw() == 0));
    }

    #[test]
    fn conditional_normalizes_per_predecessor() {
        // 0→1 twice, 0→2 once, 1→0 once.
        let m = train_local(&[0, 1, 0, 2, 0, 1], 3, Normalization::Conditional);
        assert_eq!(m.entries[bigram_id(0, 1, 3)].raw(), 666_667);
        assert_eq!(m.entries[bigram_id(0, 2, 3)].raw(), 333_333);
        assert_eq!(m.entries[bigram_id(1, 0, 3)].raw(), SCALE);
        assert_eq!(m.entries[bigram_id(2, 0, 3)].raw(), SCALE);
    }

    #[test]
    fn event_log_validation() {
        let e = |ts, word| KeyEvent { ts_ms: ts, word };
        assert!(EventLog::new(vec![e(1, 0), e(2, 1)], 2).is_ok());
        assert_eq!(
            EventLog::new(vec![e(5, 0), e(5, 1)], 2),
            Err(ClientError::NonMonotonic { index: 1, ts: 5, prev: 5 })
        );
        assert_eq!(
            EventLog::new(vec![e(1, 2)], 2),
            Err(ClientError::UnknownWord { index: 0, word: 2, vocab: 2 })
        );
    }

    proptest! {
        #[test]
        fn joint_weights_bounded(words in prop::collection::vec(0u32..6, 0..200)) {
            let v = 6;
            let m = train_local(&words, v, Normalization::Joint);
            let sum: u64 = m.entries.iter().map(|w| w.raw()).sum();
            prop_assert!(sum <= SCALE + (v * v) as u64);
            prop_assert!(m.entries.iter().all(|w| w.raw() <= SCALE));
            prop_assert_eq!(m.clone(), train_local(&words, v, Normalization::Joint));
        }
    }
}

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use super::{ClientError, EventLog, KeyEvent, WordId};

/// A phrase typed `repeat` times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseSpec {
    pub words: Vec<WordId>,
    pub repeat: u32,
}

/// Expands phrase specs into a keyboard log: phrase occurrences are shuffled
/// by `seed` and typed with 50–499 ms gaps between words.
pub fn expand_corpus(phrases: &[PhraseSpec], vocab_size: usize, seed: [u8; 32]) -> Result<EventLog, ClientError> {
    let mut rng = ChaCha20Rng::from_seed(seed);
    let mut occurrences: Vec<&[WordId]> = phrases
        .iter()
        .flat_map(|p| std::iter::repeat_n(p.words.as_slice(), p.repeat as usize))
        .collect();
    occurrences.shuffle(&mut rng);
    let mut ts = 1_000u64;
    let mut events = Vec::new();
    for phrase in occurrences {
        for &word in phrase {
            events.push(KeyEvent { ts_ms: ts, word });
            ts += rng.gen_range(50..500);
        }
        ts += 1_000;
    }
    EventLog::new(events, vocab_size)
}

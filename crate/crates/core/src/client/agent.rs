use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use x25519_dalek::{PublicKey, StaticSecret};

use super::{bigram_id, train_log, ClientId, EventLog, Normalization};
use crate::blinding::PadIssue;
use crate::crypto::{derive_seed, sig, FixedWeight, ModelVector};
use crate::pipeline::{
    run_glimmer, tamper_code, Disclosure, PrivateValidationData, RoundSeals, SignedContribution, ValidationPolicy,
};
use crate::remote::{connect_remote, remote_enrollment_quote, remote_submit, RemoteEndpoint, RemoteLink, SubmitRequest};
use crate::tee::{EnclaveContext, Quote};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversaryMode {
    Honest,
    /// Claims `units` whole occurrences of one bigram. With `bypass` the
    /// client also sends the raw vector when its glimmer refuses.
    OutOfRange { units: u64, bypass: bool },
    /// Puts full weight on a bigram it never typed.
    FabricatedInRange,
    /// Signs its own vector with a key of its choosing.
    BypassGlimmer,
    /// Swaps in a modified glimmer binary, before or after enrolling.
    TamperedCode { before_enroll: bool },
    /// Resends its own accepted submissions.
    Replay,
}

impl AdversaryMode {
    pub fn name(&self) -> &'static str {
        match self {
            AdversaryMode::Honest => "honest",
            AdversaryMode::OutOfRange { .. } => "out_of_range",
            AdversaryMode::FabricatedInRange => "fabricated",
            AdversaryMode::BypassGlimmer => "bypass",
            AdversaryMode::TamperedCode { .. } => "tampered",
            AdversaryMode::Replay => "replay",
        }
    }
}

pub enum GlimmerPlacement {
    Local(EnclaveContext),
    Remote(RemoteEndpoint),
}

/// What a client receives for one round.
pub struct RoundContext<'a> {
    pub round_id: u64,
    pub pad_issue: Option<&'a PadIssue>,
    pub sealed_key: &'a crate::tee::SealedBlob,
    pub policy: &'a ValidationPolicy,
    pub disclosure: Disclosure,
}

#[derive(Debug, Clone)]
pub struct ClientOutcome {
    /// Wire bytes of every contribution the client sent, in order.
    pub submissions: Vec<Vec<u8>>,
    /// The vector the client fed to its glimmer.
    pub plaintext: ModelVector,
    /// Short failure code when the glimmer did not sign.
    pub glimmer_error: Option<String>,
}

pub struct ClientAgent {
    id: ClientId,
    vocab_size: usize,
    normalization: Normalization,
    log: EventLog,
    auxiliary: Vec<u8>,
    mode: AdversaryMode,
    envelope: StaticSecret,
    placement: GlimmerPlacement,
    rng: ChaCha20Rng,
    sent: Vec<Vec<u8>>,
    swapped: bool,
}

impl ClientAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: ClientId,
        vocab_size: usize,
        normalization: Normalization,
        log: EventLog,
        auxiliary: Vec<u8>,
        mode: AdversaryMode,
        placement: GlimmerPlacement,
        seed: [u8; 32],
    ) -> Self {
        let mut agent = Self {
            id,
            vocab_size,
            normalization,
            log,
            auxiliary,
            mode,
            envelope: StaticSecret::from(derive_seed(&seed, b"envelope")),
            placement,
            rng: ChaCha20Rng::from_seed(derive_seed(&seed, b"rng")),
            sent: Vec::new(),
            swapped: false,
        };
        if mode == (AdversaryMode::TamperedCode { before_enroll: true }) {
            agent.swap_glimmer();
        }
        agent
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn mode(&self) -> AdversaryMode {
        self.mode
    }

    pub fn envelope_public(&self) -> PublicKey {
        PublicKey::from(&self.envelope)
    }

    pub fn placement(&self) -> &GlimmerPlacement {
        &self.placement
    }

    fn swap_glimmer(&mut self) {
        if self.swapped {
            return;
        }
        self.swapped = true;
        if let GlimmerPlacement::Local(ctx) = &self.placement {
            let tampered = ctx.platform().launch(tamper_code(ctx.code()), &format!("client-{}-tampered", self.id));
            self.placement = GlimmerPlacement::Local(tampered);
        }
    }

    /// Debug hook over a local glimmer's private heap.
    pub fn glimmer_heap_stats(&self) -> Option<crate::tee::HeapStats> {
        match &self.placement {
            GlimmerPlacement::Local(ctx) => Some(ctx.heap_stats()),
            GlimmerPlacement::Remote(_) => None,
        }
    }

    /// Quote over the envelope key from whichever glimmer the client runs.
    pub fn enrollment_quote(&mut self, link: Option<&mut dyn RemoteLink>) -> Result<Quote, String> {
        let key = self.envelope_public().to_bytes();
        match &self.placement {
            GlimmerPlacement::Local(ctx) => ctx.quote(&key).map_err(|e| e.to_string()),
            GlimmerPlacement::Remote(ep) => {
                let link = link.ok_or("no link to remote glimmer")?;
                remote_enrollment_quote(&ep.address, &key, link).map_err(|e| e.to_string())
            }
        }
    }

    /// The vector this client intends to contribute in `round_id`.
    pub fn model_for(&self, round_id: u64) -> ModelVector {
        let honest = train_log(&self.log, self.vocab_size, self.normalization).with_round(round_id);
        match self.mode {
            AdversaryMode::OutOfRange { units, .. } => {
                let mut x = honest;
                let target = self.first_bigram();
                x.entries[target] = FixedWeight::from_units(units);
                x
            }
            AdversaryMode::FabricatedInRange => {
                let mut x = ModelVector::zeros(round_id, self.vocab_size * self.vocab_size);
                let target = (0..x.len()).find(|i| honest.entries[*i] == FixedWeight::ZERO).unwrap_or(0);
                x.entries[target] = FixedWeight::ONE;
                x
            }
            _ => honest,
        }
    }

    fn first_bigram(&self) -> usize {
        match self.log.events() {
            [a, b, ..] => bigram_id(a.word, b.word, self.vocab_size),
            _ => 0,
        }
    }

    pub fn contribute(&mut self, round: &RoundContext<'_>, link: Option<&mut dyn RemoteLink>) -> ClientOutcome {
        if self.mode == (AdversaryMode::TamperedCode { before_enroll: false }) {
            self.swap_glimmer();
        }
        let x = self.model_for(round.round_id);
        let plaintext = x.clone();
        let mut submissions = Vec::new();

        if self.mode == AdversaryMode::BypassGlimmer {
            let own = sig::signing_key_from_seed(&derive_seed(&self.envelope.to_bytes(), b"forged"));
            let public = round.disclosure == Disclosure::Public;
            let entries = x.raw();
            let msg = SignedContribution::signed_bytes(round.round_id, self.id, public, &entries, u8::MAX);
            let signature = sig::sign(&msg, &own).to_bytes();
            let sc = SignedContribution { round_id: round.round_id, client_id: self.id, public, entries, confidence: u8::MAX, signature };
            submissions.push(sc.to_bytes());
            return self.finish(submissions, plaintext, Some("bypassed".into()));
        }

        let pad = match (round.disclosure, round.pad_issue) {
            (Disclosure::Blinded, Some(issue)) => match issue.open(&self.envelope) {
                Ok(blob) => Some(blob),
                Err(_) => return self.finish(submissions, plaintext, Some("pad_envelope".into())),
            },
            _ => None,
        };
        let seals = RoundSeals { pad, signing_key: round.sealed_key.clone() };
        let d = PrivateValidationData { keyboard_event_log: self.log.events().to_vec(), auxiliary: self.auxiliary.clone() };

        let result = match &mut self.placement {
            GlimmerPlacement::Local(ctx) => {
                run_glimmer(ctx, self.id, x, d, &seals, round.policy, round.disclosure).map_err(|e| e.code().to_owned())
            }
            GlimmerPlacement::Remote(ep) => match link {
                None => Err("unreachable".to_string()),
                Some(link) => connect_remote(ep, link, &mut self.rng)
                    .and_then(|mut ch| {
                        let req = SubmitRequest {
                            client_id: self.id,
                            x,
                            d,
                            seals,
                            policy: round.policy.clone(),
                            disclosure: round.disclosure,
                        };
                        remote_submit(&mut ch, link, req)
                    })
                    .map_err(|e| e.code().to_owned()),
            },
        };

        match result {
            Ok(sc) => {
                let bytes = sc.to_bytes();
                submissions.push(bytes.clone());
                if self.mode == AdversaryMode::Replay {
                    submissions.push(bytes);
                    submissions.extend(self.sent.iter().cloned());
                }
                self.finish(submissions, plaintext, None)
            }
            Err(e) => {
                if let AdversaryMode::OutOfRange { bypass: true, .. } = self.mode {
                    let public = round.disclosure == Disclosure::Public;
                    let sc = SignedContribution {
                        round_id: round.round_id,
                        client_id: self.id,
                        public,
                        entries: plaintext.raw(),
                        confidence: u8::MAX,
                        signature: [0u8; sig::SIGNATURE_LEN],
                    };
                    submissions.push(sc.to_bytes());
                }
                self.finish(submissions, plaintext, Some(e))
            }
        }
    }

    fn finish(&mut self, submissions: Vec<Vec<u8>>, plaintext: ModelVector, glimmer_error: Option<String>) -> ClientOutcome {
        if glimmer_error.is_none() {
            if let Some(first) = submissions.first() {
                self.sent.push(first.clone());
            }
        }
        ClientOutcome { submissions, plaintext, glimmer_error }
    }
}


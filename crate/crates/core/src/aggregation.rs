//! The service side: enrollment by attestation, sealed key provisioning,
//! acceptance of endorsed contributions, round closing with dropout repair,
//! and next-word prediction over the published model.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;
use x25519_dalek::PublicKey;

use crate::blinding::{BlindingError, PadRevealer, Participant, RevealRequest, RoundRoster};
use crate::client::{bigram_id, ClientId, WordId};
use crate::codec::{DecodeError, Reader};
use crate::crypto::sig::{SigningKey, VerifyingKey};
use crate::crypto::{aggregate_unblind, BlindedVector, FixedError};
use crate::pipeline::{ProvisionedKey, SignedContribution, ValidationPolicy};
use crate::tee::{self, EnclaveContext, Measurement, Quote, SealedBlob};

pub const DEFAULT_CONFIDENCE_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    BadSignature,
    UnknownClient,
    Replay,
    RoundClosed,
    UnknownRound,
    LowConfidence,
    WrongDisclosure,
    Malformed,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::BadSignature => "bad_signature",
            RejectReason::UnknownClient => "unknown_client",
            RejectReason::Replay => "replay",
            RejectReason::RoundClosed => "round_closed",
            RejectReason::UnknownRound => "unknown_round",
            RejectReason::LowConfidence => "low_confidence",
            RejectReason::WrongDisclosure => "wrong_disclosure",
            RejectReason::Malformed => "malformed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptOutcome {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnrollError {
    #[error("quote does not attest the approved glimmer")]
    AttestationFailure,
    #[error("quote report data does not carry a usable client key")]
    BadKey,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregationError {
    #[error("unknown round {0}")]
    UnknownRound(u64),
    #[error("round {0} already exists")]
    RoundExists(u64),
    #[error("round {round} not due until tick {deadline}")]
    NotDue { round: u64, deadline: u64 },
    #[error("round {0} is not open")]
    NotOpen(u64),
    #[error("no accepted contributions in round {0}")]
    EmptyRound(u64),
    #[error("blinding service unavailable; round {0} aborted")]
    BlindingServiceUnavailable(u64),
    #[error("blinding service refused: {0}")]
    BlindingRefused(BlindingError),
    #[error("signing key not provisioned")]
    NotProvisioned,
    #[error(transparent)]
    Fixed(#[from] FixedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundStatus {
    Open,
    Finalizing,
    Closed,
    Aborted,
}

#[derive(Debug, Clone)]
pub struct RoundState {
    pub round_id: u64,
    pub roster: BTreeSet<ClientId>,
    pub vector_len: usize,
    pub public: bool,
    pub accepted: BTreeMap<ClientId, SignedContribution>,
    pub deadline: u64,
    pub status: RoundStatus,
}

/// The published aggregate: exact entry sums over accepted submitters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalModel {
    pub round_id: u64,
    pub sums: Vec<u64>,
    pub submitter_count: u32,
}

impl GlobalModel {
    /// `round_id (8) | N_s (4) | V (4) | sums (8 each)`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.sums.len());
        out.extend_from_slice(&self.round_id.to_be_bytes());
        out.extend_from_slice(&self.submitter_count.to_be_bytes());
        out.extend_from_slice(&(self.sums.len() as u32).to_be_bytes());
        for s in &self.sums {
            out.extend_from_slice(&s.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let round_id = r.u64("model round")?;
        let submitter_count = r.u32("submitter count")?;
        // V (4) then sums: the same shape as a length-prefixed u64 vector.
        let sums = r.u64_vec("sums")?;
        r.finish("global model")?;
        Ok(Self { round_id, sums, submitter_count })
    }
}

/// Top-`k` successors of `word` by summed weight, ties to the lower word id.
/// Words with no outgoing bigram mass yield an empty list.
pub fn predict_next(g: &GlobalModel, vocab_size: usize, word: WordId, k: usize) -> Vec<WordId> {
    if word as usize >= vocab_size || g.sums.len() != vocab_size * vocab_size {
        return Vec::new();
    }
    let mut successors: Vec<(u64, WordId)> = (0..vocab_size as WordId)
        .map(|b| (g.sums[bigram_id(word, b, vocab_size)], b))
        .filter(|(s, _)| *s > 0)
        .collect();
    successors.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    successors.into_iter().take(k).map(|(_, w)| w).collect()
}

#[derive(Debug, Clone)]
pub struct AggregationConfig {
    pub approved: Measurement,
    pub attestation_root: VerifyingKey,
    pub policy: ValidationPolicy,
    pub confidence_threshold: u8,
}

pub struct AggregationService {
    ctx: EnclaveContext,
    config: AggregationConfig,
    credential: SigningKey,
    contribution_key: Option<VerifyingKey>,
    enrolled: BTreeMap<ClientId, PublicKey>,
    rounds: BTreeMap<u64, RoundState>,
}

impl AggregationService {
    /// `ctx` is the service's provisioning enclave, used only to seal the
    /// signing key. `credential` authenticates the service to the blinding
    /// service.
    pub fn new(ctx: EnclaveContext, config: AggregationConfig, credential: SigningKey) -> Self {
        Self { ctx, config, credential, contribution_key: None, enrolled: BTreeMap::new(), rounds: BTreeMap::new() }
    }

    pub fn config(&self) -> &AggregationConfig {
        &self.config
    }

    pub fn credential_public(&self) -> VerifyingKey {
        self.credential.verifying_key()
    }

    pub fn contribution_key(&self) -> Option<VerifyingKey> {
        self.contribution_key
    }

    /// Creates the contribution signing key and seals it, together with the
    /// service's policy, to the approved glimmer. Only the verification key
    /// stays with the service.
    pub fn provision_signing_key(&mut self, seed: [u8; 32]) -> (SealedBlob, VerifyingKey) {
        let signing_key = SigningKey::from_bytes(&seed);
        let vk = signing_key.verifying_key();
        let provisioned = ProvisionedKey { signing_key, policy: Some(self.config.policy.clone()) };
        let blob = self.ctx.seal(&provisioned.to_bytes(), &self.config.approved);
        self.contribution_key = Some(vk);
        (blob, vk)
    }

    /// Admits a client whose quote attests the approved glimmer. The first 32
    /// bytes of report data carry the client's envelope key.
    pub fn enroll(&mut self, client_id: ClientId, quote: &Quote) -> Result<(), EnrollError> {
        if !tee::verify_quote(quote, &self.config.approved, &self.config.attestation_root) {
            return Err(EnrollError::AttestationFailure);
        }
        let key: [u8; 32] = quote.report_data[..32].try_into().expect("32 bytes");
        if key == [0u8; 32] {
            return Err(EnrollError::BadKey);
        }
        self.enrolled.insert(client_id, PublicKey::from(key));
        Ok(())
    }

    pub fn is_enrolled(&self, client_id: ClientId) -> bool {
        self.enrolled.contains_key(&client_id)
    }

    /// Roster of every enrolled client, in client id order.
    pub fn roster(&self, round_id: u64, vector_len: usize) -> RoundRoster {
        let participants = self
            .enrolled
            .iter()
            .map(|(id, pk)| Participant { client_id: *id, public_key: *pk })
            .collect();
        RoundRoster::new(round_id, participants, self.config.approved, vector_len)
            .expect("map keys are unique")
    }

    pub fn open_round(&mut self, roster: &RoundRoster, deadline: u64, public: bool) -> Result<(), AggregationError> {
        if self.rounds.contains_key(&roster.round_id) {
            return Err(AggregationError::RoundExists(roster.round_id));
        }
        self.rounds.insert(
            roster.round_id,
            RoundState {
                round_id: roster.round_id,
                roster: roster.client_ids().collect(),
                vector_len: roster.vector_len,
                public,
                accepted: BTreeMap::new(),
                deadline,
                status: RoundStatus::Open,
            },
        );
        Ok(())
    }

    pub fn round(&self, round_id: u64) -> Option<&RoundState> {
        self.rounds.get(&round_id)
    }

    /// Accepts wire bytes of a contribution.
    pub fn accept_bytes(&mut self, bytes: &[u8]) -> AcceptOutcome {
        match SignedContribution::from_bytes(bytes) {
            Ok(sc) => self.accept(sc),
            Err(_) => AcceptOutcome::Rejected(RejectReason::Malformed),
        }
    }

    pub fn accept(&mut self, sc: SignedContribution) -> AcceptOutcome {
        use RejectReason::*;
        let Some(vk) = self.contribution_key else {
            return AcceptOutcome::Rejected(BadSignature);
        };
        let threshold = self.config.confidence_threshold;
        let Some(round) = self.rounds.get_mut(&sc.round_id) else {
            return AcceptOutcome::Rejected(UnknownRound);
        };
        let reject = if round.status != RoundStatus::Open {
            Some(RoundClosed)
        } else if !round.roster.contains(&sc.client_id) {
            Some(UnknownClient)
        } else if !sc.verify(&vk) {
            Some(BadSignature)
        } else if round.accepted.contains_key(&sc.client_id) {
            Some(Replay)
        } else if sc.public != round.public {
            Some(WrongDisclosure)
        } else if sc.entries.len() != round.vector_len {
            Some(Malformed)
        } else if sc.confidence < threshold {
            Some(LowConfidence)
        } else {
            None
        };
        match reject {
            Some(r) => AcceptOutcome::Rejected(r),
            None => {
                round.accepted.insert(sc.client_id, sc);
                AcceptOutcome::Accepted
            }
        }
    }

    /// Closes the round at logical time `now`, repairing dropouts through
    /// the blinding service.
    pub fn finalize_round(
        &mut self,
        round_id: u64,
        now: u64,
        blinding: &mut dyn PadRevealer,
    ) -> Result<GlobalModel, AggregationError> {
        let round = self.rounds.get_mut(&round_id).ok_or(AggregationError::UnknownRound(round_id))?;
        if round.status != RoundStatus::Open {
            return Err(AggregationError::NotOpen(round_id));
        }
        if now < round.deadline {
            return Err(AggregationError::NotDue { round: round_id, deadline: round.deadline });
        }
        round.status = RoundStatus::Finalizing;
        if round.accepted.is_empty() {
            round.status = RoundStatus::Aborted;
            blinding.round_closed(round_id);
            return Err(AggregationError::EmptyRound(round_id));
        }
        let ys: Vec<BlindedVector> = round
            .accepted
            .values()
            .map(|sc| BlindedVector { round_id, entries: sc.entries.clone() })
            .collect();

        let dropout_pads = if round.public {
            Vec::new()
        } else {
            let accepted: Vec<ClientId> = round.accepted.keys().copied().collect();
            let missing: Vec<ClientId> = round.roster.iter().filter(|id| !round.accepted.contains_key(id)).copied().collect();
            if missing.is_empty() {
                Vec::new()
            } else {
                let req = RevealRequest::new(round_id, missing.clone(), accepted, &self.credential);
                match blinding.reveal(&req) {
                    Ok(pads) => {
                        let returned: Vec<ClientId> = pads.iter().map(|(id, _)| *id).collect();
                        if returned != missing {
                            round.status = RoundStatus::Aborted;
                            return Err(AggregationError::BlindingServiceUnavailable(round_id));
                        }
                        pads.into_iter().map(|(_, p)| p).collect()
                    }
                    Err(BlindingError::Unavailable) => {
                        round.status = RoundStatus::Aborted;
                        return Err(AggregationError::BlindingServiceUnavailable(round_id));
                    }
                    Err(e) => {
                        round.status = RoundStatus::Aborted;
                        return Err(AggregationError::BlindingRefused(e));
                    }
                }
            }
        };
        let sums = aggregate_unblind(&ys, &dropout_pads)?;
        round.status = RoundStatus::Closed;
        blinding.round_closed(round_id);
        Ok(GlobalModel { round_id, sums, submitter_count: ys.len() as u32 })
    }
}

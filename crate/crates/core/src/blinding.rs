//! The trusted blinding service.
//!
//! For each round it draws zero-sum pads, seals each to the approved glimmer
//! measurement, and wraps each sealed pad in an envelope to one client's key.
//! It keeps the pads until the round is finalized so the aggregation service
//! can close a round with dropouts, but never reveals the pad of a client
//! that the aggregation service has reported as a submitter.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::client::ClientId;
use crate::codec::{put_bytes32, DecodeError, Reader};
use crate::crypto::envelope::{self, Envelope, EnvelopeError};
use crate::crypto::sig::{self, Signature, SigningKey, VerifyingKey};
use crate::crypto::{derive_seed, gen_pads, FixedError, Pad};
use crate::tee::{EnclaveContext, Measurement, SealedBlob};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlindingError {
    #[error("roster is empty")]
    EmptyRoster,
    #[error("client {0} appears twice in the roster")]
    DuplicateClient(ClientId),
    #[error("round {0} was already provisioned")]
    RoundExists(u64),
    #[error("unknown round {0}")]
    UnknownRound(u64),
    #[error("client {0} is not in the roster")]
    UnknownClient(ClientId),
    #[error("client {0} submitted; its pad stays secret")]
    NotMissing(ClientId),
    #[error("reveal request not signed by the aggregation service")]
    Unauthorized,
    #[error("blinding service unavailable")]
    Unavailable,
    #[error(transparent)]
    Pads(#[from] FixedError),
}

#[derive(Debug, Clone)]
pub struct Participant {
    pub client_id: ClientId,
    pub public_key: PublicKey,
}

/// The frozen set of participants for one round.
#[derive(Debug, Clone)]
pub struct RoundRoster {
    pub round_id: u64,
    participants: Vec<Participant>,
    pub approved_measurement: Measurement,
    pub vector_len: usize,
}

impl RoundRoster {
    pub fn new(
        round_id: u64,
        participants: Vec<Participant>,
        approved_measurement: Measurement,
        vector_len: usize,
    ) -> Result<Self, BlindingError> {
        let mut seen = BTreeSet::new();
        for p in &participants {
            if !seen.insert(p.client_id) {
                return Err(BlindingError::DuplicateClient(p.client_id));
            }
        }
        Ok(Self { round_id, participants, approved_measurement, vector_len })
    }

    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    pub fn client_ids(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.participants.iter().map(|p| p.client_id)
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }
}

fn envelope_aad(round_id: u64, client_id: ClientId) -> [u8; 16] {
    let mut aad = [0u8; 16];
    aad[..8].copy_from_slice(&round_id.to_be_bytes());
    aad[8..].copy_from_slice(&client_id.to_be_bytes());
    aad
}

/// One client's sealed pad, wrapped to the client's key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PadIssue {
    pub round_id: u64,
    pub client_id: ClientId,
    pub envelope: Envelope,
}

impl PadIssue {
    /// `round_id (8) | client_id (8) | envelope`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.round_id.to_be_bytes());
        out.extend_from_slice(&self.client_id.to_be_bytes());
        out.extend_from_slice(&self.envelope.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let round_id = r.u64("pad issue round")?;
        let client_id = r.u64("pad issue client")?;
        let envelope = Envelope::from_bytes(r.remaining())?;
        Ok(Self { round_id, client_id, envelope })
    }

    /// Client side: unwraps the envelope to the sealed pad.
    pub fn open(&self, secret: &StaticSecret) -> Result<SealedBlob, EnvelopeError> {
        let inner = envelope::open(secret, &self.envelope, &envelope_aad(self.round_id, self.client_id))?;
        Ok(SealedBlob::from_bytes(&inner)?)
    }
}

/// A signed request from the aggregation service to reveal dropout pads.
/// `accepted` is the service's list of submitters, cross-checked against
/// `missing`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevealRequest {
    pub round_id: u64,
    pub missing: Vec<ClientId>,
    pub accepted: Vec<ClientId>,
    pub signature: [u8; 64],
}

fn put_ids(out: &mut Vec<u8>, ids: &[ClientId]) {
    out.extend_from_slice(&(ids.len() as u32).to_be_bytes());
    for id in ids {
        out.extend_from_slice(&id.to_be_bytes());
    }
}

impl RevealRequest {
    fn body(round_id: u64, missing: &[ClientId], accepted: &[ClientId]) -> Vec<u8> {
        let mut out = b"glimmer-reveal-v1".to_vec();
        out.extend_from_slice(&round_id.to_be_bytes());
        put_ids(&mut out, missing);
        put_ids(&mut out, accepted);
        out
    }

    pub fn new(round_id: u64, missing: Vec<ClientId>, accepted: Vec<ClientId>, credential: &SigningKey) -> Self {
        let signature = sig::sign(&Self::body(round_id, &missing, &accepted), credential).to_bytes();
        Self { round_id, missing, accepted, signature }
    }

    fn verify(&self, vk: &VerifyingKey) -> bool {
        sig::verify(
            &Self::body(self.round_id, &self.missing, &self.accepted),
            &Signature::from_bytes(&self.signature),
            vk,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.round_id.to_be_bytes());
        put_ids(&mut out, &self.missing);
        put_ids(&mut out, &self.accepted);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let round_id = r.u64("reveal round")?;
        let mut ids = || -> Result<Vec<ClientId>, DecodeError> {
            let n = r.u32("id count")? as usize;
            (0..n).map(|_| r.u64("client id")).collect()
        };
        let missing = ids()?;
        let accepted = ids()?;
        let signature = r.array("reveal signature")?;
        r.finish("reveal request")?;
        Ok(Self { round_id, missing, accepted, signature })
    }
}

/// `round_id (8) | count (4) | { client_id (8) | pad length (4) | pad }*`
pub fn encode_reveal_response(round_id: u64, pads: &[(ClientId, Pad)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&round_id.to_be_bytes());
    out.extend_from_slice(&(pads.len() as u32).to_be_bytes());
    for (id, pad) in pads {
        out.extend_from_slice(&id.to_be_bytes());
        put_bytes32(&mut out, &pad.to_bytes());
    }
    out
}

pub fn decode_reveal_response(bytes: &[u8]) -> Result<(u64, Vec<(ClientId, Pad)>), DecodeError> {
    let mut r = Reader::new(bytes);
    let round_id = r.u64("reveal response round")?;
    let n = r.u32("reveal response count")? as usize;
    let mut pads = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let id = r.u64("client id")?;
        pads.push((id, Pad::from_bytes(r.bytes32("pad")?)?));
    }
    r.finish("reveal response")?;
    Ok((round_id, pads))
}

/// Where the service keeps its retained pads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Hosting {
    /// A standalone trusted actor holding pads in memory.
    #[default]
    Actor,
    /// Inside an enclave on a client: retained pads are sealed to the
    /// service's own measurement.
    Enclave,
}

enum Retained {
    Plain(Pad),
    Sealed(SealedBlob),
}

struct RoundPads {
    roster: BTreeSet<ClientId>,
    pads: BTreeMap<ClientId, Retained>,
    /// Every client ever reported as a submitter for this round.
    claimed_accepted: BTreeSet<ClientId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisclosureRecord {
    pub round_id: u64,
    pub clients: Vec<ClientId>,
}

pub struct BlindingService {
    ctx: EnclaveContext,
    hosting: Hosting,
    aggregator: VerifyingKey,
    rng: ChaCha20Rng,
    rounds: BTreeMap<u64, RoundPads>,
    disclosures: Vec<DisclosureRecord>,
    available: bool,
}

impl BlindingService {
    /// `ctx` is the service's own enclave context, used for sealing.
    /// `aggregator` authenticates reveal requests.
    pub fn new(ctx: EnclaveContext, hosting: Hosting, aggregator: VerifyingKey, seed: [u8; 32]) -> Self {
        Self {
            ctx,
            hosting,
            aggregator,
            rng: ChaCha20Rng::from_seed(derive_seed(&seed, b"blinding-envelopes")),
            rounds: BTreeMap::new(),
            disclosures: Vec::new(),
            available: true,
        }
    }

    pub fn hosting(&self) -> Hosting {
        self.hosting
    }

    /// Fault injection: an unavailable service refuses every reveal.
    pub fn set_available(&mut self, available: bool) {
        self.available = available;
    }

    pub fn disclosures(&self) -> &[DisclosureRecord] {
        &self.disclosures
    }

    pub fn retained_rounds(&self) -> Vec<u64> {
        self.rounds.keys().copied().collect()
    }

    pub fn provision_round(&mut self, roster: &RoundRoster, seed: [u8; 32]) -> Result<Vec<PadIssue>, BlindingError> {
        if roster.is_empty() {
            return Err(BlindingError::EmptyRoster);
        }
        if self.rounds.contains_key(&roster.round_id) {
            return Err(BlindingError::RoundExists(roster.round_id));
        }
        let pads = gen_pads(roster.round_id, roster.len(), roster.vector_len, seed)?;
        let mut retained = BTreeMap::new();
        let mut issues = Vec::with_capacity(roster.len());
        for (participant, pad) in roster.participants().iter().zip(pads) {
            let pad_bytes = zeroize::Zeroizing::new(pad.to_bytes());
            let sealed = self.ctx.seal(&pad_bytes, &roster.approved_measurement);
            let envelope = envelope::seal_to(
                &participant.public_key,
                &sealed.to_bytes(),
                &envelope_aad(roster.round_id, participant.client_id),
                &mut self.rng,
            );
            issues.push(PadIssue { round_id: roster.round_id, client_id: participant.client_id, envelope });
            let keep = match self.hosting {
                Hosting::Actor => Retained::Plain(pad),
                Hosting::Enclave => {
                    let own = self.ctx.measurement();
                    Retained::Sealed(self.ctx.seal(&pad_bytes, &own))
                }
            };
            retained.insert(participant.client_id, keep);
        }
        self.rounds.insert(
            roster.round_id,
            RoundPads { roster: roster.client_ids().collect(), pads: retained, claimed_accepted: BTreeSet::new() },
        );
        Ok(issues)
    }

    /// Reveals the pads of exactly the `missing` clients.
    pub fn reveal_dropout_pads(&mut self, req: &RevealRequest) -> Result<Vec<(ClientId, Pad)>, BlindingError> {
        if !self.available {
            return Err(BlindingError::Unavailable);
        }
        if !req.verify(&self.aggregator) {
            return Err(BlindingError::Unauthorized);
        }
        let round = self.rounds.get_mut(&req.round_id).ok_or(BlindingError::UnknownRound(req.round_id))?;
        for id in req.missing.iter().chain(&req.accepted) {
            if !round.roster.contains(id) {
                return Err(BlindingError::UnknownClient(*id));
            }
        }
        round.claimed_accepted.extend(req.accepted.iter().copied());
        if let Some(id) = req.missing.iter().find(|id| round.claimed_accepted.contains(id)) {
            return Err(BlindingError::NotMissing(*id));
        }
        let mut out = Vec::with_capacity(req.missing.len());
        for id in &req.missing {
            let pad = match &round.pads[id] {
                Retained::Plain(p) => p.clone(),
                Retained::Sealed(blob) => {
                    let bytes = self.ctx.unseal(blob).expect("sealed to our own measurement");
                    Pad::from_bytes(&bytes).expect("we encoded it")
                }
            };
            out.push((*id, pad));
        }
        if !out.is_empty() {
            self.disclosures.push(DisclosureRecord { round_id: req.round_id, clients: req.missing.clone() });
        }
        Ok(out)
    }

    /// Erases retained pads for a finalized round.
    pub fn erase_round(&mut self, round_id: u64) {
        if let Some(mut round) = self.rounds.remove(&round_id) {
            for r in round.pads.values_mut() {
                if let Retained::Plain(p) = r {
                    zeroize::Zeroize::zeroize(p);
                }
            }
        }
    }
}

/// The aggregation service's view of the blinding service.
pub trait PadRevealer {
    fn reveal(&mut self, req: &RevealRequest) -> Result<Vec<(ClientId, Pad)>, BlindingError>;
    fn round_closed(&mut self, round_id: u64);
}

impl PadRevealer for BlindingService {
    fn reveal(&mut self, req: &RevealRequest) -> Result<Vec<(ClientId, Pad)>, BlindingError> {
        self.reveal_dropout_pads(req)
    }

    fn round_closed(&mut self, round_id: u64) {
        self.erase_round(round_id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tee::TeePlatform;

    struct Setup {
        service: BlindingService,
        glimmer: EnclaveContext,
        credential: SigningKey,
        secrets: Vec<StaticSecret>,
        roster: RoundRoster,
    }

    fn setup(n: usize, v: usize, hosting: Hosting) -> Setup {
        let platform = TeePlatform::from_seed([8u8; 32]);
        let glimmer = platform.launch(b"glimmer".to_vec(), "g");
        let credential = sig::signing_key_from_seed(&[2u8; 32]);
        let service = BlindingService::new(
            platform.launch(b"blinding".to_vec(), "b"),
            hosting,
            credential.verifying_key(),
            [1u8; 32],
        );
        let mut rng = ChaCha20Rng::from_seed([4u8; 32]);
        let secrets: Vec<_> = (0..n).map(|_| StaticSecret::random_from_rng(&mut rng)).collect();
        let participants = secrets
            .iter()
            .enumerate()
            .map(|(i, s)| Participant { client_id: i as u64 + 1, public_key: PublicKey::from(s) })
            .collect();
        let roster = RoundRoster::new(1, participants, glimmer.measurement(), v).unwrap();
        Setup { service, glimmer, credential, secrets, roster }
    }

    fn unwrap_pad(s: &Setup, issue: &PadIssue, secret: &StaticSecret) -> Pad {
        let sealed = issue.open(secret).unwrap();
        Pad::from_bytes(&s.glimmer.unseal(&sealed).unwrap()).unwrap()
    }

    #[test]
    fn single_participant_pad_is_zero() {
        let mut s = setup(1, 4, Hosting::Actor);
        let issues = s.service.provision_round(&s.roster, [0u8; 32]).unwrap();
        assert_eq!(issues.len(), 1);
        assert_eq!(unwrap_pad(&s, &issues[0], &s.secrets[0]).entries, vec![0; 4]);
    }

    #[test]
    fn pads_open_only_for_addressee_and_sum_to_zero() {
        let mut s = setup(5, 3, Hosting::Actor);
        let issues = s.service.provision_round(&s.roster, [0u8; 32]).unwrap();
        let pads: Vec<Pad> = issues.iter().zip(&s.secrets).map(|(i, k)| unwrap_pad(&s, i, k)).collect();
        for j in 0..3 {
            assert_eq!(pads.iter().fold(0u64, |a, p| a.wrapping_add(p.entries[j])), 0);
        }
        assert_eq!(issues[0].open(&s.secrets[1]), Err(EnvelopeError::DecryptFailure));
        let parsed = PadIssue::from_bytes(&issues[2].to_bytes()).unwrap();
        assert_eq!(parsed, issues[2]);
    }

    #[test]
    fn roster_rules() {
        let mut s = setup(2, 3, Hosting::Actor);
        let dup = RoundRoster::new(
            2,
            vec![s.roster.participants()[0].clone(), s.roster.participants()[0].clone()],
            s.roster.approved_measurement,
            3,
        );
        assert_eq!(dup.err(), Some(BlindingError::DuplicateClient(1)));
        let empty = RoundRoster::new(3, vec![], s.roster.approved_measurement, 3).unwrap();
        assert_eq!(s.service.provision_round(&empty, [0u8; 32]), Err(BlindingError::EmptyRoster));
        s.service.provision_round(&s.roster, [0u8; 32]).unwrap();
        assert_eq!(s.service.provision_round(&s.roster, [0u8; 32]), Err(BlindingError::RoundExists(1)));
    }

    #[test]
    fn reveal_rules() {
        for hosting in [Hosting::Actor, Hosting::Enclave] {
            let mut s = setup(4, 2, hosting);
            let issues = s.service.provision_round(&s.roster, [0u8; 32]).unwrap();

            let none = RevealRequest::new(1, vec![], vec![1, 2, 4], &s.credential);
            assert_eq!(s.service.reveal_dropout_pads(&none).unwrap(), vec![]);

            let req = RevealRequest::new(1, vec![3], vec![1, 2, 4], &s.credential);
            let got = s.service.reveal_dropout_pads(&req).unwrap();
            assert_eq!(got, vec![(3, unwrap_pad(&s, &issues[2], &s.secrets[2]))]);
            assert_eq!(s.service.disclosures().len(), 1);

            // A submitter's pad is never revealed, even in a later request.
            let greedy = RevealRequest::new(1, vec![2], vec![], &s.credential);
            assert_eq!(s.service.reveal_dropout_pads(&greedy), Err(BlindingError::NotMissing(2)));
            let contradictory = RevealRequest::new(1, vec![1], vec![1], &s.credential);
            assert_eq!(s.service.reveal_dropout_pads(&contradictory), Err(BlindingError::NotMissing(1)));

            let forged = RevealRequest::new(1, vec![3], vec![], &sig::signing_key_from_seed(&[9u8; 32]));
            assert_eq!(s.service.reveal_dropout_pads(&forged), Err(BlindingError::Unauthorized));

            let stranger = RevealRequest::new(1, vec![99], vec![], &s.credential);
            assert_eq!(s.service.reveal_dropout_pads(&stranger), Err(BlindingError::UnknownClient(99)));

            let other_round = RevealRequest::new(7, vec![], vec![], &s.credential);
            assert_eq!(s.service.reveal_dropout_pads(&other_round), Err(BlindingError::UnknownRound(7)));

            s.service.erase_round(1);
            assert!(s.service.retained_rounds().is_empty());
            assert_eq!(s.service.reveal_dropout_pads(&req), Err(BlindingError::UnknownRound(1)));
        }
    }

    #[test]
    fn unavailable_service_refuses() {
        let mut s = setup(2, 2, Hosting::Actor);
        s.service.provision_round(&s.roster, [0u8; 32]).unwrap();
        s.service.set_available(false);
        let req = RevealRequest::new(1, vec![1], vec![2], &s.credential);
        assert_eq!(s.service.reveal_dropout_pads(&req), Err(BlindingError::Unavailable));
    }

    #[test]
    fn reveal_messages_codec() {
        let key = sig::signing_key_from_seed(&[2u8; 32]);
        let req = RevealRequest::new(3, vec![1, 5], vec![2], &key);
        assert_eq!(RevealRequest::from_bytes(&req.to_bytes()).unwrap(), req);
        let pads = vec![(5, Pad { round_id: 3, entries: vec![1, 2] })];
        assert_eq!(decode_reveal_response(&encode_reveal_response(3, &pads)).unwrap(), (3, pads));
    }
}

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use super::bus::{Bus, Transport};
use super::config::{Placement, ScenarioConfig};
use super::report::{
    client_address, scan_transcript, Leak, Record, RemoteInfo, RoundRecord, RunReport, Sentinel, VerdictTally,
};
use super::bus::TranscriptEntry;
use crate::aggregation::{
    predict_next, AcceptOutcome, AggregationConfig, AggregationError, AggregationService, GlobalModel,
};
use crate::blinding::{
    decode_reveal_response, encode_reveal_response, BlindingError, BlindingService, Hosting, PadIssue, PadRevealer,
    RevealRequest,
};
use crate::client::{
    expand_corpus, AdversaryMode, ClientAgent, ClientError, ClientId, ClientOutcome, GlimmerPlacement, RoundContext,
};
use crate::confidential::{
    ClientSignals, ConfidentialGlimmer, ConfidentialService, RuntimeAuditor, SecretValidator, SignalEvent,
};
use crate::crypto::{derive_seed, sha256, sig, ModelVector, Pad};
use crate::pipeline::{tamper_code, Disclosure, GlimmerImage, PolicyKind};
use crate::remote::{LinkError, RemoteEndpoint, RemoteGlimmerHost, RemoteLink};
use crate::tee::{measure, Quote, SealedBlob, TeePlatform};
use crate::wire::{Frame, MessageType};

const AGGREGATION: &str = "aggregation";
const BLINDING: &str = "blinding";
const VALIDATION: &str = "validation-service";
const CLIENTS: &str = "clients";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("client {client}: {source}")]
    Corpus { client: ClientId, source: ClientError },
    #[error("transport: {0}")]
    Transport(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    pub transport: Transport,
    /// Deliberately broken build: rounds run unblinded while the scan still
    /// expects blinded traffic. For negative tests only.
    pub insecure_skip_blinding: bool,
}

pub struct RunOutput {
    pub report: RunReport,
    pub transcript: Vec<TranscriptEntry>,
}

fn remote_address(name: &str) -> String {
    format!("remote-{name}")
}

/// Request/response over the bus to remote glimmer hosts.
struct BusLink<'a> {
    bus: &'a mut Bus,
    hosts: &'a mut BTreeMap<String, RemoteGlimmerHost>,
    from: String,
}

impl RemoteLink for BusLink<'_> {
    fn exchange(&mut self, address: &str, frame: Frame) -> Result<Frame, LinkError> {
        let host = self.hosts.get_mut(address).ok_or_else(|| LinkError::Unreachable(address.into()))?;
        self.bus.send(&self.from, address, frame);
        let env = self.bus.recv(address).expect("just sent");
        let reply = host.handle(env.frame).map_err(|e| LinkError::Remote(e.to_string()))?;
        self.bus.send(address, &self.from, reply);
        Ok(self.bus.recv(&self.from).expect("just sent").frame)
    }
}

/// Carries reveal requests and responses over the bus.
struct BusRevealer<'a> {
    bus: &'a mut Bus,
    service: &'a mut BlindingService,
    revealed: Vec<ClientId>,
}

impl PadRevealer for BusRevealer<'_> {
    fn reveal(&mut self, req: &RevealRequest) -> Result<Vec<(ClientId, Pad)>, BlindingError> {
        self.bus.send(AGGREGATION, BLINDING, Frame::new(MessageType::PadRevealRequest, req.to_bytes()));
        let env = self.bus.recv(BLINDING).expect("just sent");
        let req = RevealRequest::from_bytes(&env.frame.payload).map_err(|_| BlindingError::Unauthorized)?;
        let pads = self.service.reveal_dropout_pads(&req)?;
        let frame = Frame::new(MessageType::PadRevealResponse, encode_reveal_response(req.round_id, &pads));
        self.bus.send(BLINDING, AGGREGATION, frame);
        let env = self.bus.recv(AGGREGATION).expect("just sent");
        let (_, pads) = decode_reveal_response(&env.frame.payload).map_err(|_| BlindingError::Unavailable)?;
        self.revealed.extend(pads.iter().map(|(id, _)| *id));
        Ok(pads)
    }

    fn round_closed(&mut self, round_id: u64) {
        self.service.round_closed(round_id);
    }
}

struct ClientSlot {
    agent: ClientAgent,
    enrolled: bool,
    sealed_key: Option<SealedBlob>,
    confidential: Option<ConfidentialGlimmer>,
    signals: ClientSignals,
    sentinel: Sentinel,
}

fn sparse(v: &[u64]) -> Vec<(usize, u64)> {
    v.iter().enumerate().filter(|(_, x)| **x != 0).map(|(i, x)| (i, *x)).collect()
}

/// Entries from the first to the last nonzero one, at least two entries wide,
/// as they appear on the wire.
fn model_fingerprint(x: &ModelVector) -> Option<Vec<u8>> {
    let raw = x.raw();
    let first = raw.iter().position(|e| *e != 0)?;
    let last = raw.iter().rposition(|e| *e != 0)?;
    let (lo, hi) = if last > first {
        (first, last)
    } else if last + 1 < raw.len() {
        (first, last + 1)
    } else if first > 0 {
        (first - 1, last)
    } else {
        return None;
    };
    Some(raw[lo..=hi].iter().flat_map(|e| e.to_be_bytes()).collect())
}

fn mode_label(mode: AdversaryMode) -> String {
    match mode {
        AdversaryMode::OutOfRange { units, bypass } => {
            format!("out_of_range {units}{}", if bypass { " bypass" } else { "" })
        }
        AdversaryMode::TamperedCode { before_enroll: true } => "tampered before_enroll".into(),
        other => other.name().into(),
    }
}

pub fn run_scenario(config: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutput, SimError> {
    let seed = opts.seed.unwrap_or(config.seed);
    let master = sha256(&[b"glimmer-sim", &seed.to_be_bytes()]);
    let vocab = config.vocab_size();
    let vlen = vocab * vocab;
    let mut bus = Bus::new(opts.transport)?;
    let mut details: Vec<String> = Vec::new();

    let platform = TeePlatform::from_seed(derive_seed(&master, b"platform"));
    let validation_credential = sig::signing_key_from_seed(&derive_seed(&master, b"validation-credential"));
    let service_key = config.confidential.as_ref().map(|_| validation_credential.verifying_key());
    let code = GlimmerImage::new("1.0", service_key).build();
    let approved = measure(&code);

    let credential = sig::signing_key_from_seed(&derive_seed(&master, b"aggregation-credential"));
    let mut aggregation = AggregationService::new(
        platform.launch(b"aggregation-service".to_vec(), "aggregation"),
        AggregationConfig {
            approved,
            attestation_root: platform.attestation_public(),
            policy: config.policy.clone(),
            confidence_threshold: config.confidence_threshold,
        },
        credential.clone(),
    );
    let (sealed_key, _) = aggregation.provision_signing_key(derive_seed(&master, b"contribution-key"));
    let blinding_code: &[u8] = match config.hosting {
        Hosting::Actor => b"blinding-service",
        Hosting::Enclave => b"blinding-service-enclave",
    };
    let mut blinding = BlindingService::new(
        platform.launch(blinding_code.to_vec(), "blinding"),
        config.hosting,
        credential.verifying_key(),
        derive_seed(&master, b"blinding"),
    );

    let mut hosts: BTreeMap<String, RemoteGlimmerHost> = BTreeMap::new();
    for r in &config.remotes {
        let host_code = if r.tampered { tamper_code(&code) } else { code.clone() };
        let addr = remote_address(&r.name);
        hosts.insert(addr.clone(), RemoteGlimmerHost::new(&r.name, &r.trust, platform.launch(host_code, &addr)));
    }

    let mut validation = config.confidential.as_ref().map(|spec| {
        let mut svc = ConfidentialService::new(
            platform.launch(b"validation-service".to_vec(), "validation"),
            validation_credential.clone(),
            approved,
            platform.attestation_public(),
            SecretValidator { version: spec.version, source: spec.policy.clone() },
            derive_seed(&master, b"validation-rng"),
        );
        let blob = svc.provision_verdict_key();
        let auditor = RuntimeAuditor::new(svc.verdict_key().expect("just provisioned"));
        (svc, blob, auditor)
    });

    // Clients.
    let mut slots: Vec<ClientSlot> = Vec::with_capacity(config.clients.len());
    for spec in &config.clients {
        let cseed = derive_seed(&master, format!("client-{}", spec.id).as_bytes());
        let log = expand_corpus(&spec.corpus, vocab, derive_seed(&cseed, b"corpus"))
            .map_err(|source| SimError::Corpus { client: spec.id, source })?;
        let aux = format!("AUX:{}:{:06}", hex::encode(&derive_seed(&cseed, b"aux")[..6]), spec.id).into_bytes();
        let log_hex = (!log.is_empty()).then(|| {
            let mut b = Vec::new();
            for e in log.events().iter().take(3) {
                b.extend_from_slice(&e.ts_ms.to_be_bytes());
                b.extend_from_slice(&e.word.to_be_bytes());
            }
            hex::encode(b)
        });
        let signals = ClientSignals {
            values: [("pointer_jitter".to_string(), spec.jitter)].into(),
            events: log.events().iter().map(|e| SignalEvent { ts_ms: e.ts_ms, kind: "keypress".into() }).collect(),
        };
        let placement = match &spec.glimmer {
            Placement::Local => GlimmerPlacement::Local(platform.launch(code.clone(), &client_address(spec.id))),
            Placement::Remote(name) => GlimmerPlacement::Remote(RemoteEndpoint {
                address: remote_address(name),
                expected_measurement: approved,
                attestation_root: platform.attestation_public(),
            }),
        };
        let honest = matches!(spec.mode, AdversaryMode::Honest | AdversaryMode::Replay);
        let sentinel = Sentinel {
            client: spec.id,
            mode: mode_label(spec.mode),
            honest,
            aux_hex: hex::encode(&aux),
            log_hex,
            model_hex: Vec::new(),
        };
        let agent = ClientAgent::new(spec.id, vocab, config.policy.normalization, log, aux, spec.mode, placement, cseed);
        let confidential = validation.as_ref().map(|(_, blob, _)| {
            let ctx_code = if matches!(spec.mode, AdversaryMode::TamperedCode { .. }) { tamper_code(&code) } else { code.clone() };
            let ctx = platform.launch(ctx_code, &format!("{}-validator", client_address(spec.id)));
            ConfidentialGlimmer::new(ctx, blob.clone()).expect("image embeds the service key")
        });
        slots.push(ClientSlot { agent, enrolled: false, sealed_key: None, confidential, signals, sentinel });
    }

    let mut records = vec![Record::Scenario {
        name: config.name.clone(),
        seed,
        transport: format!("{:?}", opts.transport).to_lowercase(),
        vocab_size: vocab,
        clients: config.clients.len(),
        rounds: config.rounds,
        policy: format!("{:?}", config.policy.kind),
        disclosure: format!("{:?}", config.disclosure).to_lowercase(),
        hosting: format!("{:?}", config.hosting).to_lowercase(),
        measurement: approved.to_hex(),
        remotes: Vec::new(),
    }];

    // Enrollment.
    for slot in slots.iter_mut() {
        let addr = client_address(slot.agent.id());
        let quote: Result<Quote, String> = match slot.agent.placement() {
            GlimmerPlacement::Local(_) => slot.agent.enrollment_quote(None),
            GlimmerPlacement::Remote(_) => {
                let mut link = BusLink { bus: &mut bus, hosts: &mut hosts, from: addr.clone() };
                slot.agent.enrollment_quote(Some(&mut link))
            }
        };
        if let Ok(q) = quote {
            let mut payload = slot.agent.id().to_be_bytes().to_vec();
            payload.extend_from_slice(&q.to_bytes());
            bus.send(&addr, AGGREGATION, Frame::new(MessageType::Enroll, payload));
            let env = bus.recv(AGGREGATION).expect("just sent");
            let q = Quote::from_bytes(&env.frame.payload[8..]).expect("quote layout");
            if aggregation.enroll(slot.agent.id(), &q).is_ok() {
                slot.enrolled = true;
                bus.send(AGGREGATION, &addr, Frame::new(MessageType::Enroll, sealed_key.to_bytes()));
                let env = bus.recv(&addr).expect("just sent");
                slot.sealed_key = Some(SealedBlob::from_bytes(&env.frame.payload).expect("sealed blob layout"));
            }
        }
        records.push(Record::Enrollment {
            client: slot.agent.id(),
            mode: mode_label(slot.agent.mode()),
            glimmer: match slot.agent.placement() {
                GlimmerPlacement::Local(_) => "local".into(),
                GlimmerPlacement::Remote(ep) => ep.address.clone(),
            },
            enrolled: slot.enrolled,
        });
        if slot.enrolled && matches!(slot.agent.mode(), AdversaryMode::TamperedCode { before_enroll: true }) {
            details.push(format!("client {} enrolled with a tampered glimmer", slot.agent.id()));
        }
    }

    // Confidential-validation channels.
    if let Some((svc, _, _)) = validation.as_mut() {
        for slot in slots.iter_mut() {
            let Some(g) = slot.confidential.as_mut() else { continue };
            let addr = client_address(slot.agent.id());
            let hello = g.hello();
            bus.send(&addr, VALIDATION, hello);
            let hello = bus.recv(VALIDATION).expect("just sent").frame;
            let Ok((sid, reply)) = svc.accept_hello(&hello) else { continue };
            bus.send(VALIDATION, &addr, reply);
            let reply = bus.recv(&addr).expect("just sent").frame;
            if g.on_service_hello(&reply).is_err() {
                continue;
            }
            let install = svc.install_frame(sid).expect("session exists");
            bus.send(VALIDATION, &addr, install);
            let install = bus.recv(&addr).expect("just sent").frame;
            if let Ok(ack) = g.deliver_validator(&install) {
                bus.send(&addr, VALIDATION, ack);
                let ack = bus.recv(VALIDATION).expect("just sent").frame;
                let _ = svc.handle_ack(&ack);
            }
        }
    }

    let scan_disclosure_blinded = config.disclosure == Disclosure::Blinded;
    let public = config.disclosure == Disclosure::Public || opts.insecure_skip_blinding;
    let round_disclosure = if public { Disclosure::Public } else { Disclosure::Blinded };

    for round in 1..=config.rounds {
        let start = bus.tick();
        let deadline = start + config.deadline_ticks;
        let roster = aggregation.roster(round, vlen);
        let roster_ids: Vec<ClientId> = roster.client_ids().collect();
        let mut status = String::from("open");
        if roster.is_empty() {
            status = "no_participants".into();
        } else {
            aggregation.open_round(&roster, deadline, public).expect("fresh round id");
        }

        let mut issues: BTreeMap<ClientId, PadIssue> = BTreeMap::new();
        if !public && !roster.is_empty() {
            let provisioned = blinding
                .provision_round(&roster, derive_seed(&master, format!("pads-{round}").as_bytes()))
                .expect("fresh round with enrolled clients");
            for issue in provisioned {
                let addr = client_address(issue.client_id);
                bus.send(BLINDING, &addr, Frame::new(MessageType::PadIssue, issue.to_bytes()));
                let env = bus.recv(&addr).expect("just sent");
                let issue = PadIssue::from_bytes(&env.frame.payload).expect("pad issue layout");
                issues.insert(issue.client_id, issue);
            }
        }

        let dropped: Vec<ClientId> = roster_ids.iter().copied().filter(|id| config.dropped(round, *id)).collect();
        let active: BTreeSet<ClientId> = slots
            .iter()
            .map(|s| s.agent.id())
            .filter(|id| !config.dropped(round, *id))
            .filter(|id| slots.iter().any(|s| s.agent.id() == *id && s.sealed_key.is_some()))
            .collect();

        // Verdicts.
        let mut verdicts = None;
        let mut humans: BTreeSet<ClientId> = BTreeSet::new();
        if let Some((svc, _, auditor)) = validation.as_mut() {
            let mut tally = VerdictTally::default();
            for slot in slots.iter_mut().filter(|s| active.contains(&s.agent.id())) {
                let addr = client_address(slot.agent.id());
                let challenge = svc.challenge(round);
                bus.send(VALIDATION, &addr, Frame::new(MessageType::Challenge, challenge.to_bytes().to_vec()));
                let env = bus.recv(&addr).expect("just sent");
                let challenge = crate::confidential::Challenge::from_bytes(&env.frame.payload).expect("challenge layout");
                auditor.observe_challenge(challenge);
                let out = slot.confidential.as_mut().and_then(|g| g.run_confidential(&slot.signals, &challenge).ok());
                let forwarded = out.and_then(|m| auditor.forward(&m.to_bytes()));
                match forwarded {
                    Some(bytes) => {
                        bus.send(&addr, VALIDATION, Frame::new(MessageType::Verdict, bytes));
                        let env = bus.recv(VALIDATION).expect("just sent");
                        if env.frame.payload[24] == 1 {
                            tally.human += 1;
                            humans.insert(slot.agent.id());
                        } else {
                            tally.bot += 1;
                        }
                    }
                    None => tally.blocked += 1,
                }
            }
            verdicts = Some(tally);
        }

        // Contributions: local glimmers in parallel, remote ones in order.
        let policy = &config.policy;
        let local_outcomes: Vec<(ClientId, ClientOutcome)> = slots
            .par_iter_mut()
            .filter(|s| active.contains(&s.agent.id()) && matches!(s.agent.placement(), GlimmerPlacement::Local(_)))
            .map(|s| {
                let ctx = RoundContext {
                    round_id: round,
                    pad_issue: issues.get(&s.agent.id()),
                    sealed_key: s.sealed_key.as_ref().expect("active clients hold the key"),
                    policy,
                    disclosure: round_disclosure,
                };
                (s.agent.id(), s.agent.contribute(&ctx, None))
            })
            .collect();
        let mut outcomes: BTreeMap<ClientId, ClientOutcome> = local_outcomes.into_iter().collect();
        for s in slots
            .iter_mut()
            .filter(|s| active.contains(&s.agent.id()) && matches!(s.agent.placement(), GlimmerPlacement::Remote(_)))
        {
            let ctx = RoundContext {
                round_id: round,
                pad_issue: issues.get(&s.agent.id()),
                sealed_key: s.sealed_key.as_ref().expect("active clients hold the key"),
                policy,
                disclosure: round_disclosure,
            };
            let mut link = BusLink { bus: &mut bus, hosts: &mut hosts, from: client_address(s.agent.id()) };
            let out = s.agent.contribute(&ctx, Some(&mut link));
            outcomes.insert(s.agent.id(), out);
        }

        let mut glimmer_errors: BTreeMap<String, u64> = BTreeMap::new();
        let mut submissions = 0u64;
        for (id, out) in &outcomes {
            if let Some(e) = &out.glimmer_error {
                *glimmer_errors.entry(e.clone()).or_default() += 1;
            }
            if scan_disclosure_blinded {
                if let Some(fp) = model_fingerprint(&out.plaintext) {
                    let slot = slots.iter_mut().find(|s| s.agent.id() == *id).expect("known client");
                    slot.sentinel.model_hex.push((round, hex::encode(fp)));
                }
            }
            for bytes in &out.submissions {
                submissions += 1;
                bus.send(&client_address(*id), AGGREGATION, Frame::new(MessageType::Contribution, bytes.clone()));
            }
        }

        let mut rejected: BTreeMap<String, u64> = BTreeMap::new();
        for env in bus.drain(AGGREGATION) {
            let sender: Option<ClientId> = env.from.strip_prefix("client-").and_then(|s| s.parse().ok());
            if validation.is_some() && !sender.is_some_and(|id| humans.contains(&id)) {
                *rejected.entry("no_human_verdict".into()).or_default() += 1;
                continue;
            }
            if let AcceptOutcome::Rejected(r) = aggregation.accept_bytes(&env.frame.payload) {
                *rejected.entry(r.code().into()).or_default() += 1;
            }
        }

        bus.advance_to(deadline);
        let accepted: Vec<ClientId> = aggregation
            .round(round)
            .map(|r| r.accepted.keys().copied().collect())
            .unwrap_or_default();
        let mut revealer = BusRevealer { bus: &mut bus, service: &mut blinding, revealed: Vec::new() };
        let result: Option<Result<GlobalModel, AggregationError>> =
            (!roster.is_empty()).then(|| aggregation.finalize_round(round, deadline, &mut revealer));
        let revealed = std::mem::take(&mut revealer.revealed);

        let mut sums = Vec::new();
        let mut submitter_count = 0;
        let mut predictions = BTreeMap::new();
        let mut exact = None;
        let mut oracle_sparse = Vec::new();
        if let Some(result) = result {
            match result {
                Ok(g) => {
                    status = "closed".into();
                    bus.send(AGGREGATION, CLIENTS, Frame::new(MessageType::RoundResult, g.to_bytes()));
                    bus.discard(CLIENTS);
                    // Independent plaintext oracle over what accepted clients fed their glimmers.
                    let mut acc = vec![0u128; vlen];
                    for id in &accepted {
                        for (a, e) in acc.iter_mut().zip(outcomes[id].plaintext.raw()) {
                            *a += e as u128;
                        }
                    }
                    let oracle: Vec<u64> = acc.iter().map(|a| *a as u64).collect();
                    exact = Some(oracle == g.sums);
                    oracle_sparse = sparse(&oracle);
                    sums = sparse(&g.sums);
                    submitter_count = g.submitter_count;
                    for p in &config.probes {
                        let w = config.word_id(p).expect("probes validated");
                        let next = predict_next(&g, vocab, w, 3);
                        predictions.insert(p.clone(), next.iter().map(|i| config.vocabulary[*i as usize].clone()).collect());
                    }
                }
                Err(AggregationError::EmptyRound(_)) => status = "empty".into(),
                Err(e) => {
                    status = "aborted".into();
                    details.push(format!("round {round}: {e}"));
                }
            }
        }
        bus.discard(BLINDING);
        for slot in &slots {
            bus.discard(&client_address(slot.agent.id()));
        }

        // Invariants.
        if exact == Some(false) {
            details.push(format!("round {round}: aggregate differs from plaintext oracle"));
        }
        for id in &accepted {
            let slot = slots.iter().find(|s| s.agent.id() == *id).expect("known client");
            let bad = match slot.agent.mode() {
                AdversaryMode::OutOfRange { .. } | AdversaryMode::BypassGlimmer | AdversaryMode::TamperedCode { .. } => true,
                AdversaryMode::FabricatedInRange => policy.kind != PolicyKind::RangeCheck,
                AdversaryMode::Honest | AdversaryMode::Replay => false,
            };
            if bad {
                details.push(format!("round {round}: contribution from {} client {id} accepted", slot.sentinel.mode));
            }
        }
        for id in &revealed {
            if accepted.contains(id) {
                details.push(format!("round {round}: pad of accepted client {id} revealed"));
            }
        }
        let heap_residue: u64 = slots
            .iter()
            .filter_map(|s| s.agent.glimmer_heap_stats())
            .chain(hosts.values().map(|h| h.heap_stats()))
            .map(|h| h.nonzero_bytes as u64)
            .sum();
        if heap_residue > 0 {
            details.push(format!("round {round}: {heap_residue} nonzero bytes left in glimmer heaps"));
        }

        records.push(Record::Round(RoundRecord {
            round,
            roster: roster_ids,
            dropped,
            submissions,
            accepted,
            rejected,
            glimmer_errors,
            verdicts,
            status,
            revealed,
            submitter_count,
            sums,
            oracle: oracle_sparse,
            exact,
            predictions,
            heap_residue,
        }));
        bus.advance_to(deadline + 1);
    }

    if let Record::Scenario { remotes, .. } = &mut records[0] {
        *remotes = config
            .remotes
            .iter()
            .map(|r| RemoteInfo {
                name: r.name.clone(),
                trust: r.trust.clone(),
                tampered: r.tampered,
                served: hosts[&remote_address(&r.name)].served(),
            })
            .collect();
    }

    let sentinels: Vec<Sentinel> = slots.iter().map(|s| s.sentinel.clone()).collect();
    let leaks: Vec<Leak> = scan_transcript(&sentinels, bus.transcript());
    for l in leaks.iter().filter(|l| l.honest) {
        details.push(format!("message {}: honest client {} {} bytes sent to {}", l.seq, l.client, l.kind, l.to));
    }
    let transcript = bus.into_transcript();
    let client_frames = transcript.iter().filter(|e| e.from.starts_with("client-")).count() as u64;
    records.extend(sentinels.into_iter().map(Record::Sentinel));
    records.push(Record::Scan { frames: transcript.len() as u64, client_frames, leaks });
    records.push(Record::Summary { violations: details.len() as u64, details });

    Ok(RunOutput { report: RunReport { records }, transcript })
}


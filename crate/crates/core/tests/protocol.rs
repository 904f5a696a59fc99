mod common;

use glimmer_core::aggregation::{predict_next, AcceptOutcome, GlobalModel, RejectReason};
use glimmer_core::client::{bigram_id, train_local, EventLog, Normalization};
use glimmer_core::crypto::{FixedWeight, ModelVector, SCALE};
use glimmer_core::pipeline::{
    run_glimmer, Disclosure, GlimmerError, PrivateValidationData, RoundSeals, SignedContribution, ValidationPolicy,
};
use glimmer_core::tee::measure;
use glimmer_core::wire::{Frame, MessageType};

use common::{oracle, world};

#[test]
fn trained_models_aggregate_into_predictions() {
    let vocab = 4;
    let corpora: [&[u32]; 3] = [&[0, 1, 0, 1, 2], &[0, 1, 3], &[0, 2, 0, 1]];
    let mut w = world(3, 1);
    let roster = w.service.roster(1, vocab * vocab);
    w.service.open_round(&roster, 0, false).unwrap();
    let issues = w.blinding.provision_round(&roster, [4u8; 32]).unwrap();
    let mut xs = Vec::new();
    for (i, words) in corpora.iter().enumerate() {
        let x = train_local(words, vocab, Normalization::Conditional);
        xs.push(x.raw());
        let sc = w.contribute(i, &issues[i], x.with_round(1)).unwrap();
        assert_eq!(w.service.accept(sc), AcceptOutcome::Accepted);
    }
    let g = w.service.finalize_round(1, 0, &mut w.blinding).unwrap();
    assert_eq!(g.sums, oracle(&xs, vocab * vocab));
    assert_eq!(predict_next(&g, vocab, 0, 2), vec![1, 2]);
    assert_eq!(GlobalModel::from_bytes(&g.to_bytes()).unwrap(), g);
}

#[test]
fn single_participant_round_equals_its_input() {
    let mut w = world(1, 2);
    let roster = w.service.roster(9, 3);
    w.service.open_round(&roster, 0, false).unwrap();
    let issues = w.blinding.provision_round(&roster, [1u8; 32]).unwrap();
    let x = vec![SCALE, 0, 42];
    let sc = w.contribute(0, &issues[0], ModelVector::from_raw(9, x.clone())).unwrap();
    assert_eq!(sc.entries, x);
    w.service.accept(sc);
    assert_eq!(w.service.finalize_round(9, 0, &mut w.blinding).unwrap().sums, x);
}

#[test]
fn service_rejections() {
    let mut w = world(3, 3);
    let roster = w.service.roster(2, 2);
    w.service.open_round(&roster, 0, false).unwrap();
    let issues = w.blinding.provision_round(&roster, [2u8; 32]).unwrap();
    let sc = w.contribute(0, &issues[0], ModelVector::from_raw(2, vec![1, 2])).unwrap();
    assert_eq!(w.service.accept_bytes(&sc.to_bytes()), AcceptOutcome::Accepted);
    assert_eq!(w.service.accept(sc.clone()), AcceptOutcome::Rejected(RejectReason::Replay));
    assert_eq!(w.service.accept_bytes(&sc.to_bytes()[..10]), AcceptOutcome::Rejected(RejectReason::Malformed));

    let mut stolen = sc.clone();
    stolen.client_id = 2;
    assert_eq!(w.service.accept(stolen), AcceptOutcome::Rejected(RejectReason::BadSignature));
    let mut elsewhere = sc.clone();
    elsewhere.round_id = 77;
    assert_eq!(w.service.accept(elsewhere), AcceptOutcome::Rejected(RejectReason::UnknownRound));

    // Signed by the glimmer for a public round: wrong disclosure here.
    let c = &mut w.clients[1];
    let seals = RoundSeals { pad: None, signing_key: w.sealed_key.clone() };
    let public = run_glimmer(
        &mut c.ctx,
        c.id,
        ModelVector::from_raw(2, vec![3, 4]),
        PrivateValidationData::default(),
        &seals,
        &ValidationPolicy::range(),
        Disclosure::Public,
    )
    .unwrap();
    assert!(public.public);
    assert_eq!(w.service.accept(public), AcceptOutcome::Rejected(RejectReason::WrongDisclosure));
}

#[test]
fn glimmer_refuses_bad_inputs() {
    let mut w = world(2, 4);
    let roster = w.service.roster(5, 3);
    w.service.open_round(&roster, 0, false).unwrap();
    let issues = w.blinding.provision_round(&roster, [6u8; 32]).unwrap();

    let err = w.contribute(0, &issues[0], ModelVector::from_raw(6, vec![0, 0, 0])).unwrap_err();
    assert!(matches!(err, GlimmerError::RoundMismatch { pad: 5, contribution: 6 }));
    let err = w.contribute(0, &issues[0], ModelVector::from_raw(5, vec![0, 0])).unwrap_err();
    assert!(matches!(err, GlimmerError::LengthMismatch { .. }));
    assert_eq!(err.code(), "length_mismatch");

    // The sealed key carries the service policy; a client cannot relax it.
    let c = &mut w.clients[1];
    let seals = RoundSeals { pad: Some(issues[1].open(&c.secret).unwrap()), signing_key: w.sealed_key.clone() };
    let lax = ValidationPolicy { hi: FixedWeight::from_units(1000), ..ValidationPolicy::range() };
    let err = run_glimmer(
        &mut c.ctx,
        c.id,
        ModelVector::from_raw(5, vec![538 * SCALE, 0, 0]),
        PrivateValidationData::default(),
        &seals,
        &lax,
        Disclosure::Blinded,
    )
    .unwrap_err();
    assert_eq!(err, GlimmerError::PolicyRejected);
    assert_eq!(c.ctx.heap_stats().live_slots, 0);
}

#[test]
fn corroboration_policy_checks_the_log() {
    let vocab = 3;
    let words = [0, 1, 2, 0, 1];
    let log = EventLog::from_words(&words, vocab).unwrap();
    let d = PrivateValidationData::from_log(&log);
    let policy = ValidationPolicy::corroboration(vocab, 1000);
    let honest = train_local(&words, vocab, policy.normalization);
    assert!(glimmer_core::pipeline::validate(&honest, &d, &policy).valid);
    let mut fake = honest.raw();
    fake[bigram_id(2, 2, vocab)] = SCALE;
    let verdict = glimmer_core::pipeline::validate(&ModelVector::from_raw(0, fake), &d, &policy);
    assert!(!verdict.valid);
    assert_eq!(verdict.reason.code(), "deviation");
}

#[test]
fn frames_round_trip_and_measurements_are_stable() {
    assert_eq!(
        measure(b"glimmer enclave v1").to_hex(),
        "38345cfdbddcf572ec2e771bf9228ab703b4b0db16ddf1ea871b1bac8738bf12"
    );
    for kind in MessageType::ALL {
        let f = Frame::new(kind, vec![kind as u8; 5]);
        let bytes = f.encode();
        assert_eq!(&bytes[..4], &6u32.to_be_bytes());
        let (back, used) = Frame::decode(&bytes).unwrap();
        assert_eq!((back, used), (f, bytes.len()));
    }
    let sc = SignedContribution { round_id: 1, client_id: 2, public: false, entries: vec![3], confidence: 4, signature: [5; 64] };
    assert_eq!(SignedContribution::from_bytes(&sc.to_bytes()).unwrap(), sc);
}

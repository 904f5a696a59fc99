#![allow(dead_code)]

use std::sync::Arc;

use glimmer_core::aggregation::{AggregationConfig, AggregationService, DEFAULT_CONFIDENCE_THRESHOLD};
use glimmer_core::blinding::{BlindingService, Hosting, PadIssue};
use glimmer_core::client::ClientId;
use glimmer_core::crypto::{sig, ModelVector, SigningKey};
use glimmer_core::pipeline::{
    run_glimmer, Disclosure, GlimmerError, GlimmerImage, PrivateValidationData, RoundSeals, SignedContribution,
    ValidationPolicy,
};
use glimmer_core::tee::{measure, EnclaveContext, SealedBlob, TeePlatform};
use x25519_dalek::{PublicKey, StaticSecret};

pub struct Client {
    pub id: ClientId,
    pub ctx: EnclaveContext,
    pub secret: StaticSecret,
}

pub struct World {
    pub platform: Arc<TeePlatform>,
    pub code: Vec<u8>,
    pub credential: SigningKey,
    pub service: AggregationService,
    pub blinding: BlindingService,
    pub clients: Vec<Client>,
    pub sealed_key: SealedBlob,
}

/// A service, a blinding actor and `n` enrolled clients running the genuine
/// glimmer, all derived from `seed`.
pub fn world(n: usize, seed: u8) -> World {
    let platform = TeePlatform::from_seed([seed; 32]);
    let code = GlimmerImage::new("1.0", None).build();
    let credential = sig::signing_key_from_seed(&[seed ^ 0x5a; 32]);
    let mut service = AggregationService::new(
        platform.launch(b"aggregator".to_vec(), "aggregation"),
        AggregationConfig {
            approved: measure(&code),
            attestation_root: platform.attestation_public(),
            policy: ValidationPolicy::range(),
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        },
        credential.clone(),
    );
    let (sealed_key, _) = service.provision_signing_key([seed ^ 0x33; 32]);
    let blinding = BlindingService::new(
        platform.launch(b"blinding".to_vec(), "blinding"),
        Hosting::Actor,
        credential.verifying_key(),
        [seed ^ 0x77; 32],
    );
    let mut clients = Vec::with_capacity(n);
    for i in 0..n {
        let id = i as ClientId + 1;
        let ctx = platform.launch(code.clone(), &format!("client-{id}"));
        let mut s = [seed; 32];
        s[..8].copy_from_slice(&id.to_be_bytes());
        let secret = StaticSecret::from(s);
        let quote = ctx.quote(PublicKey::from(&secret).as_bytes()).unwrap();
        service.enroll(id, &quote).unwrap();
        clients.push(Client { id, ctx, secret });
    }
    World { platform, code, credential, service, blinding, clients, sealed_key }
}

impl World {
    pub fn contribute(&mut self, idx: usize, issue: &PadIssue, x: ModelVector) -> Result<SignedContribution, GlimmerError> {
        let c = &mut self.clients[idx];
        assert_eq!(issue.client_id, c.id);
        let seals = RoundSeals { pad: Some(issue.open(&c.secret).unwrap()), signing_key: self.sealed_key.clone() };
        run_glimmer(
            &mut c.ctx,
            c.id,
            x,
            PrivateValidationData::default(),
            &seals,
            &ValidationPolicy::range(),
            Disclosure::Blinded,
        )
    }
}

/// Column sums in u128, checked to fit in u64. Shares no code with the
/// library.
pub fn oracle(xs: &[Vec<u64>], v: usize) -> Vec<u64> {
    (0..v)
        .map(|j| {
            let s: u128 = xs.iter().map(|x| x[j] as u128).sum();
            u64::try_from(s).expect("oracle sum overflows u64")
        })
        .collect()
}

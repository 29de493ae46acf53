use std::collections::BTreeSet;

use dppp_core::mechanisms::{Mechanism, NoisePlan, PrivacyParams};
use dppp_core::paillier::{deal_threshold_keys, Ciphertext, PartialDecryption};
use dppp_core::protocol::{run_protocol, MessageKind, Party, RunConfig, VoteVector};
use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn votes(classes: &[usize], c: usize) -> Vec<VoteVector> {
    classes.iter().map(|&k| VoteVector::one_hot(k, c).unwrap()).collect()
}

/// The only decryption the aggregator can complete is of the coordinate-wise
/// sum; every partial it receives is taken on the aggregate ciphertexts.
#[test]
fn partials_only_ever_touch_the_aggregate() {
    let keys = deal_threshold_keys(512, 6, 4, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
    let pk = &keys.public;
    let params = PrivacyParams::new(1.0, 1e-3, 1.0).unwrap();
    let plan = NoisePlan::calibrate(Mechanism::Binomial, &params, 6).unwrap();
    let mut config = RunConfig::new(6, 4, 3, Mechanism::Binomial, 21);
    config.dropouts = BTreeSet::from([3]);
    let outcome = run_protocol(&keys, &config, &votes(&[0, 1, 2, 0, 1, 1], 3), &plan).unwrap();

    let received = &outcome.view.received;
    assert!(received.iter().all(|m| m.recipient == Party::Aggregator));
    assert!(outcome.view.revealed_noise.is_empty());

    let mut sum: Option<Vec<Ciphertext>> = None;
    let mut senders = BTreeSet::new();
    for m in received.iter().filter(|m| m.kind == MessageKind::EncryptedVote) {
        let Party::Teacher(i) = m.sender else { panic!("vote from the aggregator") };
        senders.insert(i);
        let cts: Vec<Ciphertext> = m.payload.iter().map(|b| Ciphertext::from_bytes(pk, b).unwrap()).collect();
        sum = Some(match sum {
            None => cts,
            Some(acc) => acc.iter().zip(&cts).map(|(a, b)| pk.add(a, b)).collect(),
        });
    }
    assert_eq!(senders, BTreeSet::from([1, 2, 4, 5, 6]));
    let sum = sum.unwrap();

    let outgoing: Vec<_> = outcome
        .transcript
        .iter()
        .filter(|m| m.kind == MessageKind::AggregateCiphertext)
        .collect();
    assert_eq!(outgoing.len(), 4);
    for m in &outgoing {
        let sent: Vec<Ciphertext> = m.payload.iter().map(|b| Ciphertext::from_bytes(pk, b).unwrap()).collect();
        assert_eq!(sent, sum);
    }

    let partial_msgs: Vec<_> = received.iter().filter(|m| m.kind == MessageKind::PartialDecryption).collect();
    assert_eq!(partial_msgs.len(), 4);
    for (class, ct) in sum.iter().enumerate() {
        let partials: Vec<PartialDecryption> = partial_msgs
            .iter()
            .map(|m| {
                let Party::Teacher(i) = m.sender else { panic!("partial from the aggregator") };
                let p = PartialDecryption::from_bytes(pk, i, &m.payload[class]).unwrap();
                assert_eq!(p, keys.share(i).unwrap().partial_decrypt(pk, &keys.config, ct));
                p
            })
            .collect();
        let opened = pk.combine(&keys.config, &partials).unwrap();
        assert_eq!(opened, BigUint::from(outcome.histogram.raw_counts[class] as u64));
    }
}

/// Neighbouring vote sets under one seed share every noise draw, so the
/// opened aggregate moves by exactly the vote change.
#[test]
fn neighbouring_inputs_differ_only_in_the_sum() {
    let keys = deal_threshold_keys(512, 5, 3, &mut ChaCha20Rng::seed_from_u64(8)).unwrap();
    let params = PrivacyParams::new(0.5, 1e-3, 1.0).unwrap();
    for mechanism in [Mechanism::Binomial, Mechanism::DiscreteGaussian] {
        let plan = NoisePlan::calibrate(mechanism, &params, 5).unwrap();
        let config = RunConfig::new(5, 3, 2, mechanism, 99);
        let a = run_protocol(&keys, &config, &votes(&[0, 0, 1, 1, 0], 2), &plan).unwrap();
        let b = run_protocol(&keys, &config, &votes(&[0, 0, 1, 1, 1], 2), &plan).unwrap();
        let (ha, hb) = (a.histogram.centered(), b.histogram.centered());
        assert_eq!(hb[0] - ha[0], -1, "{mechanism}");
        assert_eq!(hb[1] - ha[1], 1, "{mechanism}");
    }
}

#[test]
fn compromised_teachers_disclose_only_their_own_noise() {
    let keys = deal_threshold_keys(512, 6, 4, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
    let params = PrivacyParams::new(1.0, 1e-3, 2.0 / 3.0).unwrap();
    let plan = NoisePlan::calibrate(Mechanism::DiscreteGaussian, &params, 6).unwrap();
    let mut config = RunConfig::new(6, 4, 2, Mechanism::DiscreteGaussian, 4);
    config.compromised = BTreeSet::from([2, 5]);
    let outcome = run_protocol(&keys, &config, &votes(&[0, 1, 0, 1, 0, 1], 2), &plan).unwrap();
    assert_eq!(outcome.view.revealed_noise.keys().copied().collect::<Vec<_>>(), vec![2, 5]);
    assert!(outcome.view.revealed_noise.values().all(|n| n.len() == 2));
    assert!(outcome.honest_noise_sufficient);
}

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dppp_core::mechanisms::NoisePlan;
use dppp_core::paillier::deal_threshold_keys;
use dppp_core::protocol::{aggregate_votes, encode_noisy_vote, VoteVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::hint::black_box;

const CLASSES: usize = 3;

fn crypto(c: &mut Criterion) {
    let mut group = c.benchmark_group("paillier");
    group.sample_size(10);
    for bits in [512u64, 1024] {
        let mut rng = ChaCha20Rng::seed_from_u64(bits);
        let keys = deal_threshold_keys(bits, 20, 14, &mut rng).expect("keygen");
        let pk = &keys.public;
        let ct = pk.encrypt_u64(42, &mut rng).expect("encrypts");

        group.bench_with_input(BenchmarkId::new("encrypt", bits), &bits, |b, _| {
            b.iter(|| pk.encrypt_u64(black_box(42), &mut rng).expect("encrypts"))
        });
        group.bench_with_input(BenchmarkId::new("partial_decrypt", bits), &bits, |b, _| {
            b.iter(|| keys.shares[0].partial_decrypt(pk, &keys.config, black_box(&ct)))
        });
        let partials: Vec<_> = keys.shares[..14]
            .iter()
            .map(|s| s.partial_decrypt(pk, &keys.config, &ct))
            .collect();
        group.bench_with_input(BenchmarkId::new("combine_t14", bits), &bits, |b, _| {
            b.iter(|| pk.combine(&keys.config, black_box(&partials)).expect("combines"))
        });
    }
    group.finish();
}

fn aggregation(c: &mut Criterion) {
    let mut group = c.benchmark_group("aggregate");
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let keys = deal_threshold_keys(512, 50, 34, &mut rng).expect("keygen");
    let pk = &keys.public;
    let plan = NoisePlan::noiseless(50);
    let vote = VoteVector::one_hot(1, CLASSES).expect("valid vote");
    for n in [5usize, 20, 50] {
        let votes: Vec<_> = (1..=n)
            .map(|i| encode_noisy_vote(i, &vote, &plan, pk, &mut rng).expect("encrypts"))
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &votes, |b, votes| {
            b.iter(|| aggregate_votes(pk, black_box(votes)).expect("aggregates"))
        });
    }
    group.finish();
}

criterion_group!(benches, crypto, aggregation);
criterion_main!(benches);

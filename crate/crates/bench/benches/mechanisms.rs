use criterion::{criterion_group, criterion_main, Criterion};
use dppp_core::audit::{bm_exact_delta, dg_exact_delta, Pmf};
use dppp_core::mechanisms::{ag_sigma, Mechanism, NoisePlan, PrivacyParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::hint::black_box;

fn calibration(c: &mut Criterion) {
    let params = PrivacyParams::new(1.0, 1e-3, 1.0).expect("valid params");
    c.bench_function("ag_sigma", |b| b.iter(|| ag_sigma(black_box(1.0), black_box(1e-3), 1.0)));
    c.bench_function("calibrate_bm_n20", |b| {
        b.iter(|| NoisePlan::calibrate(Mechanism::Binomial, black_box(&params), 20))
    });
    c.bench_function("calibrate_dgm_n20", |b| {
        b.iter(|| NoisePlan::calibrate(Mechanism::DiscreteGaussian, black_box(&params), 20))
    });
}

fn sampling(c: &mut Criterion) {
    let params = PrivacyParams::new(1.0, 1e-3, 1.0).expect("valid params");
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for mechanism in [Mechanism::Binomial, Mechanism::DiscreteGaussian] {
        let sampler = NoisePlan::calibrate(mechanism, &params, 20).expect("calibrates").sampler();
        c.bench_function(&format!("sample_share_c10_{mechanism}"), |b| {
            b.iter(|| sampler.sample_vector(10, &mut rng))
        });
    }
}

fn exact_audit(c: &mut Criterion) {
    c.bench_function("bm_exact_delta_n137", |b| b.iter(|| bm_exact_delta(black_box(137), 1.0)));
    let sigma = ag_sigma(1.0, 1e-3, 1.0).expect("valid params");
    c.bench_function("dg_exact_delta", |b| b.iter(|| dg_exact_delta(black_box(sigma), 1.0, 1)));
    c.bench_function("binomial_pmf_5000", |b| b.iter(|| Pmf::binomial(black_box(5000))));
}

criterion_group!(benches, calibration, sampling, exact_audit);
criterion_main!(benches);

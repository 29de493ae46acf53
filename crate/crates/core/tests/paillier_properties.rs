use std::sync::OnceLock;
use std::time::Instant;

use dppp_core::paillier::{deal_threshold_keys, ThresholdKeys};
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn keys() -> &'static ThresholdKeys {
    static KEYS: OnceLock<ThresholdKeys> = OnceLock::new();
    KEYS.get_or_init(|| deal_threshold_keys(512, 7, 4, &mut ChaCha20Rng::seed_from_u64(11)).unwrap())
}

fn decrypt_with(keys: &ThresholdKeys, subset: &[usize], ct: &dppp_core::Ciphertext) -> BigUint {
    let partials: Vec<_> = subset
        .iter()
        .map(|&i| keys.shares[i].partial_decrypt(&keys.public, &keys.config, ct))
        .collect();
    keys.public.combine(&keys.config, &partials).unwrap()
}

fn subset_strategy() -> impl Strategy<Value = (u64, usize)> {
    (any::<u64>(), 4usize..=7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn roundtrip_through_any_quorum(m in any::<u64>(), (subset_seed, size) in subset_strategy(), seed in any::<u64>()) {
        let keys = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ct = keys.public.encrypt_u64(m, &mut rng).unwrap();
        let subset = sample(&mut ChaCha20Rng::seed_from_u64(subset_seed), 7, size).into_vec();
        prop_assert_eq!(decrypt_with(keys, &subset, &ct), BigUint::from(m));
    }

    #[test]
    fn ciphertext_product_decrypts_to_sum_mod_n(a in any::<u64>(), b in any::<u64>(), k in 1usize..6, seed in any::<u64>()) {
        let keys = keys();
        let pk = &keys.public;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut acc = pk.encrypt_u64(a, &mut rng).unwrap();
        for _ in 0..k {
            acc = pk.add(&acc, &pk.encrypt_u64(b, &mut rng).unwrap());
        }
        let expected = (BigUint::from(a) + BigUint::from(b) * BigUint::from(k)) % pk.modulus();
        prop_assert_eq!(decrypt_with(keys, &[0, 2, 4, 6], &acc), expected);
    }

    #[test]
    fn plaintexts_near_the_modulus_wrap(offset in 1u64..1000, seed in any::<u64>()) {
        let keys = keys();
        let pk = &keys.public;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let near = pk.modulus() - BigUint::from(offset);
        let ct = pk.add(&pk.encrypt(&near, &mut rng).unwrap(), &pk.encrypt_u64(offset + 5, &mut rng).unwrap());
        prop_assert_eq!(decrypt_with(keys, &[1, 2, 3, 5], &ct), BigUint::from(5u32));
    }
}

#[test]
fn quorum_of_166_out_of_250_at_1024_bits() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(250);
    let keys = deal_threshold_keys(1024, 250, 166, &mut rng).unwrap();
    assert_eq!(keys.shares.len(), 250);
    let ct = keys.public.encrypt_u64(123_456_789, &mut rng).unwrap();
    let subset: Vec<usize> = sample(&mut rng, 250, 166).into_vec();
    assert_eq!(decrypt_with(&keys, &subset, &ct), BigUint::from(123_456_789u64));
    assert!(keys.public.combine(&keys.config, &[]).is_err());
    eprintln!("N=250, t=166 keygen and one decryption: {:.1?}", start.elapsed());
}

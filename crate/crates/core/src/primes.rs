//! Probabilistic primality testing and safe-prime generation.

use std::sync::OnceLock;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};

/// Small primes below this bound are used to sieve candidates.
const SIEVE_LIMIT: u32 = 20_000;

/// Miller-Rabin rounds with random bases, on top of a fixed base-2 round.
const MR_ROUNDS: usize = 24;

/// Candidates scanned from one random starting point before re-seeding.
const SEARCH_WINDOW: u64 = 1 << 20;

fn small_primes() -> &'static [u32] {
    static PRIMES: OnceLock<Vec<u32>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        let limit = SIEVE_LIMIT as usize;
        let mut composite = vec![false; limit];
        let mut primes = Vec::new();
        for i in 2..limit {
            if !composite[i] {
                primes.push(i as u32);
                let mut j = i * i;
                while j < limit {
                    composite[j] = true;
                    j += i;
                }
            }
        }
        primes
    })
}

fn rem_u32(n: &BigUint, p: u32) -> u32 {
    let r = n % p;
    r.iter_u32_digits().next().unwrap_or(0)
}

/// Miller-Rabin test. Always includes base 2, then `MR_ROUNDS` random bases.
pub fn is_probable_prime<R: RngCore + CryptoRng + ?Sized>(n: &BigUint, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &p in small_primes() {
        let p_big = BigUint::from(p);
        if n == &p_big {
            return true;
        }
        if rem_u32(n, p) == 0 {
            return false;
        }
    }

    let one = BigUint::one();
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;

    let witness = |a: &BigUint| -> bool {
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_one {
            return true;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                return true;
            }
            if x == one {
                return false;
            }
        }
        false
    };

    if !witness(&two) {
        return false;
    }
    let upper = &n_minus_one - &one;
    for _ in 0..MR_ROUNDS {
        let a = rng.gen_biguint_range(&two, &upper);
        if !witness(&a) {
            return false;
        }
    }
    true
}

/// Generates a safe prime `p = 2q + 1` with exactly `bits` bits and the two
/// top bits set, so that a product of two such primes has exactly `2 * bits`
/// bits.
///
/// Returns `(p, q)`.
pub fn gen_safe_prime<R: RngCore + CryptoRng + ?Sized>(bits: u64, rng: &mut R) -> (BigUint, BigUint) {
    assert!(bits >= 16, "safe primes below 16 bits are not supported");
    let q_bits = bits - 1;
    let primes = small_primes();
    let two = BigUint::from(2u32);

    loop {
        // Random odd q with its top two bits set.
        let mut start = rng.gen_biguint(q_bits);
        start.set_bit(q_bits - 1, true);
        start.set_bit(q_bits - 2, true);
        start.set_bit(0, true);

        let residues: Vec<u64> = primes.iter().map(|&p| rem_u32(&start, p) as u64).collect();

        let mut offset: u64 = 0;
        while offset < SEARCH_WINDOW {
            let sieved = primes.iter().zip(&residues).all(|(&p, &r)| {
                let p = p as u64;
                let rq = (r + offset) % p;
                rq != 0 && !(2 * rq + 1).is_multiple_of(p)
            });
            if sieved {
                let q = &start + offset;
                if q.bits() != q_bits {
                    break;
                }
                let p = (&q << 1u32) + 1u32;
                // Cheap Fermat filter on both before the full test on q.
                if two.modpow(&(&q - 1u32), &q).is_one()
                    && two.modpow(&(&p - 1u32), &p).is_one()
                    && is_probable_prime(&q, rng)
                {
                    // With q prime, 2^(p-1) = 1 (mod p) and gcd(2^2 - 1, p) = 1
                    // certify p by Pocklington.
                    debug_assert!(p.gcd(&BigUint::from(3u32)).is_one());
                    return (p, q);
                }
            }
            offset += 2;
        }
    }
}

/// Modular inverse of `a` modulo `m`, if it exists.
pub fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    if m.is_zero() {
        return None;
    }
    a.modinv(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn small_numbers_classified() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let primes: Vec<u32> = (0..200u32)
            .filter(|&n| is_probable_prime(&BigUint::from(n), &mut rng))
            .collect();
        let brute: Vec<u32> = (0..200u32)
            .filter(|&n| n >= 2 && (2..n).all(|d| n % d != 0))
            .collect();
        assert_eq!(primes, brute);
    }

    #[test]
    fn rejects_composites_past_the_sieve() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        // 2821 = 7 * 13 * 31 is a Carmichael number; the sieve catches it.
        assert!(!is_probable_prime(&BigUint::from(2821u32), &mut rng));
        // Both factors are above the sieve limit.
        let big = BigUint::from(1_000_000_007u64) * BigUint::from(998_244_353u64);
        assert!(!is_probable_prime(&big, &mut rng));
    }

    #[test]
    fn mersenne_prime_accepted() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let m127 = (BigUint::one() << 127u32) - 1u32;
        assert!(is_probable_prime(&m127, &mut rng));
        let m128 = (BigUint::one() << 128u32) - 1u32;
        assert!(!is_probable_prime(&m128, &mut rng));
    }

    #[test]
    fn safe_prime_structure() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (p, q) = gen_safe_prime(128, &mut rng);
        assert_eq!(p.bits(), 128);
        assert!(p.bit(126));
        assert_eq!(p, (&q << 1u32) + 1u32);
        assert!(is_probable_prime(&p, &mut rng));
        assert!(is_probable_prime(&q, &mut rng));
    }
}

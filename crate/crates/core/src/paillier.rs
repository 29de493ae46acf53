//! (N, t)-threshold Paillier cryptosystem.
//!
//! Keys are dealt by a trusted dealer: the modulus is a product of two safe
//! primes `p = 2p' + 1`, `q = 2q' + 1`, and the decryption exponent `d`
//! (with `d = 1 mod n` and `d = 0 mod p'q'`) is Shamir-shared over
//! `n * p'q'`. Share holders raise a ciphertext to `2 * N! * s_i`; any `t`
//! of those partial decryptions recombine with `N!`-scaled integer Lagrange
//! coefficients, so no inverse modulo the secret group order is required.
//!
//! The generator is fixed to `g = n + 1`, which turns `g^m` into
//! `1 + m * n (mod n^2)`.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::primes::{gen_safe_prime, mod_inverse};

/// Smallest modulus size accepted by [`deal_keys`].
pub const MIN_KEY_BITS: u64 = 512;

/// Default modulus size.
pub const DEFAULT_KEY_BITS: u64 = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaillierError {
    #[error("key size {0} bits is below the minimum of {MIN_KEY_BITS} bits (and must be even)")]
    KeyTooSmall(u64),
    #[error("invalid threshold: need 2 <= t <= N, got N = {n_parties}, t = {threshold}")]
    InvalidThreshold { n_parties: usize, threshold: usize },
    #[error("plaintext is not in [0, n)")]
    PlaintextOutOfRange,
    #[error("ciphertext is not a unit modulo n^2")]
    MalformedCiphertext,
    #[error("need at least {needed} partial decryptions, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("partial decryption index {0} appears more than once")]
    DuplicateShare(usize),
    #[error("share index {index} outside 1..={n_parties}")]
    InvalidShareIndex { index: usize, n_parties: usize },
    #[error("encoded value has {got} bytes, expected {expected}")]
    BadEncodingLength { expected: usize, got: usize },
}

/// Threshold structure: `t` of `N` share holders must cooperate.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdConfigRepr", into = "ThresholdConfigRepr")]
pub struct ThresholdConfig {
    n_parties: usize,
    threshold: usize,
    delta_factorial: BigUint,
}

#[derive(Serialize, Deserialize)]
struct ThresholdConfigRepr {
    n_parties: usize,
    threshold: usize,
}

impl TryFrom<ThresholdConfigRepr> for ThresholdConfig {
    type Error = PaillierError;

    fn try_from(repr: ThresholdConfigRepr) -> Result<Self, Self::Error> {
        ThresholdConfig::new(repr.n_parties, repr.threshold)
    }
}

impl From<ThresholdConfig> for ThresholdConfigRepr {
    fn from(config: ThresholdConfig) -> Self {
        ThresholdConfigRepr {
            n_parties: config.n_parties,
            threshold: config.threshold,
        }
    }
}

impl ThresholdConfig {
    pub fn new(n_parties: usize, threshold: usize) -> Result<Self, PaillierError> {
        if n_parties < 2 || threshold < 2 || threshold > n_parties {
            return Err(PaillierError::InvalidThreshold { n_parties, threshold });
        }
        let delta_factorial = (1..=n_parties as u64).fold(BigUint::one(), |acc, k| acc * k);
        Ok(ThresholdConfig {
            n_parties,
            threshold,
            delta_factorial,
        })
    }

    pub fn n_parties(&self) -> usize {
        self.n_parties
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    /// `N!`
    pub fn delta_factorial(&self) -> &BigUint {
        &self.delta_factorial
    }
}

impl fmt::Debug for ThresholdConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ThresholdConfig")
            .field("n_parties", &self.n_parties)
            .field("threshold", &self.threshold)
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    modulus: BigUint,
    modulus_squared: BigUint,
    generator: BigUint,
    bit_length: u64,
}

/// One party's share of the decryption exponent.
///
/// Deliberately not `Serialize`: shares only leave memory through
/// [`SecretKeyShare::to_file_repr`], which the key-generation tooling uses
/// for local key files.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKeyShare {
    index: usize,
    share: BigUint,
}

impl fmt::Debug for SecretKeyShare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretKeyShare")
            .field("index", &self.index)
            .field("share", &"<redacted>")
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ciphertext(BigUint);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialDecryption {
    index: usize,
    value: BigUint,
}

/// Public key, all shares and the threshold structure produced by the dealer.
#[derive(Clone, Debug)]
pub struct ThresholdKeys {
    pub public: PublicKey,
    pub shares: Vec<SecretKeyShare>,
    pub config: ThresholdConfig,
}

impl ThresholdKeys {
    pub fn share(&self, index: usize) -> Option<&SecretKeyShare> {
        self.shares.iter().find(|s| s.index == index)
    }
}

/// Deals a fresh threshold key pair.
///
/// `key_bits` is the size of the Paillier modulus `n`; it must be even and at
/// least [`MIN_KEY_BITS`].
pub fn deal_keys<R: RngCore + CryptoRng + ?Sized>(
    key_bits: u64,
    config: &ThresholdConfig,
    rng: &mut R,
) -> Result<(PublicKey, Vec<SecretKeyShare>), PaillierError> {
    if key_bits < MIN_KEY_BITS || !key_bits.is_multiple_of(2) {
        return Err(PaillierError::KeyTooSmall(key_bits));
    }
    let half = key_bits / 2;
    let (p, p_sub) = gen_safe_prime(half, rng);
    let (q, q_sub) = loop {
        let candidate = gen_safe_prime(half, rng);
        if candidate.0 != p {
            break candidate;
        }
    };

    let modulus = &p * &q;
    debug_assert_eq!(modulus.bits(), key_bits);
    let order = &p_sub * &q_sub;
    let share_modulus = &modulus * &order;

    // d = 0 mod p'q', d = 1 mod n.
    let order_inv = mod_inverse(&(&order % &modulus), &modulus)
        .expect("p'q' is coprime to n for distinct safe primes");
    let d = &order * order_inv;
    debug_assert!((&d % &modulus).is_one());

    let coefficients: Vec<BigUint> = (1..config.threshold)
        .map(|_| rng.gen_biguint_below(&share_modulus))
        .collect();

    let shares = (1..=config.n_parties)
        .map(|index| {
            // Horner evaluation of d + a_1 x + ... + a_{t-1} x^{t-1}.
            let x = BigUint::from(index);
            let mut acc = BigUint::zero();
            for coefficient in coefficients.iter().rev() {
                acc = (acc * &x + coefficient) % &share_modulus;
            }
            let share = (acc * &x + &d) % &share_modulus;
            SecretKeyShare { index, share }
        })
        .collect();

    let public = PublicKey::from_modulus(modulus);
    Ok((public, shares))
}

/// Convenience wrapper around [`deal_keys`].
pub fn deal_threshold_keys<R: RngCore + CryptoRng + ?Sized>(
    key_bits: u64,
    n_parties: usize,
    threshold: usize,
    rng: &mut R,
) -> Result<ThresholdKeys, PaillierError> {
    let config = ThresholdConfig::new(n_parties, threshold)?;
    let (public, shares) = deal_keys(key_bits, &config, rng)?;
    Ok(ThresholdKeys {
        public,
        shares,
        config,
    })
}

impl PublicKey {
    pub fn from_modulus(modulus: BigUint) -> Self {
        let modulus_squared = &modulus * &modulus;
        let generator = &modulus + 1u32;
        let bit_length = modulus.bits();
        PublicKey {
            modulus,
            modulus_squared,
            generator,
            bit_length,
        }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.modulus_squared
    }

    pub fn generator(&self) -> &BigUint {
        &self.generator
    }

    pub fn bit_length(&self) -> u64 {
        self.bit_length
    }

    /// Byte width of `n` on the wire.
    pub fn modulus_bytes(&self) -> usize {
        self.bit_length.div_ceil(8) as usize
    }

    /// Byte width of a ciphertext (or partial decryption) on the wire.
    pub fn ciphertext_bytes(&self) -> usize {
        (2 * self.bit_length).div_ceil(8) as usize
    }

    fn random_unit<R: RngCore + CryptoRng + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_below(&self.modulus);
            if !r.is_zero() && r.gcd(&self.modulus).is_one() {
                return r;
            }
        }
    }

    /// `g^m * r^n mod n^2` with a fresh unit `r`.
    pub fn encrypt<R: RngCore + CryptoRng + ?Sized>(
        &self,
        plaintext: &BigUint,
        rng: &mut R,
    ) -> Result<Ciphertext, PaillierError> {
        if plaintext >= &self.modulus {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        let r = self.random_unit(rng);
        let masked = r.modpow(&self.modulus, &self.modulus_squared);
        // g^m = 1 + m n (mod n^2) for g = n + 1.
        let g_m = (plaintext * &self.modulus + 1u32) % &self.modulus_squared;
        Ok(Ciphertext((g_m * masked) % &self.modulus_squared))
    }

    pub fn encrypt_u64<R: RngCore + CryptoRng + ?Sized>(
        &self,
        plaintext: u64,
        rng: &mut R,
    ) -> Result<Ciphertext, PaillierError> {
        self.encrypt(&BigUint::from(plaintext), rng)
    }

    /// Homomorphic addition: the product of the ciphertexts.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
        Ciphertext((&a.0 * &b.0) % &self.modulus_squared)
    }

    /// Encryption of zero with randomness `r = 1`; the identity for [`PublicKey::add`].
    pub fn zero_ciphertext(&self) -> Ciphertext {
        Ciphertext(BigUint::one())
    }

    /// Accepts a raw value as a ciphertext after checking it is a unit mod `n^2`.
    pub fn ciphertext_from_value(&self, value: BigUint) -> Result<Ciphertext, PaillierError> {
        if value.is_zero() || value >= self.modulus_squared || !value.gcd(&self.modulus).is_one() {
            return Err(PaillierError::MalformedCiphertext);
        }
        Ok(Ciphertext(value))
    }

    /// Recombines partial decryptions into the plaintext.
    ///
    /// Any set of at least `t` partials with distinct indices works; all of
    /// them are used in the interpolation.
    pub fn combine(
        &self,
        config: &ThresholdConfig,
        partials: &[PartialDecryption],
    ) -> Result<BigUint, PaillierError> {
        let mut seen = BTreeSet::new();
        for partial in partials {
            if partial.index == 0 || partial.index > config.n_parties {
                return Err(PaillierError::InvalidShareIndex {
                    index: partial.index,
                    n_parties: config.n_parties,
                });
            }
            if !seen.insert(partial.index) {
                return Err(PaillierError::DuplicateShare(partial.index));
            }
        }
        if partials.len() < config.threshold {
            return Err(PaillierError::InsufficientShares {
                needed: config.threshold,
                got: partials.len(),
            });
        }

        let indices: Vec<i64> = partials.iter().map(|p| p.index as i64).collect();
        let delta = BigInt::from_biguint(Sign::Plus, config.delta_factorial.clone());
        let n2 = &self.modulus_squared;

        let mut product = BigUint::one();
        for (partial, &i) in partials.iter().zip(&indices) {
            let lambda = lagrange_at_zero(&delta, i, &indices);
            // c_i^(2 lambda); a negative lambda goes through the inverse of c_i.
            let exponent = (lambda.abs() * 2u32).to_biguint().expect("absolute value");
            let base = if lambda.is_negative() {
                mod_inverse(&partial.value, n2).ok_or(PaillierError::MalformedCiphertext)?
            } else {
                partial.value.clone()
            };
            product = (product * base.modpow(&exponent, n2)) % n2;
        }

        // product = 1 + 4 Delta^2 m n (mod n^2)
        let l_value = (product - 1u32) / &self.modulus;
        let four_delta_sq = (&config.delta_factorial * &config.delta_factorial * 4u32) % &self.modulus;
        let inv = mod_inverse(&four_delta_sq, &self.modulus).ok_or(PaillierError::MalformedCiphertext)?;
        Ok((l_value * inv) % &self.modulus)
    }

    /// Fixed-width big-endian encoding: `n` padded to `ceil(bits / 8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        to_fixed_width(&self.modulus, self.modulus_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        PublicKey::from_modulus(BigUint::from_bytes_be(bytes))
    }
}

/// `Delta * prod_{j != i} j / (j - i)`, an exact integer for distinct indices in `1..=N`.
fn lagrange_at_zero(delta: &BigInt, i: i64, indices: &[i64]) -> BigInt {
    let mut numerator = delta.clone();
    let mut denominator = BigInt::one();
    for &j in indices {
        if j != i {
            numerator *= j;
            denominator *= j - i;
        }
    }
    let (quotient, remainder) = numerator.div_rem(&denominator);
    debug_assert!(remainder.is_zero(), "Delta-scaled Lagrange coefficient must be integral");
    quotient
}

impl SecretKeyShare {
    pub fn index(&self) -> usize {
        self.index
    }

    /// `c^(2 * N! * s_i) mod n^2`.
    pub fn partial_decrypt(
        &self,
        pk: &PublicKey,
        config: &ThresholdConfig,
        ciphertext: &Ciphertext,
    ) -> PartialDecryption {
        let exponent = &self.share * &config.delta_factorial * 2u32;
        PartialDecryption {
            index: self.index,
            value: ciphertext.0.modpow(&exponent, &pk.modulus_squared),
        }
    }

    /// `(index, hex share)` for local key files.
    pub fn to_file_repr(&self) -> (usize, String) {
        (self.index, self.share.to_str_radix(16))
    }

    pub fn from_file_repr(index: usize, hex: &str) -> Option<Self> {
        let share = BigUint::parse_bytes(hex.as_bytes(), 16)?;
        Some(SecretKeyShare { index, share })
    }
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    /// Fixed-width big-endian encoding of exactly `2 * key_bits / 8` bytes.
    pub fn to_bytes(&self, pk: &PublicKey) -> Vec<u8> {
        to_fixed_width(&self.0, pk.ciphertext_bytes())
    }

    pub fn from_bytes(pk: &PublicKey, bytes: &[u8]) -> Result<Self, PaillierError> {
        if bytes.len() != pk.ciphertext_bytes() {
            return Err(PaillierError::BadEncodingLength {
                expected: pk.ciphertext_bytes(),
                got: bytes.len(),
            });
        }
        pk.ciphertext_from_value(BigUint::from_bytes_be(bytes))
    }
}

impl PartialDecryption {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    /// Fixed-width encoding of the value; the index travels with the sender.
    pub fn to_bytes(&self, pk: &PublicKey) -> Vec<u8> {
        to_fixed_width(&self.value, pk.ciphertext_bytes())
    }

    pub fn from_bytes(pk: &PublicKey, index: usize, bytes: &[u8]) -> Result<Self, PaillierError> {
        let ciphertext = Ciphertext::from_bytes(pk, bytes)?;
        Ok(PartialDecryption {
            index,
            value: ciphertext.0,
        })
    }
}

fn to_fixed_width(value: &BigUint, width: usize) -> Vec<u8> {
    let raw = value.to_bytes_be();
    assert!(raw.len() <= width, "value wider than its fixed-width slot");
    let mut out = vec![0u8; width - raw.len()];
    out.extend_from_slice(&raw);
    out
}

//! Secure aggregation of noisy one-hot votes.
//!
//! The run proceeds in five steps:
//!
//! 1. every teacher adds its noise share to its vote and encrypts each class
//!    coordinate under the joint public key;
//! 2. the aggregator multiplies the received ciphertexts coordinate-wise;
//! 3. it sends the aggregate to a random `t`-subset of surviving teachers;
//! 4. each selected teacher returns one partial decryption per class;
//! 5. the aggregator combines them into the noisy histogram and reports the argmax.
//!
//! Binomial shares are encrypted raw (non-negative) and the aggregator removes
//! the uniform offset `participants * m / 2` afterwards. Discrete Gaussian
//! shares are signed and encoded by wrap-around modulo `n`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanisms::{Mechanism, NoisePlan};
use crate::paillier::{Ciphertext, PaillierError, PartialDecryption, PublicKey, ThresholdConfig, ThresholdKeys};
use crate::seeding::{derive_rng, Stream};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("vote is not one-hot: {0:?}")]
    InvalidVote(Vec<u8>),
    #[error("class count mismatch: expected {expected}, got {got}")]
    ClassCountMismatch { expected: usize, got: usize },
    #[error("no votes to aggregate")]
    NoVotes,
    #[error("plaintext {0} does not fit the signed range (-n/2, n/2)")]
    EncodingOverflow(i64),
    #[error("decrypted value does not fit a 64-bit signed count")]
    DecodeOverflow,
    #[error("{dropouts} dropouts with N = {n_teachers}, t = {threshold}: need fewer than N - t")]
    AbortInsufficientParties {
        dropouts: usize,
        n_teachers: usize,
        threshold: usize,
    },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} votes, got {got}")]
    VoteCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Crypto(#[from] PaillierError),
    #[error("reading {path}: {message}")]
    ConfigFile { path: String, message: String },
}

/// A length-`c` 0/1 vector with exactly one 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoteVector(Vec<u8>);

impl VoteVector {
    pub fn new(entries: Vec<u8>) -> Result<Self, ProtocolError> {
        let ones = entries.iter().filter(|&&e| e == 1).count();
        if ones != 1 || entries.iter().any(|&e| e > 1) {
            return Err(ProtocolError::InvalidVote(entries));
        }
        Ok(VoteVector(entries))
    }

    pub fn one_hot(class: usize, class_count: usize) -> Result<Self, ProtocolError> {
        if class >= class_count {
            return Err(ProtocolError::ClassCountMismatch {
                expected: class_count,
                got: class + 1,
            });
        }
        let mut entries = vec![0u8; class_count];
        entries[class] = 1;
        Ok(VoteVector(entries))
    }

    pub fn class(&self) -> usize {
        self.0.iter().position(|&e| e == 1).expect("one-hot")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedVote {
    pub teacher_index: usize,
    pub per_class: Vec<Ciphertext>,
}

/// Decrypted per-class sums of votes plus noise shares.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisyHistogram {
    pub raw_counts: Vec<i64>,
    /// Uniform offset carried by raw Binomial shares; zero for the discrete Gaussian.
    pub offset: i64,
    pub participants: usize,
}

impl NoisyHistogram {
    pub fn centered(&self) -> Vec<i64> {
        self.raw_counts.iter().map(|r| r - self.offset).collect()
    }
}

/// Index of the largest raw count; ties go to the lowest index.
pub fn predict(hist: &NoisyHistogram) -> usize {
    argmax(&hist.raw_counts)
}

pub(crate) fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Teacher indices run from 1 to `n_teachers`, matching key-share indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_teachers: usize,
    pub threshold: usize,
    pub class_count: usize,
    pub mechanism: Mechanism,
    #[serde(default)]
    pub dropouts: BTreeSet<usize>,
    #[serde(default)]
    pub compromised: BTreeSet<usize>,
    /// Teachers that send their vote but fail if asked for a partial
    /// decryption; the aggregator replaces them with other survivors.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub late_dropouts: BTreeSet<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(n_teachers: usize, threshold: usize, class_count: usize, mechanism: Mechanism, seed: u64) -> Self {
        RunConfig {
            n_teachers,
            threshold,
            class_count,
            mechanism,
            dropouts: BTreeSet::new(),
            compromised: BTreeSet::new(),
            late_dropouts: BTreeSet::new(),
            seed,
        }
    }

    /// Checks everything except the dropout bound, which is reported by
    /// [`run_protocol`] as an abort.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let fail = |msg: String| Err(ProtocolError::InvalidConfig(msg));
        if self.n_teachers < 2 || self.threshold < 2 || self.threshold > self.n_teachers {
            return fail(format!("need 2 <= t <= N, got N = {}, t = {}", self.n_teachers, self.threshold));
        }
        if self.class_count < 2 {
            return fail(format!("need at least 2 classes, got {}", self.class_count));
        }
        let in_range = |i: &usize| (1..=self.n_teachers).contains(i);
        if ![&self.dropouts, &self.compromised, &self.late_dropouts]
            .iter()
            .all(|set| set.iter().all(in_range))
        {
            return fail("teacher indices must lie in 1..=N".to_string());
        }
        if self.compromised.len() > self.n_teachers / 3 {
            return fail(format!(
                "{} compromised teachers exceeds floor(N/3) = {}",
                self.compromised.len(),
                self.n_teachers / 3
            ));
        }
        Ok(())
    }

    /// Reads a JSON or TOML file, chosen by extension (TOML unless `.json`).
    pub fn from_path(path: &Path) -> Result<Self, ProtocolError> {
        let err = |message: String| ProtocolError::ConfigFile {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| err(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn survivors(&self) -> Vec<usize> {
        (1..=self.n_teachers).filter(|i| !self.dropouts.contains(i)).collect()
    }
}

/// Encodes a signed plaintext as its representative in `[0, n)`.
pub fn encode_signed(value: i64, pk: &PublicKey) -> Result<BigUint, ProtocolError> {
    let magnitude = BigUint::from(value.unsigned_abs());
    let half = pk.modulus() >> 1u32;
    if magnitude >= half {
        return Err(ProtocolError::EncodingOverflow(value));
    }
    Ok(if value >= 0 { magnitude } else { pk.modulus() - magnitude })
}

/// Inverse of [`encode_signed`]: values above `n/2` map to `value - n`.
pub fn decode_signed(value: &BigUint, pk: &PublicKey) -> Result<i64, ProtocolError> {
    let half = pk.modulus() >> 1u32;
    if value > &half {
        let magnitude = (pk.modulus() - value).to_i64().ok_or(ProtocolError::DecodeOverflow)?;
        Ok(-magnitude)
    } else {
        value.to_i64().ok_or(ProtocolError::DecodeOverflow)
    }
}

/// Encrypts `vote + noise` coordinate-wise.
pub fn encrypt_noisy_vote<R: RngCore + CryptoRng + ?Sized>(
    teacher_index: usize,
    vote: &VoteVector,
    noise: &[i64],
    pk: &PublicKey,
    rng: &mut R,
) -> Result<EncryptedVote, ProtocolError> {
    if noise.len() != vote.len() {
        return Err(ProtocolError::ClassCountMismatch {
            expected: vote.len(),
            got: noise.len(),
        });
    }
    let per_class = vote
        .entries()
        .iter()
        .zip(noise)
        .map(|(&y, &z)| {
            let plaintext = encode_signed(y as i64 + z, pk)?;
            Ok(pk.encrypt(&plaintext, rng)?)
        })
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    Ok(EncryptedVote {
        teacher_index,
        per_class,
    })
}

/// Samples one noise share per class from `plan` and encrypts the noisy vote.
pub fn encode_noisy_vote<R: RngCore + CryptoRng + ?Sized>(
    teacher_index: usize,
    vote: &VoteVector,
    plan: &NoisePlan,
    pk: &PublicKey,
    rng: &mut R,
) -> Result<EncryptedVote, ProtocolError> {
    let noise = plan.sampler().sample_vector(vote.len(), rng);
    encrypt_noisy_vote(teacher_index, vote, &noise, pk, rng)
}

/// Coordinate-wise homomorphic sum. Performs no decryption.
pub fn aggregate_votes(pk: &PublicKey, votes: &[EncryptedVote]) -> Result<Vec<Ciphertext>, ProtocolError> {
    let first = votes.first().ok_or(ProtocolError::NoVotes)?;
    let classes = first.per_class.len();
    let mut acc = first.per_class.clone();
    for vote in &votes[1..] {
        if vote.per_class.len() != classes {
            return Err(ProtocolError::ClassCountMismatch {
                expected: classes,
                got: vote.per_class.len(),
            });
        }
        for (slot, c) in acc.iter_mut().zip(&vote.per_class) {
            *slot = pk.add(slot, c);
        }
    }
    Ok(acc)
}

/// Combines per-class partial decryptions into the noisy histogram.
pub fn finalize(
    pk: &PublicKey,
    config: &ThresholdConfig,
    partials: &[Vec<PartialDecryption>],
    plan: &NoisePlan,
    participants: usize,
) -> Result<NoisyHistogram, ProtocolError> {
    let raw_counts = partials
        .iter()
        .map(|class_partials| {
            let m = pk.combine(config, class_partials)?;
            decode_signed(&m, pk)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NoisyHistogram {
        raw_counts,
        offset: plan.offset(participants),
        participants,
    })
}

/// Per-teacher traffic for one query: `c` ciphertexts in each of three rounds.
pub fn estimate_traffic(class_count: usize, key_bits: u64) -> u64 {
    (2 * key_bits / 8) * class_count as u64 * 3
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Aggregator,
    Teacher(usize),
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Aggregator => f.write_str("aggregator"),
            Party::Teacher(i) => write!(f, "teacher-{i}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    EncryptedVote,
    AggregateCiphertext,
    PartialDecryption,
}

/// One protocol message with its wire payload (fixed-width big-endian integers).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub round: u8,
    pub kind: MessageKind,
    pub sender: Party,
    pub recipient: Party,
    pub payload: Vec<Vec<u8>>,
}

impl Message {
    pub fn byte_size(&self) -> u64 {
        self.payload.iter().map(|p| p.len() as u64).sum()
    }

    pub fn entry(&self) -> TranscriptEntry {
        TranscriptEntry {
            round: self.round,
            kind: self.kind,
            sender: self.sender.to_string(),
            recipient: self.recipient.to_string(),
            bytes: self.byte_size(),
        }
    }
}

/// Transcript line as exported to JSON lines.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub round: u8,
    pub kind: MessageKind,
    pub sender: String,
    pub recipient: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptStats {
    pub messages: usize,
    pub total_bytes: u64,
    /// Bytes sent and received by each teacher.
    pub per_teacher_bytes: BTreeMap<usize, u64>,
    /// Teachers chosen for partial decryption.
    pub decryptors: Vec<usize>,
}

/// Everything the aggregator observes during a run.
#[derive(Clone, Debug, Default)]
pub struct AggregatorView {
    pub received: Vec<Message>,
    /// Noise shares disclosed by compromised teachers.
    pub revealed_noise: BTreeMap<usize, Vec<i64>>,
}

#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub histogram: NoisyHistogram,
    pub prediction: usize,
    pub stats: TranscriptStats,
    pub transcript: Vec<Message>,
    pub view: AggregatorView,
    /// Whether surviving, uncompromised teachers alone meet the calibrated noise.
    pub honest_noise_sufficient: bool,
}

impl ProtocolOutcome {
    pub fn transcript_json_lines(&self) -> String {
        self.transcript
            .iter()
            .map(|m| serde_json::to_string(&m.entry()).expect("transcript entry serializes") + "\n")
            .collect()
    }
}

fn check_inputs(config: &RunConfig, votes: &[VoteVector]) -> Result<(), ProtocolError> {
    config.validate()?;
    if votes.len() != config.n_teachers {
        return Err(ProtocolError::VoteCountMismatch {
            expected: config.n_teachers,
            got: votes.len(),
        });
    }
    if let Some(bad) = votes.iter().find(|v| v.len() != config.class_count) {
        return Err(ProtocolError::ClassCountMismatch {
            expected: config.class_count,
            got: bad.len(),
        });
    }
    if config.dropouts.len() >= config.n_teachers - config.threshold {
        return Err(ProtocolError::AbortInsufficientParties {
            dropouts: config.dropouts.len(),
            n_teachers: config.n_teachers,
            threshold: config.threshold,
        });
    }
    Ok(())
}

/// Teacher `index`'s noise shares. Shared by the encrypted run and its
/// plaintext shadow so both see identical draws.
fn teacher_noise(plan_sampler: &crate::mechanisms::ShareSampler, config: &RunConfig, index: usize) -> Vec<i64> {
    let mut rng = derive_rng(config.seed, Stream::Noise, index as u64);
    plan_sampler.sample_vector(config.class_count, &mut rng)
}

/// Runs all five steps with dropout and collusion injection. Deterministic in `config.seed`.
pub fn run_protocol(
    keys: &ThresholdKeys,
    config: &RunConfig,
    votes: &[VoteVector],
    plan: &NoisePlan,
) -> Result<ProtocolOutcome, ProtocolError> {
    check_inputs(config, votes)?;
    if keys.config.n_parties() != config.n_teachers || keys.config.threshold() != config.threshold {
        return Err(ProtocolError::InvalidConfig(format!(
            "keys are for ({}, {}), run asks for ({}, {})",
            keys.config.n_parties(),
            keys.config.threshold(),
            config.n_teachers,
            config.threshold
        )));
    }
    let pk = &keys.public;
    let sampler = plan.sampler();
    let mut transcript = Vec::new();
    let mut view = AggregatorView::default();

    // Step 1: noisy votes, encrypted locally. Dropped teachers fail before sending.
    let mut received = Vec::new();
    for (offset, vote) in votes.iter().enumerate() {
        let index = offset + 1;
        let noise = teacher_noise(&sampler, config, index);
        if config.compromised.contains(&index) {
            view.revealed_noise.insert(index, noise.clone());
        }
        if config.dropouts.contains(&index) {
            continue;
        }
        let mut enc_rng = derive_rng(config.seed, Stream::Encryption, index as u64);
        let encrypted = encrypt_noisy_vote(index, vote, &noise, pk, &mut enc_rng)?;
        transcript.push(Message {
            round: 1,
            kind: MessageKind::EncryptedVote,
            sender: Party::Teacher(index),
            recipient: Party::Aggregator,
            payload: encrypted.per_class.iter().map(|c| c.to_bytes(pk)).collect(),
        });
        received.push(encrypted);
    }
    let survivors: Vec<usize> = received.iter().map(|v| v.teacher_index).collect();

    // Step 2.
    let aggregate = aggregate_votes(pk, &received)?;

    // Step 3: survivors in uniformly random order; the first t that respond
    // form the decryption committee.
    let mut candidates = survivors.clone();
    candidates.shuffle(&mut derive_rng(config.seed, Stream::Selection, 0));
    let aggregate_payload: Vec<Vec<u8>> = aggregate.iter().map(|c| c.to_bytes(pk)).collect();

    // Step 4.
    let mut decryptors = Vec::with_capacity(config.threshold);
    let mut partials: Vec<Vec<PartialDecryption>> = vec![Vec::with_capacity(config.threshold); config.class_count];
    for &index in &candidates {
        if decryptors.len() == config.threshold {
            break;
        }
        transcript.push(Message {
            round: 2,
            kind: MessageKind::AggregateCiphertext,
            sender: Party::Aggregator,
            recipient: Party::Teacher(index),
            payload: aggregate_payload.clone(),
        });
        if config.late_dropouts.contains(&index) {
            continue;
        }
        let share = keys
            .share(index)
            .ok_or_else(|| ProtocolError::InvalidConfig(format!("no key share for teacher {index}")))?;
        let teacher_partials: Vec<PartialDecryption> = aggregate
            .iter()
            .map(|c| share.partial_decrypt(pk, &keys.config, c))
            .collect();
        transcript.push(Message {
            round: 3,
            kind: MessageKind::PartialDecryption,
            sender: Party::Teacher(index),
            recipient: Party::Aggregator,
            payload: teacher_partials.iter().map(|p| p.to_bytes(pk)).collect(),
        });
        for (slot, p) in partials.iter_mut().zip(teacher_partials) {
            slot.push(p);
        }
        decryptors.push(index);
    }
    if decryptors.len() < config.threshold {
        return Err(ProtocolError::AbortInsufficientParties {
            dropouts: config.dropouts.len() + config.late_dropouts.difference(&config.dropouts).count(),
            n_teachers: config.n_teachers,
            threshold: config.threshold,
        });
    }
    decryptors.sort_unstable();

    // Step 5.
    let histogram = finalize(pk, &keys.config, &partials, plan, survivors.len())?;
    let prediction = predict(&histogram);

    let mut stats = TranscriptStats {
        messages: transcript.len(),
        decryptors,
        ..TranscriptStats::default()
    };
    for message in &transcript {
        let bytes = message.byte_size();
        stats.total_bytes += bytes;
        for party in [message.sender, message.recipient] {
            if let Party::Teacher(i) = party {
                *stats.per_teacher_bytes.entry(i).or_default() += bytes;
            }
        }
    }
    view.received = transcript
        .iter()
        .filter(|m| m.recipient == Party::Aggregator)
        .cloned()
        .collect();

    let honest_survivors = survivors.iter().filter(|i| !config.compromised.contains(i)).count();
    Ok(ProtocolOutcome {
        histogram,
        prediction,
        stats,
        transcript,
        view,
        honest_noise_sufficient: plan.covered_by(honest_survivors),
    })
}

/// Plaintext-only execution with the same noise draws: the survivors'
/// `sum(y_i + r_i)` computed with ordinary integer arithmetic.
pub fn simulate_plaintext(
    config: &RunConfig,
    votes: &[VoteVector],
    plan: &NoisePlan,
) -> Result<NoisyHistogram, ProtocolError> {
    check_inputs(config, votes)?;
    let sampler = plan.sampler();
    let mut raw_counts = vec![0i64; config.class_count];
    let survivors = config.survivors();
    for &index in &survivors {
        let noise = teacher_noise(&sampler, config, index);
        for ((slot, &y), z) in raw_counts.iter_mut().zip(votes[index - 1].entries()).zip(noise) {
            *slot += y as i64 + z;
        }
    }
    Ok(NoisyHistogram {
        raw_counts,
        offset: plan.offset(survivors.len()),
        participants: survivors.len(),
    })
}

/// Samples a vote histogram with fresh noise for every party, without any
/// encryption. Used for high-volume Monte-Carlo checks of the released argmax.
pub fn noisy_argmax_plaintext<R: Rng + ?Sized>(
    votes: &[VoteVector],
    sampler: &crate::mechanisms::ShareSampler,
    rng: &mut R,
) -> usize {
    let classes = votes.first().map_or(0, |v| v.len());
    let mut counts = vec![0i64; classes];
    for vote in votes {
        for (slot, &y) in counts.iter_mut().zip(vote.entries()) {
            *slot += y as i64 + sampler.sample(rng);
        }
    }
    argmax(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{bm_plan, dg_plan, PrivacyParams};
    use crate::paillier::deal_threshold_keys;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::OnceLock;

    fn keys_5_3() -> &'static ThresholdKeys {
        static KEYS: OnceLock<ThresholdKeys> = OnceLock::new();
        KEYS.get_or_init(|| deal_threshold_keys(512, 5, 3, &mut ChaCha20Rng::seed_from_u64(0xab)).unwrap())
    }

    fn decrypt(keys: &ThresholdKeys, cs: &[Ciphertext]) -> Vec<i64> {
        cs.iter()
            .map(|c| {
                let partials: Vec<_> = keys.shares[..3]
                    .iter()
                    .map(|s| s.partial_decrypt(&keys.public, &keys.config, c))
                    .collect();
                decode_signed(&keys.public.combine(&keys.config, &partials).unwrap(), &keys.public).unwrap()
            })
            .collect()
    }

    fn votes(classes: &[usize], c: usize) -> Vec<VoteVector> {
        classes.iter().map(|&k| VoteVector::one_hot(k, c).unwrap()).collect()
    }

    #[test]
    fn vote_vector_validation() {
        assert!(VoteVector::new(vec![0, 1, 0]).is_ok());
        assert!(VoteVector::new(vec![1, 1, 0]).is_err());
        assert!(VoteVector::new(vec![0, 0, 0]).is_err());
        assert!(VoteVector::new(vec![0, 2]).is_err());
        assert_eq!(VoteVector::one_hot(2, 3).unwrap().class(), 2);
        assert!(VoteVector::one_hot(3, 3).is_err());
    }

    #[test]
    fn signed_encoding() {
        let pk = &keys_5_3().public;
        assert_eq!(encode_signed(-2, pk).unwrap(), pk.modulus() - 2u32);
        assert_eq!(decode_signed(&(pk.modulus() - 2u32), pk).unwrap(), -2);
        for v in [-1_000_000i64, -1, 0, 1, 77] {
            assert_eq!(decode_signed(&encode_signed(v, pk).unwrap(), pk).unwrap(), v);
        }
        let half = pk.modulus() >> 1u32;
        assert!(half.bits() > 64);
        assert_eq!(encode_signed(i64::MIN + 1, pk).unwrap(), pk.modulus() - BigUint::from((i64::MIN + 1).unsigned_abs()));
    }

    #[test]
    fn noiseless_encoding_is_the_vote() {
        let keys = keys_5_3();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let vote = VoteVector::one_hot(1, 3).unwrap();
        let ev = encode_noisy_vote(1, &vote, &NoisePlan::noiseless(5), &keys.public, &mut rng).unwrap();
        assert_eq!(decrypt(keys, &ev.per_class), vec![0, 1, 0]);
    }

    #[test]
    fn binomial_plaintexts_in_range() {
        let keys = keys_5_3();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut plan = bm_plan(&PrivacyParams::new(1.0, 1e-3, 1.0).unwrap(), 20).unwrap();
        assert_eq!(plan.m_per_party, 8);
        plan.n_parties = 5;
        let plan = NoisePlan::Binomial(plan);
        for k in 0..3 {
            let ev = encode_noisy_vote(1, &VoteVector::one_hot(k, 3).unwrap(), &plan, &keys.public, &mut rng).unwrap();
            assert!(decrypt(keys, &ev.per_class).iter().all(|&v| (0..=9).contains(&v)));
        }
    }

    #[test]
    fn negative_gaussian_share_wraps() {
        let keys = keys_5_3();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let vote = VoteVector::one_hot(1, 2).unwrap();
        let ev = encrypt_noisy_vote(4, &vote, &[-2, 0], &keys.public, &mut rng).unwrap();
        assert_eq!(ev.teacher_index, 4);
        assert_eq!(decrypt(keys, &ev.per_class), vec![-2, 1]);
    }

    #[test]
    fn aggregate_examples() {
        let keys = keys_5_3();
        let pk = &keys.public;
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let noiseless = NoisePlan::noiseless(5);
        let single = encode_noisy_vote(1, &VoteVector::one_hot(0, 2).unwrap(), &noiseless, pk, &mut rng).unwrap();
        assert_eq!(decrypt(keys, &aggregate_votes(pk, std::slice::from_ref(&single)).unwrap()), vec![1, 0]);

        let other = encode_noisy_vote(2, &VoteVector::one_hot(1, 2).unwrap(), &noiseless, pk, &mut rng).unwrap();
        assert_eq!(decrypt(keys, &aggregate_votes(pk, &[single.clone(), other]).unwrap()), vec![1, 1]);

        let all: Vec<_> = (1..=5)
            .map(|i| encode_noisy_vote(i, &VoteVector::one_hot(2, 3).unwrap(), &noiseless, pk, &mut rng).unwrap())
            .collect();
        assert_eq!(decrypt(keys, &aggregate_votes(pk, &all).unwrap()), vec![0, 0, 5]);

        assert!(matches!(aggregate_votes(pk, &[]), Err(ProtocolError::NoVotes)));
        assert!(matches!(
            aggregate_votes(pk, &[single, all[0].clone()]),
            Err(ProtocolError::ClassCountMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn predict_tie_break_and_offset_invariance() {
        let h = |raw: Vec<i64>| NoisyHistogram {
            raw_counts: raw,
            offset: 0,
            participants: 1,
        };
        assert_eq!(predict(&h(vec![3, 9, 1])), 1);
        assert_eq!(predict(&h(vec![5, 5, 2])), 0);
        for shift in [-100i64, 0, 7, 1000] {
            let raw = vec![4, 11, 11, -3];
            let shifted: Vec<i64> = raw.iter().map(|r| r + shift).collect();
            assert_eq!(predict(&h(raw.clone())), predict(&h(shifted)));
        }
    }

    #[test]
    fn clean_run_recovers_exact_histogram() {
        let keys = keys_5_3();
        let config = RunConfig::new(5, 3, 3, Mechanism::Binomial, 9);
        let outcome = run_protocol(keys, &config, &votes(&[2, 2, 2, 2, 2], 3), &NoisePlan::noiseless(5)).unwrap();
        assert_eq!(outcome.histogram.raw_counts, vec![0, 0, 5]);
        assert_eq!(outcome.histogram.offset, 0);
        assert_eq!(outcome.prediction, 2);
        assert_eq!(outcome.stats.decryptors.len(), 3);
        assert_eq!(outcome.stats.messages, 5 + 2 * 3);
    }

    #[test]
    fn binomial_run_centers_and_matches_shadow() {
        let keys = keys_5_3();
        let plan = NoisePlan::Binomial(bm_plan(&PrivacyParams::new(1.0, 1e-3, 1.0).unwrap(), 5).unwrap());
        let config = RunConfig::new(5, 3, 3, Mechanism::Binomial, 31);
        let v = votes(&[0, 1, 1, 2, 1], 3);
        let outcome = run_protocol(keys, &config, &v, &plan).unwrap();
        let shadow = simulate_plaintext(&config, &v, &plan).unwrap();
        assert_eq!(outcome.histogram, shadow);
        let m = match &plan {
            NoisePlan::Binomial(p) => p.m_per_party as i64,
            _ => unreachable!(),
        };
        assert_eq!(outcome.histogram.offset, 5 * m / 2);
        let centered = outcome.histogram.centered();
        assert_eq!(crate::protocol::argmax(&centered), outcome.prediction);
    }

    #[test]
    fn gaussian_run_matches_shadow() {
        let keys = keys_5_3();
        let plan = NoisePlan::DiscreteGaussian(dg_plan(&PrivacyParams::new(0.5, 1e-3, 1.0).unwrap(), 5).unwrap());
        for seed in 0..3 {
            let config = RunConfig::new(5, 3, 2, Mechanism::DiscreteGaussian, seed);
            let v = votes(&[0, 1, 1, 0, 1], 2);
            let outcome = run_protocol(keys, &config, &v, &plan).unwrap();
            assert_eq!(outcome.histogram, simulate_plaintext(&config, &v, &plan).unwrap());
        }
    }

    #[test]
    fn dropout_boundary() {
        let keys = keys_5_3();
        let v = votes(&[1, 1, 0, 1, 1], 2);
        let mut config = RunConfig::new(5, 3, 2, Mechanism::Binomial, 5);
        config.dropouts = [2].into();
        let outcome = run_protocol(keys, &config, &v, &NoisePlan::noiseless(5)).unwrap();
        assert_eq!(outcome.histogram.raw_counts, vec![1, 3]);
        assert_eq!(outcome.histogram.participants, 4);
        assert!(!outcome.stats.decryptors.contains(&2));

        config.dropouts = [2, 4].into();
        assert!(matches!(
            run_protocol(keys, &config, &v, &NoisePlan::noiseless(5)),
            Err(ProtocolError::AbortInsufficientParties { dropouts: 2, .. })
        ));
    }

    #[test]
    fn late_dropouts_are_replaced() {
        let keys = keys_5_3();
        let v = votes(&[1, 1, 0, 1, 1], 2);
        let mut config = RunConfig::new(5, 3, 2, Mechanism::Binomial, 5);
        config.late_dropouts = [1, 2].into();
        let outcome = run_protocol(keys, &config, &v, &NoisePlan::noiseless(5)).unwrap();
        assert_eq!(outcome.histogram.raw_counts, vec![1, 4]);
        assert_eq!(outcome.stats.decryptors, vec![3, 4, 5]);

        config.late_dropouts = [1, 2, 3].into();
        assert!(matches!(
            run_protocol(keys, &config, &v, &NoisePlan::noiseless(5)),
            Err(ProtocolError::AbortInsufficientParties { .. })
        ));
    }

    #[test]
    fn run_is_deterministic_in_seed() {
        let keys = keys_5_3();
        let plan = NoisePlan::Binomial(bm_plan(&PrivacyParams::new(1.0, 1e-2, 1.0).unwrap(), 5).unwrap());
        let v = votes(&[0, 1, 1, 0, 1], 2);
        let config = RunConfig::new(5, 3, 2, Mechanism::Binomial, 77);
        let a = run_protocol(keys, &config, &v, &plan).unwrap();
        let b = run_protocol(keys, &config, &v, &plan).unwrap();
        assert_eq!(a.transcript, b.transcript);
        assert_eq!(a.transcript_json_lines(), b.transcript_json_lines());
    }

    #[test]
    fn config_validation_and_mismatches() {
        let keys = keys_5_3();
        let v = votes(&[0, 1, 1, 0, 1], 2);
        let mut config = RunConfig::new(5, 3, 2, Mechanism::Binomial, 1);
        config.compromised = [1, 2].into();
        assert!(matches!(config.validate(), Err(ProtocolError::InvalidConfig(_))));
        config.compromised = [9].into();
        assert!(config.validate().is_err());
        let config = RunConfig::new(5, 3, 2, Mechanism::Binomial, 1);
        assert!(matches!(
            run_protocol(keys, &config, &v[..4], &NoisePlan::noiseless(5)),
            Err(ProtocolError::VoteCountMismatch { expected: 5, got: 4 })
        ));
        let wrong = RunConfig::new(5, 4, 2, Mechanism::Binomial, 1);
        assert!(matches!(
            run_protocol(keys, &wrong, &v, &NoisePlan::noiseless(5)),
            Err(ProtocolError::InvalidConfig(_))
        ));
    }

    #[test]
    fn traffic_estimates() {
        assert_eq!(estimate_traffic(10, 1024), 7680);
        assert_eq!(estimate_traffic(2, 1024), 1536);
        assert_eq!(estimate_traffic(10, 512), 3840);
    }

    #[test]
    fn decryptors_see_full_three_rounds() {
        let keys = keys_5_3();
        let config = RunConfig::new(5, 3, 3, Mechanism::Binomial, 4);
        let outcome = run_protocol(keys, &config, &votes(&[0, 1, 2, 0, 1], 3), &NoisePlan::noiseless(5)).unwrap();
        for (&teacher, &bytes) in &outcome.stats.per_teacher_bytes {
            let expected = if outcome.stats.decryptors.contains(&teacher) {
                estimate_traffic(3, 512)
            } else {
                estimate_traffic(3, 512) / 3
            };
            assert_eq!(bytes, expected, "teacher {teacher}");
        }
    }

    #[test]
    fn config_files() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("run.toml");
        std::fs::write(
            &toml_path,
            "n_teachers = 5\nthreshold = 3\nclass_count = 2\nmechanism = \"dgm\"\ndropouts = [4]\nseed = 12\n",
        )
        .unwrap();
        let config = RunConfig::from_path(&toml_path).unwrap();
        assert_eq!(config.mechanism, Mechanism::DiscreteGaussian);
        assert_eq!(config.dropouts, [4].into());

        let json_path = dir.path().join("run.json");
        std::fs::write(&json_path, serde_json::to_string(&config).unwrap()).unwrap();
        assert_eq!(RunConfig::from_path(&json_path).unwrap(), config);

        std::fs::write(&json_path, "{\"n_teachers\": 5}").unwrap();
        assert!(matches!(RunConfig::from_path(&json_path), Err(ProtocolError::ConfigFile { .. })));
    }
}

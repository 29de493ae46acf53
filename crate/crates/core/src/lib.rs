//! Distributed differentially private prediction over a threshold-Paillier
//! secure aggregation protocol.
//!
//! Teachers add a share of calibrated Binomial or discrete Gaussian noise to
//! their one-hot votes and encrypt them; an untrusted aggregator sums the
//! ciphertexts and a quorum of teachers jointly decrypts only the noisy sum.

pub mod audit;
pub mod ensemble;
pub mod keystore;
pub mod mechanisms;
pub mod paillier;
pub mod primes;
pub mod protocol;
pub mod seeding;

pub use audit::{bm_exact_delta, collusion_residual_check, convolve_pmf, dg_exact_delta, empirical_dp_test, DpAuditReport, Pmf};
pub use ensemble::{
    load_csv, partition, run_framework, synth_blobs, train_local, Dataset, EnsembleError, FrameworkKind, FrameworkOptions,
    LocalModel,
};
pub use mechanisms::{
    ag_sigma, bm_min_tosses, bm_plan, dg_plan, BinomialPlan, GaussianPlan, Mechanism, MechanismError, NoisePlan,
    PrivacyParams,
};
pub use paillier::{
    deal_threshold_keys, Ciphertext, PaillierError, PartialDecryption, PublicKey, SecretKeyShare, ThresholdConfig,
    ThresholdKeys,
};
pub use protocol::{
    aggregate_votes, encode_noisy_vote, estimate_traffic, finalize, predict, run_protocol, simulate_plaintext,
    EncryptedVote, NoisyHistogram, ProtocolError, ProtocolOutcome, RunConfig, TranscriptStats, VoteVector,
};

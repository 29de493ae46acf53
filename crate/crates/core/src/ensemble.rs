//! Teacher ensembles at desk scale: datasets, disjoint partitions,
//! nearest-centroid local models and the comparison frameworks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanisms::{DiscreteGaussian, Mechanism, MechanismError, NoisePlan, PrivacyParams, ShareSampler};
use crate::paillier::{deal_threshold_keys, PaillierError, ThresholdKeys, MIN_KEY_BITS};
use crate::protocol::{argmax, run_protocol, ProtocolError, RunConfig, VoteVector};
use crate::seeding::{derive_rng, mix_seed, Stream};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("cannot train on an empty subset")]
    EmptySubset,
    #[error("cannot split {examples} examples into {parts} parts")]
    TooManyParts { parts: usize, examples: usize },
    #[error("feature dimension mismatch: model has {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("could not place {classes} centers {separation} apart after {attempts} attempts")]
    Placement {
        classes: usize,
        separation: f64,
        attempts: usize,
    },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("label column `{0}` not found")]
    MissingColumn(String),
    #[error("CSV file has no data rows")]
    EmptyFile,
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Crypto(#[from] PaillierError),
}

/// Rows of real features with dense class labels in `[0, class_count)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, class_count: usize) -> Result<Self, EnsembleError> {
        if features.len() != labels.len() {
            return Err(EnsembleError::InvalidDataset(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(EnsembleError::InvalidDataset(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if let Some(first) = features.first() {
            if features.iter().any(|row| row.len() != first.len()) {
                return Err(EnsembleError::InvalidDataset("ragged feature rows".to_string()));
            }
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Random split; the first part receives `round(fraction * len)` rows.
    pub fn split<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        let cut = ((fraction * self.len() as f64).round() as usize).min(self.len());
        (self.subset(&order[..cut]), self.subset(&order[cut..]))
    }
}

/// Disjoint random parts whose sizes differ by at most one.
pub fn partition<R: Rng + ?Sized>(data: &Dataset, n_parts: usize, rng: &mut R) -> Result<Vec<Dataset>, EnsembleError> {
    if n_parts == 0 || n_parts > data.len() {
        return Err(EnsembleError::TooManyParts {
            parts: n_parts,
            examples: data.len(),
        });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut buckets = vec![Vec::new(); n_parts];
    for (k, i) in order.into_iter().enumerate() {
        buckets[k % n_parts].push(i);
    }
    Ok(buckets.iter().map(|b| data.subset(b)).collect())
}

/// Nearest-centroid classifier. Classes absent from training have no centroid
/// and are never voted for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    centroids: Vec<Option<Vec<f64>>>,
    class_count: usize,
}

pub fn train_local(subset: &Dataset) -> Result<LocalModel, EnsembleError> {
    if subset.is_empty() {
        return Err(EnsembleError::EmptySubset);
    }
    let d = subset.dim();
    let mut sums = vec![vec![0.0; d]; subset.class_count];
    let mut counts = vec![0usize; subset.class_count];
    for (row, &label) in subset.features.iter().zip(&subset.labels) {
        counts[label] += 1;
        for (s, x) in sums[label].iter_mut().zip(row) {
            *s += x;
        }
    }
    let centroids = sums
        .into_iter()
        .zip(counts)
        .map(|(sum, n)| (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect()))
        .collect();
    Ok(LocalModel {
        centroids,
        class_count: subset.class_count,
    })
}

impl LocalModel {
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn centroid(&self, class: usize) -> Option<&[f64]> {
        self.centroids.get(class)?.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.centroids.iter().flatten().next().map_or(0, Vec::len)
    }

    /// Nearest centroid by Euclidean distance, ties to the lowest class index.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize, EnsembleError> {
        if x.len() != self.dim() {
            return Err(EnsembleError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut best: Option<(usize, f64)> = None;
        for (class, centroid) in self.centroids.iter().enumerate() {
            let Some(centroid) = centroid else { continue };
            let dist: f64 = centroid.iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum();
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((class, dist));
            }
        }
        Ok(best.expect("a trained model has at least one centroid").0)
    }

    pub fn predict_onehot(&self, x: &[f64]) -> Result<VoteVector, EnsembleError> {
        Ok(VoteVector::one_hot(self.predict_class(x)?, self.class_count)?)
    }
}

pub fn predict_onehot(model: &LocalModel, x: &[f64]) -> Result<VoteVector, EnsembleError> {
    model.predict_onehot(x)
}

const PLACEMENT_ATTEMPTS: usize = 10_000;

/// `c` unit-variance Gaussian clusters in `d` dimensions with centers at least
/// `separation` apart and balanced labels.
pub fn synth_blobs(n_samples: usize, c: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset, EnsembleError> {
    if n_samples == 0 || c == 0 || d == 0 || separation.is_nan() || separation <= 0.0 {
        return Err(EnsembleError::InvalidDataset(
            "sample count, classes, dimension and separation must be positive".to_string(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // A cube roomy enough that rejection sampling rarely fails.
    let half_width = separation * (c as f64).powf(1.0 / d as f64).max(1.0);
    let centers = place_centers(c, d, separation, half_width, &mut rng)?;
    let mut features = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let label = i % c;
        let row = centers[label]
            .iter()
            .map(|&mu| {
                let z: f64 = StandardNormal.sample(&mut rng);
                mu + z
            })
            .collect();
        features.push(row);
        labels.push(label);
    }
    Dataset::new(features, labels, c)
}

/// Rejection-samples `c` points in `[-half_width, half_width]^d` with pairwise
/// distance at least `separation`.
fn place_centers<R: Rng + ?Sized>(
    c: usize,
    d: usize,
    separation: f64,
    half_width: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, EnsembleError> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(c);
    for _ in 0..PLACEMENT_ATTEMPTS {
        if centers.len() == c {
            break;
        }
        let candidate: Vec<f64> = (0..d).map(|_| rng.gen_range(-half_width..=half_width)).collect();
        let far_enough = centers.iter().all(|center| {
            let dist2: f64 = center.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum();
            dist2 >= separation * separation
        });
        if far_enough {
            centers.push(candidate);
        }
    }
    if centers.len() < c {
        return Err(EnsembleError::Placement {
            classes: c,
            separation,
            attempts: PLACEMENT_ATTEMPTS,
        });
    }
    Ok(centers)
}

/// A dataset read from CSV together with the original label strings, indexed
/// by dense label.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvDataset {
    pub dataset: Dataset,
    pub label_names: Vec<String>,
    pub feature_names: Vec<String>,
}

/// Reads a headed CSV. Every column except `label_column` must be numeric.
/// Labels are mapped to dense indices in order of first appearance.
pub fn load_csv(path: &Path, label_column: &str) -> Result<CsvDataset, EnsembleError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_at = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| EnsembleError::MissingColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_at)
        .map(|(_, h)| h.trim().to_string())
        .collect();

    let mut label_names: Vec<String> = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row_number = r + 1;
        let mut row = Vec::with_capacity(feature_names.len());
        for (i, cell) in record.iter().enumerate() {
            if i == label_at {
                continue;
            }
            let value = cell.trim().parse::<f64>().map_err(|_| EnsembleError::NonNumeric {
                row: row_number,
                column: headers.get(i).unwrap_or("?").trim().to_string(),
                value: cell.to_string(),
            })?;
            row.push(value);
        }
        let name = record.get(label_at).unwrap_or("").trim();
        let label = match label_names.iter().position(|n| n == name) {
            Some(k) => k,
            None => {
                label_names.push(name.to_string());
                label_names.len() - 1
            }
        };
        features.push(row);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(EnsembleError::EmptyFile);
    }
    let dataset = Dataset::new(features, labels, label_names.len())?;
    Ok(CsvDataset {
        dataset,
        label_names,
        feature_names,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameworkKind {
    Centralized,
    DistributedNonPrivate,
    #[serde(rename = "LDP")]
    Ldp,
    Standalone,
    #[serde(rename = "PATE")]
    Pate,
    #[serde(rename = "DPPP")]
    Dppp,
}

impl FrameworkKind {
    pub const ALL: [FrameworkKind; 6] = [
        FrameworkKind::Centralized,
        FrameworkKind::DistributedNonPrivate,
        FrameworkKind::Ldp,
        FrameworkKind::Standalone,
        FrameworkKind::Pate,
        FrameworkKind::Dppp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FrameworkKind::Centralized => "Centralized",
            FrameworkKind::DistributedNonPrivate => "DistributedNonPrivate",
            FrameworkKind::Ldp => "LDP",
            FrameworkKind::Standalone => "Standalone",
            FrameworkKind::Pate => "PATE",
            FrameworkKind::Dppp => "DPPP",
        }
    }

    /// Whether accuracy depends on the privacy parameters.
    pub fn is_private(&self) -> bool {
        matches!(self, FrameworkKind::Ldp | FrameworkKind::Standalone | FrameworkKind::Pate | FrameworkKind::Dppp)
    }
}

impl fmt::Display for FrameworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FrameworkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FrameworkKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown framework `{s}`"))
    }
}

/// Settings shared by the noisy frameworks.
#[derive(Clone, Debug)]
pub struct FrameworkOptions {
    pub mechanism: Mechanism,
    /// Paillier modulus size for DPPP keys generated on demand.
    pub key_bits: u64,
    /// Decryption threshold; defaults to `N - floor(N/3)`.
    pub threshold: Option<usize>,
    /// Run DPPP without noise (the large-epsilon limit).
    pub noiseless: bool,
    /// Pre-dealt keys; must match `n_teachers` and the threshold.
    pub keys: Option<Arc<ThresholdKeys>>,
}

impl FrameworkOptions {
    pub fn new(mechanism: Mechanism) -> Self {
        FrameworkOptions {
            mechanism,
            key_bits: MIN_KEY_BITS,
            threshold: None,
            noiseless: false,
            keys: None,
        }
    }

    pub fn threshold_for(&self, n_teachers: usize) -> usize {
        self.threshold.unwrap_or(n_teachers - n_teachers / 3).max(2)
    }
}

/// Teachers trained on disjoint parts of the training set, plus one model on
/// all of it for the centralized baseline.
#[derive(Clone, Debug)]
pub struct TrainedEnsemble {
    pub teachers: Vec<LocalModel>,
    pub centralized: LocalModel,
}

impl TrainedEnsemble {
    pub fn train(train: &Dataset, n_teachers: usize, seed: u64) -> Result<Self, EnsembleError> {
        let parts = partition(train, n_teachers, &mut derive_rng(seed, Stream::Partition, 0))?;
        let teachers = parts.iter().map(train_local).collect::<Result<Vec<_>, _>>()?;
        Ok(TrainedEnsemble {
            teachers,
            centralized: train_local(train)?,
        })
    }

    /// Precomputes every model's predictions on `test`.
    pub fn evaluate_on(&self, test: &Dataset) -> Result<EvaluationSet, EnsembleError> {
        let mut teacher_votes = Vec::with_capacity(test.len());
        let mut centralized = Vec::with_capacity(test.len());
        for x in test.features() {
            teacher_votes.push(
                self.teachers
                    .iter()
                    .map(|m| m.predict_onehot(x))
                    .collect::<Result<Vec<_>, _>>()?,
            );
            centralized.push(self.centralized.predict_class(x)?);
        }
        Ok(EvaluationSet {
            labels: test.labels().to_vec(),
            class_count: test.class_count(),
            teacher_votes,
            centralized,
        })
    }
}

/// Per-test-point teacher votes and centralized predictions.
#[derive(Clone, Debug)]
pub struct EvaluationSet {
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub teacher_votes: Vec<Vec<VoteVector>>,
    pub centralized: Vec<usize>,
}

impl EvaluationSet {
    pub fn n_teachers(&self) -> usize {
        self.teacher_votes.first().map_or(0, Vec::len)
    }

    fn accuracy_of(&self, predictions: impl IntoIterator<Item = usize>) -> f64 {
        let hits = predictions.into_iter().zip(&self.labels).filter(|(p, l)| p == *l).count();
        hits as f64 / self.labels.len().max(1) as f64
    }

    /// Accuracy of `kind` with fresh noise per query, deterministic in `seed`.
    pub fn accuracy(
        &self,
        kind: FrameworkKind,
        params: &PrivacyParams,
        options: &FrameworkOptions,
        seed: u64,
    ) -> Result<f64, EnsembleError> {
        let n = self.n_teachers();
        let c = self.class_count;
        let vote_sum = |votes: &[VoteVector]| -> Vec<i64> {
            let mut sums = vec![0i64; c];
            for v in votes {
                for (s, &y) in sums.iter_mut().zip(v.entries()) {
                    *s += y as i64;
                }
            }
            sums
        };
        let mut rng = derive_rng(seed, Stream::Baseline, kind as u64);
        match kind {
            FrameworkKind::Centralized => Ok(self.accuracy_of(self.centralized.iter().copied())),
            FrameworkKind::DistributedNonPrivate => {
                Ok(self.accuracy_of(self.teacher_votes.iter().map(|votes| argmax(&vote_sum(votes)))))
            }
            FrameworkKind::Ldp => {
                let sampler = full_noise_sampler(options.mechanism, params, n)?;
                let predictions: Vec<usize> = self
                    .teacher_votes
                    .iter()
                    .map(|votes| {
                        let mut counts = vote_sum(votes);
                        for _ in 0..n {
                            for s in counts.iter_mut() {
                                *s += sampler.sample(&mut rng);
                            }
                        }
                        argmax(&counts)
                    })
                    .collect();
                Ok(self.accuracy_of(predictions))
            }
            FrameworkKind::Standalone => {
                let sampler = full_noise_sampler(options.mechanism, params, n)?;
                let mut total = 0.0;
                for teacher in 0..n {
                    let predictions: Vec<usize> = self
                        .teacher_votes
                        .iter()
                        .map(|votes| {
                            let counts: Vec<i64> = votes[teacher]
                                .entries()
                                .iter()
                                .map(|&y| y as i64 + sampler.sample(&mut rng))
                                .collect();
                            argmax(&counts)
                        })
                        .collect();
                    total += self.accuracy_of(predictions);
                }
                Ok(total / n as f64)
            }
            FrameworkKind::Pate => {
                let scale = 2.0 / params.epsilon();
                let predictions: Vec<usize> = self
                    .teacher_votes
                    .iter()
                    .map(|votes| {
                        let noisy: Vec<f64> = vote_sum(votes)
                            .into_iter()
                            .map(|s| s as f64 + sample_laplace(scale, &mut rng))
                            .collect();
                        argmax(&noisy)
                    })
                    .collect();
                Ok(self.accuracy_of(predictions))
            }
            FrameworkKind::Dppp => {
                let threshold = options.threshold_for(n);
                let keys = match &options.keys {
                    Some(keys) => Arc::clone(keys),
                    None => Arc::new(deal_threshold_keys(
                        options.key_bits,
                        n,
                        threshold,
                        &mut derive_rng(seed, Stream::Keys, 0),
                    )?),
                };
                let plan = if options.noiseless {
                    NoisePlan::noiseless(n)
                } else {
                    NoisePlan::calibrate(options.mechanism, params, n)?
                };
                let mut predictions = Vec::with_capacity(self.labels.len());
                for (q, votes) in self.teacher_votes.iter().enumerate() {
                    let config = RunConfig::new(n, threshold, c, options.mechanism, mix_seed(seed, q as u64));
                    predictions.push(run_protocol(&keys, &config, votes, &plan)?.prediction);
                }
                Ok(self.accuracy_of(predictions))
            }
        }
    }
}

/// The whole calibrated noise placed on one party: `n_total` tosses or `sigma_total`.
fn full_noise_sampler(
    mechanism: Mechanism,
    params: &PrivacyParams,
    n_teachers: usize,
) -> Result<ShareSampler, EnsembleError> {
    Ok(match NoisePlan::calibrate(mechanism, params, n_teachers)? {
        NoisePlan::Binomial(plan) => ShareSampler::Binomial(plan.n_total),
        NoisePlan::DiscreteGaussian(plan) => ShareSampler::Gaussian(DiscreteGaussian::new(plan.sigma_total)),
    })
}

/// Laplace(0, scale) by inversion.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(-0.5..0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Partitions `train`, trains the teachers and returns the accuracy of `kind` on `test`.
pub fn run_framework(
    kind: FrameworkKind,
    train: &Dataset,
    test: &Dataset,
    params: &PrivacyParams,
    n_teachers: usize,
    seed: u64,
    options: &FrameworkOptions,
) -> Result<f64, EnsembleError> {
    let ensemble = TrainedEnsemble::train(train, n_teachers, seed)?;
    ensemble.evaluate_on(test)?.accuracy(kind, params, options, seed)
}

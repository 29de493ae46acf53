//! Framework comparison sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use dppp_core::ensemble::{load_csv, synth_blobs, Dataset, FrameworkKind, FrameworkOptions, TrainedEnsemble};
use dppp_core::mechanisms::{Mechanism, PrivacyParams};
use dppp_core::paillier::deal_threshold_keys;
use dppp_core::seeding::{derive_rng, mix_seed, Stream};

#[derive(Clone, Debug)]
pub enum DatasetSource {
    Synthetic { d: usize, separation: f64 },
    Csv { path: PathBuf, label_column: String },
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub mechanisms: Vec<Mechanism>,
    pub epsilons: Vec<f64>,
    pub deltas: Vec<f64>,
    pub gamma: f64,
    pub n_teachers: usize,
    pub class_count: usize,
    pub dataset: DatasetSource,
    pub train_size: usize,
    pub test_size: usize,
    pub seeds: Vec<u64>,
    pub key_bits: u64,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mechanisms.is_empty() || self.epsilons.is_empty() || self.deltas.is_empty() {
            bail!("mechanism, epsilon and delta grids must be non-empty");
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            bail!("seeds must be distinct");
        }
        for &eps in &self.epsilons {
            for &delta in &self.deltas {
                PrivacyParams::new(eps, delta, self.gamma)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub framework: FrameworkKind,
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    pub n_teachers: usize,
    pub seed: u64,
    pub accuracy: f64,
}

pub const CSV_HEADER: &str = "framework,mechanism,epsilon,delta,gamma,n_teachers,seed,accuracy";

impl ResultRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.framework, self.mechanism, self.epsilon, self.delta, self.gamma, self.n_teachers, self.seed, self.accuracy
        )
    }
}

fn load_split(spec: &ExperimentSpec, seed: u64, base: Option<&Dataset>) -> Result<(Dataset, Dataset)> {
    let data = match (&spec.dataset, base) {
        (_, Some(data)) => data.clone(),
        (DatasetSource::Synthetic { d, separation }, None) => synth_blobs(
            spec.train_size + spec.test_size,
            spec.class_count,
            *d,
            *separation,
            seed,
        )?,
        (DatasetSource::Csv { .. }, None) => unreachable!("CSV data is loaded once"),
    };
    let fraction = spec.train_size as f64 / (spec.train_size + spec.test_size) as f64;
    let (train, test) = data.split(fraction, &mut derive_rng(seed, Stream::Partition, 1));
    let test_points: Vec<usize> = (0..test.len().min(spec.test_size)).collect();
    Ok((train, test.subset(&test_points)))
}

fn run_seed(spec: &ExperimentSpec, seed: u64, base: Option<&Dataset>) -> Result<Vec<ResultRow>> {
    let (train, test) = load_split(spec, seed, base)?;
    let eval = TrainedEnsemble::train(&train, spec.n_teachers, seed)?.evaluate_on(&test)?;
    let mut rows = Vec::new();
    for (m, &mechanism) in spec.mechanisms.iter().enumerate() {
        let mut options = FrameworkOptions::new(mechanism);
        options.key_bits = spec.key_bits;
        let threshold = options.threshold_for(spec.n_teachers);
        options.keys = Some(Arc::new(deal_threshold_keys(
            spec.key_bits,
            spec.n_teachers,
            threshold,
            &mut derive_rng(seed, Stream::Keys, m as u64),
        )?));
        let run_seed = mix_seed(seed, m as u64);
        for &delta in &spec.deltas {
            // Accuracy of the non-private frameworks does not depend on epsilon.
            let mut fixed = BTreeMap::new();
            for &epsilon in &spec.epsilons {
                let params = PrivacyParams::new(epsilon, delta, spec.gamma)?;
                for framework in FrameworkKind::ALL {
                    let accuracy = if framework.is_private() {
                        eval.accuracy(framework, &params, &options, run_seed)?
                    } else {
                        match fixed.get(&framework) {
                            Some(&a) => a,
                            None => {
                                let a = eval.accuracy(framework, &params, &options, run_seed)?;
                                fixed.insert(framework, a);
                                a
                            }
                        }
                    };
                    rows.push(ResultRow {
                        framework,
                        mechanism,
                        epsilon,
                        delta,
                        gamma: spec.gamma,
                        n_teachers: spec.n_teachers,
                        seed,
                        accuracy,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Runs every framework over the grid and seeds. Seeds are spread over
/// worker threads; rows come back ordered by (mechanism, delta, framework,
/// epsilon, seed).
pub fn run_comparison(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let base = match &spec.dataset {
        DatasetSource::Csv { path, label_column } => {
            let loaded = load_csv(path, label_column).with_context(|| format!("loading {}", path.display()))?;
            if loaded.dataset.class_count() != spec.class_count {
                eprintln!(
                    "note: {} has {} classes; using that instead of --classes",
                    path.display(),
                    loaded.dataset.class_count()
                );
            }
            Some(loaded.dataset)
        }
        DatasetSource::Synthetic { .. } => None,
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(spec.seeds.len());
    let chunks: Vec<Vec<u64>> = (0..workers)
        .map(|w| spec.seeds.iter().copied().skip(w).step_by(workers).collect())
        .collect();
    let results: Vec<Result<Vec<ResultRow>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|seeds| {
                let base = base.as_ref();
                scope.spawn(move || -> Result<Vec<ResultRow>> {
                    let mut rows = Vec::new();
                    for &seed in seeds {
                        rows.extend(run_seed(spec, seed, base)?);
                    }
                    Ok(rows)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let mech_rank = |m: Mechanism| spec.mechanisms.iter().position(|&x| x == m);
    let framework_rank = |f: FrameworkKind| FrameworkKind::ALL.iter().position(|&x| x == f);
    let seed_rank = |s: u64| spec.seeds.iter().position(|&x| x == s);
    rows.sort_by(|a, b| {
        mech_rank(a.mechanism)
            .cmp(&mech_rank(b.mechanism))
            .then(a.delta.total_cmp(&b.delta))
            .then(framework_rank(a.framework).cmp(&framework_rank(b.framework)))
            .then(a.epsilon.total_cmp(&b.epsilon))
            .then(seed_rank(a.seed).cmp(&seed_rank(b.seed)))
    });
    Ok(rows)
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

/// Mean accuracy per (mechanism, delta, framework, epsilon) as printable lines.
pub fn summary(rows: &[ResultRow]) -> Vec<String> {
    type Key = (Mechanism, f64, FrameworkKind, f64);
    let mut groups: Vec<(Key, (f64, usize))> = Vec::new();
    for row in rows {
        let key = (row.mechanism, row.delta, row.framework, row.epsilon);
        match groups.last_mut() {
            Some((k, (sum, n))) if *k == key => {
                *sum += row.accuracy;
                *n += 1;
            }
            _ => groups.push((key, (row.accuracy, 1))),
        }
    }
    groups
        .into_iter()
        .map(|((m, delta, f, eps), (sum, n))| {
            format!("{m:<4} delta={delta:<8} {:<22} eps={eps:<6} mean accuracy {:.4} over {n} seeds", f.as_str(), sum / n as f64)
        })
        .collect()
}

mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use dppp_core::audit::{
    audit_grid, collusion_residual_check, distributed_plan_audit, empirical_dp_test, AuditRow, DpAuditReport,
    AUDIT_DELTAS, AUDIT_EPSILONS, DG_DISCRETIZATION_SLACK,
};
use dppp_core::keystore::{read_keys, write_keys};
use dppp_core::mechanisms::{Mechanism, NoisePlan, PrivacyParams, ShareSampler};
use dppp_core::paillier::{deal_threshold_keys, ThresholdKeys, DEFAULT_KEY_BITS, MIN_KEY_BITS};
use dppp_core::protocol::{
    aggregate_votes, estimate_traffic, noisy_argmax_plaintext, run_protocol, RunConfig, VoteVector,
};
use dppp_core::seeding::{derive_rng, Stream};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use experiment::{run_comparison, summary, to_csv, DatasetSource, ExperimentSpec};

#[derive(Parser)]
#[command(name = "dppp", version, about = "Distributed private prediction with threshold Paillier aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deal a threshold key pair and write public.json plus one share file per teacher.
    Keygen(KeygenArgs),
    /// Print the calibrated per-party noise plan as JSON.
    Calibrate(CalibrateArgs),
    /// Run the aggregation protocol once and print the outcome as JSON.
    Simulate(SimulateArgs),
    /// Sweep all comparison frameworks over privacy grids and seeds.
    Compare(CompareArgs),
    /// Check the calibrations against exact and empirical privacy oracles.
    Audit(AuditArgs),
    /// Time the cryptographic operations and report traffic.
    Bench(BenchArgs),
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long, default_value_t = DEFAULT_KEY_BITS)]
    key_bits: u64,
    #[arg(long, default_value_t = 20)]
    teachers: usize,
    /// Decryption threshold; defaults to N - floor(N/3).
    #[arg(long)]
    threshold: Option<usize>,
    #[arg(long, default_value = "keys")]
    out: PathBuf,
    /// Seed for reproducible keys; fresh OS entropy when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing key files.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PrivacyArgs {
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    /// Assumed fraction of honest teachers.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    privacy: PrivacyArgs,
    #[arg(long, default_value_t = 20)]
    teachers: usize,
    #[arg(long, default_value = "bm")]
    mechanism: Mechanism,
}

#[derive(Args)]
struct SimulateArgs {
    /// Run configuration (JSON or TOML); overrides the individual flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    privacy: PrivacyArgs,
    #[arg(long, default_value_t = 20)]
    teachers: usize,
    #[arg(long)]
    threshold: Option<usize>,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value = "bm")]
    mechanism: Mechanism,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Teachers (1-based) that fail after sending their vote.
    #[arg(long, value_delimiter = ',')]
    dropouts: Vec<usize>,
    /// Teachers (1-based) whose noise is revealed to the aggregator.
    #[arg(long, value_delimiter = ',')]
    compromised: Vec<usize>,
    /// One class per teacher; random (seeded) when omitted.
    #[arg(long, value_delimiter = ',')]
    votes: Vec<usize>,
    /// Directory written by `keygen`; keys are dealt from the seed when omitted.
    #[arg(long)]
    keys: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_KEY_BITS)]
    key_bits: u64,
    /// Write the message transcript as JSON lines.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_delimiter = ',', default_value = "bm")]
    mechanism: Vec<Mechanism>,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,0.5,1")]
    epsilon: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.001")]
    delta: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 20)]
    teachers: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Number of seeds (0, 1, ...).
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// `synthetic` or a CSV path.
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, default_value_t = 5)]
    dimensions: usize,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 300)]
    train_size: usize,
    #[arg(long, default_value_t = 30)]
    test_size: usize,
    #[arg(long, default_value_t = MIN_KEY_BITS)]
    key_bits: u64,
    #[arg(long, default_value = "results.csv")]
    csv: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long, value_delimiter = ',', default_values_t = AUDIT_EPSILONS.to_vec())]
    epsilon: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = AUDIT_DELTAS.to_vec())]
    delta: Vec<f64>,
    /// Ensemble size for the distributed-plan and collusion checks.
    #[arg(long, default_value_t = 20)]
    teachers: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Monte-Carlo trials per input for the empirical test (0 skips it).
    #[arg(long, default_value_t = 200_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write every report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    teachers: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = DEFAULT_KEY_BITS)]
    key_bits: u64,
    #[arg(long, default_value_t = 3)]
    reps: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn usage_error(message: String) -> ! {
    Cli::command().error(ErrorKind::ValueValidation, message).exit()
}

fn default_threshold(n: usize) -> usize {
    (n - n / 3).max(2)
}

fn keygen(args: KeygenArgs) -> Result<()> {
    let threshold = args.threshold.unwrap_or_else(|| default_threshold(args.teachers));
    if args.teachers < 2 || threshold < 2 || threshold > args.teachers {
        usage_error(format!("need 2 <= t <= N, got N = {}, t = {threshold}", args.teachers));
    }
    let mut rng = match args.seed {
        Some(seed) => derive_rng(seed, Stream::Keys, 0),
        None => ChaCha20Rng::from_entropy(),
    };
    let keys = deal_threshold_keys(args.key_bits, args.teachers, threshold, &mut rng)?;
    let written = write_keys(&args.out, &keys, args.force)?;
    println!(
        "wrote {} files ({}-bit modulus, N = {}, t = {threshold}) to {}",
        written.len(),
        args.key_bits,
        args.teachers,
        args.out.display()
    );
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let p = &args.privacy;
    let params = PrivacyParams::new(p.epsilon, p.delta, p.gamma)?;
    let plan = NoisePlan::calibrate(args.mechanism, &params, args.teachers)?;
    println!("{}", serde_json::to_string_pretty(&plan.record(&params))?);
    Ok(())
}

#[derive(Serialize)]
struct SimulationSummary {
    config: RunConfig,
    raw_counts: Vec<i64>,
    offset: i64,
    centered_counts: Vec<i64>,
    participants: usize,
    prediction: usize,
    decryptors: Vec<usize>,
    messages: usize,
    total_bytes: u64,
    per_teacher_bytes: std::collections::BTreeMap<usize, u64>,
    estimated_bytes_per_teacher: u64,
    honest_noise_sufficient: bool,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => RunConfig::from_path(path)?,
        None => {
            let mut config = RunConfig::new(
                args.teachers,
                args.threshold.unwrap_or_else(|| default_threshold(args.teachers)),
                args.classes,
                args.mechanism,
                args.seed,
            );
            config.dropouts = args.dropouts.iter().copied().collect();
            config.compromised = args.compromised.iter().copied().collect();
            config.validate()?;
            config
        }
    };
    let p = &args.privacy;
    let params = PrivacyParams::new(p.epsilon, p.delta, p.gamma)?;
    let plan = NoisePlan::calibrate(config.mechanism, &params, config.n_teachers)?;
    let keys: ThresholdKeys = match &args.keys {
        Some(dir) => read_keys(dir)?,
        None => deal_threshold_keys(
            args.key_bits,
            config.n_teachers,
            config.threshold,
            &mut derive_rng(config.seed, Stream::Keys, 0),
        )?,
    };
    let votes: Vec<VoteVector> = if args.votes.is_empty() {
        let mut rng = derive_rng(config.seed, Stream::Query, 0);
        (0..config.n_teachers)
            .map(|_| VoteVector::one_hot(rng.gen_range(0..config.class_count), config.class_count))
            .collect::<Result<_, _>>()?
    } else {
        args.votes
            .iter()
            .map(|&k| VoteVector::one_hot(k, config.class_count))
            .collect::<Result<_, _>>()?
    };
    let outcome = run_protocol(&keys, &config, &votes, &plan)?;
    if let Some(path) = &args.transcript {
        std::fs::write(path, outcome.transcript_json_lines()).with_context(|| format!("writing {}", path.display()))?;
    }
    let summary = SimulationSummary {
        raw_counts: outcome.histogram.raw_counts.clone(),
        offset: outcome.histogram.offset,
        centered_counts: outcome.histogram.centered(),
        participants: outcome.histogram.participants,
        prediction: outcome.prediction,
        decryptors: outcome.stats.decryptors.clone(),
        messages: outcome.stats.messages,
        total_bytes: outcome.stats.total_bytes,
        per_teacher_bytes: outcome.stats.per_teacher_bytes.clone(),
        estimated_bytes_per_teacher: estimate_traffic(config.class_count, keys.public.bit_length()),
        honest_noise_sufficient: outcome.honest_noise_sufficient,
        config,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let dataset = if args.dataset == "synthetic" {
        DatasetSource::Synthetic {
            d: args.dimensions,
            separation: args.separation,
        }
    } else {
        DatasetSource::Csv {
            path: PathBuf::from(&args.dataset),
            label_column: args.label_column.clone(),
        }
    };
    let spec = ExperimentSpec {
        mechanisms: args.mechanism,
        epsilons: args.epsilon,
        deltas: args.delta,
        gamma: args.gamma,
        n_teachers: args.teachers,
        class_count: args.classes,
        dataset,
        train_size: args.train_size,
        test_size: args.test_size,
        seeds: (0..args.seeds).collect(),
        key_bits: args.key_bits,
        output: Some(args.csv),
    };
    let rows = run_comparison(&spec)?;
    let out = spec.output.as_deref().expect("set above");
    std::fs::write(out, to_csv(&rows)).with_context(|| format!("writing {}", out.display()))?;
    for line in summary(&rows) {
        println!("{line}");
    }
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct AuditOutput {
    grid: Vec<AuditRow>,
    distributed: Vec<DpAuditReport>,
    empirical: Vec<DpAuditReport>,
    collusion: Vec<CollusionRow>,
}

#[derive(Serialize)]
struct CollusionRow {
    mechanism: Mechanism,
    epsilon: f64,
    delta: f64,
    gamma: f64,
    n_parties: usize,
    compromised: usize,
    pass: bool,
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

/// Returns whether every audited check passed.
fn audit(args: AuditArgs) -> Result<bool> {
    let mut all_pass = true;
    println!(
        "{:>5} {:>7} | {:>6} {:>6} {:>10} {:>4} | {:>9} {:>9} {:>8} {:>4} | {:>10} {:>6} {:>4} | {:>10}",
        "eps", "delta", "n_bm", "n_64", "bm_delta", "", "sigma", "sigma_cl", "resid", "", "dg_delta", "ratio", "", "flip_delta"
    );
    let grid = audit_grid(&args.epsilon, &args.delta)?;
    for row in &grid {
        println!(
            "{:>5} {:>7} | {:>6} {:>6} {:>10.3e} {:>4} | {:>9.4} {:>9.4} {:>8.1e} {:>4} | {:>10.3e} {:>6.3} {:>4} | {:>10.3e}",
            row.epsilon,
            row.delta,
            row.bm_tosses,
            row.baseline_tosses,
            row.bm_delta,
            mark(row.bm_pass() && row.tighter_than_baseline()),
            row.sigma_analytic,
            row.sigma_classical,
            row.sigma_residual,
            mark(row.sigma_pass()),
            row.dg_delta,
            row.dg_delta / row.delta,
            mark(row.dg_within_slack()),
            row.bm_flip_delta,
        );
        all_pass &= row.pass();
    }
    println!(
        "bm: exact delta at the calibrated tosses and below 64 ln(2/delta)/eps^2; dg: within {:.0}% of delta; flip: informational",
        100.0 * DG_DISCRETIZATION_SLACK
    );

    println!("\ndistributed plans: {} teachers, gamma = {}", args.teachers, args.gamma);
    let mut distributed = Vec::new();
    let mut collusion = Vec::new();
    for &epsilon in &args.epsilon {
        for &delta in &args.delta {
            let params = PrivacyParams::new(epsilon, delta, args.gamma)?;
            for mechanism in [Mechanism::Binomial, Mechanism::DiscreteGaussian] {
                let plan = NoisePlan::calibrate(mechanism, &params, args.teachers)?;
                let report = distributed_plan_audit(&plan, &params);
                println!(
                    "  {mechanism:<3} eps={epsilon:<4} delta={delta:<7} honest-sum delta {:.3e} ({:.3} x delta) {}",
                    report.delta_actual,
                    report.delta_actual / delta,
                    mark(report.pass)
                );
                all_pass &= report.pass;
                distributed.push(report);

                let max_colluders = ((1.0 - args.gamma) * args.teachers as f64 + 1e-9).floor() as usize;
                let compromised = (1..=max_colluders).collect();
                let pass = collusion_residual_check(&plan, args.teachers, &compromised);
                all_pass &= pass;
                collusion.push(CollusionRow {
                    mechanism,
                    epsilon,
                    delta,
                    gamma: args.gamma,
                    n_parties: args.teachers,
                    compromised: max_colluders,
                    pass,
                });
            }
        }
    }
    let collusion_failures = collusion.iter().filter(|c| !c.pass).count();
    println!(
        "collusion residual check with floor((1 - gamma) N) compromised: {} of {} plans {}",
        collusion.len() - collusion_failures,
        collusion.len(),
        mark(collusion_failures == 0)
    );

    let mut empirical = Vec::new();
    if args.trials > 0 {
        let params = PrivacyParams::new(1.0, 1e-3, 1.0)?;
        let plan = NoisePlan::calibrate(Mechanism::Binomial, &params, 3)?;
        let sampler = plan.sampler();
        let zero = ShareSampler::Binomial(0);
        let one_hot = |k| VoteVector::one_hot(k, 2);
        let d = vec![one_hot(0)?, one_hot(0)?, one_hot(1)?];
        let d_prime = vec![one_hot(0)?, one_hot(1)?, one_hot(1)?];
        let mut rng = derive_rng(args.seed, Stream::Noise, 0);
        let calibrated = empirical_dp_test(
            |v, r| noisy_argmax_plaintext(v, &sampler, r),
            &d,
            &d_prime,
            1.0,
            1e-3,
            args.trials,
            &mut rng,
        );
        let control = empirical_dp_test(
            |v, r| noisy_argmax_plaintext(v, &zero, r),
            &d,
            &d_prime,
            1.0,
            1e-3,
            args.trials,
            &mut rng,
        );
        println!(
            "\nempirical (N=3, c=2, eps=1, delta=1e-3, {} trials): calibrated excess {:.2e} <= {:.2e} {}; zero-noise control excess {:.2} {}",
            args.trials,
            calibrated.delta_actual,
            calibrated.delta_claimed + calibrated.tolerance,
            mark(calibrated.pass),
            control.delta_actual,
            if control.pass { "NOT DETECTED" } else { "detected" }
        );
        all_pass &= calibrated.pass && !control.pass;
        empirical.push(calibrated);
        empirical.push(control);
    }

    if let Some(path) = &args.json {
        let output = AuditOutput {
            grid,
            distributed,
            empirical,
            collusion,
        };
        std::fs::write(path, serde_json::to_string_pretty(&output)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("\naudit {}", if all_pass { "passed" } else { "FAILED" });
    Ok(all_pass)
}

fn time_per_call<T>(reps: u32, mut f: impl FnMut() -> T) -> f64 {
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(f());
    }
    start.elapsed().as_secs_f64() * 1e3 / reps as f64
}

fn bench(args: BenchArgs) -> Result<()> {
    if args.reps == 0 {
        bail!("--reps must be positive");
    }
    let c = args.classes;
    println!(
        "{:>4} {:>4} {:>3} {:>5} | {:>14} {:>14} | {:>12} {:>12} | {:>10} {:>10}",
        "N", "t", "c", "bits", "teacher enc ms", "teacher dec ms", "agg sum ms", "combine ms", "est bytes", "meas bytes"
    );
    for &n in &args.teachers {
        let t = default_threshold(n);
        let keys = deal_threshold_keys(args.key_bits, n, t, &mut derive_rng(args.seed, Stream::Keys, n as u64))?;
        let pk = &keys.public;
        let mut rng = derive_rng(args.seed, Stream::Encryption, n as u64);
        let vote = VoteVector::one_hot(0, c)?;
        let plan = NoisePlan::noiseless(n);

        let enc_ms = time_per_call(args.reps, || {
            dppp_core::protocol::encode_noisy_vote(1, &vote, &plan, pk, &mut rng).expect("encrypts")
        });
        let encrypted: Vec<_> = (1..=n)
            .map(|i| dppp_core::protocol::encode_noisy_vote(i, &vote, &plan, pk, &mut rng))
            .collect::<Result<_, _>>()?;
        let sum_ms = time_per_call(args.reps, || aggregate_votes(pk, &encrypted).expect("aggregates"));
        let aggregate = aggregate_votes(pk, &encrypted)?;
        let dec_ms = time_per_call(args.reps, || {
            aggregate
                .iter()
                .map(|ct| keys.shares[0].partial_decrypt(pk, &keys.config, ct))
                .collect::<Vec<_>>()
        });
        let partials: Vec<Vec<_>> = aggregate
            .iter()
            .map(|ct| keys.shares[..t].iter().map(|s| s.partial_decrypt(pk, &keys.config, ct)).collect())
            .collect();
        let combine_ms = time_per_call(args.reps, || {
            partials
                .iter()
                .map(|p| pk.combine(&keys.config, p).expect("combines"))
                .collect::<Vec<_>>()
        });

        let config = RunConfig::new(n, t, c, Mechanism::Binomial, args.seed);
        let votes = vec![vote.clone(); n];
        let outcome = run_protocol(&keys, &config, &votes, &plan)?;
        let measured = outcome.stats.per_teacher_bytes[&outcome.stats.decryptors[0]];
        println!(
            "{:>4} {:>4} {:>3} {:>5} | {:>14.3} {:>14.3} | {:>12.3} {:>12.3} | {:>10} {:>10}",
            n,
            t,
            c,
            args.key_bits,
            enc_ms,
            dec_ms,
            sum_ms,
            combine_ms,
            estimate_traffic(c, args.key_bits),
            measured
        );
    }
    println!("teacher columns cover one query (c encryptions or c partial decryptions); bytes are per decrypting teacher");
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Keygen(args) => keygen(args).map(|_| true),
        Command::Calibrate(args) => calibrate(args).map(|_| true),
        Command::Simulate(args) => simulate(args).map(|_| true),
        Command::Compare(args) => compare(args).map(|_| true),
        Command::Audit(args) => audit(args),
        Command::Bench(args) => bench(args).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use dppp_core::ensemble::{synth_blobs, FrameworkKind, FrameworkOptions, TrainedEnsemble};
use dppp_core::mechanisms::{Mechanism, PrivacyParams};
use dppp_core::seeding::{derive_rng, Stream};

const EPSILONS: [f64; 6] = [0.01, 0.05, 0.1, 0.5, 1.0, 2.0];

fn mean_accuracy(kind: FrameworkKind, mechanism: Mechanism, seeds: u64) -> Vec<f64> {
    let options = FrameworkOptions::new(mechanism);
    let mut totals = vec![0.0; EPSILONS.len()];
    for seed in 0..seeds {
        let data = synth_blobs(400, 3, 5, 10.0, seed).unwrap();
        let (train, test) = data.split(0.75, &mut derive_rng(seed, Stream::Partition, 1));
        let eval = TrainedEnsemble::train(&train, 20, seed).unwrap().evaluate_on(&test).unwrap();
        for (total, &eps) in totals.iter_mut().zip(&EPSILONS) {
            let params = PrivacyParams::new(eps, 1e-3, 1.0).unwrap();
            *total += eval.accuracy(kind, &params, &options, seed).unwrap();
        }
    }
    totals.iter().map(|t| t / seeds as f64).collect()
}

/// Spearman rank correlation between the epsilon grid (already sorted) and `values`.
fn spearman_with_grid(values: &[f64]) -> f64 {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    let mean = (n - 1) as f64 / 2.0;
    let (mut num, mut var_x, mut var_y) = (0.0, 0.0, 0.0);
    for (x, y) in ranks.iter().enumerate() {
        let (dx, dy) = (x as f64 - mean, y - mean);
        num += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    num / (var_x * var_y).sqrt()
}

#[test]
fn spearman_oracle() {
    assert!((spearman_with_grid(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
    assert!((spearman_with_grid(&[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    // Ranks (0.5, 0.5, 2) against (0, 1, 2).
    assert!((spearman_with_grid(&[1.0, 1.0, 5.0]) - 0.866_025_403_784_438_6).abs() < 1e-12);
}

#[test]
fn private_accuracy_rises_with_epsilon() {
    for mechanism in [Mechanism::Binomial, Mechanism::DiscreteGaussian] {
        for kind in [FrameworkKind::Ldp, FrameworkKind::Standalone] {
            let acc = mean_accuracy(kind, mechanism, 10);
            let rho = spearman_with_grid(&acc);
            assert!(rho >= 0.8, "{kind:?}/{mechanism}: rho {rho:.2} over {acc:?}");
        }
    }
    let pate = mean_accuracy(FrameworkKind::Pate, Mechanism::Binomial, 10);
    assert!(spearman_with_grid(&pate) >= 0.8, "PATE: {pate:?}");
}

#[test]
fn non_private_frameworks_ignore_epsilon() {
    for kind in [FrameworkKind::Centralized, FrameworkKind::DistributedNonPrivate] {
        let acc = mean_accuracy(kind, Mechanism::Binomial, 3);
        assert!(acc.windows(2).all(|w| w[0] == w[1]), "{kind:?}: {acc:?}");
    }
}

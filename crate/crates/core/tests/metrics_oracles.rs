//! Metrics recomputed by brute force.

use nalgebra::{Matrix6, SMatrix, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharedctl::koopman::AffineLinearModel;
use sharedctl::metrics::{model_similarity, SIMILARITY_MEAN_FLOOR};

/// Per-entry population std over |mean|, in percent, averaged over entries
/// whose mean clears the floor.
fn brute_force(entries: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0;
    for values in entries {
        let n = values.len() as f64;
        let mut mean = 0.0;
        for v in values {
            mean += v;
        }
        mean /= n;
        if mean.abs() < SIMILARITY_MEAN_FLOOR {
            continue;
        }
        let mut var = 0.0;
        for v in values {
            var += (v - mean) * (v - mean);
        }
        sum += (var / n).sqrt() / mean.abs() * 100.0;
        count += 1;
    }
    sum / count as f64
}

fn random_model(rng: &mut ChaCha8Rng) -> AffineLinearModel {
    // a few structural zeros and a few near-floor entries, like real fits
    let mut pick = |i: usize| match i % 7 {
        0 => 0.0,
        1 => rng.random_range(-1e-7..1e-7),
        _ => rng.random_range(-2.0..2.0),
    };
    AffineLinearModel {
        a: Matrix6::from_fn(|i, j| pick(i * 6 + j)),
        b: SMatrix::<f64, 6, 2>::from_fn(|i, j| pick(i * 2 + j + 3)),
        c: Vector6::zeros(),
    }
}

#[test]
fn similarity_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for set in 0..5 {
        let models: Vec<_> = (0..3 + set).map(|_| random_model(&mut rng)).collect();
        let a_entries: Vec<Vec<f64>> =
            (0..36).map(|k| models.iter().map(|m| m.a[(k / 6, k % 6)]).collect()).collect();
        let b_entries: Vec<Vec<f64>> =
            (0..12).map(|k| models.iter().map(|m| m.b[(k / 2, k % 2)]).collect()).collect();
        let got = model_similarity(&models).unwrap();
        let (want_a, want_b) = (brute_force(&a_entries), brute_force(&b_entries));
        assert!((got.std_pct_a - want_a).abs() < 1e-10 * want_a.max(1.0), "set {set}: {} vs {want_a}", got.std_pct_a);
        assert!((got.std_pct_b - want_b).abs() < 1e-10 * want_b.max(1.0), "set {set}: {} vs {want_b}", got.std_pct_b);
    }
}

mod common;

use common::*;
use ergolip_core::processes::{ArProcess, MarkovProcess, Process, ProcessError};
use ergolip_core::Matrix;
use proptest::prelude::*;

#[test]
fn beta_matches_matrix_powers() {
    for seed in 0..6 {
        let p = random_kernel_chain(seed, 2 + seed as usize % 3, 1 + seed as usize % 2);
        for (m, reference) in brute_force_betas(&p, 20).into_iter().enumerate() {
            let beta = p.beta_coefficient(m as u64 + 1).unwrap();
            assert!((beta - reference).abs() < 1e-12, "seed {seed} m {}: {beta} vs {reference}", m + 1);
        }
    }
}

#[test]
fn stationary_law_matches_svd_null_vector() {
    for seed in 10..16 {
        let p = random_kernel_chain(seed, 3, 2);
        let reference = reference_stationary(&context_chain(&p));
        for (a, b) in p.stationary_distribution().unwrap().iter().zip(reference.iter()) {
            approx::assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}

#[test]
fn beta_decays_geometrically() {
    for seed in 20..24 {
        let p = random_kernel_chain(seed, 3, 1);
        let betas: Vec<f64> = (1..=80).map(|m| p.beta_coefficient(m).unwrap()).collect();
        for w in betas.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        // fitted rate on the tail where the values are still well above rounding
        let tail: Vec<(f64, f64)> =
            (21..=80).zip(&betas[20..]).filter(|(_, b)| **b > 1e-13).map(|(m, b)| (m as f64, b.ln())).collect();
        if tail.len() >= 5 {
            let n = tail.len() as f64;
            let mx = tail.iter().map(|t| t.0).sum::<f64>() / n;
            let my = tail.iter().map(|t| t.1).sum::<f64>() / n;
            let slope = tail.iter().map(|t| (t.0 - mx) * (t.1 - my)).sum::<f64>()
                / tail.iter().map(|t| (t.0 - mx).powi(2)).sum::<f64>();
            assert!(slope < 0.0, "seed {seed}: slope {slope}");
        }
    }
}

#[test]
fn empirical_frequencies_match_stationary_law() {
    let p = random_kernel_chain(5, 3, 1);
    let t = 100_000;
    let traj = p.sample_trajectory(t, 42).unwrap();
    let marginal = p.state_marginal().unwrap();
    // crude effective sample size: chains here mix within a few steps
    let slack: f64 = 10.0;
    for (s, pi) in marginal.iter().enumerate() {
        let freq = traj.states().unwrap().iter().filter(|&&x| x == s).count() as f64 / t as f64;
        let sigma = (pi * (1.0 - pi) / t as f64).sqrt();
        assert!((freq - pi).abs() < 3.0 * sigma * slack.sqrt(), "state {s}: {freq} vs {pi}");
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let p = stay09();
    assert_eq!(p.sample_trajectory(500, 9).unwrap(), p.sample_trajectory(500, 9).unwrap());
    assert_ne!(p.sample_trajectory(500, 9).unwrap().values(), p.sample_trajectory(500, 10).unwrap().values());
}

#[test]
fn validation_names_the_row() {
    let err = MarkovProcess::builder(Matrix::from_rows(&[[0.5, 0.5], [0.7, 0.2]]), vec![vec![0.0], vec![1.0]], 1)
        .build()
        .unwrap_err();
    assert!(matches!(err, ProcessError::RowSum { row: 1, .. }));
    assert!(err.to_string().contains("row 1"));
    let err = MarkovProcess::builder(Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]), vec![vec![0.0], vec![1.0]], 1)
        .build()
        .unwrap_err();
    assert!(matches!(err, ProcessError::NotErgodic { .. }));
}

#[test]
fn two_cycle_alternates() {
    let p = MarkovProcess::two_cycle();
    let traj = p.sample_trajectory(20, 3).unwrap();
    for w in traj.states().unwrap().windows(2) {
        assert_ne!(w[0], w[1]);
    }
    assert_eq!(p.stationary_distribution().unwrap(), &[0.5, 0.5]);
}

#[test]
fn autoregression_stays_in_cube() {
    let ar = ArProcess::new(vec![0.6, 0.2], 0.3, 0.5, vec![0.1, 0.9]).unwrap();
    let traj = Process::from(ar).sample(5_000, 1).unwrap();
    assert!(traj.values().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(ArProcess::new(vec![0.7, 0.4], 0.1, 0.5, vec![0.5, 0.5]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn beta_in_unit_interval_and_nonincreasing(stay0 in 0.05f64..0.95, stay1 in 0.05f64..0.95, m in 1u64..40) {
        let p = MarkovProcess::two_state(stay0, stay1).unwrap();
        let (b, b_next) = (p.beta_coefficient(m).unwrap(), p.beta_coefficient(m + 1).unwrap());
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!(b_next <= b + 1e-15);
    }

    #[test]
    fn stationary_law_is_fixed(seed in 0u64..1000) {
        let p = random_kernel_chain(seed, 2 + (seed % 3) as usize, 1 + (seed % 2) as usize);
        let pi = p.stationary_distribution().unwrap();
        let next = p.context_matrix().tr_mul_vec(pi);
        for (a, b) in pi.iter().zip(&next) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

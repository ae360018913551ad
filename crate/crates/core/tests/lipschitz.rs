mod common;

use common::*;
use ergolip_core::lipschitz::{
    empirical_lipschitz, mcshane_fit, mlp_fit, model_lipschitz_bound, project_spectral, random_lipschitz_fn,
    spectral_norm, MlpConfig, Samples, Schedule,
};
use ergolip_core::oracle::LossFn;
use ergolip_core::rng;
use ergolip_core::{Matrix, Predictor};
use proptest::prelude::*;
use rand::Rng;

fn random_samples(seed: u64, dim: usize, n: usize) -> Samples {
    let mut r = rng::seeded(seed);
    let mut s = Samples::new(dim, 1);
    for _ in 0..n {
        let x: Vec<f64> = (0..dim).map(|_| r.gen()).collect();
        s.push(&x, &[r.gen::<f64>()]);
    }
    s
}

#[test]
fn fit_beats_random_candidates_for_every_loss() {
    let mut r = rng::seeded(5);
    for (i, loss) in [LossFn::squared(), LossFn::absolute(), LossFn::pinball(0.7).unwrap()].into_iter().enumerate() {
        for dim in 1..=2 {
            let samples = random_samples(10 * i as u64 + dim as u64, dim, 25);
            let fit = mcshane_fit(&samples, 1.5, &loss).unwrap();
            let fit_loss = samples.empirical_loss(&fit, &loss);
            for _ in 0..100 {
                let g = random_lipschitz_fn(&mut r, dim, 8, 1.5).unwrap();
                // subgradient fits are approximate for nonsmooth losses
                let tol = if matches!(loss.kind(), ergolip_core::oracle::LossKind::Squared) { 1e-6 } else { 1e-3 };
                assert!(fit_loss <= samples.empirical_loss(&g, &loss) + tol, "{loss:?} dim {dim}");
            }
        }
    }
}

#[test]
fn nested_budgets_never_lose() {
    let loss = LossFn::squared();
    for seed in 0..5 {
        let samples = random_samples(seed, 2, 30);
        let mut previous = f64::INFINITY;
        for budget in [0.1, 0.3, 1.0, 3.0, 10.0] {
            let e = samples.empirical_loss(&mcshane_fit(&samples, budget, &loss).unwrap(), &loss);
            assert!(e <= previous + 1e-8, "budget {budget}: {e} > {previous}");
            previous = e;
        }
    }
}

#[test]
fn envelope_is_globally_lipschitz() {
    let mut r = rng::seeded(8);
    for dim in 1..=3 {
        let fit = mcshane_fit(&random_samples(dim as u64, dim, 40), 2.0, &LossFn::squared()).unwrap();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> =
            (0..10_000).map(|_| ((0..dim).map(|_| r.gen()).collect(), (0..dim).map(|_| r.gen()).collect())).collect();
        assert!(empirical_lipschitz(&fit, &pairs).unwrap() <= 2.0 + 1e-8);
    }
}

#[test]
fn projected_layers_respect_cap_by_svd() {
    let mut r = rng::seeded(3);
    for _ in 0..20 {
        let (rows, cols) = (r.gen_range(1..8), r.gen_range(1..8));
        let m = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-2.0..2.0)).collect());
        let reference = svd_norm(&m);
        assert!((spectral_norm(&m) - reference).abs() <= 1e-8 * reference.max(1.0));
        let cap = r.gen_range(0.1..1.5);
        assert!(svd_norm(&project_spectral(&m, cap)) <= cap + 1e-6);
    }
}

#[test]
fn mlp_respects_its_certificate() {
    let samples = random_samples(4, 2, 60);
    for depth in 1..=3 {
        let cfg = MlpConfig { budget: 1.5, depth, epochs: 40, ..MlpConfig::default() };
        let net = mlp_fit(&samples, &cfg, &LossFn::squared()).unwrap();
        let bound = model_lipschitz_bound(&net);
        assert!(bound <= 1.5 + 1e-6);
        let product: f64 = net.layers().iter().map(|l| svd_norm(&l.weights)).product();
        assert!(product <= 1.5 + 1e-6);
        let mut r = rng::seeded(depth as u64);
        let pairs: Vec<([f64; 2], [f64; 2])> = (0..10_000).map(|_| ([r.gen(), r.gen()], [r.gen(), r.gen()])).collect();
        assert!(empirical_lipschitz(&net, &pairs).unwrap() <= bound + 1e-6);
    }
}

#[test]
fn mlp_tracks_envelope_on_smooth_target() {
    let mut s = Samples::new(1, 1);
    for i in 0..50 {
        let x = i as f64 / 49.0;
        s.push(&[x], &[0.2 + 0.6 * x * x]);
    }
    let loss = LossFn::squared();
    let env = samples_loss(&s, &mcshane_fit(&s, 2.0, &loss).unwrap(), &loss);
    let cfg = MlpConfig { budget: 2.0, depth: 2, width: 16, epochs: 400, ..MlpConfig::default() };
    let mlp = samples_loss(&s, &mlp_fit(&s, &cfg, &loss).unwrap(), &loss);
    assert!(env <= mlp + 1e-9);
    assert!(mlp < 2e-3, "mlp loss {mlp}");
}

fn samples_loss<P: Predictor>(s: &Samples, f: &P, loss: &LossFn) -> f64 {
    s.empirical_loss(f, loss)
}

#[test]
fn schedule_grows_slowly() {
    let s = Schedule::new(1.0, 2).unwrap();
    let values: Vec<f64> = (1..=9).map(|k| s.value(10f64.powi(k))).collect();
    for w in values.windows(2) {
        assert!(w[1] >= w[0]);
    }
    // L_T^{m+2} log(T) / T must shrink
    let ratio = |t: f64| s.value(t).powi(4) * t.ln() / t;
    assert!(ratio(1e9) < ratio(1e3));
    assert_eq!(s.value(2.0), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn fitted_values_feasible(seed in 0u64..10_000, budget in 0.05f64..5.0, dim in 1usize..4) {
        let fit = mcshane_fit(&random_samples(seed, dim, 15), budget, &LossFn::squared()).unwrap();
        let worst = fit.worst_violation().map_or(0.0, |w| w.2);
        prop_assert!(worst <= 1e-8);
    }

    #[test]
    fn duplicates_fit_their_mean(y0 in 0.0f64..1.0, y1 in 0.0f64..1.0) {
        let s = Samples::from_pairs(1, 1, [(&[0.3][..], &[y0][..]), (&[0.3][..], &[y1][..])]);
        let f = mcshane_fit(&s, 1.0, &LossFn::squared()).unwrap();
        prop_assert!((f.predict(&[0.3])[0] - 0.5 * (y0 + y1)).abs() < 1e-12);
    }
}

use ergolip::config::{FitterKind, ProcessSpec};
use ergolip::ExperimentConfig;
use ergolip_core::harness::RetrainPolicy;
use ergolip_core::oracle::LossKind;
use proptest::prelude::*;

fn stochastic_rows(raw: Vec<Vec<u32>>) -> Vec<Vec<f64>> {
    raw.into_iter()
        .map(|r| {
            let total: u32 = r.iter().sum::<u32>().max(1);
            let mut row: Vec<f64> = r.iter().map(|&v| f64::from(v) / f64::from(total)).collect();
            let rest: f64 = row[1..].iter().sum();
            row[0] = 1.0 - rest;
            row
        })
        .collect()
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    let kernel = prop::collection::vec(prop::collection::vec(1u32..50, 3), 3);
    (
        kernel,
        prop_oneof![Just(LossKind::Squared), Just(LossKind::Absolute), (0.01f64..0.99).prop_map(LossKind::Pinball)],
        0.01f64..10.0,
        prop::option::of(0.001f64..1.0),
        prop_oneof![Just(RetrainPolicy::Doubling), (1usize..100).prop_map(RetrainPolicy::Every)],
        any::<bool>(),
        prop::collection::vec(any::<u64>(), 1..6),
        10usize..100_000,
        prop::option::of(0usize..5),
    )
        .prop_map(|(kernel, loss, l0, frozen, retrain, mlp, seeds, horizon, m)| {
            let mut c = ExperimentConfig::with_process(ProcessSpec::Markov {
                order: 1,
                kernel: stochastic_rows(kernel),
                embedding: vec![vec![0.0], vec![0.5], vec![1.0]],
                ergodic: true,
            });
            c.loss = loss;
            c.strategy.l0 = l0;
            c.strategy.frozen = frozen;
            c.strategy.retrain = retrain;
            c.strategy.fitter = if mlp { FitterKind::Mlp } else { FitterKind::Envelope };
            c.strategy.histogram = mlp;
            c.seeds = seeds;
            c.horizon = horizon;
            c.bounds.m = m;
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emit_parse_emit(c in config()) {
        let text = c.emit();
        let back: ExperimentConfig = text.parse().unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.emit(), text);
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let c = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(c.build_process().is_ok());
        assert_eq!(c.emit().parse::<ExperimentConfig>().unwrap(), c);
        count += 1;
    }
    assert!(count >= 5);
}

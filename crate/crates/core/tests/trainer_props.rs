use fairalm::data::{self, synth, Dataset, SynthSpec};
use fairalm::diffcore::Architecture;
use fairalm::trainers::{train, Method, TrainConfig};
use fairalm::Constraint;
use proptest::prelude::*;

const CONSTRAINTS: [Constraint; 3] = [
    Constraint::EqualOpportunity(true),
    Constraint::EqualOpportunity(false),
    Constraint::DemographicParity,
];

fn small_data(seed: u64) -> (Dataset, Dataset) {
    let spec = SynthSpec {
        n_per_cell: [[40, 20], [20, 40]],
        dim: 3,
        bias_strength: 0.7,
        separation: 2.0,
        seed,
    };
    data::split(&synth(&spec).unwrap(), 0.25, seed).unwrap()
}

fn config(method: Method, mlp: bool, k: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        method,
        architecture: if mlp { Architecture::Mlp { hidden: 4 } } else { Architecture::Linear },
        epochs: 3,
        batch_size: 16,
        inner_sgd_passes: 2,
        constraint: CONSTRAINTS[k],
        seed,
        ..TrainConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn training_is_a_function_of_the_seed(
        m in 0usize..6,
        mlp in any::<bool>(),
        k in 0usize..3,
        seed in 0u64..1000,
    ) {
        let (tr, te) = small_data(seed);
        let c = config(Method::ALL[m], mlp, k, seed);
        let a = train(&c, &tr, &te).unwrap();
        let b = train(&c, &tr, &te).unwrap();
        prop_assert_eq!(a.profile.to_csv_string(), b.profile.to_csv_string());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn zero_step_reduces_every_method_to_plain_risk(
        m in 0usize..6,
        mlp in any::<bool>(),
        k in 0usize..3,
        seed in 0u64..1000,
    ) {
        let (tr, te) = small_data(seed);
        let c = TrainConfig { eta: 0.0, ..config(Method::ALL[m], mlp, k, seed) };
        let base = train(&config(Method::Unconstrained, mlp, k, seed), &tr, &te).unwrap();
        let got = train(&c, &tr, &te).unwrap();
        for (a, b) in got.profile.epochs.iter().zip(&base.profile.epochs) {
            prop_assert_eq!(&a.weights, &b.weights);
        }
        prop_assert_eq!(got.predictor.weights(), base.predictor.weights());
    }

    #[test]
    fn fairalm_rounds_follow_the_dual_recursion(
        eta in 0.0f64..2.0,
        beta in 0.0f64..0.05,
        k in 0usize..3,
        seed in 0u64..1000,
    ) {
        let (tr, te) = small_data(seed);
        let c = TrainConfig { eta, eta_beta: beta, ..config(Method::FairAlm, false, k, seed) };
        let out = train(&c, &tr, &te).unwrap();
        let mut step = eta;
        let mut lambda = 0.0;
        for (i, r) in out.profile.rounds.iter().enumerate() {
            prop_assert_eq!(r.round, i as u64 + 1);
            prop_assert_eq!(r.eta, step);
            prop_assert_eq!(&r.lambda_before, &vec![lambda]);
            let expected = match (r.mu_hat[0], r.mu_hat[1]) {
                (Some(a), Some(b)) if !r.dual_skipped => lambda + step * (a - b),
                _ => {
                    prop_assert!(r.dual_skipped);
                    lambda
                }
            };
            prop_assert_eq!(&r.lambda_after, &vec![expected]);
            if let Some((obj, bound)) = r.jensen_pair() {
                let (a, b) = (r.mu_hat[0].unwrap(), r.mu_hat[1].unwrap());
                let slack = step * (a + b - 0.5 * (a - b).powi(2));
                prop_assert!((obj - bound - slack).abs() <= 1e-12 * (1.0 + obj.abs()));
                if a <= 2.0 && b <= 2.0 {
                    prop_assert!(obj >= bound - 1e-12);
                }
            }
            lambda = expected;
            step *= 1.0 + beta;
        }
        prop_assert_eq!(out.profile.last().eta, step);
        prop_assert_eq!(&out.profile.last().lambdas, &vec![lambda]);
    }

    #[test]
    fn proxy_multipliers_respect_the_budget(
        budget in 0.01f64..20.0,
        eta in 0.0f64..10.0,
        seed in 0u64..1000,
    ) {
        let (tr, te) = small_data(seed);
        let c = TrainConfig { eta, budget, ..config(Method::ProxyLagrangian, false, 0, seed) };
        let out = train(&c, &tr, &te).unwrap();
        for r in &out.profile.rounds {
            prop_assert!(r.lambda_after.iter().all(|&l| l >= 0.0));
            prop_assert!(r.lambda_after.iter().sum::<f64>() <= budget * (1.0 + 1e-12));
        }
    }

    #[test]
    fn lagrangian_multipliers_stay_nonnegative(
        eta in 0.0f64..10.0,
        epsilon in 0.0f64..0.2,
        seed in 0u64..1000,
    ) {
        let (tr, te) = small_data(seed);
        let c = TrainConfig { eta, epsilon, ..config(Method::Lagrangian, false, 0, seed) };
        let out = train(&c, &tr, &te).unwrap();
        for r in &out.profile.rounds {
            prop_assert!(r.lambda_after.iter().all(|&l| l >= 0.0));
        }
    }
}

#[test]
fn loose_tolerance_keeps_the_lagrangian_inactive() {
    let (tr, te) = small_data(9);
    let base = train(&config(Method::Unconstrained, false, 0, 9), &tr, &te).unwrap();
    let c = TrainConfig {
        epsilon: 1e6,
        ..config(Method::Lagrangian, false, 0, 9)
    };
    let got = train(&c, &tr, &te).unwrap();
    assert!(got.profile.rounds.iter().all(|r| r.lambda_after == vec![0.0, 0.0]));
    assert_eq!(got.predictor.weights(), base.predictor.weights());
}

#[test]
fn profile_records_every_epoch_and_round() {
    let (tr, te) = small_data(4);
    let c = config(Method::FairAlm, true, 2, 4);
    let out = train(&c, &tr, &te).unwrap();
    let per_epoch = tr.len().div_ceil(c.batch_size);
    assert_eq!(out.profile.rounds.len(), per_epoch * c.epochs);
    assert_eq!(out.profile.epochs.len(), c.epochs);
    assert_eq!(out.profile.last().weights, out.predictor.weights());
    for (i, r) in out.profile.rounds.iter().enumerate() {
        assert_eq!(r.epoch, i / per_epoch + 1);
    }
}

//! Property tests over randomly generated models, portfolios and quotes.

use proptest::prelude::*;

use corrstress::credit::{self, CdsPosition, CdsQuote};
use corrstress::factor_model::{build_distances, BetaVector, CorrelationModel, FactorExposure};
use corrstress::numerics;
use corrstress::portfolio_risk::{self, PortfolioWeights};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 128,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

prop_compose! {
    fn exposure_set()(
        m in 1usize..=4,
        n in 2usize..=8,
        seed in any::<u64>(),
    ) -> (Vec<FactorExposure>, usize) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let exposures = (0..n)
            .map(|_| {
                FactorExposure::new(
                    (0..m)
                        .map(|_| {
                            if rng.random_bool(0.5) {
                                rng.random_range(0..2) as f64
                            } else {
                                rng.random_range(-5.0..12.0)
                            }
                        })
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        (exposures, m)
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn correlation_matrices_are_psd_with_unit_diagonal(
        (exposures, m) in exposure_set(),
        beta_seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(beta_seed);
        let betas: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..3.0)).collect();
        let distances = build_distances(&exposures, true).unwrap();
        let corr = CorrelationModel::new(BetaVector::new(betas).unwrap(), distances)
            .unwrap()
            .matrix();
        for i in 0..corr.nrows() {
            prop_assert_eq!(corr[(i, i)], 1.0);
            for j in 0..corr.ncols() {
                prop_assert!(corr[(i, j)] > 0.0 && corr[(i, j)] <= 1.0);
            }
        }
        let min_eig = corr
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        prop_assert!(min_eig >= -1e-10, "min eigenvalue {}", min_eig);
    }

    #[test]
    fn lambert_w_satisfies_its_defining_identity(z in -0.36_f64..1e5) {
        let w = numerics::lambert_w0(z).unwrap();
        let residual = (w * w.exp() - z).abs();
        prop_assert!(residual <= 1e-12 * z.abs().max(1.0), "z {z}: residual {residual}");
    }

    #[test]
    fn var_scales_linearly_in_volatility(
        lambda in 0.1_f64..5.0,
        vol in 0.01_f64..0.5,
        alpha in 0.51_f64..0.999,
    ) {
        let corr = nalgebra::DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.3 });
        let weights = PortfolioWeights::new(vec![0.5, 0.25, 0.25], 1.0).unwrap();
        let alpha = numerics::Probability::new(alpha).unwrap();
        let v1 = portfolio_risk::var_normal(
            &weights,
            &portfolio_risk::covariance(&corr, &[vol; 3]).unwrap(),
            alpha,
        )
        .unwrap();
        let v2 = portfolio_risk::var_normal(
            &weights,
            &portfolio_risk::covariance(&corr, &[vol * lambda; 3]).unwrap(),
            alpha,
        )
        .unwrap();
        prop_assert!((v2 - lambda * v1).abs() <= 1e-12 * v2.abs().max(1e-12));
    }

    #[test]
    fn pnl_weights_compose_to_the_direct_linear_pnl(
        notionals in prop::collection::vec(-5e7_f64..5e7, 2..6),
        spread_scale in 0.002_f64..0.05,
        return_scale in -0.05_f64..0.05,
    ) {
        let positions: Vec<CdsPosition> = notionals
            .iter()
            .enumerate()
            .filter(|(_, &a)| a.abs() > 1.0)
            .map(|(i, &a)| CdsPosition::new(format!("p{i}"), a).unwrap())
            .collect();
        prop_assume!(positions.len() >= 2);
        let quotes: Vec<CdsQuote> = positions
            .iter()
            .enumerate()
            .map(|(i, _)| {
                CdsQuote::new(spread_scale * (1.0 + 0.1 * i as f64), 0.4, 5.0, 0.02).unwrap()
            })
            .collect();
        let returns: Vec<f64> = positions
            .iter()
            .enumerate()
            .map(|(i, _)| return_scale * (1.0 - 0.2 * i as f64))
            .collect();
        match credit::pnl_weights(&positions, &quotes, 1e-4) {
            Ok(w) => {
                let sum: f64 = w.weights.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                let composed = w.pnl(&returns).unwrap();
                let direct = credit::linear_pnl(&positions, &quotes, &returns).unwrap();
                prop_assert!(
                    (composed - direct).abs() <= 1e-9 * direct.abs().max(1.0),
                    "composed {composed} vs direct {direct}"
                );
            }
            Err(corrstress::Error::Degenerate(_)) => {} // netted-out book
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
        }
    }

    #[test]
    fn rpv01_stays_within_its_bounds(
        spread in 0.0_f64..0.2,
        recovery in 0.0_f64..0.9,
        maturity in 0.25_f64..30.0,
        rate in 0.0_f64..0.1,
    ) {
        let quote = CdsQuote::new(spread, recovery, maturity, rate).unwrap();
        let value = credit::rpv01(&quote).unwrap();
        let hazard = spread / (1.0 - recovery);
        prop_assert!(value > 0.0);
        prop_assert!(value <= maturity + 1e-12);
        if rate + hazard > 0.0 {
            prop_assert!(value <= 1.0 / (rate + hazard) + 1e-12);
        }
    }
}

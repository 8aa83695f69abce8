#![allow(dead_code)] // not every test target uses every fixture helper

//! Shared synthetic-market fixture: a 32-instrument binary-factor universe
//! whose spread returns are simulated from a known coefficient vector, so
//! pipeline runs have a ground truth to recover.

use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use corrstress::factor_model::{build_distances, BetaVector, CorrelationModel, FactorExposure};

pub struct SyntheticMarket {
    pub dir: tempfile::TempDir,
    pub instruments: PathBuf,
    pub spreads: PathBuf,
    pub positions: PathBuf,
    pub true_beta: Vec<f64>,
}

/// Exposures for all 32 combinations of the five standard factors, using
/// realistic raw values (maturities 5/10, series 9/10) that normalise to
/// indicator distances.
pub fn standard_exposures() -> Vec<(String, [f64; 5])> {
    (0..32usize)
        .map(|i| {
            let bit = |k: usize| ((i >> k) & 1) as f64;
            let values = [
                bit(0),
                bit(1),
                5.0 + 5.0 * bit(2),
                9.0 + bit(3),
                bit(4),
            ];
            (format!("INST_{i:02}"), values)
        })
        .collect()
}

pub fn synthetic_market(days: usize, seed: u64, true_beta: &[f64; 5]) -> SyntheticMarket {
    let dir = tempfile::tempdir().expect("tempdir");
    let rows = standard_exposures();

    let mut instruments = String::from("id,isCDX,isIG,maturity_years,series,isIndex\n");
    for (id, v) in &rows {
        writeln!(
            instruments,
            "{id},{},{},{},{},{}",
            v[0], v[1], v[2], v[3], v[4]
        )
        .unwrap();
    }
    let instruments_path = dir.path().join("instruments.csv");
    std::fs::write(&instruments_path, instruments).unwrap();

    let exposures: Vec<FactorExposure> = rows
        .iter()
        .map(|(_, v)| FactorExposure::new(v.to_vec()).unwrap())
        .collect();
    let distances = build_distances(&exposures, true).unwrap();
    let model = CorrelationModel::new(
        BetaVector::new(true_beta.to_vec()).unwrap(),
        distances,
    )
    .unwrap();
    let chol = nalgebra::Cholesky::new(model.matrix()).expect("model correlation PD");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows.len();
    let mut levels: Vec<f64> = (0..n)
        .map(|_| 0.008 + 0.008 * rng.random::<f64>())
        .collect();
    let mut spreads = String::from("date,id,spread\n");
    let start = chrono::NaiveDate::from_ymd_opt(2010, 3, 1).unwrap();
    for t in 0..days {
        let date = start + chrono::Days::new(t as u64);
        for (j, (id, _)) in rows.iter().enumerate() {
            writeln!(spreads, "{date},{id},{:.10}", levels[j]).unwrap();
        }
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let shock = chol.l() * z;
        for j in 0..n {
            levels[j] *= 1.0 + 0.008 * shock[j];
        }
    }
    let spreads_path = dir.path().join("spreads.csv");
    std::fs::write(&spreads_path, spreads).unwrap();

    let mut positions = String::from("id,net_notional,side\n");
    for (id, _) in &rows {
        writeln!(positions, "{id},1000000,seller").unwrap();
    }
    let positions_path = dir.path().join("positions.csv");
    std::fs::write(&positions_path, positions).unwrap();

    SyntheticMarket {
        dir,
        instruments: instruments_path,
        spreads: spreads_path,
        positions: positions_path,
        true_beta: true_beta.to_vec(),
    }
}

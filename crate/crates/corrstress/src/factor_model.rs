//! Factor-distance correlation parameterisation and its calibration.
//!
//! Pairwise correlations are modelled as
//! `c_ij = exp(-(b_1 d_1[ij] + ... + b_m d_m[ij]))` where `d_k[ij]` is the
//! (optionally range-normalised) absolute difference between instruments
//! i and j in risk factor k and the coefficients `b_k >= 0` set the
//! de-correlation strength per factor. Coefficients are fitted by ordinary
//! least squares on the transformed correlations `-ln(c_ij)`, re-fitted on
//! a rolling window, and summarised into a distribution of coefficient
//! changes that drives the scenario machinery.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scenario::BetaDistribution;

/// Per-instrument vector of risk factor values. Binary flags are encoded
/// 0/1; scalar attributes (maturity in years, series number, ...) stay raw.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorExposure {
    values: Vec<f64>,
}

impl FactorExposure {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("factor exposures must be finite".into()));
        }
        Ok(FactorExposure { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Nonnegative factor coefficients, one per risk factor.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaVector {
    betas: Vec<f64>,
}

impl BetaVector {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Domain(format!(
                "factor coefficients must be finite and nonnegative, got {betas:?}"
            )));
        }
        Ok(BetaVector { betas })
    }

    /// All-equal coefficient vector, used by the homogeneous analysis.
    pub fn homogeneous(m: usize, beta: f64) -> Result<Self> {
        BetaVector::new(vec![beta; m])
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.betas
    }
}

/// Per-factor matrices of pairwise distances plus the normalisation ranges
/// that produced them. Entries lie in [0, 1] when normalised.
#[derive(Debug, Clone)]
pub struct DistanceMatrixSet {
    matrices: Vec<DMatrix<f64>>,
    ranges: Vec<f64>,
    n: usize,
}

impl DistanceMatrixSet {
    /// Wraps externally built distance matrices (symmetric, zero diagonal).
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>, ranges: Vec<f64>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::Invalid("at least one factor required".into()));
        }
        if ranges.len() != matrices.len() {
            return Err(Error::Dimension(format!(
                "{} matrices but {} ranges",
                matrices.len(),
                ranges.len()
            )));
        }
        let n = matrices[0].nrows();
        for m in &matrices {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension(
                    "distance matrices must be square and equally sized".into(),
                ));
            }
        }
        Ok(DistanceMatrixSet {
            matrices,
            ranges,
            n,
        })
    }

    /// Number of instruments.
    pub fn instrument_count(&self) -> usize {
        self.n
    }

    /// Number of risk factors.
    pub fn factor_count(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrix(&self, factor: usize) -> &DMatrix<f64> {
        &self.matrices[factor]
    }

    pub fn range(&self, factor: usize) -> f64 {
        self.ranges[factor]
    }

    /// Distance vector (one entry per factor) for an instrument pair.
    pub fn pair(&self, i: usize, j: usize) -> Vec<f64> {
        self.matrices.iter().map(|m| m[(i, j)]).collect()
    }

    /// Sub-set of instruments, preserving factor order and ranges.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.iter().any(|&i| i >= self.n) {
            return Err(Error::Dimension("selection index out of range".into()));
        }
        let matrices = self
            .matrices
            .iter()
            .map(|m| {
                DMatrix::from_fn(indices.len(), indices.len(), |r, c| {
                    m[(indices[r], indices[c])]
                })
            })
            .collect();
        Ok(DistanceMatrixSet {
            matrices,
            ranges: self.ranges.clone(),
            n: indices.len(),
        })
    }

    /// True when every pairwise distance is exactly 0 or 1 (indicator factors).
    pub fn is_binary(&self) -> bool {
        self.matrices
            .iter()
            .all(|m| m.iter().all(|&d| d == 0.0 || d == 1.0))
    }
}

/// Coefficients plus distances: everything needed to generate a matrix.
#[derive(Debug, Clone)]
pub struct CorrelationModel {
    pub beta: BetaVector,
    pub distances: DistanceMatrixSet,
}

impl CorrelationModel {
    pub fn new(beta: BetaVector, distances: DistanceMatrixSet) -> Result<Self> {
        if beta.len() != distances.factor_count() {
            return Err(Error::Dimension(format!(
                "{} coefficients vs {} factors",
                beta.len(),
                distances.factor_count()
            )));
        }
        Ok(CorrelationModel { beta, distances })
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        correlation_matrix(self)
    }
}

/// Builds per-factor pairwise distance matrices from raw exposures.
///
/// With `normalise` set, each factor's distances are divided by the
/// observed range of that factor so that all entries land in [0, 1];
/// constant factors produce all-zero matrices.
pub fn build_distances(exposures: &[FactorExposure], normalise: bool) -> Result<DistanceMatrixSet> {
    let n = exposures.len();
    if n == 0 {
        return Err(Error::Invalid("no exposures supplied".into()));
    }
    let m = exposures[0].len();
    if m == 0 {
        return Err(Error::Invalid("exposures carry no factors".into()));
    }
    for (i, e) in exposures.iter().enumerate() {
        if e.len() != m {
            return Err(Error::Dimension(format!(
                "exposure {i} has {} factors, expected {m}",
                e.len()
            )));
        }
    }
    let flags = vec![normalise; m];
    build_distances_with_flags(exposures, &flags)
}

/// As [`build_distances`] but with a per-factor normalisation flag.
pub fn build_distances_with_flags(
    exposures: &[FactorExposure],
    normalise: &[bool],
) -> Result<DistanceMatrixSet> {
    let n = exposures.len();
    let m = exposures[0].len();
    if normalise.len() != m {
        return Err(Error::Dimension(format!(
            "{} normalisation flags for {m} factors",
            normalise.len()
        )));
    }
    let mut matrices = Vec::with_capacity(m);
    let mut ranges = Vec::with_capacity(m);
    for (k, &normalise_factor) in normalise.iter().enumerate() {
        let column: Vec<f64> = exposures.iter().map(|e| e.values()[k]).collect();
        let min = column.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        let scale = if normalise_factor && range > 0.0 {
            range
        } else {
            1.0
        };
        let mut mat = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (column[i] - column[j]).abs() / scale;
                mat[(i, j)] = d;
                mat[(j, i)] = d;
            }
        }
        matrices.push(mat);
        ranges.push(if normalise_factor { scale } else { 1.0 });
    }
    DistanceMatrixSet::from_matrices(matrices, ranges)
}

/// Generates the correlation matrix `c_ij = exp(-sum_k b_k d_k[ij])`.
///
/// The result is symmetric with unit diagonal and strictly positive
/// entries; it is positive semi-definite for any nonnegative coefficients
/// because each factor contributes a Laplacian-kernel (hence PSD) matrix
/// and the model is their Hadamard product.
pub fn correlation_matrix(model: &CorrelationModel) -> DMatrix<f64> {
    let n = model.distances.instrument_count();
    let betas = model.beta.as_slice();
    let mut corr = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for (k, &b) in betas.iter().enumerate() {
                s += b * model.distances.matrix(k)[(i, j)];
            }
            let c = (-s).exp();
            corr[(i, j)] = c;
            corr[(j, i)] = c;
        }
    }
    corr
}

/// Least-squares fit (no intercept) of `-ln(max(c_ij, clip_eps))` on the
/// per-factor distances over all pairs i < j, with negative coefficients
/// removed by an active-set refit so the result stays in the nonnegative
/// orthant. Non-finite empirical entries are treated as unavailable and
/// skipped.
pub fn calibrate_betas(
    empirical: &DMatrix<f64>,
    distances: &DistanceMatrixSet,
    clip_eps: f64,
) -> Result<BetaVector> {
    let n = distances.instrument_count();
    if empirical.nrows() != n || empirical.ncols() != n {
        return Err(Error::Dimension(format!(
            "empirical matrix is {}x{}, expected {n}x{n}",
            empirical.nrows(),
            empirical.ncols()
        )));
    }
    if !(clip_eps > 0.0 && clip_eps < 1.0) {
        return Err(Error::Domain(format!(
            "clip_eps must lie in (0, 1), got {clip_eps}"
        )));
    }
    let m = distances.factor_count();

    // Assemble the pair regression: y = -ln(clipped correlation) on the
    // factor distances.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut informative_pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let c = empirical[(i, j)];
            if !c.is_finite() {
                continue;
            }
            let d = distances.pair(i, j);
            if d.iter().any(|&v| v > 0.0) {
                informative_pairs += 1;
            }
            let y = -c.max(clip_eps).ln();
            rows.push((d, y));
        }
    }
    if informative_pairs < m {
        return Err(Error::Rank(format!(
            "only {informative_pairs} pairs with positive distance for {m} factors"
        )));
    }
    for k in 0..m {
        if rows.iter().all(|(d, _)| d[k] == 0.0) {
            return Err(Error::Rank(format!(
                "factor {k} has zero distance on every pair"
            )));
        }
    }

    // Normal equations over the active set; negative components are pinned
    // at zero and the remainder refit until the fit is feasible.
    let mut active: Vec<usize> = (0..m).collect();
    loop {
        let p = active.len();
        if p == 0 {
            return BetaVector::new(vec![0.0; m]);
        }
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for (d, y) in &rows {
            for (a, &ka) in active.iter().enumerate() {
                rhs[a] += d[ka] * y;
                for (b, &kb) in active.iter().enumerate() {
                    gram[(a, b)] += d[ka] * d[kb];
                }
            }
        }
        let solution = gram
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Rank("distance regressors are collinear".into()))?;
        // Guard against a numerically garbage solve on a near-singular Gram.
        let residual: f64 = (&gram * &solution - &rhs).norm();
        if !residual.is_finite() || residual > 1e-6 * (1.0 + rhs.norm()) {
            return Err(Error::Rank("distance regressors are collinear".into()));
        }
        if solution.iter().all(|&b| b >= 0.0) {
            let mut betas = vec![0.0; m];
            for (a, &k) in active.iter().enumerate() {
                betas[k] = solution[a];
            }
            return BetaVector::new(betas);
        }
        active = active
            .iter()
            .zip(solution.iter())
            .filter(|(_, &b)| b >= 0.0)
            .map(|(&k, _)| k)
            .collect();
    }
}

/// A value observed on a calendar date.
#[derive(Debug, Clone, PartialEq)]
pub struct Dated<T> {
    pub date: NaiveDate,
    pub value: T,
}

/// Dated matrix of instrument returns; missing observations are NaN.
#[derive(Debug, Clone)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    /// rows = dates, columns = instruments
    returns: DMatrix<f64>,
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, returns: DMatrix<f64>) -> Result<Self> {
        if dates.len() != returns.nrows() {
            return Err(Error::Dimension(format!(
                "{} dates vs {} return rows",
                dates.len(),
                returns.nrows()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(
                "panel dates must be strictly increasing".into(),
            ));
        }
        Ok(ReturnPanel { dates, returns })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn instrument_count(&self) -> usize {
        self.returns.ncols()
    }
}

/// Options for the rolling re-calibration.
#[derive(Debug, Clone, Copy)]
pub struct RollingOptions {
    /// Trailing window length in rows.
    pub window: usize,
    /// Minimum fraction of valid observations an instrument needs inside
    /// the window to enter that date's fit.
    pub min_obs_fraction: f64,
    /// Clipping floor for nonpositive empirical correlations.
    pub clip_eps: f64,
}

impl Default for RollingOptions {
    fn default() -> Self {
        RollingOptions {
            window: 250,
            min_obs_fraction: 0.8,
            clip_eps: 0.01,
        }
    }
}

/// Pearson correlation matrix of the panel columns over the given rows,
/// computed pairwise on jointly valid observations. Entries with fewer
/// than three joint observations (or zero variance) are NaN.
pub fn pearson_correlation(returns: &DMatrix<f64>, rows: std::ops::Range<usize>) -> DMatrix<f64> {
    let n = returns.ncols();
    let mut corr = DMatrix::from_element(n, n, f64::NAN);
    for i in 0..n {
        corr[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            let mut count = 0.0;
            for t in rows.clone() {
                let x = returns[(t, i)];
                let y = returns[(t, j)];
                if x.is_finite() && y.is_finite() {
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                    count += 1.0;
                }
            }
            if count < 3.0 {
                continue;
            }
            let cov = sxy - sx * sy / count;
            let vx = sxx - sx * sx / count;
            let vy = syy - sy * sy / count;
            if vx <= 0.0 || vy <= 0.0 {
                continue;
            }
            let c = cov / (vx * vy).sqrt();
            corr[(i, j)] = c;
            corr[(j, i)] = c;
        }
    }
    corr
}

/// Re-calibrates the coefficients for every date from `window` onward,
/// using the window rows strictly before that date. Instruments with too
/// few valid observations in a window are dropped from that date's fit.
pub fn rolling_calibration(
    panel: &ReturnPanel,
    distances: &DistanceMatrixSet,
    options: &RollingOptions,
) -> Result<Vec<Dated<BetaVector>>> {
    let m = distances.factor_count();
    if options.window < m + 1 {
        return Err(Error::Invalid(format!(
            "window {} too short for {m} factors",
            options.window
        )));
    }
    if panel.instrument_count() != distances.instrument_count() {
        return Err(Error::Dimension(format!(
            "panel has {} instruments, distances {}",
            panel.instrument_count(),
            distances.instrument_count()
        )));
    }
    if panel.len() < options.window + 1 {
        return Err(Error::InsufficientHistory {
            required: options.window + 1,
            available: panel.len(),
        });
    }
    let min_obs = (options.min_obs_fraction * options.window as f64).ceil() as usize;
    let mut series = Vec::with_capacity(panel.len() - options.window);
    for t in options.window..panel.len() {
        let rows = (t - options.window)..t;
        // Instruments present often enough inside this window.
        let keep: Vec<usize> = (0..panel.instrument_count())
            .filter(|&i| {
                let valid = rows
                    .clone()
                    .filter(|&r| panel.returns()[(r, i)].is_finite())
                    .count();
                valid >= min_obs
            })
            .collect();
        if keep.len() < 2 {
            return Err(Error::Degenerate(format!(
                "window ending {} retains {} instruments",
                panel.dates()[t],
                keep.len()
            )));
        }
        let sub = select_columns(panel.returns(), &keep);
        let corr = pearson_correlation(&sub, rows);
        let sub_dist = distances.select(&keep)?;
        let beta = calibrate_betas(&corr, &sub_dist, options.clip_eps)?;
        series.push(Dated {
            date: panel.dates()[t],
            value: beta,
        });
    }
    Ok(series)
}

fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

/// Summary of the estimated coefficient-change distribution.
#[derive(Debug, Clone)]
pub struct BetaDistributionEstimate {
    /// Scenario origin: the most recent calibrated coefficient vector.
    pub mean: BetaVector,
    /// Sample covariance of the first differences (mean-zero convention).
    pub cov: DMatrix<f64>,
    /// Average per-factor standard deviation of the differences.
    pub sigma_beta: f64,
    /// Average pairwise correlation of the differences.
    pub rho_beta: f64,
    /// Set when the difference series carries no variation.
    pub degenerate: bool,
    /// Number of first differences entering the covariance.
    pub samples: usize,
}

impl BetaDistributionEstimate {
    /// Converts into the scenario-facing distribution; fails when the
    /// covariance is singular.
    pub fn distribution(&self) -> Result<BetaDistribution> {
        BetaDistribution::new(
            DVector::from_column_slice(self.mean.as_slice()),
            self.cov.clone(),
        )
    }
}

/// Estimates the distribution of coefficient changes from a calibrated
/// series: first differences, their covariance under the mean-zero
/// convention, homogeneous summaries, and the most recent coefficients
/// as scenario origin.
pub fn estimate_beta_distribution(
    series: &[Dated<BetaVector>],
) -> Result<BetaDistributionEstimate> {
    if series.len() < 3 {
        return Err(Error::InsufficientHistory {
            required: 3,
            available: series.len(),
        });
    }
    let m = series[0].value.len();
    if series.iter().any(|d| d.value.len() != m) {
        return Err(Error::Dimension(
            "coefficient vectors differ in length".into(),
        ));
    }
    let diffs: Vec<DVector<f64>> = series
        .windows(2)
        .map(|w| {
            DVector::from_column_slice(w[1].value.as_slice())
                - DVector::from_column_slice(w[0].value.as_slice())
        })
        .collect();
    let n = diffs.len();
    // Deviations are taken from zero: coefficient changes are modelled as
    // mean-zero, so the covariance is a raw second moment with an n-1
    // divisor for the degrees of freedom of the observed differences.
    let mut cov = DMatrix::zeros(m, m);
    for d in &diffs {
        cov += d * d.transpose();
    }
    cov /= (n - 1) as f64;

    let variances: Vec<f64> = (0..m).map(|k| cov[(k, k)]).collect();
    let degenerate = variances.iter().all(|&v| v <= 0.0);
    let sigma_beta = variances.iter().map(|v| v.sqrt()).sum::<f64>() / m as f64;
    let mut rho_sum = 0.0;
    let mut rho_count = 0usize;
    for i in 0..m {
        for j in (i + 1)..m {
            let denom = (variances[i] * variances[j]).sqrt();
            if denom > 0.0 {
                rho_sum += cov[(i, j)] / denom;
                rho_count += 1;
            }
        }
    }
    let rho_beta = if rho_count > 0 {
        rho_sum / rho_count as f64
    } else {
        0.0
    };
    Ok(BetaDistributionEstimate {
        mean: series.last().expect("nonempty").value.clone(),
        cov,
        sigma_beta,
        rho_beta,
        degenerate,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exposures(rows: &[&[f64]]) -> Vec<FactorExposure> {
        rows.iter()
            .map(|r| FactorExposure::new(r.to_vec()).unwrap())
            .collect()
    }

    fn date(i: i32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(i as u64)
    }

    /// All 2^m binary factor combinations (XOR construction).
    fn binary_exposures(m: usize) -> Vec<FactorExposure> {
        (0..1usize << m)
            .map(|i| {
                FactorExposure::new((0..m).map(|k| ((i >> k) & 1) as f64).collect()).unwrap()
            })
            .collect()
    }

    #[test]
    fn identical_exposures_give_zero_distances() {
        let exp = exposures(&[&[1.0, 3.5], &[1.0, 3.5]]);
        let d = build_distances(&exp, true).unwrap();
        for k in 0..2 {
            assert!(d.matrix(k).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn binary_factor_distances_are_indicator() {
        let exp = exposures(&[&[0.0], &[1.0], &[0.0]]);
        let d = build_distances(&exp, true).unwrap();
        assert_eq!(d.matrix(0)[(0, 1)], 1.0);
        assert_eq!(d.matrix(0)[(0, 2)], 0.0);
        assert!(d.is_binary());
    }

    #[test]
    fn maturity_normalisation() {
        let exp = exposures(&[&[5.0], &[7.0], &[10.0]]);
        let d = build_distances(&exp, true).unwrap();
        assert!((d.matrix(0)[(0, 2)] - 1.0).abs() < 1e-15);
        assert!((d.matrix(0)[(0, 1)] - 0.4).abs() < 1e-15);
        assert_eq!(d.range(0), 5.0);
    }

    #[test]
    fn ragged_exposures_rejected() {
        let exp = vec![
            FactorExposure::new(vec![1.0, 2.0]).unwrap(),
            FactorExposure::new(vec![1.0]).unwrap(),
        ];
        assert!(matches!(
            build_distances(&exp, true),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_betas_give_all_ones_matrix() {
        let exp = binary_exposures(3);
        let d = build_distances(&exp, true).unwrap();
        let model = CorrelationModel::new(BetaVector::homogeneous(3, 0.0).unwrap(), d).unwrap();
        let c = model.matrix();
        assert!(c.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn single_factor_ln2_gives_half() {
        let exp = exposures(&[&[0.0], &[1.0]]);
        let d = build_distances(&exp, true).unwrap();
        let model =
            CorrelationModel::new(BetaVector::new(vec![2.0_f64.ln()]).unwrap(), d).unwrap();
        let c = model.matrix();
        assert!((c[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(c[(0, 0)], 1.0);
    }

    #[test]
    fn negative_beta_rejected() {
        assert!(BetaVector::new(vec![0.1, -0.2]).is_err());
    }

    #[test]
    fn homogeneous_average_correlation_matches_paper_value() {
        // m = 5 binary factors with b = 0.5204 average to about 0.30.
        let exp = binary_exposures(5);
        let d = build_distances(&exp, true).unwrap();
        let model =
            CorrelationModel::new(BetaVector::homogeneous(5, 0.5204).unwrap(), d).unwrap();
        let c = model.matrix();
        let n = c.nrows();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum += c[(i, j)];
                }
            }
        }
        let avg = sum / (n * (n - 1)) as f64;
        assert!((avg - 0.300).abs() < 1e-3, "avg corr {avg}");
    }

    #[test]
    fn calibration_round_trip_recovers_betas() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = rng.random_range(1..=4);
            let n = rng.random_range(m + 2..=10);
            let exp: Vec<FactorExposure> = (0..n)
                .map(|_| {
                    FactorExposure::new(
                        (0..m)
                            .map(|_| {
                                if rng.random_bool(0.5) {
                                    rng.random_range(0..2) as f64
                                } else {
                                    rng.random_range(0.0..10.0)
                                }
                            })
                            .collect(),
                    )
                    .unwrap()
                })
                .collect();
            let d = match build_distances(&exp, true) {
                Ok(d) => d,
                Err(_) => continue,
            };
            let true_beta: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.5)).collect();
            let model =
                CorrelationModel::new(BetaVector::new(true_beta.clone()).unwrap(), d.clone())
                    .unwrap();
            let c = model.matrix();
            let fitted = match calibrate_betas(&c, &d, 0.01) {
                Ok(b) => b,
                Err(Error::Rank(_)) => continue,
                Err(e) => panic!("unexpected error {e}"),
            };
            for (a, b) in fitted.as_slice().iter().zip(&true_beta) {
                assert!((a - b).abs() < 1e-8, "fitted {a} vs true {b}");
            }
            let rebuilt = CorrelationModel::new(fitted, d.clone()).unwrap().matrix();
            assert!((&rebuilt - &c).norm() <= 1e-8);
        }
    }

    #[test]
    fn clipping_applies_to_nonpositive_entries() {
        // One binary factor, two instruments, empirical correlation -0.01:
        // the regression target becomes -ln(0.01).
        let exp = exposures(&[&[0.0], &[1.0]]);
        let d = build_distances(&exp, true).unwrap();
        let mut emp = DMatrix::from_element(2, 2, 1.0);
        emp[(0, 1)] = -0.01;
        emp[(1, 0)] = -0.01;
        let beta = calibrate_betas(&emp, &d, 0.01).unwrap();
        assert!((beta.as_slice()[0] - (-(0.01_f64.ln()))).abs() < 1e-12);
    }

    #[test]
    fn single_binary_factor_exact_solution() {
        let exp = exposures(&[&[0.0], &[1.0], &[0.0], &[1.0]]);
        let d = build_distances(&exp, true).unwrap();
        let mut emp = DMatrix::from_element(4, 4, 0.6);
        for i in 0..4 {
            emp[(i, i)] = 1.0;
        }
        // Same-flag pairs have distance zero and correlation target 1.
        emp[(0, 2)] = 1.0;
        emp[(2, 0)] = 1.0;
        emp[(1, 3)] = 1.0;
        emp[(3, 1)] = 1.0;
        let beta = calibrate_betas(&emp, &d, 0.01).unwrap();
        assert!((beta.as_slice()[0] - (-(0.6_f64.ln()))).abs() < 1e-12);
    }

    #[test]
    fn constant_factor_yields_rank_error() {
        let exp = exposures(&[&[0.0, 1.0], &[1.0, 1.0], &[0.0, 1.0]]);
        let d = build_distances(&exp, true).unwrap();
        let emp = DMatrix::from_element(3, 3, 0.5);
        assert!(matches!(
            calibrate_betas(&emp, &d, 0.01),
            Err(Error::Rank(_))
        ));
    }

    #[test]
    fn too_few_informative_pairs_is_rank_error() {
        let exp = exposures(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]]);
        let d = build_distances(&exp, true).unwrap();
        let emp = DMatrix::from_element(3, 3, 0.5);
        assert!(matches!(
            calibrate_betas(&emp, &d, 0.01),
            Err(Error::Rank(_))
        ));
    }

    #[test]
    fn psd_and_monotonicity_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let m = rng.random_range(1..=4);
            let n = rng.random_range(2..=8);
            let exp: Vec<FactorExposure> = (0..n)
                .map(|_| {
                    FactorExposure::new((0..m).map(|_| rng.random_range(-3.0..7.0)).collect())
                        .unwrap()
                })
                .collect();
            let d = build_distances(&exp, true).unwrap();
            let betas: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
            let c = CorrelationModel::new(BetaVector::new(betas.clone()).unwrap(), d.clone())
                .unwrap()
                .matrix();
            let min_eig = c
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig >= -1e-10, "min eigenvalue {min_eig}");

            // Increasing one coefficient weakly decreases every off-diagonal.
            let k = rng.random_range(0..m);
            let mut bumped = betas.clone();
            bumped[k] += 0.5;
            let c2 = CorrelationModel::new(BetaVector::new(bumped).unwrap(), d)
                .unwrap()
                .matrix();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        assert!(c2[(i, j)] <= c[(i, j)] + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn scale_equivariance() {
        let exp = exposures(&[&[0.0, 2.0], &[1.5, 0.0], &[3.0, 1.0]]);
        let d = build_distances(&exp, false).unwrap();
        let doubled = DistanceMatrixSet::from_matrices(
            (0..d.factor_count()).map(|k| d.matrix(k) * 2.0).collect(),
            vec![1.0; d.factor_count()],
        )
        .unwrap();
        let beta = vec![0.8, 0.3];
        let halved: Vec<f64> = beta.iter().map(|b| b / 2.0).collect();
        let c1 = CorrelationModel::new(BetaVector::new(beta).unwrap(), d)
            .unwrap()
            .matrix();
        let c2 = CorrelationModel::new(BetaVector::new(halved).unwrap(), doubled)
            .unwrap()
            .matrix();
        assert!((&c1 - &c2).norm() < 1e-14);
    }

    fn simulate_panel(model: &CorrelationModel, days: usize, seed: u64) -> ReturnPanel {
        let n = model.distances.instrument_count();
        let chol = nalgebra::Cholesky::new(model.matrix()).expect("model matrix PD");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = DMatrix::zeros(days, n);
        for t in 0..days {
            let z = DVector::from_fn(n, |_, _| rng.sample(rand_distr::StandardNormal));
            let x = chol.l() * z;
            for i in 0..n {
                rows[(t, i)] = 0.01 * x[i];
            }
        }
        ReturnPanel::new((0..days as i32).map(date).collect(), rows).unwrap()
    }

    #[test]
    fn rolling_calibration_recovers_true_betas() {
        let exp = binary_exposures(4);
        let d = build_distances(&exp, true).unwrap();
        let true_beta = BetaVector::new(vec![0.4, 0.6, 0.3, 0.5]).unwrap();
        let model = CorrelationModel::new(true_beta.clone(), d.clone()).unwrap();
        let panel = simulate_panel(&model, 400, 3);

        let mae = |window: usize| {
            let series = rolling_calibration(
                &panel,
                &d,
                &RollingOptions {
                    window,
                    ..RollingOptions::default()
                },
            )
            .unwrap();
            let mut err = 0.0;
            let mut count = 0.0;
            for dated in &series {
                for (a, b) in dated.value.as_slice().iter().zip(true_beta.as_slice()) {
                    err += (a - b).abs();
                    count += 1.0;
                }
            }
            err / count
        };
        let mae_short = mae(80);
        let mae_long = mae(320);
        assert!(mae_long < mae_short, "{mae_long} !< {mae_short}");
        assert!(mae_long < 0.08, "long-window MAE {mae_long}");
    }

    #[test]
    fn rolling_calibration_requires_history() {
        let exp = binary_exposures(2);
        let d = build_distances(&exp, true).unwrap();
        let panel = ReturnPanel::new((0..10).map(date).collect(), DMatrix::zeros(10, 4)).unwrap();
        let err = rolling_calibration(
            &panel,
            &d,
            &RollingOptions {
                window: 50,
                ..RollingOptions::default()
            },
        )
        .unwrap_err();
        match err {
            Error::InsufficientHistory {
                required,
                available,
            } => {
                assert_eq!(required, 51);
                assert_eq!(available, 10);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn identical_trailing_windows_give_identical_betas() {
        // A panel repeating with the window's period makes two calibration
        // dates see exactly the same trailing rows.
        let exp = binary_exposures(2);
        let d = build_distances(&exp, true).unwrap();
        let model =
            CorrelationModel::new(BetaVector::new(vec![0.3, 0.7]).unwrap(), d.clone()).unwrap();
        let window = 30;
        let base = simulate_panel(&model, window, 4);
        let mut rows = DMatrix::zeros(2 * window + 1, 4);
        for t in 0..2 * window + 1 {
            for i in 0..4 {
                rows[(t, i)] = base.returns()[(t % window, i)];
            }
        }
        let panel = ReturnPanel::new((0..(2 * window + 1) as i32).map(date).collect(), rows)
            .unwrap();
        let series = rolling_calibration(
            &panel,
            &d,
            &RollingOptions {
                window,
                ..RollingOptions::default()
            },
        )
        .unwrap();
        // Dates `window` and `2 * window` use rows 0..window and
        // window..2*window, which hold the same values.
        assert_eq!(series[0].value, series[window].value);
    }

    #[test]
    fn rolling_calibration_is_deterministic() {
        let exp = binary_exposures(3);
        let d = build_distances(&exp, true).unwrap();
        let model =
            CorrelationModel::new(BetaVector::homogeneous(3, 0.5).unwrap(), d.clone()).unwrap();
        let panel = simulate_panel(&model, 120, 9);
        let opts = RollingOptions {
            window: 60,
            ..RollingOptions::default()
        };
        let a = rolling_calibration(&panel, &d, &opts).unwrap();
        let b = rolling_calibration(&panel, &d, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn beta_distribution_constant_series_is_degenerate() {
        let beta = BetaVector::new(vec![0.5, 0.5]).unwrap();
        let series: Vec<Dated<BetaVector>> = (0..5)
            .map(|i| Dated {
                date: date(i),
                value: beta.clone(),
            })
            .collect();
        let est = estimate_beta_distribution(&series).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.sigma_beta, 0.0);
        assert!(est.distribution().is_err());
    }

    #[test]
    fn beta_distribution_two_points_rejected() {
        let beta = BetaVector::new(vec![0.5]).unwrap();
        let series: Vec<Dated<BetaVector>> = (0..2)
            .map(|i| Dated {
                date: date(i),
                value: beta.clone(),
            })
            .collect();
        assert!(matches!(
            estimate_beta_distribution(&series),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn beta_distribution_recovers_synthetic_parameters() {
        let m = 4;
        let sigma = 0.12;
        let rho: f64 = 0.35;
        // Equicorrelated increments via the one-factor construction.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // High base keeps the random walk inside the nonnegative orthant.
        let mut level = vec![100.0; m];
        let mut series = Vec::new();
        for t in 0..10_001 {
            series.push(Dated {
                date: date(t),
                value: BetaVector::new(level.clone()).unwrap(),
            });
            let common: f64 = rng.sample(rand_distr::StandardNormal);
            for item in level.iter_mut() {
                let own: f64 = rng.sample(rand_distr::StandardNormal);
                *item += sigma * (rho.sqrt() * common + (1.0 - rho).sqrt() * own);
            }
        }
        let est = estimate_beta_distribution(&series).unwrap();
        assert!((est.sigma_beta - sigma).abs() / sigma < 0.05);
        assert!((est.rho_beta - rho).abs() / rho < 0.05);
        assert_eq!(est.samples, 10_000);
        assert_eq!(est.mean, series.last().unwrap().value);
    }
}

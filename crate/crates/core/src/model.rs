//! Shared domain types: datasets, problem specifications, fit results and
//! the empirical-quantile convention used across the crate.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column affine maps applied by [`normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub response_mean: f64,
    pub response_scale: f64,
}

impl Normalization {
    /// Maps a raw feature row into normalized coordinates.
    pub fn apply_features(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.feature_means.iter().zip(&self.feature_scales))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn apply_response(&self, y: f64) -> f64 {
        (y - self.response_mean) / self.response_scale
    }

    pub fn invert_response(&self, y: f64) -> f64 {
        y * self.response_scale + self.response_mean
    }
}

/// Feature matrix (n × d) and response vector (n).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    response: DVector<f64>,
    normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        let n = response.len();
        if n == 0 {
            return Err(Error::data("dataset must contain at least one row"));
        }
        if features.nrows() != n {
            return Err(Error::data(format!(
                "feature matrix has {} rows but response has {}",
                features.nrows(),
                n
            )));
        }
        if features.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::data("dataset contains non-finite values"));
        }
        Ok(Dataset {
            features,
            response,
            normalization: None,
        })
    }

    /// Builds a dataset from row-major feature rows.
    pub fn from_rows(rows: &[Vec<f64>], response: &[f64]) -> Result<Self> {
        let n = response.len();
        if rows.len() != n {
            return Err(Error::data(format!(
                "{} feature rows for {} responses",
                rows.len(),
                n
            )));
        }
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::data("ragged feature rows"));
        }
        let features = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        Dataset::new(features, DVector::from_column_slice(response))
    }

    /// Response-only dataset (d = 0).
    pub fn intercept_only(response: &[f64]) -> Result<Self> {
        Dataset::new(
            DMatrix::zeros(response.len(), 0),
            DVector::from_column_slice(response),
        )
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.features.row(i).into_owned()
    }

    /// Typical magnitude of the response: its standard deviation, falling back
    /// to the largest absolute value and finally to 1.
    pub fn response_scale(&self) -> f64 {
        let sd = sample_sd(self.response.as_slice());
        if sd > 0.0 {
            return sd;
        }
        let m = self.response.amax();
        if m > 0.0 {
            m
        } else {
            1.0
        }
    }

    /// Copy with row `i` removed.
    pub fn without_row(&self, i: usize) -> Dataset {
        assert!(i < self.n(), "row index out of range");
        Dataset {
            features: self.features.clone().remove_row(i),
            response: self.response.clone().remove_row(i),
            normalization: self.normalization.clone(),
        }
    }

    /// Copy with one extra row appended at the end.
    pub fn with_row(&self, x: &[f64], y: f64) -> Result<Dataset> {
        if x.len() != self.d() {
            return Err(Error::domain(format!(
                "new row has {} features, dataset has {}",
                x.len(),
                self.d()
            )));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("appended row contains non-finite values"));
        }
        let n = self.n();
        let mut features = self.features.clone().insert_row(n, 0.0);
        for (j, v) in x.iter().enumerate() {
            features[(n, j)] = *v;
        }
        let response = self.response.clone().insert_row(n, y);
        Ok(Dataset {
            features,
            response,
            normalization: self.normalization.clone(),
        })
    }

    /// Rows at `indices`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            response: self.response.select_rows(indices),
            normalization: self.normalization.clone(),
        }
    }

    /// Feature columns at `columns`, in order.
    pub fn select_columns(&self, columns: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_columns(columns),
            response: self.response.clone(),
            normalization: None,
        }
    }

    /// Same features with a replaced response vector.
    pub fn with_response(&self, response: DVector<f64>) -> Result<Dataset> {
        let mut ds = Dataset::new(self.features.clone(), response)?;
        ds.normalization = self.normalization.clone();
        Ok(ds)
    }

    /// Reads a headered CSV file. `response` names the response column; every
    /// other column becomes a feature.
    pub fn from_csv_path(path: impl AsRef<Path>, response: &str) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Dataset::from_csv_reader(file, response)
    }

    pub fn from_csv_reader<R: Read>(reader: R, response: &str) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let response_idx = headers
            .iter()
            .position(|h| h == response)
            .ok_or_else(|| Error::data(format!("response column '{response}' not found")))?;
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::data(format!("row {} has {} fields", line + 2, record.len())));
            }
            let mut row = Vec::with_capacity(headers.len() - 1);
            for (j, field) in record.iter().enumerate() {
                let value: f64 = field.parse().map_err(|_| {
                    Error::data(format!(
                        "non-numeric value '{}' in column '{}' (row {})",
                        field,
                        &headers[j],
                        line + 2
                    ))
                })?;
                if !value.is_finite() {
                    return Err(Error::data(format!(
                        "non-finite value in column '{}' (row {})",
                        &headers[j],
                        line + 2
                    )));
                }
                if j == response_idx {
                    ys.push(value);
                } else {
                    row.push(value);
                }
            }
            rows.push(row);
        }
        if ys.is_empty() {
            return Err(Error::data("CSV contains no data rows"));
        }
        Dataset::from_rows(&rows, &ys)
    }
}

/// How the offset term of the regression is handled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InterceptMode {
    /// Fit an unpenalized intercept.
    FreeIntercept,
    /// Hold the offset at a fixed constant (intercept-less regression of Y − c).
    FixedOffset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub tau: f64,
    /// Coefficient of ‖β‖² added to the summed pinball loss.
    pub lambda: f64,
    pub intercept_mode: InterceptMode,
    /// Standard deviation of optional Gaussian noise added to the features.
    pub jitter: f64,
}

impl ProblemSpec {
    pub fn new(tau: f64, lambda: f64) -> Result<Self> {
        let spec = ProblemSpec {
            tau,
            lambda,
            intercept_mode: InterceptMode::FreeIntercept,
            jitter: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_offset(mut self, c: f64) -> Self {
        self.intercept_mode = InterceptMode::FixedOffset(c);
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::domain(format!("tau must lie in (0,1), got {}", self.tau)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::domain(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return Err(Error::domain(format!("jitter must be >= 0, got {}", self.jitter)));
        }
        if let InterceptMode::FixedOffset(c) = self.intercept_mode {
            if !c.is_finite() {
                return Err(Error::domain("fixed offset must be finite"));
            }
        }
        Ok(())
    }

    pub fn has_free_intercept(&self) -> bool {
        matches!(self.intercept_mode, InterceptMode::FreeIntercept)
    }
}

/// Optimality certificate attached to every fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    /// ‖Aw + r − y‖∞ of the solver's split variable (zero after polishing).
    pub primal_residual: f64,
    /// Largest violation of dual box feasibility or complementary slackness
    /// between the duals and the reported residuals.
    pub dual_residual: f64,
    /// (primal objective − dual objective) / n.
    pub duality_gap_per_sample: f64,
    /// ‖Aᵀη − 2Λw‖∞ including the intercept row when present.
    pub stationarity_norm: f64,
    /// Magnitude of the terms summed in the stationarity condition.
    pub stationarity_scale: f64,
    pub response_scale: f64,
    pub iterations: usize,
    pub polished: bool,
    /// Unregularized design was rank deficient; the solution may not be unique.
    pub rank_deficient: bool,
}

impl KktCertificate {
    /// All four optimality conditions hold at tolerance `tol` (relative to the
    /// problem's natural scales where the condition carries units).
    pub fn satisfied(&self, tol: f64) -> bool {
        let y_scale = self.response_scale.max(1.0);
        self.primal_residual <= tol * y_scale
            && self.dual_residual <= tol
            && self.duality_gap_per_sample <= tol * y_scale
            && self.stationarity_norm <= tol * self.stationarity_scale.max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Fitted intercept, or the fixed offset c.
    pub intercept_or_offset: f64,
    pub beta: DVector<f64>,
    /// Y_i − offset − X_iᵀβ̂.
    pub residuals: DVector<f64>,
    /// Dual variables, one per sample, in [−(1−τ), τ].
    pub duals: DVector<f64>,
    pub kkt: KktCertificate,
    pub tau: f64,
    pub lambda: f64,
    pub intercept_mode: InterceptMode,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.duals.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.beta.len());
        self.intercept_or_offset + x.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict_rows(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut out = x * &self.beta;
        out.add_scalar_mut(self.intercept_or_offset);
        out
    }

    /// Σ ℓ_τ(r̂_i) + λ‖β̂‖².
    pub fn primal_objective(&self) -> f64 {
        self.residuals
            .iter()
            .map(|&r| crate::solver::pinball_loss(r, self.tau))
            .sum::<f64>()
            + self.lambda * self.beta.norm_squared()
    }
}

/// Left-continuous inverse CDF of the empirical distribution: the
/// ⌈level·n⌉-th order statistic.
pub fn empirical_quantile(level: f64, values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("empirical quantile of an empty sample"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("quantile level must lie in (0,1), got {level}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("empirical quantile of non-finite values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_statistic_index(level, sorted.len())])
}

/// Zero-based index of the ⌈level·n⌉-th order statistic.
pub(crate) fn order_statistic_index(level: f64, n: usize) -> usize {
    // level·n can land a hair above an integer in floating point (0.7·10).
    let k = (level * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n) - 1
}

fn sample_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = sample_mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Centers every column (features and response) and scales it to unit sample
/// variance. Constant columns keep scale 1.
pub fn normalize(dataset: &Dataset) -> Result<Dataset> {
    let n = dataset.n();
    let d = dataset.d();
    let mut features = dataset.features.clone();
    let mut means = Vec::with_capacity(d);
    let mut scales = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = features.column(j).iter().copied().collect();
        let m = sample_mean(&col);
        let sd = sample_sd(&col);
        let s = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        for i in 0..n {
            features[(i, j)] = (features[(i, j)] - m) / s;
        }
        means.push(m);
        scales.push(s);
    }
    let ys = dataset.response.as_slice();
    let ym = sample_mean(ys);
    let ysd = sample_sd(ys);
    let ys_scale = if ysd > 0.0 && ysd.is_finite() { ysd } else { 1.0 };
    let response = dataset.response.map(|y| (y - ym) / ys_scale);
    if features.iter().chain(response.iter()).any(|v| !v.is_finite()) {
        return Err(Error::domain("normalization produced non-finite values"));
    }
    Ok(Dataset {
        features,
        response,
        normalization: Some(Normalization {
            feature_means: means,
            feature_scales: scales,
            response_mean: ym,
            response_scale: ys_scale,
        }),
    })
}

/// Inverse of [`normalize`]; datasets without metadata are returned unchanged.
pub fn denormalize(dataset: &Dataset) -> Dataset {
    let Some(norm) = &dataset.normalization else {
        return dataset.clone();
    };
    let mut features = dataset.features.clone();
    for j in 0..dataset.d() {
        let (m, s) = (norm.feature_means[j], norm.feature_scales[j]);
        for i in 0..dataset.n() {
            features[(i, j)] = features[(i, j)] * s + m;
        }
    }
    let response = dataset.response.map(|y| norm.invert_response(y));
    Dataset {
        features,
        response,
        normalization: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn quantile_examples() {
        assert_eq!(empirical_quantile(0.5, &[3.0, 1.0, 2.0]).unwrap(), 2.0);
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_quantile(0.9, &v).unwrap(), 9.0);
        assert_eq!(empirical_quantile(0.7, &v).unwrap(), 7.0);
        assert_eq!(empirical_quantile(0.05, &v).unwrap(), 1.0);
        assert!(matches!(empirical_quantile(0.5, &[]), Err(Error::Domain(_))));
        assert!(empirical_quantile(1.0, &[1.0]).is_err());
    }

    #[test]
    fn normalize_unit_column() {
        let ds = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], &[1.0, 5.0, 9.0]).unwrap();
        let z = normalize(&ds).unwrap();
        let col: Vec<f64> = z.features().column(0).iter().copied().collect();
        assert_abs_diff_eq!(sample_mean(&col), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sample_sd(&col), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn normalize_constant_column() {
        let ds = Dataset::from_rows(&[vec![5.0], vec![5.0], vec![5.0]], &[1.0, 2.0, 3.0]).unwrap();
        let z = normalize(&ds).unwrap();
        assert!(z.features().iter().all(|&v| v == 0.0));
        assert_eq!(z.normalization().unwrap().feature_scales[0], 1.0);
    }

    #[test]
    fn rejects_non_finite() {
        let err = Dataset::from_rows(&[vec![f64::NAN]], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn csv_ingestion() {
        let text = "a,y,b\n1,2,3\n4,5,6\n";
        let ds = Dataset::from_csv_reader(text.as_bytes(), "y").unwrap();
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.response().as_slice(), &[2.0, 5.0]);
        assert_eq!(ds.features()[(1, 1)], 6.0);
        let bad = "a,y\n1,x\n";
        assert!(matches!(Dataset::from_csv_reader(bad.as_bytes(), "y"), Err(Error::Data(_))));
        let missing = "a,y\n1,\n";
        assert!(Dataset::from_csv_reader(missing.as_bytes(), "y").is_err());
        assert!(Dataset::from_csv_reader(text.as_bytes(), "nope").is_err());
    }

    proptest! {
        #[test]
        fn quantile_counts_and_monotonicity(
            mut v in proptest::collection::vec(-1e3f64..1e3, 1..60),
            l1 in 0.01f64..0.99,
            l2 in 0.01f64..0.99,
            bump in 0.0f64..10.0,
            idx in 0usize..60,
        ) {
            let n = v.len();
            let q = empirical_quantile(l1, &v).unwrap();
            let below = v.iter().filter(|&&x| x <= q).count();
            prop_assert!(below as f64 >= (l1 * n as f64 - 1e-9).ceil());
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            prop_assert!(empirical_quantile(lo, &v).unwrap() <= empirical_quantile(hi, &v).unwrap());
            let i = idx % n;
            v[i] += bump;
            prop_assert!(empirical_quantile(l1, &v).unwrap() >= q);
        }

        #[test]
        fn normalization_round_trip(
            rows in proptest::collection::vec(proptest::collection::vec(-50f64..50.0, 3), 2..20),
        ) {
            let ys: Vec<f64> = rows.iter().map(|r| r[0] * 2.0 - r[1] + 7.0).collect();
            let ds = Dataset::from_rows(&rows, &ys).unwrap();
            let back = denormalize(&normalize(&ds).unwrap());
            for (a, b) in back.features().iter().zip(ds.features().iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
            for (a, b) in back.response().iter().zip(ds.response().iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}

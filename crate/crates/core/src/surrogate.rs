//! Linear accuracy predictors over one-hot subdomain features.
//!
//! Both fits centre the target and the features and leave the intercept
//! unpenalized. The Lasso objective is
//!
//! ```text
//! 0.5 * ||y - b - X w||^2 + lambda * ||w||_1
//! ```
//!
//! solved by cyclic coordinate descent over the centred Gram matrix, visiting
//! features in index order every sweep.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::domain::{AttributeSchema, Domain, Subdomain};
use crate::evaluation::{ReferenceTable, TableError};
use crate::rng;

/// Diagonal jitter added to the normal equations.
pub const OLS_JITTER: f64 = 1e-8;
pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const LASSO_TOLERANCE: f64 = 1e-8;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum SurrogateError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model has {model} weights but features have length {features}")]
    DimensionMismatch { model: usize, features: usize },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    OrdinaryLeastSquares,
    Lasso,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub kind: ModelKind,
    pub lambda: f64,
    pub intercept: f64,
    pub weights: Vec<f64>,
    /// False when coordinate descent hit the sweep limit.
    #[serde(default = "yes")]
    pub converged: bool,
    #[serde(default)]
    pub sweeps: usize,
}

fn yes() -> bool {
    true
}

/// Which regressor to fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorSpec {
    Ols,
    Lasso {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

impl Default for PredictorSpec {
    fn default() -> Self {
        PredictorSpec::Lasso {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl PredictorSpec {
    pub fn fit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<SurrogateModel, SurrogateError> {
        match *self {
            PredictorSpec::Ols => fit_ols(x, y),
            PredictorSpec::Lasso { lambda } => fit_lasso(x, y, lambda),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PredictorSpec::Ols => "ols".into(),
            PredictorSpec::Lasso { lambda } => format!("lasso({lambda})"),
        }
    }
}

/// Centred second-moment statistics of a dataset.
struct Moments {
    x_mean: Vec<f64>,
    y_mean: f64,
    /// centred Gram matrix, row-major p x p
    gram: Vec<f64>,
    /// X^T (y - mean(y))
    xty: Vec<f64>,
}

impl Moments {
    fn new(x: &[Vec<f64>], y: &[f64]) -> Result<Self, SurrogateError> {
        let n = x.len();
        if n == 0 {
            return Err(SurrogateError::InsufficientData("no samples".into()));
        }
        if y.len() != n {
            return Err(SurrogateError::InvalidInput(format!(
                "{n} feature rows but {} targets",
                y.len()
            )));
        }
        let p = x[0].len();
        if let Some(r) = x.iter().position(|r| r.len() != p) {
            return Err(SurrogateError::InvalidInput(format!(
                "row {r} has {} features, expected {p}",
                x[r].len()
            )));
        }
        if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
            return Err(SurrogateError::InvalidInput("non-finite value".into()));
        }

        let nf = n as f64;
        let y_mean = y.iter().sum::<f64>() / nf;
        // sums over nonzeros only; one-hot rows make this cheap
        let mut sx = vec![0.0; p];
        let mut sxx = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        let mut nz = Vec::with_capacity(p);
        for (row, &t) in x.iter().zip(y) {
            let r = t - y_mean;
            nz.clear();
            nz.extend(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)));
            for &(j, v) in &nz {
                sx[j] += v;
                xty[j] += v * r;
                for &(k, u) in &nz {
                    sxx[j * p + k] += v * u;
                }
            }
        }
        let x_mean: Vec<f64> = sx.iter().map(|s| s / nf).collect();
        let mut gram = sxx;
        for j in 0..p {
            for k in 0..p {
                gram[j * p + k] -= sx[j] * sx[k] / nf;
            }
        }
        Ok(Self {
            x_mean,
            y_mean,
            gram,
            xty,
        })
    }

    fn p(&self) -> usize {
        self.x_mean.len()
    }

    fn intercept(&self, w: &[f64]) -> f64 {
        self.y_mean - self.x_mean.iter().zip(w).map(|(m, w)| m * w).sum::<f64>()
    }
}

/// Least squares with a fixed diagonal jitter on the centred normal
/// equations.
pub fn fit_ols(x: &[Vec<f64>], y: &[f64]) -> Result<SurrogateModel, SurrogateError> {
    let m = Moments::new(x, y)?;
    let p = m.p();
    let mut a = DMatrix::from_row_slice(p, p, &m.gram);
    for j in 0..p {
        a[(j, j)] += OLS_JITTER;
    }
    let b = DVector::from_column_slice(&m.xty);
    let w = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a
            .lu()
            .solve(&b)
            .ok_or_else(|| SurrogateError::InvalidInput("singular normal equations".into()))?,
    };
    let weights: Vec<f64> = w.iter().copied().collect();
    Ok(SurrogateModel {
        kind: ModelKind::OrdinaryLeastSquares,
        lambda: 0.0,
        intercept: m.intercept(&weights),
        weights,
        converged: true,
        sweeps: 0,
    })
}

pub fn fit_lasso(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<SurrogateModel, SurrogateError> {
    coordinate_descent(x, y, lambda, false).map(|(m, _)| m)
}

/// Lasso fit plus the objective value after every sweep (index 0 is the
/// objective at the all-zero start), evaluated from the residuals.
pub fn fit_lasso_traced(
    x: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
) -> Result<(SurrogateModel, Vec<f64>), SurrogateError> {
    coordinate_descent(x, y, lambda, true)
}

fn coordinate_descent(
    x: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
    traced: bool,
) -> Result<(SurrogateModel, Vec<f64>), SurrogateError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SurrogateError::InvalidInput(format!(
            "lambda must be a nonnegative number, got {lambda}"
        )));
    }
    let m = Moments::new(x, y)?;
    let p = m.p();
    let mut w = vec![0.0; p];
    let mut q = vec![0.0; p];
    let mut trace = Vec::new();
    let mut record = |w: &[f64]| {
        if traced {
            trace.push(lasso_objective(x, y, lambda, m.intercept(w), w));
        }
    };
    record(&w);
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            let gjj = m.gram[j * p + j];
            let old = w[j];
            let new = if gjj <= 0.0 {
                0.0
            } else {
                let rho = m.xty[j] - (q[j] - gjj * old);
                soft_threshold(rho, lambda) / gjj
            };
            let delta = new - old;
            if delta != 0.0 {
                w[j] = new;
                let col = &m.gram[j * p..(j + 1) * p];
                for (qk, g) in q.iter_mut().zip(col) {
                    *qk += g * delta;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        record(&w);
        if max_delta < LASSO_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("lasso did not converge in {LASSO_MAX_SWEEPS} sweeps (lambda={lambda})");
    }
    Ok((
        SurrogateModel {
            kind: ModelKind::Lasso,
            lambda,
            intercept: m.intercept(&w),
            weights: w,
            converged,
            sweeps,
        },
        trace,
    ))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `0.5 ||y - b - Xw||^2 + lambda ||w||_1`, evaluated directly.
pub fn lasso_objective(x: &[Vec<f64>], y: &[f64], lambda: f64, intercept: f64, w: &[f64]) -> f64 {
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, t)| {
            let pred = intercept + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            (t - pred).powi(2)
        })
        .sum();
    rss / 2.0 + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

impl SurrogateModel {
    pub fn predict_row(&self, features: &[f64]) -> Result<f64, SurrogateError> {
        if features.len() != self.weights.len() {
            return Err(SurrogateError::DimensionMismatch {
                model: self.weights.len(),
                features: features.len(),
            });
        }
        Ok(self.intercept + features.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Prediction for a subdomain: intercept plus its active weights.
    /// Callers must have checked dimensions.
    pub fn predict_one(&self, schema: &AttributeSchema, s: &Subdomain) -> f64 {
        self.intercept
            + schema
                .active_features(s)
                .into_iter()
                .map(|f| self.weights[f])
                .sum::<f64>()
    }

    /// Unclamped accuracy estimates, in batch order.
    pub fn predict(
        &self,
        schema: &AttributeSchema,
        batch: &[Subdomain],
    ) -> Result<Vec<f64>, SurrogateError> {
        if self.weights.len() != schema.onehot_len() {
            return Err(SurrogateError::DimensionMismatch {
                model: self.weights.len(),
                features: schema.onehot_len(),
            });
        }
        Ok(batch.iter().map(|s| self.predict_one(schema, s)).collect())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, SurrogateError> {
        toml::from_str(text).map_err(|e| SurrogateError::InvalidInput(e.to_string()))
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, SurrogateError> {
    if a.len() != b.len() {
        return Err(SurrogateError::UndefinedCorrelation(format!(
            "length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(SurrogateError::UndefinedCorrelation(
            "need at least two observations".into(),
        ));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(SurrogateError::UndefinedCorrelation("NaN input".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    // ranks of n items always average (n + 1) / 2
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(SurrogateError::UndefinedCorrelation(
            "zero rank variance".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// The sorted domain indices `benchmark_predictor` trains on: `train_size`
/// of `n`, drawn uniformly without replacement.
pub fn train_split(n: usize, train_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, 0xB3_AC4);
    let mut train = index::sample(&mut rng, n, train_size).into_vec();
    train.sort_unstable();
    train
}

/// Trains on `train_size` seeded uniformly drawn subdomains and returns the
/// Spearman correlation between predicted and true accuracy on the rest.
pub fn benchmark_predictor(
    domain: &Domain,
    table: &ReferenceTable,
    train_size: usize,
    seed: u64,
    predictor: PredictorSpec,
) -> Result<f64, SurrogateError> {
    let truth = table.accuracies(domain)?;
    let n = domain.len();
    if train_size == 0 || train_size >= n {
        return Err(SurrogateError::InvalidInput(format!(
            "train_size must be in 1..{n}, got {train_size}"
        )));
    }
    let train = train_split(n, train_size, seed);
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let test: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();

    let x = domain.design_rows(&train);
    let y: Vec<f64> = train.iter().map(|&i| truth[i]).collect();
    let model = predictor.fit(&x, &y)?;
    let schema = domain.schema();
    let pred: Vec<f64> = test.iter().map(|&i| model.predict_one(schema, domain.get(i))).collect();
    let actual: Vec<f64> = test.iter().map(|&i| truth[i]).collect();
    spearman(&pred, &actual)
}

//! Gaussian naive Bayes classifier: the 64-bit float software baseline.
//!
//! Decisions follow `argmax_c ln P(c) + Σ_i ln N(x_i; μ_ci, σ²_ci)`; the
//! evidence normalizer is class-independent and never computed.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::error::Error;

pub const MODEL_SCHEMA: &str = "febim-model/1";

/// Relative variance smoothing applied when no options are given.
pub const DEFAULT_VAR_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GnbcError {
    #[error("class `{0}` has no training samples")]
    EmptyClass(String),
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("sample has {got} features, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Trained class priors and per-(class, feature) Gaussian moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbcParams {
    /// `P(c)`, length k.
    pub priors: Vec<f64>,
    /// `[k][n]` class-conditional means.
    pub means: Vec<Vec<f64>>,
    /// `[k][n]` class-conditional variances, floor already added.
    pub variances: Vec<Vec<f64>>,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Floor = `var_smoothing * max_j Var(x_j)` over the whole training set.
    pub var_smoothing: f64,
    /// Divide by `count - 1` instead of `count` (clamped to 1).
    pub unbiased_variance: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            var_smoothing: DEFAULT_VAR_SMOOTHING,
            unbiased_variance: false,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    #[serde(flatten)]
    params: GnbcParams,
}

impl GnbcParams {
    pub fn n_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Checks shape, prior normalization and variance positivity.
    pub fn validate(&self) -> Result<(), Error> {
        let k = self.priors.len();
        let n = self.feature_names.len();
        let bad = |msg: String| Err(Error::schema("model", msg));
        if k == 0 || n == 0 {
            return bad("empty model".into());
        }
        if self.class_names.len() != k {
            return bad(format!("{} class names for {k} priors", self.class_names.len()));
        }
        if self.means.len() != k || self.variances.len() != k {
            return bad("means/variances row count differs from prior count".into());
        }
        if self.means.iter().chain(&self.variances).any(|r| r.len() != n) {
            return bad(format!("means/variances must have {n} columns"));
        }
        if self.priors.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return bad("priors must be positive".into());
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("priors sum to {total}"));
        }
        if self.variances.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("variances must be positive and finite".into());
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return bad("means must be finite".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, Error> {
        self.validate()?;
        let file = ModelFile {
            schema: MODEL_SCHEMA.to_owned(),
            params: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.schema != MODEL_SCHEMA {
            return Err(Error::schema(
                "model",
                format!("expected schema {MODEL_SCHEMA}, found {}", file.schema),
            ));
        }
        file.params.validate()?;
        Ok(file.params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Trains with the default population-variance estimator.
pub fn train(train: &Dataset) -> Result<GnbcParams, GnbcError> {
    train_with(train, &TrainOptions::default())
}

pub fn train_with(ds: &Dataset, opts: &TrainOptions) -> Result<GnbcParams, GnbcError> {
    let k = ds.n_classes();
    let n = ds.n_features();
    let counts = ds.class_counts();
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(GnbcError::EmptyClass(ds.class_names[c].clone()));
    }
    let total = ds.n_samples() as f64;

    let mut means = vec![vec![0.0; n]; k];
    for (x, &y) in ds.features.iter().zip(&ds.labels) {
        for (acc, v) in means[y].iter_mut().zip(x) {
            *acc += v;
        }
    }
    for (row, &count) in means.iter_mut().zip(&counts) {
        row.iter_mut().for_each(|m| *m /= count as f64);
    }

    let mut variances = vec![vec![0.0; n]; k];
    for (x, &y) in ds.features.iter().zip(&ds.labels) {
        for ((acc, v), m) in variances[y].iter_mut().zip(x).zip(&means[y]) {
            *acc += (v - m) * (v - m);
        }
    }

    let max_var = (0..n)
        .map(|j| {
            let mean = ds.features.iter().map(|x| x[j]).sum::<f64>() / total;
            ds.features.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / total
        })
        .fold(0.0, f64::max);
    let floor = if max_var > 0.0 {
        opts.var_smoothing * max_var
    } else {
        opts.var_smoothing
    };

    for (row, &count) in variances.iter_mut().zip(&counts) {
        let denom = if opts.unbiased_variance {
            (count as f64 - 1.0).max(1.0)
        } else {
            count as f64
        };
        row.iter_mut().for_each(|v| *v = *v / denom + floor);
    }

    let priors = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(GnbcParams {
        priors,
        means,
        variances,
        class_names: ds.class_names.clone(),
        feature_names: ds.feature_names.clone(),
    })
}

/// Natural-log Gaussian density.
pub fn gaussian_log_pdf(x: f64, mean: f64, var: f64) -> Result<f64, GnbcError> {
    if !(var > 0.0) {
        return Err(GnbcError::NonPositiveVariance(var));
    }
    let d = x - mean;
    Ok(-0.5 * (2.0 * PI * var).ln() - d * d / (2.0 * var))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Float decision plus the unnormalized log-posterior of every class.
pub fn predict_float(params: &GnbcParams, sample: &[f64]) -> Result<(usize, Vec<f64>), GnbcError> {
    let n = params.n_features();
    if sample.len() != n {
        return Err(GnbcError::DimensionMismatch {
            expected: n,
            got: sample.len(),
        });
    }
    let mut scores = Vec::with_capacity(params.n_classes());
    for c in 0..params.n_classes() {
        let mut s = params.priors[c].ln();
        for (i, &x) in sample.iter().enumerate() {
            s += gaussian_log_pdf(x, params.means[c][i], params.variances[c][i])?;
        }
        scores.push(s);
    }
    Ok((argmax(&scores), scores))
}

/// Fraction of `ds` samples classified correctly by the float model.
pub fn accuracy(params: &GnbcParams, ds: &Dataset) -> Result<f64, GnbcError> {
    let mut correct = 0usize;
    for (x, &y) in ds.features.iter().zip(&ds.labels) {
        if predict_float(params, x)?.0 == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.n_samples().max(1) as f64)
}

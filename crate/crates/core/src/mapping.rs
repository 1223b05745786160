//! Probability-to-cell-state mapping.
//!
//! The pipeline per probability column (the prior column, or one column per
//! `(feature, bin)` holding the likelihood of every class):
//!
//! 1. evaluate the class likelihoods at the discretized evidence value,
//! 2. convert to `log_base` units and truncate everything more than `R`
//!    units below the column maximum,
//! 3. shift the column so that its maximum is exactly 1 (values land in
//!    `[1 - R, 1]`),
//! 4. quantize uniformly onto `L = 2^q_l` levels and map each level linearly
//!    onto a drain current in `[i_min, i_max]`.
//!
//! The column shift is a class-independent constant per column, so the sum
//! over activated columns keeps the argmax of the log-posterior.

use std::f64::consts::{LN_2, LN_10, SQRT_2};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::data::Dataset;
use crate::error::Error;
use crate::gnbc::{gaussian_log_pdf, GnbcError, GnbcParams};

pub const MAPPED_SCHEMA: &str = "febim-mapped/1";

/// Priors closer than this are treated as uniform and the prior column is dropped.
pub const UNIFORM_PRIOR_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("invalid quantization spec: {0}")]
    InvalidSpec(String),
    #[error("column has no positive entry")]
    AllZeroColumn,
    #[error("probability column contains invalid value {0}")]
    InvalidProbability(f64),
    #[error("malformed pulse table: {0}")]
    MalformedTable(String),
    #[error("state {state} out of range for {levels} levels")]
    StateOutOfRange { state: u32, levels: u32 },
    #[error("model has {model} features, dataset has {data}")]
    DimensionMismatch { model: usize, data: usize },
    #[error(transparent)]
    Gnbc(#[from] GnbcError),
}

/// How the likelihood of a discretized evidence value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    /// Gaussian density at the bin center.
    #[default]
    BinCenter,
    /// Gaussian probability mass over the bin; the end bins extend to ±∞.
    BinMass,
}

/// Quantization and current-mapping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    /// Feature precision in bits; `m = 2^q_f` evidence levels per feature.
    pub q_f: u32,
    /// Likelihood precision in bits; `L = 2^q_l` cell states.
    pub q_l: u32,
    pub log_base: f64,
    /// Truncation depth in `log_base` units (decades for base 10).
    pub range_decades: f64,
    pub i_min_ua: f64,
    pub i_max_ua: f64,
    #[serde(default)]
    pub likelihood: LikelihoodMode,
    /// Explicit state count overriding `2^q_l`, for cells whose level count
    /// is not a power of two.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_count: Option<u32>,
}

impl Default for QuantSpec {
    fn default() -> Self {
        Self {
            q_f: 4,
            q_l: 2,
            log_base: 10.0,
            range_decades: 2.0,
            i_min_ua: 0.1,
            i_max_ua: 1.0,
            likelihood: LikelihoodMode::BinCenter,
            level_count: None,
        }
    }
}

impl QuantSpec {
    pub fn with_bits(q_f: u32, q_l: u32) -> Self {
        Self {
            q_f,
            q_l,
            ..Self::default()
        }
    }

    /// `m`, evidence levels per feature.
    pub fn feature_levels(&self) -> usize {
        1usize << self.q_f
    }

    /// `L`, programmable cell states.
    pub fn levels(&self) -> u32 {
        self.level_count.unwrap_or(1u32 << self.q_l)
    }

    pub fn validate(&self) -> Result<(), MappingError> {
        let fail = |m: String| Err(MappingError::InvalidSpec(m));
        if !(1..=16).contains(&self.q_f) {
            return fail(format!("q_f must be in 1..=16, got {}", self.q_f));
        }
        if !(1..=16).contains(&self.q_l) {
            return fail(format!("q_l must be in 1..=16, got {}", self.q_l));
        }
        if self.levels() < 2 {
            return fail(format!("need at least 2 states, got {}", self.levels()));
        }
        if !(self.log_base > 1.0 && self.log_base.is_finite()) {
            return fail(format!("log_base must be > 1, got {}", self.log_base));
        }
        if !(self.range_decades > 0.0 && self.range_decades.is_finite()) {
            return fail(format!(
                "range_decades must be positive and finite, got {}",
                self.range_decades
            ));
        }
        if !(self.i_min_ua > 0.0 && self.i_max_ua > self.i_min_ua && self.i_max_ua.is_finite()) {
            return fail(format!(
                "need 0 < i_min < i_max, got [{}, {}]",
                self.i_min_ua, self.i_max_ua
            ));
        }
        Ok(())
    }

    fn ln_base(&self) -> f64 {
        if self.log_base == 10.0 {
            LN_10
        } else if self.log_base == 2.0 {
            LN_2
        } else {
            self.log_base.ln()
        }
    }
}

/// Equal-width evidence bins fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub m: usize,
}

impl BinSpec {
    pub fn n_features(&self) -> usize {
        self.lo.len()
    }

    /// Bin width of feature `i`; 1 for degenerate (`hi == lo`) features.
    pub fn width(&self, i: usize) -> f64 {
        if self.hi[i] > self.lo[i] {
            (self.hi[i] - self.lo[i]) / self.m as f64
        } else {
            1.0
        }
    }

    pub fn center(&self, i: usize, b: usize) -> f64 {
        self.lo[i] + (b as f64 + 0.5) * self.width(i)
    }

    /// Bin of a single value; out-of-range values clamp to the end bins.
    pub fn bin_of(&self, i: usize, x: f64) -> usize {
        let t = ((x - self.lo[i]) / self.width(i)).floor();
        if t >= 0.0 {
            (t as usize).min(self.m - 1)
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<(), MappingError> {
        if self.m < 2 {
            return Err(MappingError::InvalidSpec(format!("need m >= 2, got {}", self.m)));
        }
        if self.lo.len() != self.hi.len() {
            return Err(MappingError::InvalidSpec("lo/hi length mismatch".into()));
        }
        if self
            .lo
            .iter()
            .zip(&self.hi)
            .any(|(l, h)| !(l.is_finite() && h.is_finite() && h >= l))
        {
            return Err(MappingError::InvalidSpec("bin bounds must satisfy lo <= hi".into()));
        }
        Ok(())
    }
}

/// Fits `m` equal-width bins over each feature's training range.
pub fn fit_bins(train: &Dataset, m: usize) -> Result<BinSpec, MappingError> {
    if m < 2 {
        return Err(MappingError::InvalidSpec(format!("need m >= 2, got {m}")));
    }
    let n = train.n_features();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for x in &train.features {
        for j in 0..n {
            lo[j] = lo[j].min(x[j]);
            hi[j] = hi[j].max(x[j]);
        }
    }
    Ok(BinSpec { lo, hi, m })
}

/// Evidence bin per feature.
pub fn discretize(bins: &BinSpec, x: &[f64]) -> Vec<usize> {
    assert_eq!(x.len(), bins.n_features(), "sample length differs from bin spec");
    x.iter().enumerate().map(|(i, &v)| bins.bin_of(i, v)).collect()
}

/// Raw Gaussian densities at bin centers, indexed `[feature][bin][class]`.
pub fn tabulate_likelihoods(
    params: &GnbcParams,
    bins: &BinSpec,
) -> Result<Vec<Vec<Vec<f64>>>, MappingError> {
    let logs = tabulate_log_likelihoods(params, bins, LikelihoodMode::BinCenter)?;
    Ok(logs
        .into_iter()
        .map(|feat| {
            feat.into_iter()
                .map(|col| col.into_iter().map(f64::exp).collect())
                .collect()
        })
        .collect())
}

fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Gaussian mass on `[a, b]` computed on whichever tail keeps precision.
fn interval_mass(a: f64, b: f64, mean: f64, sd: f64) -> f64 {
    let za = (a - mean) / sd;
    let zb = (b - mean) / sd;
    if za >= 0.0 {
        upper_tail(za) - upper_tail(zb)
    } else if zb <= 0.0 {
        upper_tail(-zb) - upper_tail(-za)
    } else {
        1.0 - upper_tail(-za) - upper_tail(zb)
    }
}

/// Natural-log likelihoods indexed `[feature][bin][class]`.
pub fn tabulate_log_likelihoods(
    params: &GnbcParams,
    bins: &BinSpec,
    mode: LikelihoodMode,
) -> Result<Vec<Vec<Vec<f64>>>, MappingError> {
    let n = params.n_features();
    if bins.n_features() != n {
        return Err(MappingError::DimensionMismatch {
            model: n,
            data: bins.n_features(),
        });
    }
    let k = params.n_classes();
    let mut out = vec![vec![vec![0.0; k]; bins.m]; n];
    for (i, feat) in out.iter_mut().enumerate() {
        let w = bins.width(i);
        for (b, col) in feat.iter_mut().enumerate() {
            let center = bins.center(i, b);
            for (c, slot) in col.iter_mut().enumerate() {
                let (mean, var) = (params.means[c][i], params.variances[c][i]);
                let log_density = gaussian_log_pdf(center, mean, var)?;
                *slot = match mode {
                    LikelihoodMode::BinCenter => log_density,
                    LikelihoodMode::BinMass => {
                        let a = if b == 0 { f64::NEG_INFINITY } else { bins.lo[i] + b as f64 * w };
                        let z = if b + 1 == bins.m {
                            f64::INFINITY
                        } else {
                            bins.lo[i] + (b + 1) as f64 * w
                        };
                        let mass = interval_mass(a, z, mean, var.sqrt());
                        if mass > 0.0 {
                            mass.ln()
                        } else {
                            // Underflow: midpoint rule keeps the class ordering.
                            log_density + w.ln()
                        }
                    }
                };
            }
        }
    }
    Ok(out)
}

/// Shifts a column of `log_base`-unit values so its maximum is exactly 1,
/// truncating at `1 - range`. `range` may be infinite (no truncation).
fn normalize_in_base_units(values: &[f64], range: f64) -> Vec<f64> {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = 1.0 - range;
    values
        .iter()
        .map(|&v| {
            let p = 1.0 + (v.max(top - range) - top);
            p.max(floor)
        })
        .collect()
}

/// Normalizes a column of raw probabilities (or densities) into P′ values.
///
/// Entries below `max * base^-R` are raised to that floor before the log is
/// taken. An infinite `range_decades` disables the floor.
pub fn normalize_column(raw: &[f64], spec: &QuantSpec) -> Result<Vec<f64>, MappingError> {
    if let Some(&bad) = raw.iter().find(|v| !(**v >= 0.0) || v.is_infinite()) {
        return Err(MappingError::InvalidProbability(bad));
    }
    if !raw.iter().any(|&v| v > 0.0) {
        return Err(MappingError::AllZeroColumn);
    }
    let in_base: Vec<f64> = raw
        .iter()
        .map(|&v| match spec.log_base {
            b if b == 10.0 => v.log10(),
            b if b == 2.0 => v.log2(),
            b => v.ln() / b.ln(),
        })
        .collect();
    Ok(normalize_in_base_units(&in_base, spec.range_decades))
}

/// Same as [`normalize_column`] for natural-log inputs, which avoids
/// underflow for far-tail densities.
pub fn normalize_log_column(ln_values: &[f64], spec: &QuantSpec) -> Result<Vec<f64>, MappingError> {
    if let Some(&bad) = ln_values.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
        return Err(MappingError::InvalidProbability(bad));
    }
    if ln_values.iter().all(|&v| v == f64::NEG_INFINITY) {
        return Err(MappingError::AllZeroColumn);
    }
    let ln_base = spec.ln_base();
    let in_base: Vec<f64> = ln_values.iter().map(|&v| v / ln_base).collect();
    Ok(normalize_in_base_units(&in_base, spec.range_decades))
}

/// Uniform quantizer from `[1 - R, 1]` onto `0..L`, rounding half up.
pub fn quantize(p_prime: f64, spec: &QuantSpec) -> u32 {
    let r = spec.range_decades;
    let top = f64::from(spec.levels() - 1);
    let t = ((p_prime - (1.0 - r)) / r * top + 0.5).floor();
    if t >= top {
        spec.levels() - 1
    } else if t >= 0.0 {
        t as u32
    } else {
        0
    }
}

/// P′ value at the center of quantization level `q`.
pub fn level_value(q: u32, spec: &QuantSpec) -> f64 {
    let top = f64::from(spec.levels() - 1);
    (1.0 - spec.range_decades) + f64::from(q) / top * spec.range_decades
}

/// Linear state-to-current map in µA; exact at both endpoints.
pub fn state_to_current(q: u32, spec: &QuantSpec) -> f64 {
    let t = f64::from(q) / f64::from(spec.levels() - 1);
    (1.0 - t) * spec.i_min_ua + t * spec.i_max_ua
}

/// Nearest state for a current, the inverse of [`state_to_current`] on the grid.
pub fn current_to_state(i_ua: f64, spec: &QuantSpec) -> u32 {
    let top = f64::from(spec.levels() - 1);
    let t = ((i_ua - spec.i_min_ua) / (spec.i_max_ua - spec.i_min_ua) * top + 0.5).floor();
    t.clamp(0.0, top) as u32
}

/// Write-pulse counts per state, applied after a full erase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PulseTable {
    pub pulses: Vec<u32>,
}

impl PulseTable {
    /// State `q` takes `q` pulses.
    pub fn identity(levels: u32) -> Self {
        Self {
            pulses: (0..levels).collect(),
        }
    }

    pub fn validate(&self, levels: u32) -> Result<(), MappingError> {
        if self.pulses.len() != levels as usize {
            return Err(MappingError::MalformedTable(format!(
                "{} entries for {levels} states",
                self.pulses.len()
            )));
        }
        if let Some(w) = self.pulses.windows(2).position(|w| w[1] < w[0]) {
            return Err(MappingError::MalformedTable(format!(
                "entry {} decreases ({} -> {})",
                w + 1,
                self.pulses[w],
                self.pulses[w + 1]
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str, levels: u32) -> Result<Self, Error> {
        let table: PulseTable = serde_json::from_str(text)?;
        table.validate(levels)?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>, levels: u32) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, levels)
    }
}

/// Pulse count that programs state `q`.
pub fn programming_schedule(q: u32, table: &PulseTable) -> Result<u32, MappingError> {
    table
        .pulses
        .get(q as usize)
        .copied()
        .ok_or(MappingError::StateOutOfRange {
            state: q,
            levels: table.pulses.len() as u32,
        })
}

/// Normalized and quantized probability tables ready for programming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedModel {
    pub spec: QuantSpec,
    pub bins: BinSpec,
    /// P′ of each class prior.
    pub prior_col: Vec<f64>,
    pub prior_states: Vec<u32>,
    /// P′ indexed `[feature][bin][class]`.
    pub lik_cols: Vec<Vec<Vec<f64>>>,
    /// Quantized states, same shape as `lik_cols`.
    pub q_states: Vec<Vec<Vec<u32>>>,
    pub uniform_prior: bool,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MappedFile {
    schema: String,
    #[serde(flatten)]
    model: MappedModel,
}

impl MappedModel {
    pub fn n_classes(&self) -> usize {
        self.prior_col.len()
    }

    pub fn n_features(&self) -> usize {
        self.lik_cols.len()
    }

    /// Quantized score per class: the sum of activated states, plus the
    /// prior state when the prior column is kept.
    pub fn state_scores(&self, evidence_bins: &[usize]) -> Vec<u64> {
        let mut scores: Vec<u64> = if self.uniform_prior {
            vec![0; self.n_classes()]
        } else {
            self.prior_states.iter().map(|&q| u64::from(q)).collect()
        };
        for (feat, &b) in self.q_states.iter().zip(evidence_bins) {
            for (s, &q) in scores.iter_mut().zip(&feat[b]) {
                *s += u64::from(q);
            }
        }
        scores
    }

    /// Software reference for the quantized engine: argmax of
    /// [`state_scores`](Self::state_scores), lowest index on ties.
    pub fn predict_quantized(&self, sample: &[f64]) -> usize {
        let scores = self.state_scores(&discretize(&self.bins, sample));
        let mut best = 0;
        for (c, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = c;
            }
        }
        best
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::schema("mapped model", m));
        self.spec.validate()?;
        self.bins.validate()?;
        let k = self.prior_col.len();
        let n = self.lik_cols.len();
        let m = self.spec.feature_levels();
        let levels = self.spec.levels();
        let r = self.spec.range_decades;
        if k == 0 || self.class_names.len() != k || self.prior_states.len() != k {
            return bad("class count mismatch".into());
        }
        if n == 0 || self.feature_names.len() != n || self.bins.n_features() != n {
            return bad("feature count mismatch".into());
        }
        if self.bins.m != m || self.q_states.len() != n {
            return bad("bin count mismatch".into());
        }
        let columns = std::iter::once((&self.prior_col, &self.prior_states)).chain(
            self.lik_cols
                .iter()
                .zip(&self.q_states)
                .flat_map(|(pf, qf)| pf.iter().zip(qf.iter())),
        );
        let mut count = 0;
        for (p, q) in columns {
            count += 1;
            if p.len() != k || q.len() != k {
                return bad("column length differs from class count".into());
            }
            if p.iter().copied().fold(f64::NEG_INFINITY, f64::max) != 1.0 {
                return bad("column maximum is not 1".into());
            }
            if p.iter().any(|&v| !(v >= 1.0 - r && v <= 1.0)) {
                return bad("P' outside [1 - R, 1]".into());
            }
            if p.iter().zip(q).any(|(&v, &s)| s >= levels || quantize(v, &self.spec) != s) {
                return bad("state does not match quantized P'".into());
            }
        }
        if count != 1 + n * m {
            return bad(format!("expected {} columns, found {count}", 1 + n * m));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, Error> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(&MappedFile {
            schema: MAPPED_SCHEMA.to_owned(),
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let file: MappedFile = serde_json::from_str(text)?;
        if file.schema != MAPPED_SCHEMA {
            return Err(Error::schema(
                "mapped model",
                format!("expected schema {MAPPED_SCHEMA}, found {}", file.schema),
            ));
        }
        file.model.validate()?;
        Ok(file.model)
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

/// Fits bins on `train`, tabulates likelihoods, then normalizes and
/// quantizes every column.
pub fn map_model(
    params: &GnbcParams,
    train: &Dataset,
    spec: &QuantSpec,
) -> Result<MappedModel, MappingError> {
    spec.validate()?;
    if train.n_features() != params.n_features() {
        return Err(MappingError::DimensionMismatch {
            model: params.n_features(),
            data: train.n_features(),
        });
    }
    let bins = fit_bins(train, spec.feature_levels())?;
    let log_lik = tabulate_log_likelihoods(params, &bins, spec.likelihood)?;

    let ln_priors: Vec<f64> = params.priors.iter().map(|p| p.ln()).collect();
    let prior_col = normalize_log_column(&ln_priors, spec)?;
    let prior_states = prior_col.iter().map(|&p| quantize(p, spec)).collect();

    let mut lik_cols = Vec::with_capacity(log_lik.len());
    let mut q_states = Vec::with_capacity(log_lik.len());
    for feat in &log_lik {
        let mut p_feat = Vec::with_capacity(feat.len());
        let mut q_feat = Vec::with_capacity(feat.len());
        for col in feat {
            let p = normalize_log_column(col, spec)?;
            q_feat.push(p.iter().map(|&v| quantize(v, spec)).collect());
            p_feat.push(p);
        }
        lik_cols.push(p_feat);
        q_states.push(q_feat);
    }

    let first = params.priors[0];
    let uniform_prior = params
        .priors
        .iter()
        .all(|&p| (p - first).abs() <= UNIFORM_PRIOR_TOL);

    Ok(MappedModel {
        spec: *spec,
        bins,
        prior_col,
        prior_states,
        lik_cols,
        q_states,
        uniform_prior,
        class_names: params.class_names.clone(),
        feature_names: params.feature_names.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn r1(levels_bits: u32) -> QuantSpec {
        QuantSpec {
            range_decades: 1.0,
            ..QuantSpec::with_bits(4, levels_bits)
        }
    }

    fn bins_0_16() -> BinSpec {
        BinSpec {
            lo: vec![0.0],
            hi: vec![16.0],
            m: 16,
        }
    }

    #[test]
    fn bin_width_and_discretize() {
        let b = bins_0_16();
        assert_eq!(b.width(0), 1.0);
        assert_eq!(discretize(&b, &[0.0]), vec![0]);
        assert_eq!(discretize(&b, &[16.0]), vec![15]);
        assert_eq!(discretize(&b, &[-5.0]), vec![0]);
        assert_eq!(discretize(&b, &[99.0]), vec![15]);
        assert_eq!(discretize(&b, &[7.3]), vec![7]);
        assert_eq!(discretize(&b, &[f64::NAN]), vec![0]);
    }

    #[test]
    fn constant_feature_maps_to_bin_zero() {
        let ds = Dataset::new(
            "c",
            vec![vec![3.0, 1.0], vec![3.0, 2.0]],
            vec![0, 0],
            vec!["a".into(), "b".into()],
            vec!["x".into()],
        )
        .unwrap();
        let b = fit_bins(&ds, 4).unwrap();
        assert_eq!(b.width(0), 1.0);
        assert_eq!(b.bin_of(0, 3.0), 0);
        assert_eq!(b.bin_of(0, 3.2), 0);
        assert_eq!(b.width(1), 0.25);
        assert!(fit_bins(&ds, 1).is_err());
    }

    fn std_normal_params() -> GnbcParams {
        GnbcParams {
            priors: vec![1.0],
            means: vec![vec![0.0]],
            variances: vec![vec![1.0]],
            class_names: vec!["a".into()],
            feature_names: vec!["x".into()],
        }
    }

    #[test]
    fn density_at_bin_center() {
        // Bin 1 of [-0.5, 1.5] with m = 2 is centered at 1.0.
        let bins = BinSpec {
            lo: vec![-0.5],
            hi: vec![1.5],
            m: 2,
        };
        let t = tabulate_likelihoods(&std_normal_params(), &bins).unwrap();
        assert_abs_diff_eq!(t[0][1][0], 0.241_970_724_519_143_37, epsilon = 1e-15);
        assert_abs_diff_eq!(t[0][0][0], 0.398_942_280_401_432_7, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_bins_have_equal_density() {
        let bins = BinSpec {
            lo: vec![-2.0],
            hi: vec![2.0],
            m: 4,
        };
        let t = tabulate_likelihoods(&std_normal_params(), &bins).unwrap();
        assert_abs_diff_eq!(t[0][0][0], t[0][3][0], epsilon = 1e-15);
        assert_abs_diff_eq!(t[0][1][0], t[0][2][0], epsilon = 1e-15);
    }

    #[test]
    fn bin_mass_sums_to_one() {
        let bins = BinSpec {
            lo: vec![-3.0],
            hi: vec![5.0],
            m: 8,
        };
        let t = tabulate_log_likelihoods(&std_normal_params(), &bins, LikelihoodMode::BinMass).unwrap();
        let total: f64 = t[0].iter().map(|c| c[0].exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        // Bin [0, 1] of the standard normal; erfc is good to ~1e-11 here.
        assert_abs_diff_eq!(t[0][3][0].exp(), 0.341_344_746_068_542_9, epsilon = 1e-10);
    }

    #[test]
    fn normalize_truncated_example() {
        let p = normalize_column(&[1.0, 0.5, 0.1], &r1(2)).unwrap();
        assert_eq!(p[0], 1.0);
        assert_abs_diff_eq!(p[1], 1.0 - 2f64.log10(), epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 0.0, epsilon = 1e-12);

        let p = normalize_column(&[0.05, 1.0], &r1(2)).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn normalize_constant_and_zero_columns() {
        for c in [1e-30, 0.3, 7.0] {
            assert_eq!(normalize_column(&[c, c, c], &r1(2)).unwrap(), vec![1.0; 3]);
        }
        assert!(matches!(
            normalize_column(&[0.0, 0.0], &r1(2)),
            Err(MappingError::AllZeroColumn)
        ));
        assert!(normalize_column(&[-1.0, 1.0], &r1(2)).is_err());
        // A zero entry is floored like any tiny value.
        assert_eq!(normalize_column(&[0.0, 2.0], &r1(2)).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn normalize_without_truncation() {
        let spec = QuantSpec {
            range_decades: f64::INFINITY,
            ..QuantSpec::default()
        };
        let p = normalize_column(&[1e-5, 1e-2], &spec).unwrap();
        assert_abs_diff_eq!(p[0], -2.0, epsilon = 1e-12);
        assert_eq!(p[1], 1.0);
    }

    #[test]
    fn log_and_raw_normalization_agree() {
        let raw = [0.2, 0.03, 0.9, 1e-4];
        let spec = QuantSpec::default();
        let a = normalize_column(&raw, &spec).unwrap();
        let ln: Vec<f64> = raw.iter().map(|v| v.ln()).collect();
        let b = normalize_log_column(&ln, &spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    fn ten_levels() -> QuantSpec {
        QuantSpec {
            range_decades: 1.0,
            level_count: Some(10),
            ..QuantSpec::default()
        }
    }

    #[test]
    fn quantize_examples() {
        let s10 = ten_levels();
        assert_eq!(quantize(1.0, &s10), 9);
        assert_eq!(quantize(0.0, &s10), 0);
        assert_eq!(quantize(0.5, &s10), 5); // 4.5 rounds half up
        let s4 = r1(2);
        assert_eq!(quantize(0.3, &s4), 1);
        assert_eq!(quantize(0.5, &s4), 2); // 1.5 rounds half up
        assert_eq!(quantize(-3.0, &s4), 0);
        assert_eq!(quantize(7.0, &s4), 3);
    }

    #[test]
    fn currents() {
        let s10 = ten_levels();
        assert_eq!(state_to_current(0, &s10), 0.1);
        assert_eq!(state_to_current(9, &s10), 1.0);
        assert_abs_diff_eq!(state_to_current(5, &s10), 0.6, epsilon = 1e-12);
        let s4 = QuantSpec::with_bits(1, 2);
        assert_abs_diff_eq!(state_to_current(2, &s4), 0.7, epsilon = 1e-12);
        assert_eq!(state_to_current(0, &s4), 0.1);
        assert_eq!(state_to_current(3, &s4), 1.0);
        let s2 = QuantSpec::with_bits(1, 1);
        assert_eq!(state_to_current(1, &s2), 1.0);
        for q in 0..4 {
            assert_eq!(current_to_state(state_to_current(q, &s4), &s4), q);
        }
    }

    #[test]
    fn pulse_tables() {
        let id = PulseTable::identity(10);
        assert_eq!(programming_schedule(0, &id).unwrap(), 0);
        assert_eq!(programming_schedule(9, &id).unwrap(), 9);
        let custom = PulseTable::from_json("[0, 1, 3, 7]", 4).unwrap();
        assert_eq!(programming_schedule(2, &custom).unwrap(), 3);
        assert!(programming_schedule(4, &custom).is_err());
        assert!(PulseTable::from_json("[0, 3, 1, 7]", 4).is_err());
        assert!(PulseTable::from_json("[0, 1, 3]", 4).is_err());
        assert!(PulseTable::from_json("{\"a\": 1}", 4).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(QuantSpec::default().validate().is_ok());
        for bad in [
            QuantSpec { q_f: 0, ..QuantSpec::default() },
            QuantSpec { q_l: 0, ..QuantSpec::default() },
            QuantSpec { log_base: 1.0, ..QuantSpec::default() },
            QuantSpec { range_decades: 0.0, ..QuantSpec::default() },
            QuantSpec { range_decades: f64::INFINITY, ..QuantSpec::default() },
            QuantSpec { i_min_ua: 0.0, ..QuantSpec::default() },
            QuantSpec { i_max_ua: 0.05, ..QuantSpec::default() },
            QuantSpec { level_count: Some(1), ..QuantSpec::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}

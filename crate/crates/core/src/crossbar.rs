//! Behavioral model of the programmed crossbar.
//!
//! Rows are events (one wordline per class). Columns are an optional prior
//! column followed by `n` likelihood blocks of `m` columns each. During
//! inference the prior column and one column per block are activated; every
//! other cell is cut off and contributes no current. Activated cell currents
//! sum along each row and a winner-take-all stage picks the largest row.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Error;
use crate::mapping::{programming_schedule, state_to_current, MappedModel, PulseTable, QuantSpec};
use crate::seed::rng_for;

pub const CROSSBAR_SCHEMA: &str = "febim-crossbar/1";

/// Row currents closer than this (µA) are treated as equal by the WTA.
/// Absorbs float rounding in current sums so exact ties resolve by index.
pub const TIE_EPSILON_UA: f64 = 1e-9;

const VARIATION_STREAM: u64 = 0x5654_4856;

#[derive(Debug, Error)]
pub enum CrossbarError {
    #[error("evidence has {got} entries, array has {expected} blocks")]
    EvidenceLength { expected: usize, got: usize },
    #[error("evidence bin {bin} for feature {feature} out of range (m = {m})")]
    BinOutOfRange { feature: usize, bin: usize, m: usize },
    #[error("column {0} out of range")]
    ColumnOutOfRange(usize),
    #[error("noise matrix shape does not match the array")]
    NoiseShape,
}

/// Programmed array: discrete cell states and their nominal drain currents.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarImage {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub levels: u32,
    pub has_prior_col: bool,
    pub i_min_ua: f64,
    pub i_max_ua: f64,
    /// `[k][cols]`
    pub states: Vec<Vec<u32>>,
    /// `[k][cols]`, µA
    pub nominal_currents: Vec<Vec<f64>>,
}

impl CrossbarImage {
    pub fn cols(&self) -> usize {
        usize::from(self.has_prior_col) + self.n * self.m
    }

    /// Column index of likelihood block `feature`, bin `bin`.
    pub fn likelihood_col(&self, feature: usize, bin: usize) -> usize {
        usize::from(self.has_prior_col) + feature * self.m + bin
    }

    fn current_spec(&self) -> QuantSpec {
        QuantSpec {
            i_min_ua: self.i_min_ua,
            i_max_ua: self.i_max_ua,
            level_count: Some(self.levels),
            ..QuantSpec::default()
        }
    }

    /// Rebuilds an image from raw states, recomputing nominal currents.
    pub fn from_states(
        n: usize,
        m: usize,
        levels: u32,
        has_prior_col: bool,
        i_min_ua: f64,
        i_max_ua: f64,
        states: Vec<Vec<u32>>,
    ) -> Result<Self, Error> {
        let mut image = CrossbarImage {
            k: states.len(),
            n,
            m,
            levels,
            has_prior_col,
            i_min_ua,
            i_max_ua,
            states,
            nominal_currents: Vec::new(),
        };
        let spec = image.current_spec();
        spec.validate()?;
        image.nominal_currents = image
            .states
            .iter()
            .map(|row| row.iter().map(|&q| state_to_current(q, &spec)).collect())
            .collect();
        image.validate()?;
        Ok(image)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::schema("crossbar", m));
        if self.k == 0 || self.n == 0 || self.m < 2 {
            return bad("empty geometry".into());
        }
        if self.states.len() != self.k || self.nominal_currents.len() != self.k {
            return bad(format!("expected {} rows", self.k));
        }
        let cols = self.cols();
        if self.states.iter().any(|r| r.len() != cols)
            || self.nominal_currents.iter().any(|r| r.len() != cols)
        {
            return bad(format!("expected {cols} columns"));
        }
        if self.states.iter().flatten().any(|&q| q >= self.levels) {
            return bad(format!("state outside 0..{}", self.levels));
        }
        let spec = self.current_spec();
        let consistent = self
            .states
            .iter()
            .flatten()
            .zip(self.nominal_currents.iter().flatten())
            .all(|(&q, &i)| state_to_current(q, &spec) == i);
        if !consistent {
            return bad("nominal currents disagree with states".into());
        }
        Ok(())
    }
}

/// Copies the mapped states into the array layout; the prior column is
/// omitted when the priors are uniform.
pub fn program(model: &MappedModel) -> CrossbarImage {
    let k = model.n_classes();
    let n = model.n_features();
    let m = model.spec.feature_levels();
    let has_prior_col = !model.uniform_prior;
    let mut states = vec![Vec::with_capacity(usize::from(has_prior_col) + n * m); k];
    for (c, row) in states.iter_mut().enumerate() {
        if has_prior_col {
            row.push(model.prior_states[c]);
        }
        for feat in &model.q_states {
            row.extend(feat.iter().map(|col| col[c]));
        }
    }
    let nominal_currents = states
        .iter()
        .map(|row| row.iter().map(|&q| state_to_current(q, &model.spec)).collect())
        .collect();
    CrossbarImage {
        k,
        n,
        m,
        levels: model.spec.levels(),
        has_prior_col,
        i_min_ua: model.spec.i_min_ua,
        i_max_ua: model.spec.i_max_ua,
        states,
        nominal_currents,
    }
}

/// Device and sensing parameters.
///
/// The operating voltages are carried for documentation and export only; no
/// electrical simulation is performed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    /// Standard deviation of the programmed threshold voltage, volts.
    pub sigma_vth_v: f64,
    /// Read-current sensitivity to threshold shifts, µA/V. When absent it is
    /// derived as `(i_max - i_min) / memory_window_v`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity_ua_per_v: Option<f64>,
    pub memory_window_v: f64,
    pub v_on_v: f64,
    pub v_off_v: f64,
    pub v_write_v: f64,
    /// WTA resolution: a runner-up within this gap of the winner is flagged.
    pub wta_delta_ua: f64,
}

impl Default for DeviceModel {
    fn default() -> Self {
        Self {
            sigma_vth_v: 0.0,
            sensitivity_ua_per_v: None,
            memory_window_v: 1.8,
            v_on_v: 0.5,
            v_off_v: -0.5,
            v_write_v: 4.0,
            wta_delta_ua: 0.0,
        }
    }
}

impl DeviceModel {
    pub fn with_sigma_mv(mut self, sigma_mv: f64) -> Self {
        self.sigma_vth_v = sigma_mv / 1000.0;
        self
    }

    pub fn sensitivity(&self, image: &CrossbarImage) -> f64 {
        self.sensitivity_ua_per_v
            .unwrap_or((image.i_max_ua - image.i_min_ua) / self.memory_window_v)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(format!("device model: {m}")));
        if !(self.sigma_vth_v >= 0.0 && self.sigma_vth_v.is_finite()) {
            return bad("sigma_vth must be finite and >= 0");
        }
        if !(self.memory_window_v > 0.0 && self.memory_window_v.is_finite()) {
            return bad("memory window must be positive");
        }
        if let Some(g) = self.sensitivity_ua_per_v {
            if !(g >= 0.0 && g.is_finite()) {
                return bad("sensitivity must be finite and >= 0");
            }
        }
        if !(self.wta_delta_ua >= 0.0 && self.wta_delta_ua.is_finite()) {
            return bad("wta delta must be finite and >= 0");
        }
        Ok(())
    }
}

/// Per-cell current offsets (µA) drawn once per programming event.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta_ua: Vec<Vec<f64>>,
}

impl Perturbation {
    pub fn zeros(image: &CrossbarImage) -> Self {
        Self {
            delta_ua: vec![vec![0.0; image.cols()]; image.k],
        }
    }
}

/// Draws `ΔV ~ N(0, σ²)` per cell and converts it to `ΔI = -g ΔV`.
pub fn perturb(image: &CrossbarImage, dev: &DeviceModel, seed: u64) -> Perturbation {
    let mut out = Perturbation::zeros(image);
    if dev.sigma_vth_v == 0.0 {
        return out;
    }
    let g = dev.sensitivity(image);
    let normal = Normal::new(0.0, dev.sigma_vth_v).expect("sigma validated as finite and >= 0");
    let mut rng = rng_for(&[VARIATION_STREAM, seed]);
    for row in &mut out.delta_ua {
        for cell in row.iter_mut() {
            let dv: f64 = normal.sample(&mut rng);
            *cell = -g * dv;
        }
    }
    out
}

/// Columns driven with the read voltage for the given evidence.
pub fn activation(image: &CrossbarImage, evidence_bins: &[usize]) -> Result<Vec<usize>, CrossbarError> {
    if evidence_bins.len() != image.n {
        return Err(CrossbarError::EvidenceLength {
            expected: image.n,
            got: evidence_bins.len(),
        });
    }
    let mut cols = Vec::with_capacity(usize::from(image.has_prior_col) + image.n);
    if image.has_prior_col {
        cols.push(0);
    }
    for (feature, &bin) in evidence_bins.iter().enumerate() {
        if bin >= image.m {
            return Err(CrossbarError::BinOutOfRange {
                feature,
                bin,
                m: image.m,
            });
        }
        cols.push(image.likelihood_col(feature, bin));
    }
    Ok(cols)
}

/// Wordline currents: the sum over active columns of each cell's current,
/// clamped at zero after perturbation. Inactive cells contribute nothing.
pub fn row_currents(
    image: &CrossbarImage,
    active: &[usize],
    noise: Option<&Perturbation>,
) -> Result<Vec<f64>, CrossbarError> {
    let cols = image.cols();
    if let Some(&c) = active.iter().find(|&&c| c >= cols) {
        return Err(CrossbarError::ColumnOutOfRange(c));
    }
    if let Some(p) = noise {
        if p.delta_ua.len() != image.k || p.delta_ua.iter().any(|r| r.len() != cols) {
            return Err(CrossbarError::NoiseShape);
        }
    }
    Ok((0..image.k)
        .map(|r| {
            let nominal = &image.nominal_currents[r];
            match noise {
                None => active.iter().map(|&c| nominal[c]).sum(),
                Some(p) => active
                    .iter()
                    .map(|&c| (nominal[c] + p.delta_ua[r][c]).max(0.0))
                    .sum(),
            }
        })
        .collect())
}

/// Winner-take-all: lowest row index attaining the maximum, and whether the
/// runner-up lies within `delta_ua` of it.
pub fn wta_select(currents: &[f64], delta_ua: f64) -> (usize, bool) {
    let max = currents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winner = currents
        .iter()
        .position(|&i| i >= max - TIE_EPSILON_UA)
        .unwrap_or(0);
    let ambiguous = currents
        .iter()
        .enumerate()
        .any(|(r, &i)| r != winner && max - i <= delta_ua + TIE_EPSILON_UA);
    (winner, ambiguous)
}

/// One inference cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub activated_columns: Vec<usize>,
    pub row_currents: Vec<f64>,
    pub winner: usize,
    pub ambiguous: bool,
}

/// Activation, current accumulation and WTA in one step.
pub fn infer(
    image: &CrossbarImage,
    dev: &DeviceModel,
    evidence_bins: &[usize],
    noise: Option<&Perturbation>,
) -> Result<InferenceTrace, CrossbarError> {
    let activated_columns = activation(image, evidence_bins)?;
    let currents = row_currents(image, &activated_columns, noise)?;
    let (winner, ambiguous) = wta_select(&currents, dev.wta_delta_ua);
    Ok(InferenceTrace {
        activated_columns,
        row_currents: currents,
        winner,
        ambiguous,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub rows: usize,
    pub cols: usize,
    pub n: usize,
    pub m: usize,
    pub levels: u32,
    pub has_prior_col: bool,
    pub i_min_ua: f64,
    pub i_max_ua: f64,
}

/// Serialized crossbar: geometry, states, per-cell pulse counts and the
/// device model, enough to replay inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarExport {
    pub schema: String,
    pub geometry: Geometry,
    pub states: Vec<Vec<u32>>,
    pub pulse_table: PulseTable,
    pub pulse_schedule: Vec<Vec<u32>>,
    pub device_model: DeviceModel,
}

impl CrossbarExport {
    pub fn new(image: &CrossbarImage, table: &PulseTable, device: &DeviceModel) -> Result<Self, Error> {
        image.validate()?;
        table.validate(image.levels)?;
        let pulse_schedule = image
            .states
            .iter()
            .map(|row| row.iter().map(|&q| programming_schedule(q, table)).collect())
            .collect::<Result<_, _>>()?;
        Ok(Self {
            schema: CROSSBAR_SCHEMA.to_owned(),
            geometry: Geometry {
                rows: image.k,
                cols: image.cols(),
                n: image.n,
                m: image.m,
                levels: image.levels,
                has_prior_col: image.has_prior_col,
                i_min_ua: image.i_min_ua,
                i_max_ua: image.i_max_ua,
            },
            states: image.states.clone(),
            pulse_table: table.clone(),
            pulse_schedule,
            device_model: *device,
        })
    }

    /// Rebuilds and checks the image described by this export.
    pub fn image(&self) -> Result<CrossbarImage, Error> {
        if self.schema != CROSSBAR_SCHEMA {
            return Err(Error::schema(
                "crossbar",
                format!("expected schema {CROSSBAR_SCHEMA}, found {}", self.schema),
            ));
        }
        let g = &self.geometry;
        let image = CrossbarImage::from_states(
            g.n,
            g.m,
            g.levels,
            g.has_prior_col,
            g.i_min_ua,
            g.i_max_ua,
            self.states.clone(),
        )?;
        if image.k != g.rows || image.cols() != g.cols {
            return Err(Error::schema("crossbar", "geometry disagrees with state matrix"));
        }
        self.pulse_table.validate(g.levels)?;
        self.device_model.validate()?;
        let expected: Vec<Vec<u32>> = image
            .states
            .iter()
            .map(|row| row.iter().map(|&q| self.pulse_table.pulses[q as usize]).collect())
            .collect();
        if expected != self.pulse_schedule {
            return Err(Error::schema("crossbar", "pulse schedule disagrees with states"));
        }
        Ok(image)
    }

    pub fn to_json(&self) -> Result<String, Error> {
        self.image()?;
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let export: CrossbarExport = serde_json::from_str(text)?;
        export.image()?;
        Ok(export)
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

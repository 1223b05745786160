//! Multi-epoch benchmark protocol and report emission.
//!
//! An epoch is a fresh stratified split, GNBC retraining, remapping,
//! reprogramming and, for non-zero variation, a fresh device draw. Split
//! streams depend only on `(base_seed, epoch)`, so every grid cell of a sweep
//! sees the same partitions; variation streams additionally depend on the
//! cell coordinates. Tasks run in parallel and are collected in grid order.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossbar::{infer, perturb, program, CrossbarImage, DeviceModel, Perturbation};
use crate::data::{split_indices, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::gnbc::{self, TrainOptions};
use crate::mapping::{discretize, map_model, MappedModel, QuantSpec};
use crate::seed::derive_seed;

pub const REPORT_SCHEMA: &str = "febim-report/1";

/// Column header of the per-epoch report CSV.
pub const EPOCH_CSV_HEADER: [&str; 8] = [
    "dataset",
    "q_f",
    "q_l",
    "sigma_vth_mV",
    "epoch",
    "baseline_acc",
    "quantized_acc",
    "crossbar_acc",
];

/// Column header of the per-record summary CSV.
pub const SUMMARY_CSV_HEADER: [&str; 11] = [
    "dataset",
    "q_f",
    "q_l",
    "sigma_vth_mV",
    "epochs",
    "baseline_mean_acc",
    "quantized_mean_acc",
    "mean_acc",
    "std_acc",
    "delta_acc",
    "within_1pct",
];

/// Accuracy-loss threshold used to flag grid cells.
pub const DELTA_ACC_THRESHOLD: f64 = 0.01;

/// Variation level and accuracy drop used for the calibration note.
pub const CALIBRATION_SIGMA_MV: f64 = 45.0;
pub const CALIBRATION_REFERENCE_DROP: f64 = 0.05;

const VARIATION_TASK_STREAM: u64 = 0x004d_4356_4152;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Bundled dataset name or CSV path.
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    pub epochs: u64,
    pub test_fraction: f64,
    pub stratify: bool,
    pub base_seed: u64,
    pub qf_grid: Vec<u32>,
    pub ql_grid: Vec<u32>,
    /// Threshold-voltage variation levels, millivolts.
    pub sigma_mv: Vec<f64>,
    /// Template; `q_f`/`q_l` are replaced per grid cell.
    pub quant: QuantSpec,
    pub device: DeviceModel,
    pub train: TrainOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "iris".into(),
            label_column: None,
            epochs: 100,
            test_fraction: 0.7,
            stratify: true,
            base_seed: 42,
            qf_grid: (1..=8).collect(),
            ql_grid: (1..=8).collect(),
            sigma_mv: vec![0.0, 15.0, 30.0, 45.0, 60.0],
            quant: QuantSpec::default(),
            device: DeviceModel::default(),
            train: TrainOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} not in (0, 1)", self.test_fraction));
        }
        if self.qf_grid.is_empty() || self.ql_grid.is_empty() || self.sigma_mv.is_empty() {
            return bad("grids must be non-empty".into());
        }
        for (&q_f, &q_l) in self.qf_grid.iter().zip(self.ql_grid.iter().cycle()) {
            self.spec_for(q_f, q_l).validate()?;
        }
        for &q_l in &self.ql_grid {
            self.spec_for(self.qf_grid[0], q_l).validate()?;
        }
        if self.sigma_mv.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigma values must be finite and >= 0".into());
        }
        if !(self.train.var_smoothing >= 0.0 && self.train.var_smoothing.is_finite()) {
            return bad("var_smoothing must be finite and >= 0".into());
        }
        self.device.validate()
    }

    pub fn spec_for(&self, q_f: u32, q_l: u32) -> QuantSpec {
        QuantSpec {
            q_f,
            q_l,
            ..self.quant
        }
    }

    pub fn split_spec(&self, epoch: u64) -> SplitSpec {
        SplitSpec {
            test_fraction: self.test_fraction,
            seed: self.base_seed,
            epoch,
            stratify: self.stratify,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Seed of the variation draw for one task.
    pub fn variation_seed(&self, q_f: u32, q_l: u32, sigma_mv: f64, epoch: u64) -> u64 {
        derive_seed(&[
            VARIATION_TASK_STREAM,
            self.base_seed,
            u64::from(q_f),
            u64::from(q_l),
            sigma_mv.to_bits(),
            epoch,
        ])
    }
}

/// Accuracies of the three inference routes on one test partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochOutcome {
    pub baseline_acc: f64,
    pub quantized_acc: f64,
    pub crossbar_acc: f64,
}

/// Everything produced while running one epoch, for callers that need more
/// than the accuracies.
#[derive(Debug, Clone)]
pub struct EpochArtifacts {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub params: gnbc::GnbcParams,
    pub mapped: MappedModel,
    pub image: CrossbarImage,
    pub noise: Perturbation,
    pub outcome: EpochOutcome,
}

pub fn run_epoch_detailed(
    ds: &Dataset,
    config: &ExperimentConfig,
    epoch: u64,
    q_f: u32,
    q_l: u32,
    sigma_mv: f64,
) -> Result<EpochArtifacts> {
    let idx = split_indices(ds, &config.split_spec(epoch))?;
    if idx.test.is_empty() {
        return Err(Error::Config("test partition is empty".into()));
    }
    let train = ds.subset(&idx.train);
    let params = gnbc::train_with(&train, &config.train)?;
    let spec = config.spec_for(q_f, q_l);
    let mapped = map_model(&params, &train, &spec)?;
    let image = program(&mapped);
    let device = config.device.with_sigma_mv(sigma_mv);
    let noise = perturb(&image, &device, config.variation_seed(q_f, q_l, sigma_mv, epoch));

    let (mut float_ok, mut quant_ok, mut xbar_ok) = (0usize, 0usize, 0usize);
    for &i in &idx.test {
        let x = &ds.features[i];
        let y = ds.labels[i];
        float_ok += usize::from(gnbc::predict_float(&params, x)?.0 == y);
        quant_ok += usize::from(mapped.predict_quantized(x) == y);
        let bins = discretize(&mapped.bins, x);
        xbar_ok += usize::from(infer(&image, &device, &bins, Some(&noise))?.winner == y);
    }
    let total = idx.test.len() as f64;
    Ok(EpochArtifacts {
        train_indices: idx.train,
        test_indices: idx.test,
        params,
        mapped,
        image,
        noise,
        outcome: EpochOutcome {
            baseline_acc: float_ok as f64 / total,
            quantized_acc: quant_ok as f64 / total,
            crossbar_acc: xbar_ok as f64 / total,
        },
    })
}

/// Float baseline, software-quantized and crossbar accuracy for one epoch.
pub fn run_epoch(
    ds: &Dataset,
    config: &ExperimentConfig,
    epoch: u64,
    q_f: u32,
    q_l: u32,
    sigma_mv: f64,
) -> Result<EpochOutcome> {
    Ok(run_epoch_detailed(ds, config, epoch, q_f, q_l, sigma_mv)?.outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Quantization,
    Variation,
}

/// Aggregated statistics of one grid cell. `mean_acc` is the crossbar accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub q_f: u32,
    pub q_l: u32,
    pub sigma_vth_mv: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub per_epoch_acc: Vec<f64>,
    pub quantized_mean_acc: f64,
    pub per_epoch_quantized_acc: Vec<f64>,
    pub baseline_mean_acc: f64,
    pub per_epoch_baseline_acc: Vec<f64>,
    pub delta_acc: f64,
    pub within_1pct: bool,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
fn std_dev(values: &[f64]) -> f64 {
    let mu = mean(values);
    (values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64).sqrt()
}

impl SweepRecord {
    pub fn from_outcomes(q_f: u32, q_l: u32, sigma_vth_mv: f64, outcomes: &[EpochOutcome]) -> Self {
        let xbar: Vec<f64> = outcomes.iter().map(|o| o.crossbar_acc).collect();
        let quant: Vec<f64> = outcomes.iter().map(|o| o.quantized_acc).collect();
        let base: Vec<f64> = outcomes.iter().map(|o| o.baseline_acc).collect();
        let mean_acc = mean(&xbar);
        let baseline_mean_acc = mean(&base);
        let delta_acc = baseline_mean_acc - mean_acc;
        Self {
            q_f,
            q_l,
            sigma_vth_mv,
            mean_acc,
            std_acc: std_dev(&xbar),
            per_epoch_acc: xbar,
            quantized_mean_acc: mean(&quant),
            per_epoch_quantized_acc: quant,
            baseline_mean_acc,
            per_epoch_baseline_acc: base,
            delta_acc,
            within_1pct: delta_acc < DELTA_ACC_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub base_seed: u64,
    pub version: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: String,
    pub kind: SweepKind,
    pub dataset: String,
    pub metadata: ReportMetadata,
    pub records: Vec<SweepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_note: Option<String>,
}

impl SweepReport {
    fn new(kind: SweepKind, dataset: &str, config: &ExperimentConfig, records: Vec<SweepRecord>) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_owned(),
            kind,
            dataset: dataset.to_owned(),
            metadata: ReportMetadata {
                config_hash: config.hash(),
                base_seed: config.base_seed,
                version: env!("CARGO_PKG_VERSION").to_owned(),
                config: config.clone(),
            },
            records,
            calibration_note: None,
        }
    }

    pub fn record(&self, q_f: u32, q_l: u32, sigma_mv: f64) -> Option<&SweepRecord> {
        self.records
            .iter()
            .find(|r| r.q_f == q_f && r.q_l == q_l && r.sigma_vth_mv == sigma_mv)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::schema("report", m));
        if self.schema != REPORT_SCHEMA {
            return bad(format!("expected schema {REPORT_SCHEMA}, found {}", self.schema));
        }
        if self.metadata.config.hash() != self.metadata.config_hash {
            return bad("config hash does not match embedded config".into());
        }
        let epochs = self.metadata.config.epochs as usize;
        for r in &self.records {
            let lens = [
                r.per_epoch_acc.len(),
                r.per_epoch_quantized_acc.len(),
                r.per_epoch_baseline_acc.len(),
            ];
            if lens.iter().any(|&l| l != epochs) {
                return bad(format!(
                    "record ({}, {}, {}) has per-epoch lists of length {lens:?}, expected {epochs}",
                    r.q_f, r.q_l, r.sigma_vth_mv
                ));
            }
            if (mean(&r.per_epoch_acc) - r.mean_acc).abs() > 1e-12
                || (mean(&r.per_epoch_baseline_acc) - r.baseline_mean_acc).abs() > 1e-12
                || (mean(&r.per_epoch_quantized_acc) - r.quantized_mean_acc).abs() > 1e-12
            {
                return bad("mean accuracy disagrees with per-epoch values".into());
            }
            if (r.baseline_mean_acc - r.mean_acc - r.delta_acc).abs() > 1e-12 {
                return bad("delta_acc != baseline_mean_acc - mean_acc".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: SweepReport = serde_json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Per-epoch CSV, one row per `(record, epoch)`.
    pub fn write_epoch_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(EPOCH_CSV_HEADER)?;
        for r in &self.records {
            for e in 0..r.per_epoch_acc.len() {
                w.write_record([
                    self.dataset.clone(),
                    r.q_f.to_string(),
                    r.q_l.to_string(),
                    r.sigma_vth_mv.to_string(),
                    e.to_string(),
                    r.per_epoch_baseline_acc[e].to_string(),
                    r.per_epoch_quantized_acc[e].to_string(),
                    r.per_epoch_acc[e].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Summary CSV, one row per record.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SUMMARY_CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                self.dataset.clone(),
                r.q_f.to_string(),
                r.q_l.to_string(),
                r.sigma_vth_mv.to_string(),
                r.per_epoch_acc.len().to_string(),
                r.baseline_mean_acc.to_string(),
                r.quantized_mean_acc.to_string(),
                r.mean_acc.to_string(),
                r.std_acc.to_string(),
                r.delta_acc.to_string(),
                r.within_1pct.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Human-readable table for terminals.
    pub fn summary_table(&self) -> String {
        let mut s = format!(
            "{} sweep on {} ({} epochs, config {})\n",
            match self.kind {
                SweepKind::Quantization => "quantization",
                SweepKind::Variation => "variation",
            },
            self.dataset,
            self.metadata.config.epochs,
            &self.metadata.config_hash[..12],
        );
        s.push_str("  q_f  q_l  sigma_mV  baseline  quantized  crossbar     std   delta\n");
        for r in &self.records {
            s.push_str(&format!(
                "  {:>3}  {:>3}  {:>8.1}  {:>8.4}  {:>9.4}  {:>8.4}  {:>6.4}  {:>+6.4}{}\n",
                r.q_f,
                r.q_l,
                r.sigma_vth_mv,
                r.baseline_mean_acc,
                r.quantized_mean_acc,
                r.mean_acc,
                r.std_acc,
                r.delta_acc,
                if r.within_1pct { "  *" } else { "" }
            ));
        }
        if let Some(note) = &self.calibration_note {
            s.push_str(note);
            s.push('\n');
        }
        s
    }
}

fn run_cells(
    ds: &Dataset,
    config: &ExperimentConfig,
    cells: &[(u32, u32, f64)],
) -> Result<Vec<SweepRecord>> {
    let epochs = config.epochs;
    let tasks: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..epochs).map(move |e| (c, e)))
        .collect();
    let outcomes: Vec<EpochOutcome> = tasks
        .par_iter()
        .map(|&(c, e)| {
            let (q_f, q_l, sigma) = cells[c];
            run_epoch(ds, config, e, q_f, q_l, sigma)
        })
        .collect::<Result<_>>()?;
    Ok(cells
        .iter()
        .zip(outcomes.chunks(epochs as usize))
        .map(|(&(q_f, q_l, sigma), chunk)| SweepRecord::from_outcomes(q_f, q_l, sigma, chunk))
        .collect())
}

/// Accuracy over the `qf_grid × ql_grid` at zero variation.
pub fn quant_sweep(ds: &Dataset, config: &ExperimentConfig) -> Result<SweepReport> {
    config.validate()?;
    let cells: Vec<(u32, u32, f64)> = config
        .qf_grid
        .iter()
        .flat_map(|&q_f| config.ql_grid.iter().map(move |&q_l| (q_f, q_l, 0.0)))
        .collect();
    let records = run_cells(ds, config, &cells)?;
    Ok(SweepReport::new(SweepKind::Quantization, &ds.name, config, records))
}

/// Accuracy distribution for every level in `sigma_mv` at a fixed precision.
pub fn variation_sweep(
    ds: &Dataset,
    config: &ExperimentConfig,
    q_f: u32,
    q_l: u32,
) -> Result<SweepReport> {
    config.validate()?;
    config.spec_for(q_f, q_l).validate()?;
    let cells: Vec<(u32, u32, f64)> = config.sigma_mv.iter().map(|&s| (q_f, q_l, s)).collect();
    let records = run_cells(ds, config, &cells)?;
    let mut report = SweepReport::new(SweepKind::Variation, &ds.name, config, records);
    report.calibration_note = calibration_note(&report);
    Ok(report)
}

/// Measured drop at the calibration variation level next to the reference value.
pub fn calibration_note(report: &SweepReport) -> Option<String> {
    let at = report
        .records
        .iter()
        .find(|r| r.sigma_vth_mv == CALIBRATION_SIGMA_MV)?;
    let noise_free = report.records.iter().find(|r| r.sigma_vth_mv == 0.0);
    let mut note = format!(
        "calibration: sigma_vth = {CALIBRATION_SIGMA_MV} mV gives mean crossbar accuracy {:.2}%, \
         a drop of {:.2}% vs the float baseline",
        100.0 * at.mean_acc,
        100.0 * at.delta_acc
    );
    if let Some(nf) = noise_free {
        note.push_str(&format!(
            " ({:.2}% vs the noise-free array)",
            100.0 * (nf.mean_acc - at.mean_acc)
        ));
    }
    note.push_str(&format!(
        "; reference drop ~{:.0}%. The threshold-to-current transfer is a linear \
         sensitivity assumption, so this comparison is a calibration check.",
        100.0 * CALIBRATION_REFERENCE_DROP
    ));
    Some(note)
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub epoch_csv: PathBuf,
    pub summary_csv: PathBuf,
}

/// Writes `<stem>.json`, `<stem>.csv` (per epoch) and `<stem>_summary.csv`.
pub fn emit_report(report: &SweepReport, dir: impl AsRef<Path>, stem: &str) -> Result<ReportPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = ReportPaths {
        json: dir.join(format!("{stem}.json")),
        epoch_csv: dir.join(format!("{stem}.csv")),
        summary_csv: dir.join(format!("{stem}_summary.csv")),
    };
    let json = report.to_json()?;
    std::fs::write(&paths.json, json).map_err(|e| Error::io(&paths.json, e))?;

    let mut buf = Vec::new();
    report.write_epoch_csv(&mut buf)?;
    std::fs::write(&paths.epoch_csv, buf).map_err(|e| Error::io(&paths.epoch_csv, e))?;

    let mut buf = Vec::new();
    report.write_summary_csv(&mut buf)?;
    std::fs::write(&paths.summary_csv, buf).map_err(|e| Error::io(&paths.summary_csv, e))?;
    Ok(paths)
}

/// One classified sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sample_index: usize,
    pub label: usize,
    pub software_pred: usize,
    pub crossbar_pred: usize,
    pub ambiguous: bool,
    pub row_currents: Vec<f64>,
}

/// Classifies `indices` of `ds` with both the software-quantized reference
/// and the crossbar.
pub fn predict_samples(
    ds: &Dataset,
    indices: &[usize],
    mapped: &MappedModel,
    image: &CrossbarImage,
    device: &DeviceModel,
    noise: Option<&Perturbation>,
) -> Result<Vec<Prediction>> {
    if ds.n_features() != mapped.n_features() {
        return Err(Error::Config(format!(
            "dataset has {} features, model expects {}",
            ds.n_features(),
            mapped.n_features()
        )));
    }
    indices
        .iter()
        .map(|&i| {
            let x = &ds.features[i];
            let trace = infer(image, device, &discretize(&mapped.bins, x), noise)?;
            Ok(Prediction {
                sample_index: i,
                label: ds.labels[i],
                software_pred: mapped.predict_quantized(x),
                crossbar_pred: trace.winner,
                ambiguous: trace.ambiguous,
                row_currents: trace.row_currents,
            })
        })
        .collect()
}

/// Predictions CSV; `trace` appends one `i_wl_<row>` column per wordline.
pub fn write_predictions_csv<W: Write>(
    predictions: &[Prediction],
    class_names: &[String],
    trace: bool,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "sample_index",
        "label",
        "software_pred",
        "crossbar_pred",
        "ambiguous",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if trace {
        header.extend((0..class_names.len()).map(|r| format!("i_wl_{r}")));
    }
    w.write_record(&header)?;
    for p in predictions {
        let mut row = vec![
            p.sample_index.to_string(),
            class_names[p.label].clone(),
            class_names[p.software_pred].clone(),
            class_names[p.crossbar_pred].clone(),
            p.ambiguous.to_string(),
        ];
        if trace {
            row.extend(p.row_currents.iter().map(|i| i.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

//! Resolved command configuration: defaults, then a JSON config file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use febim::experiments::ExperimentConfig;
use febim::mapping::LikelihoodMode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub experiment: ExperimentConfig,
    /// Split used by `train`, `map` and `infer`.
    pub epoch: u64,
    /// Variation applied by `infer`, mV. Sweeps use `experiment.sigma_mv`.
    #[serde(default)]
    pub sigma_vth_mv: f64,
    #[serde(default)]
    pub pulse_table: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            epoch: 0,
            sigma_vth_mv: 0.0,
            pulse_table: None,
            out_dir: PathBuf::from("out"),
            threads: None,
        }
    }
}

/// Flag values that override the file. `None` leaves the file value in place.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub dataset: Option<String>,
    pub label: Option<String>,
    pub epoch: Option<u64>,
    pub epochs: Option<u64>,
    pub test_fraction: Option<f64>,
    pub no_stratify: bool,
    pub q_f: Option<u32>,
    pub q_l: Option<u32>,
    pub qf_grid: Option<Vec<u32>>,
    pub ql_grid: Option<Vec<u32>>,
    pub range: Option<f64>,
    pub log_base: Option<f64>,
    pub likelihood: Option<LikelihoodMode>,
    pub i_min: Option<f64>,
    pub i_max: Option<f64>,
    pub sigma_vth_mv: Option<Vec<f64>>,
    pub sensitivity: Option<f64>,
    pub memory_window: Option<f64>,
    pub wta_delta: Option<f64>,
    pub pulse_table: Option<PathBuf>,
}

/// Recursively overlays `patch` onto `base`; objects merge, everything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl CliConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let patch: Value = serde_json::from_str(&text)
            .with_context(|| format!("config file {} is not valid JSON", path.display()))?;
        if !patch.is_object() {
            bail!("config file {} must hold a JSON object", path.display());
        }
        let mut base = serde_json::to_value(CliConfig::default())?;
        merge(&mut base, patch);
        serde_json::from_value(base).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn resolve(file: Option<&Path>, o: Overrides) -> anyhow::Result<Self> {
        let mut c = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        let e = &mut c.experiment;
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(o.seed => e.base_seed);
        set!(o.dataset => e.dataset);
        if o.label.is_some() {
            e.label_column = o.label;
        }
        set!(o.epochs => e.epochs);
        set!(o.test_fraction => e.test_fraction);
        if o.no_stratify {
            e.stratify = false;
        }
        set!(o.q_f => e.quant.q_f);
        set!(o.q_l => e.quant.q_l);
        set!(o.qf_grid => e.qf_grid);
        set!(o.ql_grid => e.ql_grid);
        set!(o.range => e.quant.range_decades);
        set!(o.log_base => e.quant.log_base);
        set!(o.likelihood => e.quant.likelihood);
        set!(o.i_min => e.quant.i_min_ua);
        set!(o.i_max => e.quant.i_max_ua);
        if let Some(list) = o.sigma_vth_mv {
            if let [single] = list.as_slice() {
                c.sigma_vth_mv = *single;
            }
            e.sigma_mv = list;
        }
        if o.sensitivity.is_some() {
            e.device.sensitivity_ua_per_v = o.sensitivity;
        }
        set!(o.memory_window => e.device.memory_window_v);
        set!(o.wta_delta => e.device.wta_delta_ua);
        set!(o.epoch => c.epoch);
        set!(o.out_dir => c.out_dir);
        if o.pulse_table.is_some() {
            c.pulse_table = o.pulse_table;
        }
        if o.threads.is_some() {
            c.threads = o.threads;
        }

        c.experiment.validate()?;
        c.experiment.spec_for(c.experiment.quant.q_f, c.experiment.quant.q_l).validate()?;
        if !(c.sigma_vth_mv >= 0.0 && c.sigma_vth_mv.is_finite()) {
            bail!("sigma_vth_mv must be finite and >= 0");
        }
        if c.threads == Some(0) {
            bail!("--threads must be >= 1");
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use febim::crossbar::{perturb, program, CrossbarExport};
use febim::data::{load_dataset, split_indices, DataError, Dataset};
use febim::experiments::{
    emit_report, predict_samples, quant_sweep, variation_sweep, write_predictions_csv, SweepReport,
};
use febim::gnbc::{self, GnbcParams};
use febim::mapping::{map_model, LikelihoodMode, MappedModel, MappingError, PulseTable};

use config::{CliConfig, Overrides};

#[derive(Parser, Debug)]
#[command(name = "febim", version, about = "Crossbar Bayesian inference simulator")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap for sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Print the resolved configuration before running.
    #[arg(long, global = true)]
    print_config: bool,

    /// Bundled dataset name (iris, wine, cancer) or CSV path.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Label column; defaults to the last column.
    #[arg(long, global = true)]
    label: Option<String>,
    /// Split index used by train/map/infer.
    #[arg(long, global = true)]
    epoch: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<u64>,
    #[arg(long, global = true)]
    test_fraction: Option<f64>,
    #[arg(long, global = true)]
    no_stratify: bool,

    #[arg(long, global = true)]
    qf: Option<u32>,
    #[arg(long, global = true)]
    ql: Option<u32>,
    /// Truncation depth in log-base units.
    #[arg(long, global = true)]
    range: Option<f64>,
    #[arg(long, global = true)]
    log_base: Option<f64>,
    #[arg(long, global = true, value_enum)]
    likelihood: Option<Likelihood>,
    /// Lowest cell current, uA.
    #[arg(long, global = true)]
    i_min: Option<f64>,
    /// Highest cell current, uA.
    #[arg(long, global = true)]
    i_max: Option<f64>,

    /// Threshold-voltage variation in mV; comma-separated for sweeps.
    #[arg(long, global = true, value_delimiter = ',')]
    sigma_vth: Option<Vec<f64>>,
    /// Current sensitivity to threshold shifts, uA/V.
    #[arg(long, global = true)]
    sensitivity: Option<f64>,
    /// Memory window in volts, used to derive the default sensitivity.
    #[arg(long, global = true)]
    memory_window: Option<f64>,
    /// WTA resolution in uA.
    #[arg(long, global = true)]
    wta_delta: Option<f64>,
    #[arg(long, global = true)]
    pulse_table: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Likelihood {
    BinCenter,
    BinMass,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a Gaussian naive Bayes model on the training split.
    Train {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Quantize a model and emit the crossbar image and programming schedule.
    Map {
        /// Trained model; trained on the fly when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Classify the test split on the crossbar.
    Infer {
        #[arg(long, conflicts_with = "mapped")]
        model: Option<PathBuf>,
        /// Mapped model produced by `map`.
        #[arg(long)]
        mapped: Option<PathBuf>,
        /// Append per-wordline currents to every row.
        #[arg(long)]
        trace: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Accuracy over the q_f x q_l precision grid.
    SweepQuant {
        #[arg(long, value_delimiter = ',')]
        qf_grid: Option<Vec<u32>>,
        #[arg(long, value_delimiter = ',')]
        ql_grid: Option<Vec<u32>>,
    },
    /// Accuracy under threshold-voltage variation at fixed precision.
    SweepVariation,
    /// Validate a report and print its summary.
    Report {
        input: PathBuf,
        /// Rewrite the report CSVs into this directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Error with its process exit code: 1 for usage/config, 2 for runtime/data.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn usage(err: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, err: err.into() }
    }
}

impl From<febim::Error> for Failure {
    fn from(e: febim::Error) -> Self {
        use febim::Error as E;
        let code = match &e {
            E::Config(_) | E::Schema { .. } | E::Io { .. } | E::Json(_) => 1,
            E::Data(DataError::Io { .. } | DataError::MissingColumn(_)) => 1,
            E::Mapping(MappingError::InvalidSpec(_) | MappingError::MalformedTable(_)) => 1,
            _ => 2,
        };
        Self { code, err: e.into() }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        febim::Error::from(e).into()
    }
}

impl From<gnbc::GnbcError> for Failure {
    fn from(e: gnbc::GnbcError) -> Self {
        febim::Error::from(e).into()
    }
}

impl From<MappingError> for Failure {
    fn from(e: MappingError) -> Self {
        febim::Error::from(e).into()
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn overrides(g: &GlobalArgs) -> Overrides {
    Overrides {
        seed: g.seed,
        threads: g.threads,
        out_dir: g.out_dir.clone(),
        dataset: g.dataset.clone(),
        label: g.label.clone(),
        epoch: g.epoch,
        epochs: g.epochs,
        test_fraction: g.test_fraction,
        no_stratify: g.no_stratify,
        q_f: g.qf,
        q_l: g.ql,
        qf_grid: None,
        ql_grid: None,
        range: g.range,
        log_base: g.log_base,
        likelihood: g.likelihood.map(|l| match l {
            Likelihood::BinCenter => LikelihoodMode::BinCenter,
            Likelihood::BinMass => LikelihoodMode::BinMass,
        }),
        i_min: g.i_min,
        i_max: g.i_max,
        sigma_vth_mv: g.sigma_vth.clone(),
        sensitivity: g.sensitivity,
        memory_window: g.memory_window,
        wta_delta: g.wta_delta,
        pulse_table: g.pulse_table.clone(),
    }
}

fn load(cfg: &CliConfig) -> Result<Dataset> {
    let e = &cfg.experiment;
    Ok(load_dataset(&e.dataset, e.label_column.as_deref())?)
}

/// Training partition of the configured split.
fn train_split(cfg: &CliConfig, ds: &Dataset) -> Result<(Dataset, Vec<usize>)> {
    let idx = split_indices(ds, &cfg.experiment.split_spec(cfg.epoch))?;
    Ok((ds.subset(&idx.train), idx.test))
}

fn trained_model(cfg: &CliConfig, train: &Dataset, path: Option<&Path>) -> Result<GnbcParams> {
    match path {
        Some(p) => Ok(GnbcParams::load(p)?),
        None => Ok(gnbc::train_with(train, &cfg.experiment.train)?),
    }
}

fn pulse_table(cfg: &CliConfig, levels: u32) -> Result<PulseTable> {
    match &cfg.pulse_table {
        Some(p) => PulseTable::load(p, levels)
            .map_err(|e| Failure::usage(anyhow!(e).context(format!("pulse table {}", p.display())))),
        None => Ok(PulseTable::identity(levels)),
    }
}

fn out_path(cfg: &CliConfig, explicit: Option<PathBuf>, default: &str) -> Result<PathBuf> {
    let path = explicit.unwrap_or_else(|| cfg.out_dir.join(default));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::usage(anyhow!(e).context(format!("cannot create {}", parent.display()))))?;
    }
    Ok(path)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes)
        .map_err(|e| Failure::usage(anyhow!(e).context(format!("cannot write {}", path.display()))))
}

fn cmd_train(cfg: &CliConfig, output: Option<PathBuf>) -> Result<()> {
    let ds = load(cfg)?;
    let (train, _) = train_split(cfg, &ds)?;
    let params = gnbc::train_with(&train, &cfg.experiment.train)?;
    let path = out_path(cfg, output, "model.json")?;
    params.save(&path)?;
    println!(
        "trained {} classes x {} features on {} samples -> {}",
        params.n_classes(),
        params.n_features(),
        train.n_samples(),
        path.display()
    );
    Ok(())
}

fn cmd_map(cfg: &CliConfig, model: Option<PathBuf>) -> Result<()> {
    let ds = load(cfg)?;
    let (train, _) = train_split(cfg, &ds)?;
    let params = trained_model(cfg, &train, model.as_deref())?;
    let q = &cfg.experiment.quant;
    let spec = cfg.experiment.spec_for(q.q_f, q.q_l);
    let table = pulse_table(cfg, spec.levels())?;
    let mapped = map_model(&params, &train, &spec)?;
    let image = program(&mapped);
    let export = CrossbarExport::new(&image, &table, &cfg.experiment.device)?;

    let mapped_path = out_path(cfg, None, "mapped.json")?;
    mapped.save(&mapped_path)?;
    let image_path = out_path(cfg, None, "crossbar.json")?;
    export.save(&image_path)?;
    println!(
        "mapped to {} x {} array ({} levels, prior column: {}) -> {}, {}",
        image.k,
        image.cols(),
        image.levels,
        image.has_prior_col,
        mapped_path.display(),
        image_path.display()
    );
    Ok(())
}

fn cmd_infer(
    cfg: &CliConfig,
    model: Option<PathBuf>,
    mapped_path: Option<PathBuf>,
    trace: bool,
    output: Option<PathBuf>,
) -> Result<()> {
    let e = &cfg.experiment;
    let sigma = cfg.sigma_vth_mv;
    let ds = load(cfg)?;
    let (train, test) = train_split(cfg, &ds)?;
    let mapped = match mapped_path {
        Some(p) => MappedModel::load(&p)?,
        None => {
            let params = trained_model(cfg, &train, model.as_deref())?;
            map_model(&params, &train, &e.spec_for(e.quant.q_f, e.quant.q_l))?
        }
    };
    let image = program(&mapped);
    let device = e.device.with_sigma_mv(sigma);
    let noise = perturb(
        &image,
        &device,
        e.variation_seed(mapped.spec.q_f, mapped.spec.q_l, sigma, cfg.epoch),
    );
    let preds = predict_samples(&ds, &test, &mapped, &image, &device, Some(&noise))?;

    let mut buf = Vec::new();
    write_predictions_csv(&preds, &mapped.class_names, trace, &mut buf)?;
    let path = out_path(cfg, output, "predictions.csv")?;
    write(&path, buf)?;

    let n = preds.len() as f64;
    let acc = preds.iter().filter(|p| p.crossbar_pred == p.label).count() as f64 / n;
    let agree = preds.iter().filter(|p| p.crossbar_pred == p.software_pred).count() as f64 / n;
    println!(
        "{} test samples: crossbar accuracy {:.4}, agreement with quantized software {:.4} -> {}",
        preds.len(),
        acc,
        agree,
        path.display()
    );
    Ok(())
}

fn emit(cfg: &CliConfig, report: &SweepReport, stem: &str) -> Result<()> {
    let paths = emit_report(report, &cfg.out_dir, stem)?;
    print!("{}", report.summary_table());
    println!(
        "wrote {}, {}, {}",
        paths.json.display(),
        paths.epoch_csv.display(),
        paths.summary_csv.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if matches!(cli.command, Command::Infer { .. })
        && cli.global.sigma_vth.as_ref().is_some_and(|s| s.len() != 1)
    {
        return Err(Failure::usage(anyhow!("infer takes a single --sigma-vth value")));
    }
    let mut o = overrides(&cli.global);
    if let Command::SweepQuant { qf_grid, ql_grid } = &cli.command {
        o.qf_grid = qf_grid.clone();
        o.ql_grid = ql_grid.clone();
    }
    let cfg = CliConfig::resolve(cli.global.config.as_deref(), o).map_err(Failure::usage)?;
    if cli.global.print_config {
        print!("{}", cfg.to_json());
    }
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(Failure::usage)?;
    }

    match cli.command {
        Command::Train { output } => cmd_train(&cfg, output),
        Command::Map { model } => cmd_map(&cfg, model),
        Command::Infer {
            model,
            mapped,
            trace,
            output,
        } => cmd_infer(&cfg, model, mapped, trace, output),
        Command::SweepQuant { .. } => {
            let ds = load(&cfg)?;
            emit(&cfg, &quant_sweep(&ds, &cfg.experiment)?, "sweep_quant")
        }
        Command::SweepVariation => {
            let ds = load(&cfg)?;
            let q = &cfg.experiment.quant;
            emit(
                &cfg,
                &variation_sweep(&ds, &cfg.experiment, q.q_f, q.q_l)?,
                "sweep_variation",
            )
        }
        Command::Report { input, output } => {
            let report = SweepReport::load(&input)?;
            print!("{}", report.summary_table());
            if let Some(dir) = output {
                let stem = input
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "report".into());
                let paths = emit_report(&report, &dir, &stem)?;
                println!("wrote {}", paths.json.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

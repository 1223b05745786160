use febim::crossbar::{program, CrossbarExport, DeviceModel};
use febim::data::{load_dataset, split, SplitSpec};
use febim::experiments::{quant_sweep, ExperimentConfig, SweepReport};
use febim::gnbc::{self, GnbcParams};
use febim::mapping::{map_model, LikelihoodMode, MappedModel, PulseTable, QuantSpec};

#[test]
fn json_artifacts_round_trip_exactly() {
    let ds = load_dataset("wine", None).unwrap();
    let (train, _) = split(&ds, &SplitSpec::new(0.7, 42, 3)).unwrap();
    let params = gnbc::train(&train).unwrap();
    assert_eq!(GnbcParams::from_json(&params.to_json().unwrap()).unwrap(), params);

    let spec = QuantSpec {
        likelihood: LikelihoodMode::BinMass,
        ..QuantSpec::with_bits(5, 3)
    };
    let mapped = map_model(&params, &train, &spec).unwrap();
    assert_eq!(MappedModel::from_json(&mapped.to_json().unwrap()).unwrap(), mapped);

    let image = program(&mapped);
    let dev = DeviceModel::default().with_sigma_mv(45.0);
    let export = CrossbarExport::new(&image, &PulseTable::identity(8), &dev).unwrap();
    let back = CrossbarExport::from_json(&export.to_json().unwrap()).unwrap();
    assert_eq!(back, export);
    assert_eq!(back.image().unwrap(), image);

    let cfg = ExperimentConfig {
        dataset: "wine".into(),
        epochs: 3,
        qf_grid: vec![3],
        ql_grid: vec![2],
        ..ExperimentConfig::default()
    };
    let report = quant_sweep(&ds, &cfg).unwrap();
    assert_eq!(SweepReport::from_json(&report.to_json().unwrap()).unwrap(), report);
}

#[test]
fn reports_are_stable_across_thread_pools() {
    let ds = load_dataset("iris", None).unwrap();
    let cfg = ExperimentConfig {
        epochs: 6,
        qf_grid: vec![2, 4],
        ql_grid: vec![1, 2],
        ..ExperimentConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| quant_sweep(&ds, &cfg).unwrap().to_json().unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn per_epoch_rows_cover_the_grid() {
    let ds = load_dataset("iris", None).unwrap();
    let cfg = ExperimentConfig {
        epochs: 4,
        qf_grid: vec![1, 2, 3],
        ql_grid: vec![2, 4],
        ..ExperimentConfig::default()
    };
    let report = quant_sweep(&ds, &cfg).unwrap();
    let mut buf = Vec::new();
    report.write_epoch_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 2 * 4);
    for r in &report.records {
        let mean = r.per_epoch_acc.iter().sum::<f64>() / 4.0;
        assert!((mean - r.mean_acc).abs() < 1e-12);
        assert!((r.baseline_mean_acc - r.mean_acc - r.delta_acc).abs() < 1e-12);
        // Zero variation: the crossbar reproduces the quantized software path.
        assert_eq!(r.per_epoch_acc, r.per_epoch_quantized_acc);
    }
}

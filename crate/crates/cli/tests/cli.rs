use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use febim::crossbar::CrossbarExport;
use febim::experiments::SweepReport;
use febim::gnbc::GnbcParams;
use febim::mapping::MappedModel;

fn febim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_febim"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = febim(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data(name: &str) -> String {
    febim::data::data_dir().join(name).display().to_string()
}

#[test]
fn train_writes_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["train", "--dataset", &data("iris.csv"), "--seed", "42", "-o", "model.json"]);
    let model = GnbcParams::load(dir.path().join("model.json")).unwrap();
    assert_eq!(model.n_classes(), 3);
    assert_eq!(model.n_features(), 4);
    let again = GnbcParams::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(again, model);
}

#[test]
fn missing_dataset_exits_1_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = febim(dir.path(), &["train", "--dataset", "no/such/file.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/file.csv"));
}

#[test]
fn bad_flags_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(febim(dir.path(), &["--bogus"]).status.code(), Some(1));
    assert_eq!(febim(dir.path(), &["map", "--ql", "0"]).status.code(), Some(1));
    assert_eq!(
        febim(dir.path(), &["infer", "--sigma-vth", "0,15"]).status.code(),
        Some(1)
    );
}

#[test]
fn unparseable_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "x,class\n1.0,a\nfoo,b\n").unwrap();
    let out = febim(dir.path(), &["train", "--dataset", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn map_iris_geometry() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["map", "--dataset", "iris", "--qf", "4", "--ql", "2", "--out-dir", "o"]);
    let export = CrossbarExport::load(dir.path().join("o/crossbar.json")).unwrap();
    let image = export.image().unwrap();
    assert_eq!((image.k, image.cols()), (3, 64));
    assert!(!image.has_prior_col);
    assert_eq!(export.pulse_schedule, image.states);
    let mapped = MappedModel::load(dir.path().join("o/mapped.json")).unwrap();
    assert!(mapped.uniform_prior);
}

#[test]
fn map_keeps_prior_column_for_skewed_classes() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["map", "--dataset", "cancer", "--qf", "2", "--ql", "2", "--out-dir", "o"]);
    let image = CrossbarExport::load(dir.path().join("o/crossbar.json"))
        .unwrap()
        .image()
        .unwrap();
    assert!(image.has_prior_col);
    assert_eq!(image.cols(), 1 + 30 * 4);
}

#[test]
fn malformed_pulse_table_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in [("dec.json", "[0, 2, 1, 3]"), ("short.json", "[0, 1]"), ("junk.json", "{")] {
        std::fs::write(dir.path().join(name), body).unwrap();
        let out = febim(dir.path(), &["map", "--pulse-table", name]);
        assert_eq!(out.status.code(), Some(1), "{name}");
    }
    std::fs::write(dir.path().join("ok.json"), "[0, 3, 3, 9]").unwrap();
    ok(dir.path(), &["map", "--pulse-table", "ok.json", "--out-dir", "o"]);
    let export = CrossbarExport::load(dir.path().join("o/crossbar.json")).unwrap();
    let table = [0, 3, 3, 9];
    for (states, pulses) in export.states.iter().zip(&export.pulse_schedule) {
        for (&q, &p) in states.iter().zip(pulses) {
            assert_eq!(p, table[q as usize]);
        }
    }
}

#[test]
fn noise_free_infer_matches_software_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["infer", "--sigma-vth", "0", "-o", "a.csv"]);
    ok(dir.path(), &["infer", "--sigma-vth", "0", "-o", "b.csv"]);
    let a = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(dir.path().join("b.csv")).unwrap());
    let mut rows = csv::Reader::from_reader(a.as_bytes());
    let headers = rows.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["sample_index", "label", "software_pred", "crossbar_pred", "ambiguous"]
    );
    let mut n = 0;
    for r in rows.records() {
        let r = r.unwrap();
        assert_eq!(&r[2], &r[3]);
        n += 1;
    }
    assert_eq!(n, 105);
}

#[test]
fn infer_from_mapped_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["map", "--out-dir", "o"]);
    ok(dir.path(), &["infer", "--mapped", "o/mapped.json", "--trace", "--sigma-vth", "45", "-o", "t.csv"]);
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sample_index,label,software_pred,crossbar_pred,ambiguous,i_wl_0,i_wl_1,i_wl_2"
    );
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 8);
        for c in &cells[5..] {
            let i: f64 = c.parse().unwrap();
            assert!((0.0..=4.0 + 1.0).contains(&i));
        }
    }
}

#[test]
fn quant_sweep_smoke_and_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let stdout = ok(dir.path(), &["sweep-quant", "--epochs", "1", "--out-dir", "r"]);
    assert!(start.elapsed() < Duration::from_secs(5));
    assert!(stdout.contains("quantization sweep"));
    let report = SweepReport::load(dir.path().join("r/sweep_quant.json")).unwrap();
    assert!(report.record(4, 2, 0.0).is_some());
    assert_eq!(report.records.len(), 64);

    ok(dir.path(), &["sweep-quant", "--epochs", "3", "--qf-grid", "2,4", "--ql-grid", "1,2,3", "--out-dir", "s"]);
    let csv = std::fs::read_to_string(dir.path().join("s/sweep_quant.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 3);
    assert!(csv.starts_with("dataset,q_f,q_l,sigma_vth_mV,epoch,baseline_acc,quantized_acc,crossbar_acc\n"));
    let summary = std::fs::read_to_string(dir.path().join("s/sweep_quant_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 3);
}

#[test]
fn sweeps_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str, threads: &'static str| {
        vec![
            "sweep-variation", "--epochs", "8", "--sigma-vth", "0,30,60", "--threads", threads, "--out-dir", out,
        ]
    };
    ok(dir.path(), &args("a", "1"));
    ok(dir.path(), &args("b", "4"));
    for f in ["sweep_variation.json", "sweep_variation.csv", "sweep_variation_summary.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let report = SweepReport::load(dir.path().join("a/sweep_variation.json")).unwrap();
    assert!(report.calibration_note.is_none());
    assert_eq!(report.metadata.config.sigma_mv, vec![0.0, 30.0, 60.0]);
}

#[test]
fn config_file_and_print_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"experiment": {"epochs": 2, "qf_grid": [3], "ql_grid": [2], "base_seed": 5}}"#,
    )
    .unwrap();
    let stdout = ok(
        dir.path(),
        &["sweep-quant", "--config", "cfg.json", "--seed", "6", "--print-config", "--out-dir", "r"],
    );
    let json_end = stdout.find("\n}\n").unwrap() + 3;
    let printed: serde_json::Value = serde_json::from_str(&stdout[..json_end]).unwrap();
    assert_eq!(printed["experiment"]["base_seed"], 6);
    assert_eq!(printed["experiment"]["epochs"], 2);
    let report = SweepReport::load(dir.path().join("r/sweep_quant.json")).unwrap();
    assert_eq!(serde_json::to_value(&report.metadata.config).unwrap(), printed["experiment"]);
    assert_eq!(report.records.len(), 1);
}

#[test]
fn report_validates_input() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["sweep-quant", "--epochs", "2", "--qf-grid", "4", "--ql-grid", "2", "--out-dir", "r"]);
    let stdout = ok(dir.path(), &["report", "r/sweep_quant.json", "-o", "copy"]);
    assert!(stdout.contains("q_f"));
    assert_eq!(
        std::fs::read(dir.path().join("r/sweep_quant.csv")).unwrap(),
        std::fs::read(dir.path().join("copy/sweep_quant.csv")).unwrap()
    );

    let text = std::fs::read_to_string(dir.path().join("r/sweep_quant.json")).unwrap();
    std::fs::write(dir.path().join("bad.json"), text.replace("febim-report/1", "febim-report/9")).unwrap();
    assert_eq!(febim(dir.path(), &["report", "bad.json"]).status.code(), Some(1));
}

#[test]
fn data_dir_env_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("iris.csv"), "a,b,class\n1,2,x\n1.5,2.5,x\n3,4,y\n3.5,4.5,y\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_febim"))
        .current_dir(dir.path())
        .env("FEBIM_DATA_DIR", dir.path())
        .args(["train", "--dataset", "iris", "--test-fraction", "0.5", "-o", "m.json"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(GnbcParams::load(dir.path().join("m.json")).unwrap().n_features(), 2);
}

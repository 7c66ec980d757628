use std::fs;
use std::path::Path;

use clap::Parser;
use ffreg_cli::manifest::{RunManifest, RunStatus, MANIFEST_FILE};
use ffreg_cli::{run, run_args, write_samples_file, Cli, EXIT_OK, EXIT_USAGE};
use ffreg_core::Sample;

const TINY: &str = "n_epochs = 5\nsamples_per_axis = 8\nqueries_per_axis = 12\nn_trials = 60\nlayer_sizes = [8, 8]\nline_points = 4\n";

fn ffreg(args: &[&str]) -> i32 {
    run_args(std::iter::once("ffreg").chain(args.iter().copied()))
}

fn run_err(args: &[&str]) -> String {
    let argv: Vec<String> = std::iter::once("ffreg")
        .chain(args.iter().copied())
        .map(String::from)
        .collect();
    let cli = Cli::try_parse_from(&argv).expect("args parse");
    format!(
        "{:#}",
        run(cli, argv[1..].to_vec()).expect_err("command should fail")
    )
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_owned()
}

fn manifest(dir: &Path) -> RunManifest {
    RunManifest::load(&dir.join(MANIFEST_FILE)).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let samples: Vec<Sample> = (0..15)
        .map(|i| Sample::new(vec![i as f64 / 14.0], (i as f64 / 14.0).powi(2)))
        .collect();
    let data = d.join("samples.csv");
    write_samples_file(&data, &samples).unwrap();
    let cfg = d.join("c.toml");
    fs::write(&cfg, "n_epochs = 10\ny_min = -0.5\ny_max = 1.5\n").unwrap();

    let train_dir = d.join("train");
    let code = ffreg(&[
        "train",
        "--samples",
        s(&data),
        "--layer-sizes",
        "6,6",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&train_dir),
    ]);
    assert_eq!(code, EXIT_OK);
    let m = manifest(&train_dir);
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.config["layer_sizes"], serde_json::json!([6, 6]));
    let (header, rows) = csv_rows(&train_dir.join("loss_history.csv"));
    assert_eq!(header, ["layer", "epoch", "loss", "mean_delta"]);
    assert_eq!(rows.len(), 2 * 10);

    let pred_dir = d.join("pred");
    let model = train_dir.join("model.json");
    let code = ffreg(&[
        "predict",
        "--model",
        s(&model),
        "--grid",
        "-0.5:1.5:5",
        "--domain",
        "0:1",
        "--n-trials",
        "40",
        "--selection-mode",
        "direct",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&pred_dir),
    ]);
    assert_eq!(code, EXIT_OK);
    let (header, rows) = csv_rows(&pred_dir.join("predictions.csv"));
    assert_eq!(header.last().unwrap(), "extrapolated");
    let flags: Vec<&str> = rows.iter().map(|r| r.last().unwrap().as_str()).collect();
    assert_eq!(flags, ["true", "false", "false", "false", "true"]);

    // auto needs training samples to calibrate
    let auto_dir = d.join("auto");
    let args = [
        "predict",
        "--model",
        s(&model),
        "--grid",
        "0:1:3",
        "--selection-mode",
        "auto",
        "--out-dir",
        s(&auto_dir),
    ];
    assert!(run_err(&args).contains("--samples"));
    let mut with_samples = args.to_vec();
    with_samples.extend(["--samples", s(&data)]);
    assert_eq!(ffreg(&with_samples), EXIT_OK);
    let m = manifest(&auto_dir);
    assert!(m.config["calibration"].is_object());
    assert_ne!(m.config["resolved_selection_mode"], "auto");
}

#[test]
fn empty_predictions_leave_blank_cells() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("samples.csv");
    write_samples_file(
        &data,
        &[Sample::new(vec![0.0], 0.0), Sample::new(vec![1.0], 1.0)],
    )
    .unwrap();
    let train_dir = d.join("t");
    assert_eq!(
        ffreg(&[
            "train",
            "--samples",
            s(&data),
            "--layer-sizes",
            "4",
            "--epochs",
            "2",
            "--out-dir",
            s(&train_dir)
        ]),
        EXIT_OK
    );
    // Two trials far outside the training range; whatever the scores, every row
    // must either be fully populated or blank apart from the query and count.
    let pred_dir = d.join("p");
    let model = train_dir.join("model.json");
    assert_eq!(
        ffreg(&[
            "predict",
            "--model",
            s(&model),
            "--grid",
            "0:1:7",
            "--n-trials",
            "2",
            "--y-min",
            "50",
            "--y-max",
            "60",
            "--selection-mode",
            "direct",
            "--out-dir",
            s(&pred_dir)
        ]),
        EXIT_OK
    );
    let (header, rows) = csv_rows(&pred_dir.join("predictions.csv"));
    let n_sel = header.iter().position(|h| h == "n_selected").unwrap();
    for r in &rows {
        let empty = r[n_sel] == "0";
        for cell in &r[1..n_sel] {
            assert_eq!(cell.is_empty(), empty, "row {r:?}");
        }
    }
}

#[test]
fn bench_writes_results_and_overrides_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let out = d.join("f3");
    assert_eq!(
        ffreg(&[
            "bench",
            "f3",
            "--config",
            &cfg,
            "--epochs",
            "3",
            "--selection-mode",
            "direct",
            "--out-dir",
            s(&out)
        ]),
        EXIT_OK
    );
    let m = manifest(&out);
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.config["train"]["n_epochs"], 3);
    let (header, rows) = csv_rows(&out.join("results.csv"));
    assert_eq!(header[0], "benchmark");
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "f3");
    let (header, rows) = csv_rows(&out.join("predictions.csv"));
    assert_eq!(header.last().unwrap(), "y_true");
    assert_eq!(rows.len(), 12);
    for p in &m.outputs {
        assert!(p.exists(), "{} listed but missing", p.display());
    }
}

#[test]
fn bench_3d_writes_line_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.toml");
    fs::write(
        &cfg,
        "n_epochs = 2\nsamples_per_axis = 3\nn_trials = 20\nlayer_sizes = [4]\nline_points = 5\n",
    )
    .unwrap();
    let out = d.join("f6");
    assert_eq!(
        ffreg(&["bench", "f6", "--config", s(&cfg), "--out-dir", s(&out)]),
        EXIT_OK
    );
    let mut files: Vec<_> = fs::read_dir(out.join("lines"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert_eq!(files.len(), 8);
    for f in &files {
        assert_eq!(csv_rows(f).1.len(), 5, "{}", f.display());
    }
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let out = d.join("sweep");
    assert_eq!(
        ffreg(&[
            "sweep",
            "f2",
            "--param",
            "n_out_tol",
            "--values",
            "2,5,0",
            "--config",
            &cfg,
            "--out-dir",
            s(&out)
        ]),
        EXIT_OK
    );
    let (header, rows) = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 3);
    let mse = header.iter().position(|h| h == "mse").unwrap();
    let values: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(values, ["2", "5", "0"]);
    // n_out_tol = 0 is rejected per cell without aborting the sweep
    assert!(!rows[0][mse].is_empty());
    assert!(rows[2][mse].is_empty());
    assert_eq!(manifest(&out).status, RunStatus::Complete);
}

#[test]
fn compare_reports_both_trainers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let out = d.join("cmp");
    assert_eq!(
        ffreg(&[
            "compare",
            "f2",
            "f3",
            "--config",
            &cfg,
            "--out-dir",
            s(&out)
        ]),
        EXIT_OK
    );
    let (_, rows) = csv_rows(&out.join("compare.csv"));
    assert_eq!(rows.len(), 2);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("nope.csv");
    let out = d.join("out");
    let args = ["train", "--samples", s(&missing), "--out-dir", s(&out)];
    assert_eq!(ffreg(&args), EXIT_USAGE);
    assert!(run_err(&args).contains("nope.csv"));
    let m = manifest(&out);
    assert_eq!(m.status, RunStatus::Failed);
    assert!(m.error.unwrap().contains("nope.csv"));

    assert_eq!(ffreg(&["bench", "f9", "--out-dir", s(&out)]), EXIT_USAGE);
    assert_eq!(
        ffreg(&["predict", "--model", s(&missing), "--out-dir", s(&out)]),
        EXIT_USAGE
    );

    let bad = d.join("bad.toml");
    fs::write(&bad, "learning_rate = -1.0\n").unwrap();
    assert_eq!(
        ffreg(&["bench", "f3", "--config", s(&bad), "--out-dir", s(&out)]),
        EXIT_USAGE
    );
    fs::write(&bad, "lr = 0.1\n").unwrap();
    assert!(
        run_err(&["bench", "f3", "--config", s(&bad), "--out-dir", s(&out)]).contains("bad.toml")
    );
}

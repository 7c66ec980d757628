//! `ffreg`: train, query and benchmark Forward-Forward regressors from the shell.
//!
//! Every command writes `manifest.json` into its output directory. The manifest
//! starts out `partial`, lists each output once it is complete on disk, and ends
//! as `complete` or `failed`.

pub mod config;
pub mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ffreg_core::benchmarks::{
    calibration_subset, compare_ff_bp, cube_diagonals, line_plot_records, linspace, run_benchmark,
    sweep_cell, BenchConfig, BenchmarkId, SweepParam, CALIBRATION_SAMPLES, COMPARE_HEADER,
    DEFAULT_LAYER_SIZES, LINE_PLOT_HEADER, RESULTS_HEADER,
};
use ffreg_core::inference::{prediction_header, prediction_record, resolve_selection};
use ffreg_core::network::{load_model, save_model, write_atomic};
use ffreg_core::trainer::{read_samples_csv, TrainReport};
use ffreg_core::{
    build_contrastive_dataset, predict_curve, train, FFModel, QueryConfig, SelectionMode,
    TrainConfig,
};
use serde_json::json;

use crate::config::FileConfig;
use crate::manifest::RunManifest;

pub const MODEL_FILE: &str = "model.json";
pub const LOSS_HISTORY_FILE: &str = "loss_history.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const LINES_DIR: &str = "lines";

/// Trial count used by `predict` when neither the config nor a flag sets one.
pub const DEFAULT_N_TRIALS: usize = 1000;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ffreg", version, about = "Forward-Forward function regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a samples CSV (`x1,...,xd,y`).
    Train(TrainArgs),
    /// Predict with a trained model at queried points.
    Predict(PredictArgs),
    /// Train and evaluate one benchmark function end to end.
    Bench(BenchArgs),
    /// Re-run a benchmark over values of one hyperparameter.
    Sweep(SweepArgs),
    /// Time Forward-Forward training against a backpropagation baseline.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat TOML file; keys mirror the training and query settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub samples: PathBuf,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    pub layer_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    /// CSV whose first d columns are query coordinates.
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    pub queries: Option<PathBuf>,
    /// Query grid, one `lo:hi:n` per axis separated by commas.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    #[arg(long)]
    pub selection_mode: Option<SelectionMode>,
    #[arg(long)]
    pub n_trials: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub y_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub y_max: Option<f64>,
    /// Training box, one `lo:hi` per axis; adds an `extrapolated` column.
    #[arg(long, allow_hyphen_values = true)]
    pub domain: Option<String>,
    /// Training samples, needed to resolve `--selection-mode auto`.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Benchmark id, f1 to f8.
    pub id: BenchmarkId,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub selection_mode: Option<SelectionMode>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    pub id: BenchmarkId,
    /// tol, n_out_tol, n_epochs or y_min.
    #[arg(long)]
    pub param: SweepParam,
    #[arg(
        long,
        value_delimiter = ',',
        required = true,
        allow_hyphen_values = true
    )]
    pub values: Vec<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub selection_mode: Option<SelectionMode>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(default_value = "f3")]
    pub ids: Vec<BenchmarkId>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam step size for the backpropagation baseline.
    #[arg(long, default_value_t = 0.01)]
    pub bp_lr: f64,
}

/// Parses `args` (program name first), runs the command and returns its exit code.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli, args.into_iter().skip(1).collect()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// 3 for numeric aborts anywhere in the chain, 2 for everything else.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    e.chain()
        .find_map(|c| c.downcast_ref::<ffreg_core::Error>())
        .map_or(EXIT_USAGE, |fe| {
            if fe.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_USAGE
            }
        })
}

pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let (name, out_dir) = match &cli.command {
        Command::Train(a) => ("train", &a.common.out_dir),
        Command::Predict(a) => ("predict", &a.common.out_dir),
        Command::Bench(a) => ("bench", &a.common.out_dir),
        Command::Sweep(a) => ("sweep", &a.common.out_dir),
        Command::Compare(a) => ("compare", &a.common.out_dir),
    };
    let out_dir = out_dir.clone();
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let mut manifest = RunManifest::start(name, args);
    manifest.write(&out_dir)?;
    let outcome = match &cli.command {
        Command::Train(a) => cmd_train(a, &mut manifest),
        Command::Predict(a) => cmd_predict(a, &mut manifest),
        Command::Bench(a) => cmd_bench(a, &mut manifest),
        Command::Sweep(a) => cmd_sweep(a, &mut manifest),
        Command::Compare(a) => cmd_compare(a, &mut manifest),
    };
    manifest.finish(&out_dir, &outcome)?;
    outcome
}

fn csv_bytes<H, R>(header: &[H], rows: R) -> Result<Vec<u8>>
where
    H: AsRef<str>,
    R: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.iter().map(AsRef::as_ref))?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| anyhow!("buffering csv: {e}"))
}

fn write_csv<H, R>(path: &Path, header: &[H], rows: R) -> Result<()>
where
    H: AsRef<str>,
    R: IntoIterator<Item = Vec<String>>,
{
    write_atomic(path, &csv_bytes(header, rows)?)?;
    Ok(())
}

fn emit_history(report: &TrainReport, dir: &Path, m: &mut RunManifest) -> Result<()> {
    let path = dir.join(LOSS_HISTORY_FILE);
    write_csv(
        &path,
        &TrainReport::HISTORY_HEADER,
        report.history_records(),
    )?;
    m.outputs.push(path);
    Ok(())
}

fn emit_model(model: &FFModel, dir: &Path, m: &mut RunManifest) -> Result<()> {
    let path = dir.join(MODEL_FILE);
    save_model(model, &path)?;
    m.outputs.push(path);
    Ok(())
}

pub fn cmd_train(a: &TrainArgs, m: &mut RunManifest) -> Result<()> {
    let file = FileConfig::load_opt(a.common.config.as_deref())?;
    let mut cfg = TrainConfig::default();
    file.apply_train(&mut cfg)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.n_epochs = e;
    }
    cfg.validate()?;
    let sizes = a
        .layer_sizes
        .clone()
        .or_else(|| file.layer_sizes.clone())
        .unwrap_or_else(|| DEFAULT_LAYER_SIZES.to_vec());
    m.config = json!({ "train": cfg, "layer_sizes": sizes, "samples": a.samples });
    m.seed = cfg.seed;

    let samples = read_samples_csv(&a.samples)?;
    let dim = samples
        .first()
        .map(|s| s.x.len())
        .ok_or_else(|| anyhow!("{} contains no samples", a.samples.display()))?;
    let model = FFModel::init(&sizes, dim + 2, cfg.seed)?;
    let data = build_contrastive_dataset(&samples, &cfg)?;
    let (model, report) = train(model, &data, &cfg, &mut |_| {})?;

    let dir = &a.common.out_dir;
    emit_model(&model, dir, m)?;
    emit_history(&report, dir, m)?;
    for (i, l) in report.layers.iter().enumerate() {
        eprintln!(
            "layer {i}: g_pos {:.4} g_neg {:.4} delta {:.4} loss {:.5}",
            l.mean_g_pos, l.mean_g_neg, l.mean_delta, l.final_loss
        );
    }
    Ok(())
}

/// Parses `lo:hi:n` (or `lo:hi` when `with_count` is false) per axis.
fn parse_axes(spec: &str, dim: usize, with_count: bool) -> Result<Vec<(f64, f64, usize)>> {
    let axes = spec
        .split(',')
        .map(|axis| {
            let parts: Vec<&str> = axis.split(':').map(str::trim).collect();
            let want = if with_count { 3 } else { 2 };
            if parts.len() != want {
                bail!("bad axis `{axis}` in `{spec}`");
            }
            let lo: f64 = parts[0]
                .parse()
                .with_context(|| format!("bad bound in `{axis}`"))?;
            let hi: f64 = parts[1]
                .parse()
                .with_context(|| format!("bad bound in `{axis}`"))?;
            let n = if with_count {
                parts[2]
                    .parse()
                    .with_context(|| format!("bad count in `{axis}`"))?
            } else {
                0
            };
            if !(lo <= hi) || (with_count && n == 0) {
                bail!("empty axis `{axis}`");
            }
            Ok((lo, hi, n))
        })
        .collect::<Result<Vec<_>>>()?;
    if axes.len() != dim {
        bail!(
            "`{spec}` has {} axes but the model takes {dim} inputs",
            axes.len()
        );
    }
    Ok(axes)
}

/// Cartesian grid, last axis varying fastest.
pub fn grid_points(spec: &str, dim: usize) -> Result<Vec<Vec<f64>>> {
    let axes = parse_axes(spec, dim, true)?;
    let mut points = vec![Vec::with_capacity(dim)];
    for (lo, hi, n) in axes {
        let ticks = linspace(lo, hi, n);
        points = points
            .into_iter()
            .flat_map(|p| {
                ticks.iter().map(move |&t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

fn read_queries(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("reading queries {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("reading queries {}", path.display()))?;
        if rec.len() < dim {
            bail!(
                "{} row {}: need {dim} coordinates, found {}",
                path.display(),
                i + 1,
                rec.len()
            );
        }
        let q = rec
            .iter()
            .take(dim)
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{} row {}: non-numeric coordinate", path.display(), i + 1))?;
        out.push(q);
    }
    Ok(out)
}

pub fn cmd_predict(a: &PredictArgs, m: &mut RunManifest) -> Result<()> {
    let model = load_model(&a.model)?;
    let file = FileConfig::load_opt(a.common.config.as_deref())?;
    let mut train_cfg = TrainConfig::default();
    file.apply_train(&mut train_cfg)?;
    let mut query = QueryConfig {
        y_min: a.y_min.unwrap_or(train_cfg.y_min),
        y_max: a.y_max.unwrap_or(train_cfg.y_max),
        n_trials: a.n_trials.or(file.n_trials).unwrap_or(DEFAULT_N_TRIALS),
        selection_mode: a.selection_mode.or(file.selection_mode).unwrap_or_default(),
    };
    query.validate()?;
    m.seed = model.seed();
    m.config = json!({ "query": query, "model": a.model, "tol": train_cfg.tol });

    let dim = model.domain_dim();
    let queries = match (&a.queries, &a.grid) {
        (Some(path), _) => read_queries(path, dim)?,
        (None, Some(spec)) => grid_points(spec, dim)?,
        (None, None) => bail!("pass --queries or --grid"),
    };
    let domain = a
        .domain
        .as_deref()
        .map(|d| parse_axes(d, dim, false))
        .transpose()?;

    if query.selection_mode == SelectionMode::Auto {
        let path = a
            .samples
            .as_ref()
            .ok_or_else(|| anyhow!("--selection-mode auto needs --samples to calibrate against"))?;
        let samples = read_samples_csv(path)?;
        let cal = resolve_selection(
            &model,
            &calibration_subset(&samples, CALIBRATION_SAMPLES),
            &query,
            train_cfg.tol,
        )?;
        eprintln!(
            "auto selection: {} (agreement inverted {:.3}, direct {:.3})",
            cal.chosen, cal.inverted.agreement, cal.direct.agreement
        );
        query.selection_mode = cal.chosen;
        m.config["calibration"] = serde_json::to_value(cal)?;
    }
    m.config["resolved_selection_mode"] = serde_json::to_value(query.selection_mode)?;

    let preds = predict_curve(&model, &queries, &query)?;
    let mut header = prediction_header(dim);
    if domain.is_some() {
        header.push("extrapolated".into());
    }
    let rows = preds.iter().map(|p| {
        let mut r = prediction_record(p);
        if let Some(d) = &domain {
            let outside = p
                .x_query
                .iter()
                .zip(d)
                .any(|(&x, &(lo, hi, _))| x < lo || x > hi);
            r.push(outside.to_string());
        }
        r
    });
    let path = a.common.out_dir.join(PREDICTIONS_FILE);
    write_csv(&path, &header, rows)?;
    m.outputs.push(path);
    let empty = preds.iter().filter(|p| p.is_empty()).count();
    eprintln!("{} predictions, {empty} empty", preds.len());
    Ok(())
}

fn bench_config(
    id: BenchmarkId,
    common: &Common,
    seed: Option<u64>,
    epochs: Option<usize>,
    mode: Option<SelectionMode>,
) -> Result<BenchConfig> {
    let mut cfg = BenchConfig::table_defaults(id);
    FileConfig::load_opt(common.config.as_deref())?.apply_bench(&mut cfg)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(e) = epochs {
        cfg.train.n_epochs = e;
    }
    if let Some(mode) = mode {
        cfg.selection_mode = mode;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn cmd_bench(a: &BenchArgs, m: &mut RunManifest) -> Result<()> {
    let cfg = bench_config(a.id, &a.common, a.seed, a.epochs, a.selection_mode)?;
    m.config = serde_json::to_value(&cfg)?;
    m.seed = cfg.train.seed;
    let out = run_benchmark(&cfg)?;
    let dir = &a.common.out_dir;
    emit_model(&out.model, dir, m)?;
    emit_history(&out.report, dir, m)?;
    m.config["resolved_selection_mode"] = serde_json::to_value(out.selection_mode)?;

    let mut header = prediction_header(cfg.function.arity());
    header.push("y_true".into());
    let rows = out.predictions.iter().zip(&out.truth).map(|(p, t)| {
        let mut r = prediction_record(p);
        r.push(t.to_string());
        r
    });
    let path = dir.join(PREDICTIONS_FILE);
    write_csv(&path, &header, rows)?;
    m.outputs.push(path);

    let wall = (out.train_time + out.predict_time).as_secs_f64();
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let row = vec![
        cfg.function.id.to_string(),
        "none".into(),
        String::new(),
        opt(out.error.mse),
        out.error.empty_fraction.to_string(),
        wall.to_string(),
        cfg.train.seed.to_string(),
    ];
    let path = dir.join(RESULTS_FILE);
    write_csv(&path, &RESULTS_HEADER, [row])?;
    m.outputs.push(path);

    if cfg.function.arity() == 3 {
        let lines_dir = dir.join(LINES_DIR);
        fs::create_dir_all(&lines_dir)
            .with_context(|| format!("creating {}", lines_dir.display()))?;
        let lines = cube_diagonals(&cfg.function.domain, cfg.line_points)?;
        for (line, preds) in lines.iter().zip(out.predictions.chunks(cfg.line_points)) {
            let path = lines_dir.join(format!("{}.csv", line.name));
            write_csv(
                &path,
                &LINE_PLOT_HEADER,
                line_plot_records(line, preds, &cfg.function)?,
            )?;
            m.outputs.push(path);
        }
    }

    eprintln!(
        "{}: mse {} empty {:.1}% selection {} train {:.1}s predict {:.1}s",
        cfg.function.id,
        out.error.mse.map_or("n/a".into(), |v| format!("{v:.5}")),
        100.0 * out.error.empty_fraction,
        out.selection_mode,
        out.train_time.as_secs_f64(),
        out.predict_time.as_secs_f64()
    );
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs, m: &mut RunManifest) -> Result<()> {
    let base = bench_config(a.id, &a.common, a.seed, a.epochs, a.selection_mode)?;
    m.config = json!({ "base": base, "param": a.param, "values": a.values });
    m.seed = base.train.seed;
    let dir = &a.common.out_dir;
    let path = dir.join(RESULTS_FILE);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(RESULTS_HEADER)?;
    w.flush()?;
    m.outputs.push(path.clone());
    m.write(dir)?;
    for &v in &a.values {
        let row = sweep_cell(a.param, v, &base);
        w.write_record(row.record())?;
        w.flush()?;
        w.get_ref().sync_data().ok();
        match &row.error {
            Some(e) => eprintln!("{} = {v}: failed: {e}", a.param),
            None => eprintln!(
                "{} = {v}: mse {} empty {:.1}%",
                a.param,
                row.mse.map_or("n/a".into(), |x| format!("{x:.5}")),
                100.0 * row.empty_fraction.unwrap_or(0.0)
            ),
        }
        m.write(dir)?;
    }
    w.into_inner()
        .map_err(|e| anyhow!("closing {}: {e}", path.display()))?
        .flush()?;
    Ok(())
}

pub fn cmd_compare(a: &CompareArgs, m: &mut RunManifest) -> Result<()> {
    let cfgs = a
        .ids
        .iter()
        .map(|&id| bench_config(id, &a.common, a.seed, a.epochs, None))
        .collect::<Result<Vec<_>>>()?;
    m.config = json!({ "benchmarks": cfgs, "bp_learning_rate": a.bp_lr });
    m.seed = cfgs.first().map_or(0, |c| c.train.seed);
    let mut rows = Vec::new();
    for cfg in &cfgs {
        let r = compare_ff_bp(cfg, a.bp_lr)?;
        eprintln!(
            "{}: ff {:.2}s bp {:.2}s ({} vs {} params)",
            r.benchmark, r.ff_time_s, r.bp_time_s, r.ff_params, r.bp_params
        );
        rows.push(r.record());
    }
    let path = a.common.out_dir.join(COMPARE_FILE);
    write_csv(&path, &COMPARE_HEADER, rows)?;
    m.outputs.push(path);
    Ok(())
}

/// Writes `samples` as a `x1,...,xd,y` CSV.
pub fn write_samples_file(path: &Path, samples: &[ffreg_core::Sample]) -> Result<()> {
    let mut buf = Vec::new();
    ffreg_core::trainer::write_samples(&mut buf, samples)?;
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&buf)?;
    Ok(())
}

//! Benchmark functions f1..f8, sampling grids, cube evaluation lines, error
//! metrics, hyperparameter sweeps and a backpropagation baseline.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{check_dim, Error, Result};
use crate::inference::{predict_curve, resolve_selection, Prediction, QueryConfig, SelectionMode};
use crate::math::{self, LossScale};
use crate::network::FFModel;
use crate::trainer::{
    build_contrastive_dataset, optimizer_step, train, Optimizer, OptimizerState, Sample,
    TrainConfig, TrainReport,
};

pub const DEFAULT_LAYER_SIZES: [usize; 3] = [64, 128, 32];

/// Step size used by the benchmark presets. The library default of 1e-3
/// barely moves the layers within 500 epochs.
pub const BENCH_LEARNING_RATE: f64 = 0.01;
/// Loss scale used by the benchmark presets. Cosine goodness differences are
/// bounded by 2, so θ = 1 leaves the softplus nearly linear.
pub const BENCH_LOSS_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkId {
    F1,
    F2,
    F3,
    F4,
    F5,
    F6,
    F7,
    F8,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 8] = [
        BenchmarkId::F1,
        BenchmarkId::F2,
        BenchmarkId::F3,
        BenchmarkId::F4,
        BenchmarkId::F5,
        BenchmarkId::F6,
        BenchmarkId::F7,
        BenchmarkId::F8,
    ];

    pub fn arity(self) -> usize {
        match self {
            BenchmarkId::F1 | BenchmarkId::F2 | BenchmarkId::F3 => 1,
            BenchmarkId::F4 | BenchmarkId::F5 => 2,
            BenchmarkId::F6 | BenchmarkId::F7 | BenchmarkId::F8 => 3,
        }
    }

    /// Default domain box. f4/f5 boxes are not given with the benchmark definitions; `[-2, 2]²` is used.
    pub fn default_domain(self) -> Vec<(f64, f64)> {
        match self {
            BenchmarkId::F1 => vec![(0.0, 3.0)],
            BenchmarkId::F2 => vec![(0.0, 4.0)],
            BenchmarkId::F3 => vec![(0.0, 2.0)],
            BenchmarkId::F4 | BenchmarkId::F5 => vec![(-2.0, 2.0); 2],
            BenchmarkId::F6 | BenchmarkId::F7 | BenchmarkId::F8 => vec![(-3.0, 3.0); 3],
        }
    }

    pub fn function(self) -> BenchmarkFunction {
        BenchmarkFunction {
            id: self,
            domain: self.default_domain(),
        }
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", *self as usize + 1)
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkId::ALL
            .into_iter()
            .find(|id| id.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown benchmark `{s}` (expected f1..f8)")))
    }
}

/// Closed-form value of benchmark `id` at `x`.
pub fn eval_function(id: BenchmarkId, x: &[f64]) -> Result<f64> {
    check_dim("benchmark arity", id.arity(), x.len())?;
    Ok(match id {
        BenchmarkId::F1 => (2.0 * PI * x[0]).sin() + 1.0,
        BenchmarkId::F2 => (-0.3 * x[0]).exp() * (PI * x[0] / 2.0).cos(),
        BenchmarkId::F3 => (PI * x[0]).sin() + 0.5 * (2.0 * PI * x[0]).cos(),
        BenchmarkId::F4 => x[0] * x[0] + x[1] * x[1],
        BenchmarkId::F5 => 2.0 * x[0].sin() + x[1].cos(),
        BenchmarkId::F6 => x[0] * x[0] + x[1] * x[1] + x[2] * x[2],
        BenchmarkId::F7 => {
            let c = (x[2] / 5.0).cos();
            (x[0] * x[1] / 5.0).sin() + c * c + x[0] * x[1] * x[2]
        }
        BenchmarkId::F8 => {
            let term = |a: f64, b: f64, c: f64| (a * a / 5.0).exp() * (b * c / 5.0).sin();
            term(x[0], x[1], x[2]) + term(x[1], x[0], x[2]) + term(x[2], x[1], x[0])
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFunction {
    pub id: BenchmarkId,
    pub domain: Vec<(f64, f64)>,
}

impl BenchmarkFunction {
    pub fn arity(&self) -> usize {
        self.id.arity()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        eval_function(self.id, x)
    }

    /// Padded `[y_min, y_max]` covering the function's values on a fine grid of the box.
    pub fn padded_range(&self, pad_fraction: f64) -> (f64, f64) {
        let per_axis = match self.arity() {
            1 => 401,
            2 => 81,
            _ => 31,
        };
        let (lo, hi) = make_grid(self, per_axis)
            .expect("per_axis >= 2")
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.y_actual), hi.max(s.y_actual))
            });
        let pad = pad_fraction * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Evenly spaced tensor grid over the domain box with true values attached.
pub fn make_grid(function: &BenchmarkFunction, per_axis: usize) -> Result<Vec<Sample>> {
    if per_axis < 2 {
        return Err(Error::invalid(format!(
            "per_axis must be at least 2, got {per_axis}"
        )));
    }
    check_dim("domain box", function.arity(), function.domain.len())?;
    let axes: Vec<Vec<f64>> = function
        .domain
        .iter()
        .map(|&(lo, hi)| linspace(lo, hi, per_axis))
        .collect();
    let total = per_axis.pow(axes.len() as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; axes.len()];
    for _ in 0..total {
        let x: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        let y = function.eval(&x)?;
        out.push(Sample::new(x, y));
        // odometer increment, last axis fastest
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < per_axis {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(out)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|k| {
                if k == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// A straight evaluation segment through a 3-D box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalLine {
    pub name: String,
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub n_points: usize,
}

impl EvalLine {
    /// `(t, point)` pairs with `t` running from 0 at `start` to 1 at `end`.
    pub fn points(&self) -> Vec<(f64, Vec<f64>)> {
        linspace(0.0, 1.0, self.n_points)
            .into_iter()
            .map(|t| {
                let p = (0..3)
                    .map(|d| self.start[d] + t * (self.end[d] - self.start[d]))
                    .collect();
                (t, p)
            })
            .collect()
    }
}

/// The 4 body diagonals plus one diagonal on each lateral face (x1 = lo, x2 = hi, x1 = hi, x2 = lo),
/// every face diagonal rising from the `x3 = lo` edge to the `x3 = hi` edge.
pub fn cube_diagonals(domain: &[(f64, f64)], n_points: usize) -> Result<Vec<EvalLine>> {
    if domain.len() != 3 {
        return Err(Error::invalid(format!(
            "cube diagonals need a 3-D box, got {} dimensions",
            domain.len()
        )));
    }
    if n_points < 2 {
        return Err(Error::invalid("an evaluation line needs at least 2 points"));
    }
    let [(a0, b0), (a1, b1), (a2, b2)] = [domain[0], domain[1], domain[2]];
    let line = |name: &str, start: [f64; 3], end: [f64; 3]| EvalLine {
        name: name.to_string(),
        start,
        end,
        n_points,
    };
    Ok(vec![
        line("body-1", [a0, a1, a2], [b0, b1, b2]),
        line("body-2", [b0, a1, a2], [a0, b1, b2]),
        line("body-3", [a0, b1, a2], [b0, a1, b2]),
        line("body-4", [b0, b1, a2], [a0, a1, b2]),
        line("face-x1lo", [a0, a1, a2], [a0, b1, b2]),
        line("face-x2hi", [a0, b1, a2], [b0, b1, b2]),
        line("face-x1hi", [b0, b1, a2], [b0, a1, b2]),
        line("face-x2lo", [b0, a1, a2], [a0, a1, b2]),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    /// `None` when every prediction was empty.
    pub mse: Option<f64>,
    pub empty_fraction: f64,
    pub n_used: usize,
    pub n_total: usize,
}

/// Mean squared error over non-empty predictions; empty ones are only counted.
pub fn mse(predictions: &[Prediction], truth: &[f64]) -> Result<MseReport> {
    check_dim("mse truth", predictions.len(), truth.len())?;
    let (mut se, mut used) = (0.0, 0usize);
    for (p, &t) in predictions.iter().zip(truth) {
        if let Some(m) = p.y_mean() {
            se += (m - t).powi(2);
            used += 1;
        }
    }
    let n = predictions.len();
    Ok(MseReport {
        mse: (used > 0).then(|| se / used as f64),
        empty_fraction: if n == 0 {
            0.0
        } else {
            (n - used) as f64 / n as f64
        },
        n_used: used,
        n_total: n,
    })
}

/// Everything needed for one train-then-predict benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub function: BenchmarkFunction,
    pub layer_sizes: Vec<usize>,
    pub train: TrainConfig,
    pub n_trials: usize,
    pub selection_mode: SelectionMode,
    /// Training samples per domain axis (grid).
    pub samples_per_axis: usize,
    /// Held-out query points per axis for 1-D/2-D evaluation.
    pub queries_per_axis: usize,
    /// Points per cube line for 3-D evaluation.
    pub line_points: usize,
}

impl BenchConfig {
    /// Hyperparameters from the per-function table (tol, trial counts, epochs),
    /// with desk-scale sample counts and a padded trial range.
    pub fn table_defaults(id: BenchmarkId) -> Self {
        use BenchmarkId::*;
        let function = id.function();
        let (tol, n_in, n_out, n_trials, epochs) = match id {
            F1 => (0.02, 10, 10, 1000, 500),
            F2 => (0.05, 10, 10, 1000, 500),
            F3 => (0.01, 10, 10, 1000, 500),
            F4 | F5 => (0.1, 30, 50, 300, 300),
            F6 | F7 | F8 => (0.1, 30, 50, 1000, 500),
        };
        let samples_per_axis = match id.arity() {
            1 => 20,
            2 => 25,
            _ => 15,
        };
        let (y_min, y_max) = function.padded_range(0.2);
        Self {
            function,
            layer_sizes: DEFAULT_LAYER_SIZES.to_vec(),
            train: TrainConfig {
                tol,
                y_min,
                y_max,
                n_in_tol: n_in,
                n_out_tol: n_out,
                n_epochs: epochs,
                learning_rate: BENCH_LEARNING_RATE,
                loss_scale: LossScale::new(BENCH_LOSS_SCALE).expect("positive constant"),
                ..TrainConfig::default()
            },
            n_trials,
            selection_mode: SelectionMode::Auto,
            samples_per_axis,
            queries_per_axis: match id.arity() {
                1 => 200,
                _ => 15,
            },
            line_points: 50,
        }
    }

    pub fn query(&self) -> QueryConfig {
        QueryConfig {
            y_min: self.train.y_min,
            y_max: self.train.y_max,
            n_trials: self.n_trials,
            selection_mode: self.selection_mode,
        }
    }

    pub fn samples(&self) -> Result<Vec<Sample>> {
        make_grid(&self.function, self.samples_per_axis)
    }

    /// Held-out evaluation queries (1-D/2-D grids; 3-D uses [`cube_diagonals`]).
    pub fn eval_queries(&self) -> Result<Vec<Vec<f64>>> {
        if self.function.arity() == 3 {
            let lines = cube_diagonals(&self.function.domain, self.line_points)?;
            return Ok(lines
                .iter()
                .flat_map(|l| l.points().into_iter().map(|(_, p)| p))
                .collect());
        }
        Ok(make_grid(&self.function, self.queries_per_axis)?
            .into_iter()
            .map(|s| s.x)
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub model: FFModel,
    pub report: TrainReport,
    pub samples: Vec<Sample>,
    /// Rule actually used for selection (resolved when the config asks for auto).
    pub selection_mode: SelectionMode,
    pub queries: Vec<Vec<f64>>,
    pub predictions: Vec<Prediction>,
    pub truth: Vec<f64>,
    pub error: MseReport,
    pub train_time: Duration,
    pub predict_time: Duration,
}

/// Upper bound on training samples scored when resolving auto selection.
pub const CALIBRATION_SAMPLES: usize = 64;

/// Evenly strided subset of at most `max` samples, first sample included.
pub fn calibration_subset(samples: &[Sample], max: usize) -> Vec<Sample> {
    if samples.len() <= max || max == 0 {
        return samples.to_vec();
    }
    (0..max)
        .map(|i| samples[i * samples.len() / max].clone())
        .collect()
}

/// Trains on `samples` and predicts at `queries`.
pub fn run_on(
    cfg: &BenchConfig,
    samples: Vec<Sample>,
    queries: Vec<Vec<f64>>,
) -> Result<BenchOutcome> {
    let input_dim = cfg.function.arity() + 2;
    let model = FFModel::init(&cfg.layer_sizes, input_dim, cfg.train.seed)?;
    let data = build_contrastive_dataset(&samples, &cfg.train)?;
    let started = Instant::now();
    let (model, report) = train(model, &data, &cfg.train, &mut |_| {})?;
    let train_time = started.elapsed();

    let started = Instant::now();
    let mut query = cfg.query();
    if query.selection_mode == SelectionMode::Auto {
        let subset = calibration_subset(&samples, CALIBRATION_SAMPLES);
        query.selection_mode = resolve_selection(&model, &subset, &query, cfg.train.tol)?.chosen;
    }
    let predictions = predict_curve(&model, &queries, &query)?;
    let predict_time = started.elapsed();
    let truth = queries
        .iter()
        .map(|q| cfg.function.eval(q))
        .collect::<Result<Vec<_>>>()?;
    let error = mse(&predictions, &truth)?;
    Ok(BenchOutcome {
        model,
        report,
        samples,
        selection_mode: query.selection_mode,
        queries,
        predictions,
        truth,
        error,
        train_time,
        predict_time,
    })
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchOutcome> {
    run_on(cfg, cfg.samples()?, cfg.eval_queries()?)
}

/// Header of the line-plot CSV written per evaluation line.
pub const LINE_PLOT_HEADER: [&str; 8] = [
    "t", "x1", "x2", "x3", "y_true", "y_mean", "ci_low", "ci_high",
];

/// Predicts along `line` and returns its line-plot rows.
pub fn line_plot_rows(
    line: &EvalLine,
    model: &FFModel,
    function: &BenchmarkFunction,
    query: &QueryConfig,
) -> Result<Vec<(Vec<String>, Prediction)>> {
    let queries: Vec<Vec<f64>> = line.points().into_iter().map(|(_, p)| p).collect();
    let preds = predict_curve(model, &queries, query)?;
    let rows = line_plot_records(line, &preds, function)?;
    Ok(rows.into_iter().zip(preds).collect())
}

/// Line-plot rows for predictions already made at `line.points()`, in order.
/// Empty predictions leave the band cells blank.
pub fn line_plot_records(
    line: &EvalLine,
    predictions: &[Prediction],
    function: &BenchmarkFunction,
) -> Result<Vec<Vec<String>>> {
    let pts = line.points();
    check_dim("line plot predictions", pts.len(), predictions.len())?;
    pts.iter()
        .zip(predictions)
        .map(|((t, p), pred)| {
            let mut row = vec![t.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            row.push(function.eval(p)?.to_string());
            match pred.interval {
                Some(i) => row.extend([i.y_mean, i.ci_low, i.ci_high].map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
            Ok(row)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Tol,
    NOutTol,
    NEpochs,
    YMin,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Tol => "tol",
            SweepParam::NOutTol => "n_out_tol",
            SweepParam::NEpochs => "n_epochs",
            SweepParam::YMin => "y_min",
        })
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tol" => Ok(SweepParam::Tol),
            "n_out_tol" => Ok(SweepParam::NOutTol),
            "n_epochs" | "epochs" => Ok(SweepParam::NEpochs),
            "y_min" => Ok(SweepParam::YMin),
            other => Err(Error::invalid(format!(
                "unknown sweep parameter `{other}` (expected tol, n_out_tol, n_epochs or y_min)"
            ))),
        }
    }
}

impl SweepParam {
    pub fn apply(self, cfg: &mut BenchConfig, value: f64) -> Result<()> {
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!(
                    "{self} must be a positive integer, got {v}"
                )))
            }
        };
        match self {
            SweepParam::Tol => cfg.train.tol = value,
            SweepParam::NOutTol => cfg.train.n_out_tol = count(value)?,
            SweepParam::NEpochs => cfg.train.n_epochs = count(value)?,
            SweepParam::YMin => cfg.train.y_min = value,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub benchmark: BenchmarkId,
    pub param: SweepParam,
    pub value: f64,
    pub mse: Option<f64>,
    pub empty_fraction: Option<f64>,
    pub wall_time_s: f64,
    pub seed: u64,
    /// Set when the cell failed; the sweep carries on.
    pub error: Option<String>,
}

pub const RESULTS_HEADER: [&str; 7] = [
    "benchmark",
    "param",
    "value",
    "mse",
    "empty_fraction",
    "wall_time_s",
    "seed",
];

impl SweepRow {
    pub fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.benchmark.to_string(),
            self.param.to_string(),
            self.value.to_string(),
            opt(self.mse),
            opt(self.empty_fraction),
            self.wall_time_s.to_string(),
            self.seed.to_string(),
        ]
    }
}

/// One full train-and-predict cell.
pub fn sweep_cell(param: SweepParam, value: f64, base: &BenchConfig) -> SweepRow {
    let started = Instant::now();
    let mut cfg = base.clone();
    let outcome = param
        .apply(&mut cfg, value)
        .and_then(|_| run_benchmark(&cfg));
    let wall_time_s = started.elapsed().as_secs_f64();
    let (mse, empty_fraction, error) = match outcome {
        Ok(o) => (o.error.mse, Some(o.error.empty_fraction), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    SweepRow {
        benchmark: base.function.id,
        param,
        value,
        mse,
        empty_fraction,
        wall_time_s,
        seed: cfg.train.seed,
        error,
    }
}

/// Runs every value with the base config's seed; rows come back in value order.
pub fn sweep(param: SweepParam, values: &[f64], base: &BenchConfig) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    Ok(values
        .par_iter()
        .map(|&v| sweep_cell(param, v, base))
        .collect())
}

/// Backpropagation-trained regressor: GELU hidden layers and a linear scalar head.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineMlp {
    layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl BaselineMlp {
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::invalid("baseline layer widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &out in hidden.iter().chain([&1]) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_simple_fn((out, fan_in), || rng.gen_range(-bound..=bound));
            layers.push((w, Array1::zeros(out)));
            fan_in = out;
        }
        Ok(Self { layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.ncols()
    }

    pub fn predict_batch(&self, inputs: &Array2<f64>) -> Array1<f64> {
        self.forward(inputs)
            .0
            .pop()
            .expect("output layer")
            .column(0)
            .to_owned()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim("baseline input", self.input_dim(), x.len())?;
        let m = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        Ok(self.predict_batch(&m)[0])
    }

    /// Activations per layer (last is the linear head) and pre-activation derivatives of hidden layers.
    fn forward(&self, inputs: &Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut derivs = Vec::with_capacity(last);
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let prev = acts.last().unwrap_or(inputs);
            let mut z = math::affine(prev.view(), w.view(), b.view());
            if i < last {
                let mut d = Array2::zeros(z.raw_dim());
                ndarray::Zip::from(&mut z).and(&mut d).for_each(|v, dv| {
                    let (g, gd) = math::gelu_and_derivative(*v);
                    *v = g;
                    *dv = gd;
                });
                derivs.push(d);
            }
            acts.push(z);
        }
        (acts, derivs)
    }

    /// Mean squared error and its gradient for every layer.
    fn loss_and_gradients(
        &self,
        inputs: &Array2<f64>,
        targets: &Array1<f64>,
    ) -> (f64, Vec<(Array2<f64>, Array1<f64>)>) {
        let n = inputs.nrows() as f64;
        let (acts, derivs) = self.forward(inputs);
        let out = acts.last().expect("output").column(0).to_owned();
        let resid = &out - targets;
        let loss = resid.mapv(|r| r * r).sum() / n;
        let mut delta = (resid * (2.0 / n)).insert_axis(Axis(1));
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { inputs } else { &acts[i - 1] };
            grads.push((delta.t().dot(input), delta.sum_axis(Axis(0))));
            if i > 0 {
                delta = delta.dot(&self.layers[i].0) * &derivs[i - 1];
            }
        }
        grads.reverse();
        (loss, grads)
    }
}

#[derive(Debug, Clone)]
pub struct BaselineReport {
    pub train_mse: f64,
    pub wall_time: Duration,
    pub updates: usize,
}

/// Full-batch Adam on mean squared error, backpropagating through every layer jointly.
pub fn train_baseline_bp(
    samples: &[Sample],
    hidden: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(BaselineMlp, BaselineReport)> {
    if samples.is_empty() {
        return Err(Error::invalid("baseline training needs samples"));
    }
    if epochs == 0 {
        return Err(Error::invalid("baseline epochs must be at least 1"));
    }
    let d = samples[0].x.len();
    let flat: Vec<f64> = samples.iter().flat_map(|s| s.x.iter().copied()).collect();
    let inputs = Array2::from_shape_vec((samples.len(), d), flat)
        .map_err(|_| Error::invalid("baseline samples have inconsistent dimensions"))?;
    let targets: Array1<f64> = samples.iter().map(|s| s.y_actual).collect();

    let mut mlp = BaselineMlp::new(d, hidden, seed)?;
    let mut states: Vec<_> = mlp
        .layers
        .iter()
        .map(|(w, b)| {
            (
                OptimizerState::new(w.raw_dim()),
                OptimizerState::new(b.raw_dim()),
            )
        })
        .collect();
    let opt = Optimizer::adam();
    let started = Instant::now();
    let mut updates = 0;
    for epoch in 0..epochs {
        let (loss, grads) = mlp.loss_and_gradients(&inputs, &targets);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "baseline loss",
                layer: mlp.layers.len(),
                epoch,
            });
        }
        for (((w, b), (gw, gb)), (sw, sb)) in mlp.layers.iter_mut().zip(&grads).zip(&mut states) {
            optimizer_step(w, gw, sw, opt, lr)?;
            optimizer_step(b, gb, sb, opt, lr)?;
        }
        updates += 1;
    }
    let wall_time = started.elapsed();
    let (train_mse, _) = mlp.loss_and_gradients(&inputs, &targets);
    Ok((
        mlp,
        BaselineReport {
            train_mse,
            wall_time,
            updates,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub benchmark: BenchmarkId,
    pub epochs: usize,
    pub ff_time_s: f64,
    pub bp_time_s: f64,
    pub ff_mse: Option<f64>,
    pub bp_mse: f64,
    pub ff_params: usize,
    pub bp_params: usize,
}

pub const COMPARE_HEADER: [&str; 8] = [
    "benchmark",
    "epochs",
    "ff_time_s",
    "bp_time_s",
    "ff_mse",
    "bp_mse",
    "ff_params",
    "bp_params",
];

impl CompareReport {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.benchmark.to_string(),
            self.epochs.to_string(),
            self.ff_time_s.to_string(),
            self.bp_time_s.to_string(),
            self.ff_mse.map(|v| v.to_string()).unwrap_or_default(),
            self.bp_mse.to_string(),
            self.ff_params.to_string(),
            self.bp_params.to_string(),
        ]
    }
}

/// Trains both pipelines on the same samples for the same number of epochs and
/// reports wall-clock training times and held-out errors. Timings run serially.
pub fn compare_ff_bp(cfg: &BenchConfig, bp_lr: f64) -> Result<CompareReport> {
    let samples = cfg.samples()?;
    let queries = cfg.eval_queries()?;
    let ff = run_on(cfg, samples.clone(), queries.clone())?;
    let (mlp, bp) = train_baseline_bp(
        &samples,
        &cfg.layer_sizes,
        cfg.train.n_epochs,
        bp_lr,
        cfg.train.seed,
    )?;
    let bp_mse = queries
        .iter()
        .map(|q| Ok((mlp.predict(q)? - cfg.function.eval(q)?).powi(2)))
        .sum::<Result<f64>>()?
        / queries.len().max(1) as f64;
    Ok(CompareReport {
        benchmark: cfg.function.id,
        epochs: cfg.train.n_epochs,
        ff_time_s: ff.train_time.as_secs_f64(),
        bp_time_s: bp.wall_time.as_secs_f64(),
        ff_mse: ff.error.mse,
        bp_mse,
        ff_params: ff.model.param_count(),
        bp_params: mlp.param_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_subset_is_strided() {
        let s: Vec<Sample> = (0..10).map(|i| Sample::new(vec![i as f64], 0.0)).collect();
        let sub = calibration_subset(&s, 4);
        let xs: Vec<f64> = sub.iter().map(|s| s.x[0]).collect();
        assert_eq!(xs, vec![0.0, 2.0, 5.0, 7.0]);
        assert_eq!(calibration_subset(&s, 64).len(), 10);
    }

    #[test]
    fn closed_form_examples() {
        assert!((eval_function(BenchmarkId::F1, &[0.25]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(eval_function(BenchmarkId::F4, &[1.0, 2.0]).unwrap(), 5.0);
        assert_eq!(
            eval_function(BenchmarkId::F6, &[3.0, 3.0, 3.0]).unwrap(),
            27.0
        );
        assert!(matches!(
            eval_function(BenchmarkId::F6, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ids_round_trip() {
        for id in BenchmarkId::ALL {
            assert_eq!(id.to_string().parse::<BenchmarkId>().unwrap(), id);
        }
        assert!("f9".parse::<BenchmarkId>().is_err());
    }

    #[test]
    fn grid_sizes_and_corners() {
        let f3 = BenchmarkId::F3.function();
        let g = make_grid(&f3, 3).unwrap();
        assert_eq!(
            g.iter().map(|s| s.x[0]).collect::<Vec<_>>(),
            vec![0.0, 1.0, 2.0]
        );
        assert_eq!(
            make_grid(&BenchmarkId::F4.function(), 25).unwrap().len(),
            625
        );
        let g6 = make_grid(&BenchmarkId::F6.function(), 25).unwrap();
        assert_eq!(g6.len(), 15625);
        for corner in [[-3.0, -3.0, -3.0], [3.0, 3.0, 3.0], [3.0, -3.0, 3.0]] {
            assert!(g6.iter().any(|s| s.x == corner));
        }
        assert!(make_grid(&f3, 1).is_err());
    }

    #[test]
    fn diagonals() {
        let unit = [(0.0, 1.0); 3];
        let lines = cube_diagonals(&unit, 5).unwrap();
        assert_eq!(lines.len(), 8);
        assert_eq!((lines[0].start, lines[0].end), ([0.0; 3], [1.0; 3]));
        for l in &lines {
            assert_ne!(l.start, l.end);
            for c in l.start.iter().chain(&l.end) {
                assert!(*c == 0.0 || *c == 1.0);
            }
        }
        assert!(cube_diagonals(&[(0.0, 1.0); 2], 5).is_err());
        let pts = lines[0].points();
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[2].1, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn mse_examples() {
        let perfect: Vec<_> = [1.0, 2.0]
            .iter()
            .map(|&y| Prediction::from_selection(vec![0.0], &[y]))
            .collect();
        assert_eq!(mse(&perfect, &[1.0, 2.0]).unwrap().mse, Some(0.0));
        let off = mse(&perfect, &[0.9, 1.9]).unwrap().mse.unwrap();
        assert!((off - 0.01).abs() < 1e-12);
        let mixed = vec![
            perfect[0].clone(),
            Prediction::from_selection(vec![0.0], &[]),
        ];
        let r = mse(&mixed, &[1.0, 5.0]).unwrap();
        assert_eq!((r.mse, r.empty_fraction, r.n_used), (Some(0.0), 0.5, 1));
        let none = vec![Prediction::from_selection(vec![0.0], &[])];
        assert_eq!(mse(&none, &[1.0]).unwrap().mse, None);
        assert!(mse(&none, &[]).is_err());
    }

    #[test]
    fn parameter_budgets_match() {
        for id in [BenchmarkId::F3, BenchmarkId::F6] {
            let d = id.arity();
            let ff = FFModel::init(&DEFAULT_LAYER_SIZES, d + 2, 0)
                .unwrap()
                .param_count();
            let bp = BaselineMlp::new(d, &DEFAULT_LAYER_SIZES, 0)
                .unwrap()
                .param_count();
            let ratio = ff as f64 / bp as f64;
            assert!((0.9..=1.1).contains(&ratio), "{id}: {ff} vs {bp}");
        }
    }

    #[test]
    fn baseline_gradient_matches_finite_differences() {
        let samples: Vec<_> = (0..6)
            .map(|i| Sample::new(vec![i as f64 / 5.0, 1.0 - i as f64 / 7.0], i as f64 * 0.3))
            .collect();
        let mlp = BaselineMlp::new(2, &[4, 3], 1).unwrap();
        let x = Array2::from_shape_fn((6, 2), |(i, j)| samples[i].x[j]);
        let t: Array1<f64> = samples.iter().map(|s| s.y_actual).collect();
        let (_, grads) = mlp.loss_and_gradients(&x, &t);
        let h = 1e-6;
        for (li, (gw, _)) in grads.iter().enumerate() {
            for idx in 0..gw.len() {
                let (r, c) = (idx / gw.ncols(), idx % gw.ncols());
                let mut p = mlp.clone();
                p.layers[li].0[[r, c]] += h;
                let mut m = mlp.clone();
                m.layers[li].0[[r, c]] -= h;
                let fd =
                    (p.loss_and_gradients(&x, &t).0 - m.loss_and_gradients(&x, &t).0) / (2.0 * h);
                let rel = (fd - gw[[r, c]]).abs() / fd.abs().max(gw[[r, c]].abs()).max(1e-6);
                assert!(rel < 1e-4, "layer {li} ({r},{c}): {fd} vs {}", gw[[r, c]]);
            }
        }
    }

    #[test]
    fn baseline_fits_a_line() {
        let samples: Vec<_> = linspace(0.0, 1.0, 20)
            .into_iter()
            .map(|x| Sample::new(vec![x], 2.0 * x))
            .collect();
        let (_, rep) = train_baseline_bp(&samples, &[16], 2000, 1e-2, 0).unwrap();
        assert!(rep.train_mse < 1e-3, "{}", rep.train_mse);
        let (_, one) = train_baseline_bp(&samples, &[16], 1, 1e-2, 0).unwrap();
        assert_eq!(one.updates, 1);
        assert!(train_baseline_bp(&samples, &[16], 0, 1e-2, 0).is_err());
        assert!(train_baseline_bp(&[], &[16], 1, 1e-2, 0).is_err());
    }

    #[test]
    fn sweep_param_application() {
        let mut cfg = BenchConfig::table_defaults(BenchmarkId::F3);
        SweepParam::NOutTol.apply(&mut cfg, 50.0).unwrap();
        assert_eq!(cfg.train.n_out_tol, 50);
        assert!(SweepParam::NOutTol.apply(&mut cfg, 2.5).is_err());
        SweepParam::YMin.apply(&mut cfg, -3.0).unwrap();
        assert_eq!(cfg.train.y_min, -3.0);
        assert_eq!(
            "n_out_tol".parse::<SweepParam>().unwrap(),
            SweepParam::NOutTol
        );
    }

    #[test]
    fn failing_sweep_cell_is_recorded() {
        let cfg = BenchConfig::table_defaults(BenchmarkId::F3);
        // tol wider than half the trial range
        let row = sweep_cell(SweepParam::Tol, 100.0, &cfg);
        assert!(row.error.is_some());
        assert_eq!(row.mse, None);
    }
}

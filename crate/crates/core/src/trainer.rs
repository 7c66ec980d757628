//! Layer-wise Forward-Forward training for regression.
//!
//! Each training sample is expanded into trial values inside and outside a
//! tolerance band around its true value. The positive set labels in-band
//! trials 1 and out-of-band trials 0; the negative set is the same trials with
//! labels flipped. Layers are then trained one at a time to push goodness up
//! on positive rows and down on negative rows.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{layer_loss_gradient, LossScale};
use crate::network::FFModel;

pub const LABEL_IN_TOL: f64 = 1.0;
pub const LABEL_OUT_TOL: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y_actual: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y_actual: f64) -> Self {
        Self { x, y_actual }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub y_trial: f64,
    pub label: f64,
}

impl LabeledPoint {
    /// Network input row: coordinates, trial value, label.
    pub fn features(&self) -> impl Iterator<Item = f64> + '_ {
        self.x.iter().copied().chain([self.y_trial, self.label])
    }

    pub fn flipped(&self) -> Self {
        Self {
            x: self.x.clone(),
            y_trial: self.y_trial,
            label: 1.0 - self.label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tol: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub n_in_tol: usize,
    pub n_out_tol: usize,
    pub n_epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub loss_scale: LossScale,
    pub seed: u64,
    /// Rows per update; `None` means one full-batch update per epoch.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tol: 0.01,
            y_min: -2.0,
            y_max: 2.0,
            n_in_tol: 10,
            n_out_tol: 10,
            n_epochs: 500,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            loss_scale: LossScale::default(),
            seed: 0,
            batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.tol, self.y_min, self.y_max, self.learning_rate];
        if !finite.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(
                "tol, y_min, y_max and learning_rate must be finite",
            ));
        }
        if !(self.y_min < self.y_max) {
            return Err(Error::invalid(format!(
                "y_min ({}) must be below y_max ({})",
                self.y_min, self.y_max
            )));
        }
        if !(self.tol > 0.0 && self.tol < (self.y_max - self.y_min) / 2.0) {
            return Err(Error::invalid(format!(
                "tol ({}) must lie in (0, (y_max - y_min)/2)",
                self.tol
            )));
        }
        if self.n_in_tol == 0 || self.n_out_tol == 0 {
            return Err(Error::invalid("n_in_tol and n_out_tol must be positive"));
        }
        if self.n_epochs == 0 {
            return Err(Error::invalid("n_epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size must be positive when set"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::invalid(
                    "Adam needs beta1, beta2 in [0, 1) and eps > 0",
                ));
            }
        }
        Ok(())
    }
}

/// In-band and out-of-band trial values for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPoints {
    pub in_tol: Vec<f64>,
    pub out_tol: Vec<f64>,
}

/// Evenly spaced trial values around `sample.y_actual`.
///
/// `n_in_tol` values cover `[y - tol, y + tol]` inclusive. `n_out_tol` values
/// are split between `[y_min, y - tol)` and `(y + tol, y_max]` in proportion
/// to their lengths, with at least one on each non-empty side.
pub fn generate_trial_points(sample: &Sample, cfg: &TrainConfig) -> Result<TrialPoints> {
    let y = sample.y_actual;
    let tol = cfg.tol;
    let (lo, hi) = (y - tol, y + tol);
    if !y.is_finite() || lo < cfg.y_min || hi > cfg.y_max {
        return Err(Error::invalid(format!(
            "sample at x={:?}: band [{lo}, {hi}] around y={y} is not inside [{}, {}]",
            sample.x, cfg.y_min, cfg.y_max
        )));
    }
    let left = lo - cfg.y_min;
    let right = cfg.y_max - hi;
    if left <= 0.0 && right <= 0.0 {
        return Err(Error::invalid(format!(
            "sample at x={:?}: band around y={y} fills [{}, {}], no room for out-tol points",
            sample.x, cfg.y_min, cfg.y_max
        )));
    }

    let in_tol = (0..cfg.n_in_tol)
        .map(|k| {
            let t = if cfg.n_in_tol == 1 {
                0.0
            } else {
                -1.0 + 2.0 * k as f64 / (cfg.n_in_tol - 1) as f64
            };
            inside_band(y + tol * t, y, tol)
        })
        .collect();

    let n = cfg.n_out_tol;
    let (n_left, n_right) = if left <= 0.0 {
        (0, n)
    } else if right <= 0.0 {
        (n, 0)
    } else if n == 1 {
        if left >= right {
            (1, 0)
        } else {
            (0, 1)
        }
    } else {
        let share = (n as f64 * left / (left + right)).round() as usize;
        let n_left = share.clamp(1, n - 1);
        (n_left, n - n_left)
    };

    let mut out_tol = Vec::with_capacity(n);
    let step = left / n_left.max(1) as f64;
    out_tol.extend((0..n_left).map(|k| outside_band(cfg.y_min + step * k as f64, y, tol)));
    let step = right / n_right.max(1) as f64;
    out_tol
        .extend((1..=n_right).map(|k| outside_band(hi + step * k as f64, y, tol).min(cfg.y_max)));
    Ok(TrialPoints { in_tol, out_tol })
}

// Rounding can push a value an ulp across the band edge; nudge it back.
fn inside_band(mut v: f64, y: f64, tol: f64) -> f64 {
    while (v - y).abs() > tol {
        v = if v > y { v.next_down() } else { v.next_up() };
    }
    v
}

fn outside_band(mut v: f64, y: f64, tol: f64) -> f64 {
    while (v - y).abs() <= tol {
        v = if v >= y { v.next_up() } else { v.next_down() };
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveDataset {
    pub positive: Vec<LabeledPoint>,
    pub negative: Vec<LabeledPoint>,
}

impl ContrastiveDataset {
    pub fn len(&self) -> usize {
        self.positive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.positive.first().map(|p| p.x.len() + 2)
    }

    /// Positive and negative sets as row-major network input matrices.
    pub fn matrices(&self) -> (Array2<f64>, Array2<f64>) {
        (to_matrix(&self.positive), to_matrix(&self.negative))
    }
}

fn to_matrix(points: &[LabeledPoint]) -> Array2<f64> {
    let width = points.first().map_or(0, |p| p.x.len() + 2);
    let flat: Vec<f64> = points.iter().flat_map(LabeledPoint::features).collect();
    Array2::from_shape_vec((points.len(), width), flat).expect("uniform point width")
}

pub fn build_contrastive_dataset(
    samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<ContrastiveDataset> {
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let dim = samples[0].x.len();
    let per_sample = cfg.n_in_tol + cfg.n_out_tol;
    let mut positive = Vec::with_capacity(samples.len() * per_sample);
    for s in samples {
        check_dim("sample coordinates", dim, s.x.len())?;
        if !s.x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "sample has non-finite coordinates: {:?}",
                s.x
            )));
        }
        let trials = generate_trial_points(s, cfg)?;
        let labeled = |ys: Vec<f64>, label: f64| {
            ys.into_iter().map(move |y_trial| LabeledPoint {
                x: s.x.clone(),
                y_trial,
                label,
            })
        };
        positive.extend(labeled(trials.in_tol, LABEL_IN_TOL));
        positive.extend(labeled(trials.out_tol, LABEL_OUT_TOL));
    }
    let negative = positive.iter().map(LabeledPoint::flipped).collect();
    Ok(ContrastiveDataset { positive, negative })
}

/// Running optimizer state for one parameter tensor.
#[derive(Debug, Clone)]
pub struct OptimizerState<D: ndarray::Dimension> {
    m: ndarray::Array<f64, D>,
    v: ndarray::Array<f64, D>,
    t: i32,
}

impl<D: ndarray::Dimension> OptimizerState<D> {
    pub fn new(shape: D) -> Self {
        Self {
            m: ndarray::Array::zeros(shape.clone()),
            v: ndarray::Array::zeros(shape),
            t: 0,
        }
    }
}

/// One SGD or bias-corrected Adam update of `params` in place.
pub fn optimizer_step<D: ndarray::Dimension>(
    params: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    state: &mut OptimizerState<D>,
    optimizer: Optimizer,
    lr: f64,
) -> Result<()> {
    if params.shape() != grad.shape() || params.shape() != state.m.shape() {
        return Err(Error::invalid(format!(
            "optimizer shape mismatch: params {:?}, grad {:?}",
            params.shape(),
            grad.shape()
        )));
    }
    match optimizer {
        Optimizer::Sgd => params.scaled_add(-lr, grad),
        Optimizer::Adam { beta1, beta2, eps } => {
            state.t += 1;
            let c1 = 1.0 - beta1.powi(state.t);
            let c2 = 1.0 - beta2.powi(state.t);
            ndarray::Zip::from(params)
                .and(grad)
                .and(&mut state.m)
                .and(&mut state.v)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
    Ok(())
}

/// Per-epoch progress event.
#[derive(Debug, Clone, Copy)]
pub struct EpochProgress {
    pub layer: usize,
    pub epoch: usize,
    pub loss: f64,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub mean_g_pos: f64,
    pub mean_g_neg: f64,
    pub mean_delta: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// `loss_history[layer][epoch]`: mean layer loss before that epoch's updates.
    pub loss_history: Vec<Vec<f64>>,
    /// `delta_history[layer][epoch]`: mean g_pos - g_neg alongside the loss.
    pub delta_history: Vec<Vec<f64>>,
    /// Statistics of each trained layer on the full dataset after its training.
    pub layers: Vec<LayerSummary>,
    pub updates: usize,
}

impl TrainReport {
    pub fn mean_deltas(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.mean_delta).collect()
    }

    pub const HISTORY_HEADER: [&'static str; 4] = ["layer", "epoch", "loss", "mean_delta"];

    /// `layer,epoch,loss,mean_delta` rows, layer-major.
    pub fn history_records(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for (layer, (losses, deltas)) in self
            .loss_history
            .iter()
            .zip(&self.delta_history)
            .enumerate()
        {
            for (epoch, (l, d)) in losses.iter().zip(deltas).enumerate() {
                rows.push(vec![
                    layer.to_string(),
                    epoch.to_string(),
                    l.to_string(),
                    d.to_string(),
                ]);
            }
        }
        rows
    }
}

/// Trains every layer in order; layer `i + 1` sees only the frozen outputs of layer `i`.
pub fn train(
    mut model: FFModel,
    data: &ContrastiveDataset,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(EpochProgress),
) -> Result<(FFModel, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty contrastive dataset"));
    }
    check_dim("dataset pairing", data.positive.len(), data.negative.len())?;
    check_dim(
        "dataset input width",
        model.input_dim(),
        data.input_dim().unwrap_or(0),
    )?;
    model = model.with_loss_scale(cfg.loss_scale);

    let (mut pos, mut neg) = data.matrices();
    let n = pos.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.unwrap_or(n).min(n);

    let mut report = TrainReport {
        loss_history: Vec::with_capacity(model.layers.len()),
        delta_history: Vec::with_capacity(model.layers.len()),
        layers: Vec::with_capacity(model.layers.len()),
        updates: 0,
    };

    for (li, layer) in model.layers.iter_mut().enumerate() {
        let mut w_state = OptimizerState::new(layer.weights.raw_dim());
        let mut b_state = OptimizerState::new(layer.bias.raw_dim());
        let mut history = Vec::with_capacity(cfg.n_epochs);
        let mut deltas = Vec::with_capacity(cfg.n_epochs);

        for epoch in 0..cfg.n_epochs {
            let mut epoch_loss = 0.0;
            let mut epoch_delta = 0.0;
            if batch == n {
                let g = layer_loss_gradient(
                    layer.weights.view(),
                    layer.bias.view(),
                    layer.zeta().view(),
                    pos.view(),
                    neg.view(),
                    cfg.loss_scale,
                )?;
                epoch_loss = g.loss;
                epoch_delta = g.mean_delta();
                check_finite(&g.weights, &g.bias, g.loss, li, epoch)?;
                optimizer_step(
                    &mut layer.weights,
                    &g.weights,
                    &mut w_state,
                    cfg.optimizer,
                    cfg.learning_rate,
                )?;
                optimizer_step(
                    &mut layer.bias,
                    &g.bias,
                    &mut b_state,
                    cfg.optimizer,
                    cfg.learning_rate,
                )?;
                report.updates += 1;
            } else {
                order.shuffle(&mut rng);
                for chunk in order.chunks(batch) {
                    let bp = pos.select(Axis(0), chunk);
                    let bn = neg.select(Axis(0), chunk);
                    let g = layer_loss_gradient(
                        layer.weights.view(),
                        layer.bias.view(),
                        layer.zeta().view(),
                        bp.view(),
                        bn.view(),
                        cfg.loss_scale,
                    )?;
                    let w = chunk.len() as f64 / n as f64;
                    epoch_loss += w * g.loss;
                    epoch_delta += w * g.mean_delta();
                    check_finite(&g.weights, &g.bias, g.loss, li, epoch)?;
                    optimizer_step(
                        &mut layer.weights,
                        &g.weights,
                        &mut w_state,
                        cfg.optimizer,
                        cfg.learning_rate,
                    )?;
                    optimizer_step(
                        &mut layer.bias,
                        &g.bias,
                        &mut b_state,
                        cfg.optimizer,
                        cfg.learning_rate,
                    )?;
                    report.updates += 1;
                }
            }
            if !layer
                .weights
                .iter()
                .chain(layer.bias.iter())
                .all(|v| v.is_finite())
            {
                return Err(Error::NonFinite {
                    what: "parameter",
                    layer: li,
                    epoch,
                });
            }
            history.push(epoch_loss);
            deltas.push(epoch_delta);
            progress(EpochProgress {
                layer: li,
                epoch,
                loss: epoch_loss,
                mean_delta: epoch_delta,
            });
        }

        let fin = layer_loss_gradient(
            layer.weights.view(),
            layer.bias.view(),
            layer.zeta().view(),
            pos.view(),
            neg.view(),
            cfg.loss_scale,
        )?;
        if !fin.loss.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                layer: li,
                epoch: cfg.n_epochs,
            });
        }
        report.layers.push(LayerSummary {
            mean_g_pos: fin.mean_g_pos,
            mean_g_neg: fin.mean_g_neg,
            mean_delta: fin.mean_delta(),
            final_loss: fin.loss,
        });
        report.loss_history.push(history);
        report.delta_history.push(deltas);

        pos = layer.forward_batch(pos.view());
        neg = layer.forward_batch(neg.view());
    }
    Ok((model, report))
}

fn check_finite(
    w: &Array2<f64>,
    b: &Array1<f64>,
    loss: f64,
    layer: usize,
    epoch: usize,
) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            layer,
            epoch,
        });
    }
    if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            layer,
            epoch,
        });
    }
    Ok(())
}

/// Reads `x1,...,xd,y` rows. The last column is the target.
pub fn read_samples_csv(path: &Path) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_samples(file)
}

pub fn read_samples<R: std::io::Read>(reader: R) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || headers.get(headers.len() - 1) != Some("y") {
        return Err(Error::invalid(format!(
            "sample CSV header must be x1,...,xd,y; got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("sample row {}: {e}", i + 1)))?;
        check_dim("sample row width", headers.len(), vals.len())?;
        let (x, y) = vals.split_at(vals.len() - 1);
        out.push(Sample::new(x.to_vec(), y[0]));
    }
    Ok(out)
}

pub fn write_samples<W: std::io::Write>(writer: W, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = samples.first().map_or(1, |s| s.x.len());
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for s in samples {
        let row: Vec<String> =
            s.x.iter()
                .chain([&s.y_actual])
                .map(|v| v.to_string())
                .collect();
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

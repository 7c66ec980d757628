//! Trial-grid inference.
//!
//! At a query point every trial value on an even grid is scored twice, once
//! with the in-tol label and once with the out-tol label. Trials whose label
//! comparison passes the selection rule form the predicted band; its mean and
//! population standard deviation are the prediction.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::network::FFModel;
use crate::trainer::{Sample, LABEL_IN_TOL, LABEL_OUT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Keep trials whose out-tol label scores higher.
    #[default]
    Inverted,
    /// Keep trials whose in-tol label scores higher.
    Direct,
    /// Pick inverted or direct by agreement with the training samples.
    Auto,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Inverted => "inverted",
            SelectionMode::Direct => "direct",
            SelectionMode::Auto => "auto",
        })
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inverted" => Ok(Self::Inverted),
            "direct" => Ok(Self::Direct),
            "auto" => Ok(Self::Auto),
            other => Err(Error::invalid(format!(
                "unknown selection mode `{other}` (expected inverted, direct or auto)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    pub y_min: f64,
    pub y_max: f64,
    pub n_trials: usize,
    pub selection_mode: SelectionMode,
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.y_min.is_finite() && self.y_max.is_finite() && self.y_min < self.y_max) {
            return Err(Error::invalid(format!(
                "query range needs finite y_min < y_max, got [{}, {}]",
                self.y_min, self.y_max
            )));
        }
        if self.n_trials < 2 {
            return Err(Error::invalid(format!(
                "n_trials must be at least 2, got {}",
                self.n_trials
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.y_max - self.y_min) / (self.n_trials - 1) as f64
    }
}

/// `n_trials` evenly spaced values from `y_min` to `y_max`, both included.
pub fn trial_grid(cfg: &QueryConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let step = cfg.spacing();
    let last = cfg.n_trials - 1;
    Ok((0..cfg.n_trials)
        .map(|k| {
            if k == last {
                cfg.y_max
            } else {
                cfg.y_min + step * k as f64
            }
        })
        .collect())
}

/// Summed goodness of one trial under both labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialScore {
    pub y_trial: f64,
    pub g_in_tol: f64,
    pub g_out_tol: f64,
}

pub fn score_labels(
    model: &FFModel,
    x_query: &[f64],
    cfg: &QueryConfig,
) -> Result<Vec<TrialScore>> {
    check_dim("score_labels query", model.domain_dim(), x_query.len())?;
    let grid = trial_grid(cfg)?;
    let batch = |label: f64| {
        let width = model.input_dim();
        let mut m = Array2::zeros((grid.len(), width));
        for (mut row, &y) in m.rows_mut().into_iter().zip(&grid) {
            for (dst, &v) in row.iter_mut().zip(x_query) {
                *dst = v;
            }
            row[width - 2] = y;
            row[width - 1] = label;
        }
        m
    };
    let g_in = model.total_goodness_batch(batch(LABEL_IN_TOL).view())?;
    let g_out = model.total_goodness_batch(batch(LABEL_OUT_TOL).view())?;
    Ok(grid
        .iter()
        .zip(g_in.iter().zip(g_out.iter()))
        .map(|(&y_trial, (&g_in_tol, &g_out_tol))| TrialScore {
            y_trial,
            g_in_tol,
            g_out_tol,
        })
        .collect())
}

/// Trials passing the strict comparison for `mode`. `Auto` must be resolved first.
pub fn select_in_tol(scores: &[TrialScore], mode: SelectionMode) -> Result<Vec<f64>> {
    let keep: fn(&TrialScore) -> bool = match mode {
        SelectionMode::Inverted => |s| s.g_out_tol > s.g_in_tol,
        SelectionMode::Direct => |s| s.g_in_tol > s.g_out_tol,
        SelectionMode::Auto => {
            return Err(Error::invalid(
                "auto selection must be resolved against training samples before selecting",
            ))
        }
    };
    Ok(scores
        .iter()
        .filter(|s| keep(s))
        .map(|s| s.y_trial)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub y_mean: f64,
    pub y_std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub x_query: Vec<f64>,
    pub n_selected: usize,
    /// `None` when no trial was selected.
    pub interval: Option<Interval>,
}

impl Prediction {
    pub fn is_empty(&self) -> bool {
        self.interval.is_none()
    }

    pub fn y_mean(&self) -> Option<f64> {
        self.interval.map(|i| i.y_mean)
    }

    pub fn from_selection(x_query: Vec<f64>, selected: &[f64]) -> Self {
        let n = selected.len();
        if n == 0 {
            return Self {
                x_query,
                n_selected: 0,
                interval: None,
            };
        }
        let mean = selected.iter().sum::<f64>() / n as f64;
        let var = selected.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
        let (lo, hi) = selected
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                (lo.min(y), hi.max(y))
            });
        let y_mean = mean.clamp(lo, hi);
        let y_std = var.sqrt();
        Self {
            x_query,
            n_selected: n,
            interval: Some(Interval {
                y_mean,
                y_std,
                ci_low: y_mean - 2.0 * y_std,
                ci_high: y_mean + 2.0 * y_std,
            }),
        }
    }
}

/// Prediction at one query. `cfg.selection_mode` must not be `Auto`; see [`resolve_selection`].
pub fn predict(model: &FFModel, x_query: &[f64], cfg: &QueryConfig) -> Result<Prediction> {
    let scores = score_labels(model, x_query, cfg)?;
    let selected = select_in_tol(&scores, cfg.selection_mode)?;
    Ok(Prediction::from_selection(x_query.to_vec(), &selected))
}

/// Predictions at every query, in input order.
pub fn predict_curve(
    model: &FFModel,
    queries: &[Vec<f64>],
    cfg: &QueryConfig,
) -> Result<Vec<Prediction>> {
    cfg.validate()?;
    queries.par_iter().map(|q| predict(model, q, cfg)).collect()
}

/// Agreement of one selection rule with the training samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleAgreement {
    /// Fraction of samples whose true value lies within `tol + grid spacing` of the predicted mean.
    pub agreement: f64,
    /// Mean squared error of the predicted mean over samples with a non-empty selection.
    pub mse: Option<f64>,
    pub empty_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionCalibration {
    pub chosen: SelectionMode,
    pub inverted: RuleAgreement,
    pub direct: RuleAgreement,
}

/// Resolves `Auto` by scoring both rules on the training samples.
///
/// Higher agreement wins; ties go to lower MSE, then to the inverted rule.
/// Non-auto modes are returned unchanged, with metrics still reported.
pub fn resolve_selection(
    model: &FFModel,
    samples: &[Sample],
    cfg: &QueryConfig,
    tol: f64,
) -> Result<SelectionCalibration> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid(
            "selection calibration needs at least one training sample",
        ));
    }
    let radius = tol + cfg.spacing();
    let scored: Vec<Vec<TrialScore>> = samples
        .par_iter()
        .map(|s| score_labels(model, &s.x, cfg))
        .collect::<Result<_>>()?;
    let measure = |mode: SelectionMode| -> Result<RuleAgreement> {
        let (mut hits, mut empty, mut se, mut used) = (0usize, 0usize, 0.0, 0usize);
        for (s, scores) in samples.iter().zip(&scored) {
            let sel = select_in_tol(scores, mode)?;
            match Prediction::from_selection(s.x.clone(), &sel).y_mean() {
                None => empty += 1,
                Some(m) => {
                    used += 1;
                    se += (m - s.y_actual).powi(2);
                    if (m - s.y_actual).abs() <= radius {
                        hits += 1;
                    }
                }
            }
        }
        let n = samples.len() as f64;
        Ok(RuleAgreement {
            agreement: hits as f64 / n,
            mse: (used > 0).then(|| se / used as f64),
            empty_fraction: empty as f64 / n,
        })
    };
    let inverted = measure(SelectionMode::Inverted)?;
    let direct = measure(SelectionMode::Direct)?;
    let chosen = match cfg.selection_mode {
        SelectionMode::Auto => {
            let key = |r: &RuleAgreement| (r.agreement, -r.mse.unwrap_or(f64::INFINITY));
            let direct_better = key(&direct) > key(&inverted);
            if direct_better {
                SelectionMode::Direct
            } else {
                SelectionMode::Inverted
            }
        }
        fixed => fixed,
    };
    Ok(SelectionCalibration {
        chosen,
        inverted,
        direct,
    })
}

/// Header for prediction CSV files with `dim` coordinates.
pub fn prediction_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    h.extend(
        [
            "y_mean",
            "y_std",
            "ci_low",
            "ci_high",
            "n_selected",
            "empty",
        ]
        .map(String::from),
    );
    h
}

/// One CSV row; numeric cells are left blank for empty predictions.
pub fn prediction_record(p: &Prediction) -> Vec<String> {
    let mut r: Vec<String> = p.x_query.iter().map(|v| v.to_string()).collect();
    match p.interval {
        Some(i) => r.extend([i.y_mean, i.y_std, i.ci_low, i.ci_high].map(|v| v.to_string())),
        None => r.extend(std::iter::repeat_n(String::new(), 4)),
    }
    r.push(p.n_selected.to_string());
    r.push(p.is_empty().to_string());
    r
}

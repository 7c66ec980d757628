//! Flat key-value run configuration.
//!
//! Keys mirror the training and query settings one to one. Every key is
//! optional; unset keys keep the defaults of whatever command reads the file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ffreg_core::benchmarks::BenchConfig;
use ffreg_core::trainer::{Optimizer, TrainConfig};
use ffreg_core::{LossScale, SelectionMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub tol: Option<f64>,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
    pub n_in_tol: Option<usize>,
    pub n_out_tol: Option<usize>,
    pub n_epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    /// `adam` or `sgd`.
    pub optimizer: Option<String>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub loss_scale: Option<f64>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub layer_sizes: Option<Vec<usize>>,
    pub n_trials: Option<usize>,
    pub selection_mode: Option<SelectionMode>,
    pub samples_per_axis: Option<usize>,
    pub queries_per_axis: Option<usize>,
    pub line_points: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn apply_train(&self, t: &mut TrainConfig) -> Result<()> {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { t.$f = v; })* };
        }
        set!(
            tol,
            y_min,
            y_max,
            n_in_tol,
            n_out_tol,
            n_epochs,
            learning_rate,
            seed
        );
        if let Some(s) = self.loss_scale {
            t.loss_scale = LossScale::new(s)?;
        }
        if let Some(b) = self.batch_size {
            t.batch_size = Some(b);
        }
        let (b1, b2, e) = match t.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            Optimizer::Sgd => (0.9, 0.999, 1e-8),
        };
        let adam = Optimizer::Adam {
            beta1: self.beta1.unwrap_or(b1),
            beta2: self.beta2.unwrap_or(b2),
            eps: self.eps.unwrap_or(e),
        };
        t.optimizer = match self.optimizer.as_deref() {
            None if matches!(t.optimizer, Optimizer::Sgd) => Optimizer::Sgd,
            None | Some("adam") => adam,
            Some("sgd") => Optimizer::Sgd,
            Some(other) => bail!("unknown optimizer `{other}` (expected adam or sgd)"),
        };
        Ok(())
    }

    pub fn apply_bench(&self, b: &mut BenchConfig) -> Result<()> {
        self.apply_train(&mut b.train)?;
        if let Some(v) = &self.layer_sizes {
            b.layer_sizes = v.clone();
        }
        if let Some(v) = self.n_trials {
            b.n_trials = v;
        }
        if let Some(v) = self.selection_mode {
            b.selection_mode = v;
        }
        if let Some(v) = self.samples_per_axis {
            b.samples_per_axis = v;
        }
        if let Some(v) = self.queries_per_axis {
            b.queries_per_axis = v;
        }
        if let Some(v) = self.line_points {
            b.line_points = v;
        }
        Ok(())
    }
}

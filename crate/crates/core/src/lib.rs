//! Function regression with Forward-Forward trained networks.
//!
//! A network sees `(x, y_trial, label)` rows and is trained layer by layer,
//! without backpropagation across layers, to tell whether `y_trial` lies
//! within a tolerance band of the target function at `x`. Predictions come
//! from scoring a grid of trial values at a query point under both labels.
//!
//! - [`math`]: GELU, cosine goodness, softplus layer loss and its gradient.
//! - [`network`]: layers, forward traces and the JSON model file.
//! - [`trainer`]: trial-point synthesis, contrastive datasets, layer-wise training.
//! - [`inference`]: trial grids, label scoring, selection and prediction statistics.
//! - [`benchmarks`]: the f1..f8 suite, grids, sweeps and a backpropagation baseline.

pub mod benchmarks;
pub mod error;
pub mod inference;
pub mod math;
pub mod network;
pub mod trainer;

pub use error::{Error, Result};
pub use inference::{predict, predict_curve, Prediction, QueryConfig, SelectionMode};
pub use math::LossScale;
pub use network::{FFLayer, FFModel, LayerTrace};
pub use trainer::{build_contrastive_dataset, train, ContrastiveDataset, Sample, TrainConfig};

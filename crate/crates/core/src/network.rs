//! Dense Forward-Forward network: layers with fixed goodness vectors,
//! forward evaluation with per-layer goodness, and the JSON model file.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{self, LossScale};

pub const MODEL_FILE_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
}

/// One dense GELU layer and the fixed vector its goodness is measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct FFLayer {
    pub(crate) weights: Array2<f64>,
    pub(crate) bias: Array1<f64>,
    zeta: Array1<f64>,
}

impl FFLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, zeta: Array1<f64>) -> Result<Self> {
        check_dim("layer bias", weights.nrows(), bias.len())?;
        check_dim("layer zeta", weights.nrows(), zeta.len())?;
        if weights.ncols() == 0 || weights.nrows() == 0 {
            return Err(Error::invalid("layer dimensions must be at least 1"));
        }
        if !weights
            .iter()
            .chain(bias.iter())
            .chain(zeta.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(Self {
            weights,
            bias,
            zeta,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn bias(&self) -> ArrayView1<'_, f64> {
        self.bias.view()
    }

    pub fn zeta(&self) -> ArrayView1<'_, f64> {
        self.zeta.view()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `gelu(W·input + b)`.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("layer_forward input", self.in_dim(), input.len())?;
        let x = ArrayView1::from(input);
        Ok(self
            .weights
            .rows()
            .into_iter()
            .zip(self.bias.iter())
            .map(|(row, &b)| math::gelu(row.dot(&x) + b))
            .collect())
    }

    /// Row-wise forward over a batch; the caller guarantees the width.
    pub(crate) fn forward_batch(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        let mut z = math::affine(inputs, self.weights.view(), self.bias.view());
        math::gelu_in_place(z.as_slice_mut().expect("affine returns standard layout"));
        z
    }
}

/// Per-layer outputs and goodness for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub outputs: Vec<Vec<f64>>,
    pub goodness: Vec<f64>,
}

impl LayerTrace {
    pub fn total_goodness(&self) -> f64 {
        total_goodness(self)
    }
}

pub fn total_goodness(trace: &LayerTrace) -> f64 {
    trace.goodness.iter().sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FFModel {
    pub(crate) layers: Vec<FFLayer>,
    input_dim: usize,
    activation: Activation,
    seed: u64,
    loss_scale: LossScale,
}

impl FFModel {
    /// Random initialization: weights uniform in `±1/sqrt(fan_in)`, zero biases,
    /// unit-length goodness vectors drawn from a standard normal.
    pub fn init(layer_sizes: &[usize], input_dim: usize, seed: u64) -> Result<Self> {
        if layer_sizes.is_empty() {
            return Err(Error::invalid("layer_sizes must not be empty"));
        }
        if let Some(i) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::invalid(format!("layer {i} has zero width")));
        }
        if input_dim < 3 {
            return Err(Error::invalid(format!(
                "input_dim must be at least 3 (coordinates, trial value, label), got {input_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_sizes.len());
        let mut fan_in = input_dim;
        for &out in layer_sizes {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weights =
                Array2::from_shape_simple_fn((out, fan_in), || rng.gen_range(-bound..=bound));
            let bias = Array1::zeros(out);
            let zeta = loop {
                let v: Array1<f64> = (0..out)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let n = v.dot(&v).sqrt();
                if n > math::NORM_EPS {
                    break v / n;
                }
            };
            layers.push(FFLayer {
                weights,
                bias,
                zeta,
            });
            fan_in = out;
        }
        Ok(Self {
            layers,
            input_dim,
            activation: Activation::Gelu,
            seed,
            loss_scale: LossScale::default(),
        })
    }

    pub fn from_layers(
        layers: Vec<FFLayer>,
        input_dim: usize,
        seed: u64,
        loss_scale: LossScale,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        let mut expected = input_dim;
        for layer in &layers {
            check_dim("layer input width", expected, layer.in_dim())?;
            expected = layer.out_dim();
        }
        Ok(Self {
            layers,
            input_dim,
            activation: Activation::Gelu,
            seed,
            loss_scale,
        })
    }

    pub fn with_loss_scale(mut self, scale: LossScale) -> Self {
        self.loss_scale = scale;
        self
    }

    pub fn layers(&self) -> &[FFLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of domain coordinates (input width minus trial value and label).
    pub fn domain_dim(&self) -> usize {
        self.input_dim - 2
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn loss_scale(&self) -> LossScale {
        self.loss_scale
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(FFLayer::out_dim).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(FFLayer::param_count).sum()
    }

    /// Feeds `input` through every layer, recording outputs and goodness.
    pub fn forward_trace(&self, input: &[f64]) -> Result<LayerTrace> {
        check_dim("forward_trace input", self.input_dim, input.len())?;
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut goodness = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        for layer in &self.layers {
            let out = layer.forward(&current)?;
            goodness.push(math::cosine_similarity(
                &out,
                layer.zeta.as_slice().expect("contiguous"),
            )?);
            outputs.push(out.clone());
            current = out;
        }
        Ok(LayerTrace { outputs, goodness })
    }

    /// Summed goodness over all layers for every row of `inputs`.
    pub fn total_goodness_batch(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_dim("total_goodness_batch width", self.input_dim, inputs.ncols())?;
        let mut total = Array1::zeros(inputs.nrows());
        let mut current: Option<Array2<f64>> = None;
        for layer in &self.layers {
            let out = match &current {
                None => layer.forward_batch(inputs),
                Some(prev) => layer.forward_batch(prev.view()),
            };
            total += &math::row_goodness(out.view(), layer.zeta.view());
            current = Some(out);
        }
        Ok(total)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_model(path)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            input_dim: self.input_dim,
            activation: self.activation,
            seed: self.seed,
            loss_scale: self.loss_scale.get(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                    zeta: l.zeta.to_vec(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |field: String, message: String| Error::Parse {
            path: path.to_path_buf(),
            field,
            message,
        };
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| parse_err("<root>".into(), e.to_string()))?;
        match probe.get("version").and_then(serde_json::Value::as_u64) {
            Some(MODEL_FILE_VERSION) => {}
            Some(found) => {
                return Err(Error::UnsupportedVersion {
                    found,
                    supported: MODEL_FILE_VERSION,
                })
            }
            None => {
                return Err(parse_err(
                    "version".into(),
                    "missing or not an unsigned integer".into(),
                ))
            }
        }
        let file: ModelFile = serde_path_to_error::deserialize(probe)
            .map_err(|e| parse_err(e.path().to_string(), e.inner().to_string()))?;

        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, lf) in file.layers.into_iter().enumerate() {
            let rows = lf.weights.len();
            let cols = lf.weights.first().map_or(0, Vec::len);
            if let Some(r) = lf.weights.iter().position(|row| row.len() != cols) {
                return Err(parse_err(
                    format!("layers[{i}].weights[{r}]"),
                    "ragged weight matrix".into(),
                ));
            }
            let flat: Vec<f64> = lf.weights.into_iter().flatten().collect();
            let weights = Array2::from_shape_vec((rows, cols), flat).expect("shape checked");
            let layer = FFLayer::new(weights, Array1::from(lf.bias), Array1::from(lf.zeta))
                .map_err(|e| parse_err(format!("layers[{i}]"), e.to_string()))?;
            layers.push(layer);
        }
        let scale = LossScale::new(file.loss_scale)
            .map_err(|e| parse_err("loss_scale".into(), e.to_string()))?;
        let mut model = Self::from_layers(layers, file.input_dim, file.seed, scale)
            .map_err(|e| parse_err("layers".into(), e.to_string()))?;
        model.activation = file.activation;
        Ok(model)
    }
}

pub fn init_model(layer_sizes: &[usize], input_dim: usize, seed: u64) -> Result<FFModel> {
    FFModel::init(layer_sizes, input_dim, seed)
}

/// Writes the model as JSON via a temporary file and an atomic rename.
pub fn save_model(model: &FFModel, path: &Path) -> Result<()> {
    write_atomic(path, model.to_json().as_bytes())
}

pub fn load_model(path: &Path) -> Result<FFModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FFModel::from_json(&text, path)
}

/// Write-to-temp then rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u64,
    input_dim: usize,
    #[serde(default)]
    activation: Activation,
    seed: u64,
    loss_scale: f64,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    zeta: Vec<f64>,
}

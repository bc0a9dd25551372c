//! Feed-forward network dynamics loaded from a JSON weight file.
//!
//! Weight file layout:
//!
//! ```json
//! {
//!   "format_version": "1.0",
//!   "input_dim": 3,
//!   "output_dim": 2,
//!   "layers": [
//!     { "weights": [[...], ...], "bias": [...], "activation": "tanh" },
//!     { "weights": [[...], ...], "bias": [...], "activation": "identity" }
//!   ],
//!   "train_rmse": 0.004
//! }
//! ```
//!
//! `weights` is row-major with one row per output unit. Unknown extra fields
//! are ignored; `format_version` defaults to `"1.0"` when absent.

use std::path::Path;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::dynamics::VectorField;
use crate::error::{check_version, Error, Result};

pub const MLP_FORMAT_MAJOR: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    rows: usize,
    cols: usize,
    /// Row-major `rows × cols`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let rows = weights.len();
        if rows == 0 {
            return Err(Error::Schema("layer has no weight rows".into()));
        }
        let cols = weights[0].len();
        if cols == 0 || weights.iter().any(|r| r.len() != cols) {
            return Err(Error::Schema("weight matrix rows are ragged or empty".into()));
        }
        if bias.len() != rows {
            return Err(Error::Schema(format!(
                "bias length {} does not match {} weight rows",
                bias.len(),
                rows
            )));
        }
        let flat: Vec<f64> = weights.into_iter().flatten().collect();
        if flat.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::Schema("non-finite weight or bias".into()));
        }
        Ok(Self {
            rows,
            cols,
            weights: flat,
            bias,
            activation,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            *o = match self.activation {
                Activation::Tanh => acc.tanh(),
                Activation::Identity => acc,
            };
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    train_rmse: f64,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Schema("model has no layers".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].cols != pair[0].rows {
                return Err(Error::DimensionChain(format!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    k + 1,
                    pair[1].cols,
                    k,
                    pair[0].rows
                )));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::Schema("last layer must use the identity activation".into()));
        }
        Ok(Self {
            layers,
            train_rmse: 0.0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn train_rmse(&self) -> f64 {
        self.train_rmse
    }

    pub fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.input_dim());
        let mut a: SmallVec<[f64; 64]> = SmallVec::from_slice(input);
        let mut b: SmallVec<[f64; 64]> = SmallVec::new();
        for layer in &self.layers {
            b.clear();
            b.resize(layer.rows, 0.0);
            layer.apply(&a, &mut b);
            std::mem::swap(&mut a, &mut b);
        }
        out.copy_from_slice(&a);
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.forward_into(input, &mut out);
        out
    }

    pub fn from_weight_file(file: WeightFile) -> Result<Self> {
        if let Some(v) = &file.format_version {
            check_version(v, MLP_FORMAT_MAJOR)?;
        }
        let layers = file
            .layers
            .into_iter()
            .map(|l| Layer::new(l.weights, l.bias, l.activation))
            .collect::<Result<Vec<_>>>()?;
        if layers.is_empty() {
            return Err(Error::Schema("model has no layers".into()));
        }
        if layers[0].cols != file.input_dim {
            return Err(Error::DimensionChain(format!(
                "first layer takes {} inputs, input_dim is {}",
                layers[0].cols, file.input_dim
            )));
        }
        if layers[layers.len() - 1].rows != file.output_dim {
            return Err(Error::DimensionChain(format!(
                "last layer produces {} outputs, output_dim is {}",
                layers[layers.len() - 1].rows,
                file.output_dim
            )));
        }
        if !file.train_rmse.is_finite() {
            return Err(Error::Schema("train_rmse must be finite".into()));
        }
        let mut model = MlpModel::new(layers)?;
        model.train_rmse = file.train_rmse;
        Ok(model)
    }

    pub fn to_weight_file(&self) -> WeightFile {
        WeightFile {
            format_version: Some(format!("{MLP_FORMAT_MAJOR}.0")),
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| WeightFileLayer {
                    weights: l.weights.chunks(l.cols).map(<[f64]>::to_vec).collect(),
                    bias: l.bias.clone(),
                    activation: l.activation,
                })
                .collect(),
            train_rmse: self.train_rmse,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_weight_file())
            .map_err(|e| Error::Schema(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

impl VectorField for MlpModel {
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let mut input: SmallVec<[f64; 8]> = SmallVec::with_capacity(x.len() + u.len());
        input.extend_from_slice(x);
        input.extend_from_slice(u);
        self.forward_into(&input, dx);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFileLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<String>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<WeightFileLayer>,
    pub train_rmse: f64,
}

pub fn load_mlp(path: &Path) -> Result<MlpModel> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let file: WeightFile =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    MlpModel::from_weight_file(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const IDENTITY: &str = r#"{
        "format_version": "1.0",
        "input_dim": 3, "output_dim": 2,
        "layers": [{"weights": [[1,0,0],[0,1,0]], "bias": [0,0], "activation": "identity"}],
        "train_rmse": 0.0
    }"#;

    #[test]
    fn identity_fixture_selects_state_slice() {
        let dir = tempfile::tempdir().unwrap();
        let model = load_mlp(&write(&dir, "id.json", IDENTITY)).unwrap();
        assert_eq!(model.input_dim(), 3);
        assert_eq!(model.output_dim(), 2);
        assert_eq!(model.forward(&[0.3, -0.1, 0.5]), vec![0.3, -0.1]);
    }

    #[test]
    fn missing_file_is_distinct() {
        let err = load_mlp(Path::new("/nonexistent/weights.json")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn bias_length_mismatch_is_schema_violation() {
        let dir = tempfile::tempdir().unwrap();
        let body = IDENTITY.replace(r#""bias": [0,0]"#, r#""bias": [0,0,0]"#);
        let err = load_mlp(&write(&dir, "bad.json", &body)).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn malformed_json_is_schema_violation() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_mlp(&write(&dir, "bad.json", "{\"input_dim\": 3")).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn chain_mismatch_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{
            "input_dim": 3, "output_dim": 2,
            "layers": [
                {"weights": [[1,0,0],[0,1,0]], "bias": [0,0], "activation": "tanh"},
                {"weights": [[1,0,0],[0,1,0]], "bias": [0,0], "activation": "identity"}
            ],
            "train_rmse": 0.0
        }"#;
        let err = load_mlp(&write(&dir, "chain.json", body)).unwrap_err();
        assert!(matches!(err, Error::DimensionChain(_)), "{err}");
        let body = IDENTITY.replace(r#""input_dim": 3"#, r#""input_dim": 4"#);
        let err = load_mlp(&write(&dir, "chain2.json", &body)).unwrap_err();
        assert!(matches!(err, Error::DimensionChain(_)), "{err}");
    }

    #[test]
    fn unknown_major_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = IDENTITY.replace(r#""format_version": "1.0""#, r#""format_version": "2.0""#);
        let err = load_mlp(&write(&dir, "v2.json", &body)).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { .. }));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = MlpModel::new(vec![
            Layer::new(vec![vec![0.1, -0.2, 1.0 / 3.0], vec![1e-17, 2.5, -7.25]], vec![0.3, -0.4], Activation::Tanh)
                .unwrap(),
            Layer::new(vec![vec![std::f64::consts::PI, 1.0], vec![-1.0, 0.5]], vec![0.0, 1e-9], Activation::Identity)
                .unwrap(),
        ])
        .unwrap();
        let p = dir.path().join("m.json");
        model.save(&p).unwrap();
        let back = load_mlp(&p).unwrap();
        assert_eq!(back, model);
        let text1 = std::fs::read_to_string(&p).unwrap();
        back.save(&p).unwrap();
        assert_eq!(text1, std::fs::read_to_string(&p).unwrap());
    }
}

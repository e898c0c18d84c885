//! Trained per-intersection models, the corridor collection and their JSON
//! files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, SparseRow, FEATURE_LEN};
use super::labels::SoftLabelParams;
use super::mlp::{Mlp, PreparedMlp, Scratch as MlpScratch};
use crate::error::{io_err, Error, Result};

pub const MODEL_FORMAT: &str = "evplab-model";
pub const CORRIDOR_FORMAT: &str = "evplab-corridor";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(p: usize) -> Self {
        Self {
            mean: vec![0.0; p],
            scale: vec![1.0; p],
        }
    }

    /// Mean and standard deviation over `rows`; constant features keep
    /// scale 1.
    pub fn fit<'a>(p: usize, rows: impl IntoIterator<Item = &'a SparseRow>) -> Self {
        let mut sum = vec![0.0; p];
        let mut sq = vec![0.0; p];
        let mut n = 0.0;
        for r in rows {
            n += 1.0;
            for (k, x) in r.entries() {
                sum[k] += x;
                sq[k] += x * x;
            }
        }
        let n = f64::max(n, 1.0);
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = q / n - m * m;
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    Constant {
        value: f64,
    },
    /// Weights apply to standardized features.
    Linear {
        weights: Vec<f64>,
        bias: f64,
        l2: f64,
    },
    /// Weights per layer as `[out][in]`; tanh hidden units, linear output.
    Mlp {
        layers: Vec<usize>,
        weights: Vec<Vec<Vec<f64>>>,
        biases: Vec<Vec<f64>>,
    },
}

impl Regressor {
    pub fn from_mlp(m: &Mlp) -> Self {
        let n = m.sizes.len() - 1;
        Regressor::Mlp {
            layers: m.sizes.clone(),
            weights: (0..n).map(|l| m.layer_weights(l)).collect(),
            biases: (0..n).map(|l| m.layer_biases(l)).collect(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Regressor::Constant { .. } => "constant",
            Regressor::Linear { .. } => "linear",
            Regressor::Mlp { .. } => "mlp",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub folds: usize,
    /// Hyper-parameter setting and its mean validation-fold MSE.
    pub cv: Vec<(String, f64)>,
    pub chosen: String,
    pub train_rows: usize,
    pub train_mse: f64,
    /// Deterministic work estimate of the final fit, in multiply-adds.
    pub train_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub intersection_id: String,
    pub regressor: Regressor,
    pub params: SoftLabelParams,
    pub feature_normalization: Normalization,
    pub training_metadata: TrainingMetadata,
}

/// Evaluation form of a model, with standardization folded in.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Constant(f64),
    Linear { weights: Vec<f64>, bias: f64 },
    Mlp(PreparedMlp),
}

#[derive(Debug, Clone, Default)]
pub struct Scratch(MlpScratch);

impl Predictor {
    pub fn raw(&self, row: &SparseRow, s: &mut Scratch) -> f64 {
        match self {
            Predictor::Constant(c) => *c,
            Predictor::Linear { weights, bias } => bias + row.entries().map(|(k, x)| weights[k] * x).sum::<f64>(),
            Predictor::Mlp(m) => m.predict(row, &mut s.0),
        }
    }

    /// Necessity score, clipped to `[0, 1]`.
    pub fn predict(&self, row: &SparseRow, s: &mut Scratch) -> f64 {
        self.raw(row, s).clamp(0.0, 1.0)
    }
}

impl TrainedModel {
    pub fn predictor(&self) -> Result<Predictor> {
        let norm = &self.feature_normalization;
        if norm.mean.len() != FEATURE_LEN || norm.scale.len() != FEATURE_LEN {
            return Err(Error::Learn(format!(
                "model for {} expects {} features, not {FEATURE_LEN}",
                self.intersection_id,
                norm.mean.len()
            )));
        }
        Ok(match &self.regressor {
            Regressor::Constant { value } => Predictor::Constant(*value),
            Regressor::Linear { weights, bias, .. } => {
                if weights.len() != FEATURE_LEN {
                    return Err(Error::Learn("linear weight count mismatch".into()));
                }
                let mut b = *bias;
                let w: Vec<f64> = weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        let e = w / norm.scale[k];
                        b -= e * norm.mean[k];
                        e
                    })
                    .collect();
                Predictor::Linear { weights: w, bias: b }
            }
            Regressor::Mlp { layers, weights, biases } => {
                if layers.first() != Some(&FEATURE_LEN) {
                    return Err(Error::Learn("MLP input width mismatch".into()));
                }
                let m = Mlp::from_layers(layers, weights, biases)
                    .ok_or_else(|| Error::Learn("MLP layer shapes inconsistent".into()))?;
                Predictor::Mlp(PreparedMlp::new(&m, norm))
            }
        })
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<f64> {
        if fv.detector_hist.len() != super::WINDOW
            || fv.signal_hist.len() != super::WINDOW
            || fv.upstream_preempt_hist.len() != super::WINDOW
        {
            return Err(Error::Learn("feature vector has the wrong layout".into()));
        }
        Ok(self.predictor()?.predict(&fv.to_sparse(), &mut Scratch::default()))
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDoc {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = parse_doc(text, MODEL_FORMAT)?;
        Ok(doc.model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    model: TrainedModel,
}

/// One trained model per modelled intersection, in corridor order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorPolicy {
    pub models: Vec<TrainedModel>,
}

#[derive(Serialize, Deserialize)]
struct CorridorDoc {
    format: String,
    version: u32,
    models: Vec<TrainedModel>,
}

fn parse_doc<T: serde::de::DeserializeOwned>(text: &str, format: &str) -> Result<T> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::ModelFile(format!("corrupt model file: {e}")))?;
    let f = v.get("format").and_then(|x| x.as_str());
    if f != Some(format) {
        return Err(Error::ModelFile(format!("expected format `{format}`, found {f:?}")));
    }
    let ver = v.get("version").and_then(|x| x.as_u64());
    if ver != Some(MODEL_VERSION as u64) {
        return Err(Error::ModelFile(format!(
            "unsupported model version {ver:?}, this build reads {MODEL_VERSION}"
        )));
    }
    serde_json::from_value(v).map_err(|e| Error::ModelFile(format!("corrupt model file: {e}")))
}

impl CorridorPolicy {
    pub fn to_json(&self) -> String {
        let doc = CorridorDoc {
            format: CORRIDOR_FORMAT.into(),
            version: MODEL_VERSION,
            models: self.models.clone(),
        };
        serde_json::to_string(&doc).expect("corridor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CorridorDoc = parse_doc(text, CORRIDOR_FORMAT)?;
        Ok(Self { models: doc.models })
    }

    pub fn model(&self, id: &str) -> Option<&TrainedModel> {
        self.models.iter().find(|m| m.intersection_id == id)
    }
}

pub fn save_model(m: &TrainedModel, path: &Path) -> Result<()> {
    std::fs::write(path, m.to_json()).map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    TrainedModel::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn save_corridor(c: &CorridorPolicy, path: &Path) -> Result<()> {
    std::fs::write(path, c.to_json()).map_err(io_err(path))
}

pub fn load_corridor(path: &Path) -> Result<CorridorPolicy> {
    CorridorPolicy::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
}

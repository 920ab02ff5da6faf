//! JSON checkpoints. Parameter arrays are written as decimal numbers with 17
//! significant digits, which is enough for every `f64` to read back exactly.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use haad::dynamics::RolloutConfig;
use haad::training::LossConfig;
use haad::{GridShape, Mat, PotentialConfig, PotentialModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint parameter mismatch: {0}")]
    Params(String),
    #[error("checkpoint holds a non-finite value in `{0}`")]
    NonFinite(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(with = "digits17")]
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub shape: GridShape,
    pub d_phy: usize,
    pub seed: u64,
    pub potential: PotentialConfig,
    pub rollout: RolloutConfig,
    pub loss: LossConfig,
    #[serde(with = "digits17::scalar")]
    pub mass_epsilon: f64,
    pub params: Vec<ParamArray>,
}

impl Checkpoint {
    pub fn from_model(
        model: &PotentialModel,
        shape: GridShape,
        seed: u64,
        rollout: RolloutConfig,
        loss: LossConfig,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            shape,
            d_phy: model.d_phy(),
            seed,
            potential: model.potential,
            rollout,
            loss,
            mass_epsilon: model.mass.epsilon,
            params: model
                .params()
                .into_iter()
                .map(|(name, m)| ParamArray {
                    name: name.to_string(),
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model, checking every parameter name and shape.
    pub fn to_model(&self) -> Result<PotentialModel, CheckpointError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: self.format_version,
            });
        }
        let mut model = PotentialModel::init(self.shape.d_in, self.d_phy, self.potential, 0);
        let expected: Vec<(String, (usize, usize))> = model
            .params()
            .iter()
            .map(|(n, m)| (n.to_string(), m.shape()))
            .collect();
        if expected.len() != self.params.len() {
            return Err(CheckpointError::Params(format!(
                "expected {} arrays, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        let mut fresh = Vec::with_capacity(expected.len());
        for ((name, shape), p) in expected.iter().zip(&self.params) {
            if *name != p.name || *shape != (p.rows, p.cols) {
                return Err(CheckpointError::Params(format!(
                    "expected `{name}` {}x{}, found `{}` {}x{}",
                    shape.0, shape.1, p.name, p.rows, p.cols
                )));
            }
            if p.data.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::NonFinite(p.name.clone()));
            }
            let m = Mat::from_vec(p.rows, p.cols, p.data.clone())
                .map_err(|e| CheckpointError::Params(format!("`{}`: {e}", p.name)))?;
            fresh.push(m);
        }
        for (slot, m) in model.params_mut().into_iter().zip(fresh) {
            *slot = m;
        }
        if !self.mass_epsilon.is_finite() || self.mass_epsilon <= 0.0 {
            return Err(CheckpointError::NonFinite("mass_epsilon".into()));
        }
        model.mass.epsilon = self.mass_epsilon;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: c.format_version,
            });
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()?).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

mod digits17 {
    use super::*;
    use serde::ser::{Error as _, SerializeSeq};
    use serde::{Deserializer, Serializer};

    pub(super) fn number(x: f64) -> Result<serde_json::Number, String> {
        if !x.is_finite() {
            return Err(format!("cannot write non-finite value {x}"));
        }
        serde_json::Number::from_str(&format!("{x:.16e}")).map_err(|e| e.to_string())
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(values.len()))?;
        for &v in values {
            seq.serialize_element(&number(v).map_err(S::Error::custom)?)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<f64>::deserialize(d)
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            number(*v).map_err(S::Error::custom)?.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            f64::deserialize(d)
        }
    }
}

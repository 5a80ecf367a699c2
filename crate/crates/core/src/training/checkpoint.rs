use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TimesNet};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "times2d-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Everything needed to rebuild a trained model, plus an arbitrary JSON
/// record of how it was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    /// FNV-1a of the serialized config, checked on load.
    pub config_hash: String,
    pub params: Vec<NamedTensor>,
    #[serde(default)]
    pub run: serde_json::Value,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn config_hash(config: &ModelConfig) -> Result<String> {
    Ok(format!("{:016x}", fnv1a(&serde_json::to_vec(config)?)))
}

impl Checkpoint {
    pub fn from_model(model: &TimesNet, run: serde_json::Value) -> Result<Self> {
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            config_hash: config_hash(model.config())?,
            params: model
                .params()
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_owned(),
                    shape: t.dims().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
            run,
        })
    }

    /// Rebuilds the model, verifying format, version, hash, names and shapes.
    pub fn into_model(self) -> Result<TimesNet> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format `{}`",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if config_hash(&self.config)? != self.config_hash {
            return Err(Error::Checkpoint("config hash mismatch".into()));
        }
        let mut model = TimesNet::new(self.config)?;
        let mut store = ParamStore::new();
        for p in self.params {
            let t = Tensor::new(&p.shape, p.values)
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", p.name)))?;
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` is not finite",
                    p.name
                )));
            }
            store.add(p.name, t);
        }
        model.params_mut().load(&store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Head;

    fn small() -> TimesNet {
        let mut cfg = ModelConfig::new(8, 2, Head::Reconstruction);
        cfg.d_min = 4;
        cfg.d_max = 4;
        cfg.layers = 1;
        cfg.k = 2;
        TimesNet::new(cfg).unwrap()
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let m = small();
        let ck = Checkpoint::from_model(&m, serde_json::json!({"epochs": 3})).unwrap();
        let text = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ck);
        let m2 = back.into_model().unwrap();
        for ((_, a), (_, b)) in m.params().iter().zip(m2.params().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn tampered_config_rejected() {
        let mut ck = Checkpoint::from_model(&small(), serde_json::Value::Null).unwrap();
        ck.config.k = 3;
        assert!(matches!(ck.into_model(), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut ck = Checkpoint::from_model(&small(), serde_json::Value::Null).unwrap();
        ck.params[0].shape = vec![ck.params[0].values.len()];
        assert!(ck.into_model().is_err());
        let mut ck = Checkpoint::from_model(&small(), serde_json::Value::Null).unwrap();
        ck.params.pop();
        assert!(ck.into_model().is_err());
    }
}

//! Checkpoint archive: named f64 tensors with a JSON header carrying the
//! model-config echo, the training-step counter and optional extras. The
//! tensor payload is raw little-endian f64, so save -> load -> save
//! reproduces the payload bit-exactly.

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::model::{ModelConfig, PuckNet};

const MAGIC: &[u8; 8] = b"PUCKNET1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// An in-memory checkpoint. Tensor order is preserved from the model
/// traversal (or the file), which keeps re-saves byte-identical.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub tensors: Vec<(String, ArrayD<f64>)>,
    pub extra: Option<serde_json::Value>,
}

impl Checkpoint {
    /// Snapshots the model's parameters and normalization statistics.
    pub fn from_model(model: &mut PuckNet) -> Self {
        Self {
            config: model.config().clone(),
            step: model.step(),
            tensors: model.state_tensors(),
            extra: None,
        }
    }

    pub fn tensor_map(&self) -> BTreeMap<String, ArrayD<f64>> {
        self.tensors.iter().cloned().collect()
    }

    /// Strictly restores model parameters, statistics and the step counter.
    pub fn apply_to(&self, model: &mut PuckNet) -> Result<()> {
        if *model.config() != self.config {
            return Err(Error::Checkpoint(
                "checkpoint was written for a different model configuration".into(),
            ));
        }
        model.load_state(&self.tensor_map())?;
        model.set_step(self.step);
        Ok(())
    }

    /// Rebuilds a model from scratch and restores the checkpoint into it.
    pub fn restore_model(&self) -> Result<PuckNet> {
        let mut model = PuckNet::build(&self.config, 0)?;
        self.apply_to(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            extra: self.extra.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| io_err(path, e))?,
        );
        file.write_all(MAGIC).map_err(|e| io_err(path, e))?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        file.write_all(&header_bytes).map_err(|e| io_err(path, e))?;
        for (_, tensor) in &self.tensors {
            for v in tensor.iter() {
                file.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))?;
            }
        }
        file.flush().map_err(|e| io_err(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::io::BufReader::new(
            std::fs::File::open(path).map_err(|e| io_err(path, e))?,
        );
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: not a checkpoint archive",
                path.display()
            )));
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes).map_err(|e| io_err(path, e))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)
            .map_err(|e| io_err(path, e))?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: corrupt header: {e}", path.display())))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let count: usize = entry.shape.iter().product();
            let mut buf = vec![0u8; count * 8];
            file.read_exact(&mut buf).map_err(|e| {
                Error::Checkpoint(format!(
                    "{}: truncated payload for {}: {e}",
                    path.display(),
                    entry.name
                ))
            })?;
            let values: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", entry.name)))?;
            tensors.push((entry.name.clone(), tensor));
        }
        Ok(Self {
            config: header.config,
            step: header.step,
            tensors,
            extra: header.extra,
        })
    }
}

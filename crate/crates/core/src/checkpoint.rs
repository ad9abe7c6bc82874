//! Model checkpoints on top of the tensor archive.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::{NamedTensor, TensorArchive};
use crate::error::{Error, Result};
use crate::lora::AdapterConfig;
use crate::model::{param_layout, PadModel};
use crate::rng;
use crate::train::TrainMode;
use crate::vit::EncoderConfig;

pub const CHECKPOINT_FORMAT: &str = "foundpad-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    /// Preset name the encoder came from, if any.
    pub preset: Option<String>,
    pub encoder: EncoderConfig,
    /// Present exactly when the archive carries adapter tensors.
    pub adapter: Option<AdapterConfig>,
    pub mode: TrainMode,
    pub seed: u64,
    pub epoch: usize,
}

impl CheckpointHeader {
    pub fn new(model: &PadModel<f32>, preset: Option<String>, mode: TrainMode, seed: u64, epoch: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            preset,
            encoder: model.config().clone(),
            adapter: model.encoder.adapter.clone(),
            mode,
            seed,
            epoch,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: PadModel<f32>,
}

impl Checkpoint {
    pub fn to_archive(&self) -> Result<TensorArchive> {
        if self.header.adapter != self.model.encoder.adapter {
            return Err(Error::Checkpoint("header adapter config disagrees with the model".into()));
        }
        let mut archive = TensorArchive::new(serde_json::to_value(&self.header)?);
        for (name, t) in self.model.tensors() {
            archive.push(NamedTensor::new(name, t.shape().to_vec(), t.iter().copied().collect())?)?;
        }
        Ok(archive)
    }

    /// Rebuilds the model, requiring the archive to hold exactly the tensors
    /// the header's architecture implies.
    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let header: CheckpointHeader = serde_json::from_value(archive.header.clone())
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format tag {:?}", header.format)));
        }
        header.encoder.validate()?;
        let layout = param_layout(&header.encoder, header.adapter.as_ref());
        let expected: BTreeSet<&str> = layout.iter().map(|s| s.name.as_str()).collect();
        if let Some(unknown) = archive.names().find(|n| !expected.contains(n)) {
            return Err(Error::Checkpoint(format!("unknown tensor {unknown}")));
        }
        let mut model = PadModel::zeros(&header.encoder)?;
        if let Some(adapter) = &header.adapter {
            model.encoder.attach_adapters(adapter, &mut rng::stream(0, &[]))?;
        }
        for (name, mut dst) in model.tensors_mut() {
            let src = archive.get(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if src.shape != dst.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    dst.shape(),
                    src.shape
                )));
            }
            for (d, s) in dst.iter_mut().zip(&src.data) {
                *d = *s;
            }
        }
        Ok(Self { header, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::read(path)?)
    }

    /// Folds adapters into the projections. The result has no adapter tensors.
    pub fn merged(&self) -> Result<Self> {
        let model = self.model.merged()?;
        let mut header = self.header.clone();
        header.adapter = None;
        Ok(Self { header, model })
    }
}

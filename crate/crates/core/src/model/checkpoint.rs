use std::path::Path;

use serde::{Deserialize, Serialize};
use vidcast_autograd::ParamStore;

use super::{ModelConfig, Srvp, TrainedModel, TrainingMeta};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "vidcast-srvp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    meta: TrainingMeta,
    params: ParamStore,
}

impl TrainedModel {
    /// Writes a self-describing JSON checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.model.config().clone(),
            meta: self.meta.clone(),
            params: self.model.params().clone(),
        };
        let text = serde_json::to_string(&ckpt)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(TrainedModel {
            model: Srvp::from_params(ckpt.config, ckpt.params)?,
            meta: ckpt.meta,
        })
    }
}

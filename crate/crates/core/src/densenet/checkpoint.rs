//! JSON checkpoint of one or more view models.
//!
//! ```json
//! { "format": "loster-checkpoint", "format_version": 1,
//!   "views": [ { "arch": {...}, "view": "original",
//!                "encoder": [block, ...], "decoder": [block, ...],
//!                "centroids": {"rows": k, "cols": d, "data": [...]} } ] }
//! ```
//!
//! Matrices are row-major; floats round-trip exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ViewModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "loster-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub format_version: u32,
    pub views: Vec<ViewModel>,
}

impl Checkpoint {
    pub fn new(views: Vec<ViewModel>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            format_version: CHECKPOINT_VERSION,
            views,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ckpt.format,
                ckpt.format_version
            )));
        }
        for v in &ckpt.views {
            v.validate()?;
        }
        Ok(ckpt)
    }
}

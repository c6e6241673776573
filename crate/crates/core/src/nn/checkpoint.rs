//! Model checkpoints.
//!
//! A checkpoint is a UTF-8 JSON document:
//!
//! ```text
//! {
//!   "format": "slca-checkpoint",
//!   "version": 1,
//!   "model": {
//!     "activation": "gelu",
//!     "linears": [{"weight": {"shape": [out, in], "data": [...]},
//!                  "bias": {...},
//!                  "adapter": {"a": {...}, "b": {...}, "rank": k}}, ...],
//!     "norms": [{"gain": {...}, "bias": {...}}, ...],
//!     "head": {"weight": {...} | null, "classes": [...], "tasks": [...]}
//!   },
//!   "groups": [{"name": "...", "members": ["linear.0.weight", ...], "lr": 0.01}]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::groups::GroupSet;
use super::model::Model;
use crate::error::{ensure, Result};

pub const CHECKPOINT_FORMAT: &str = "slca-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: Model,
    #[serde(default)]
    pub groups: Vec<super::groups::ParamGroup>,
}

impl Checkpoint {
    pub fn new(model: &Model, groups: Option<&GroupSet>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: model.clone(),
            groups: groups.map(|g| g.groups.clone()).unwrap_or_default(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        ensure!(
            ck.format == CHECKPOINT_FORMAT,
            "not a checkpoint (format `{}`)",
            ck.format
        );
        ensure!(
            ck.version == CHECKPOINT_VERSION,
            "unsupported checkpoint version {}",
            ck.version
        );
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn group_set(&self) -> GroupSet {
        GroupSet {
            groups: self.groups.clone(),
        }
    }
}

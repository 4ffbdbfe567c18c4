use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::StageLinearization;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TerrainProfile};
use crate::mpc::ReferenceTrajectory;

/// Hex SHA-256 over the model parameters, the policy terrain, the reference
/// and ρ.
pub fn cache_key(model: &ModelSpec, terrain: &TerrainProfile, reference: &ReferenceTrajectory, rho: f64) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&model.params)?);
    hasher.update(serde_json::to_vec(terrain)?);
    hasher.update(serde_json::to_vec(reference)?);
    hasher.update(rho.to_le_bytes());
    Ok(hex::encode(hasher.finalize()))
}

/// Serialized offline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationCache {
    pub key: String,
    pub model: String,
    pub rho: f64,
    pub stages: Vec<StageLinearization>,
}

impl LinearizationCache {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Loads the cache at `path` if its key matches.
    pub fn load_matching(path: &Path, key: &str) -> Result<Option<Self>> {
        if !path.exists() {
            return Ok(None);
        }
        match Self::load(path) {
            Ok(cache) if cache.key == key => Ok(Some(cache)),
            Ok(_) => Ok(None),
            Err(Error::Json(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

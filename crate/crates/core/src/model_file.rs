//! JSON persistence for fitted nuisances, supporting the fit/estimate split.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeH, BridgeQ};
use crate::data::DataSchema;
use crate::error::{Error, Result};
use crate::policy::PolicyModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    /// Schema fingerprint of the training data; estimation rejects
    /// incompatible datasets up front.
    pub schema: DataSchema,
    pub policy: PolicyModel,
    pub bridge_h: BridgeH,
    pub bridge_q: BridgeQ,
    pub s_h: f64,
    pub s_q: f64,
    pub clip_floor: f64,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn check_schema(&self, schema: &DataSchema) -> Result<()> {
        if *schema != self.schema {
            return Err(Error::Config(format!(
                "dataset schema {schema:?} does not match model schema {:?}",
                self.schema
            )));
        }
        Ok(())
    }
}

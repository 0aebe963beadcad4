//! Versioned JSON persistence of fitted forests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::model::ForestModel;
use crate::error::{Error, Result};

pub const FORMAT: &str = "qrfvimp-forest";
pub const FORMAT_VERSION: u32 = 1;

/// A fitted forest together with the training responses, which is all that
/// is needed to answer quantile queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub model: ForestModel,
    pub responses: Vec<f64>,
}

impl ModelDocument {
    pub fn new(model: ForestModel, data: &Dataset) -> Result<Self> {
        model.check_trained_on(data)?;
        Ok(ModelDocument {
            format: FORMAT.to_string(),
            version: FORMAT_VERSION,
            feature_names: data.feature_names().to_vec(),
            model,
            responses: data.y().to_vec(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::CorruptModel(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelDocument::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::CorruptModel(format!(
                "unknown format '{}'",
                self.format
            )));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::CorruptModel(format!(
                "unsupported format version {}",
                self.version
            )));
        }
        let m = &self.model;
        let (rows, cols) = (m.fingerprint.rows, m.fingerprint.cols);
        if self.responses.len() != rows {
            return Err(Error::CorruptModel(format!(
                "{} responses for {rows} training rows",
                self.responses.len()
            )));
        }
        if self.responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptModel("non-finite response".into()));
        }
        if self.feature_names.len() != cols {
            return Err(Error::CorruptModel(
                "feature names do not match dimension".into(),
            ));
        }
        if m.trees.len() != m.config.num_trees || m.trees.is_empty() {
            return Err(Error::CorruptModel(
                "tree count does not match configuration".into(),
            ));
        }
        if m.features.is_empty() || m.features.iter().any(|&j| j >= cols) {
            return Err(Error::CorruptModel("invalid feature set".into()));
        }
        for tree in &m.trees {
            tree.validate(rows, cols)?;
        }
        Ok(())
    }
}

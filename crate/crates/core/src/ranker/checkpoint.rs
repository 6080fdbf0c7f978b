use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{RankingModel, Vocabulary};
use super::train::TrainingSummary;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{IdfTable, FEATURE_CATALOGUE_VERSION};
use crate::nn::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk model: header plus named row-major parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub feature_catalogue_version: u32,
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    pub idf: IdfTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    pub parameters: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &RankingModel, training: Option<TrainingSummary>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            feature_catalogue_version: FEATURE_CATALOGUE_VERSION,
            config: model.config.clone(),
            vocabulary: model.vocab.clone(),
            idf: model.idf.clone(),
            training,
            parameters: model
                .params
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_owned(),
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<RankingModel> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::validation(
                "format_version",
                format!("unsupported checkpoint version {}", self.format_version),
            ));
        }
        let mut model = RankingModel::new(self.config, self.vocabulary, self.idf);
        if self.parameters.len() != model.params.len() {
            return Err(Error::shape(
                format!("{} parameters", model.params.len()),
                self.parameters.len(),
            ));
        }
        for p in self.parameters {
            let id = model
                .params
                .id(&p.name)
                .ok_or_else(|| Error::validation("parameters", format!("unknown parameter `{}`", p.name)))?;
            let slot = model.params.get_mut(id);
            if slot.shape != p.shape {
                return Err(Error::shape(
                    format!("{}: {:?}", p.name, slot.shape),
                    format!("{:?}", p.shape),
                ));
            }
            *slot = Tensor::new(p.shape, p.data)?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        Ok(serde_json::from_str(raw)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

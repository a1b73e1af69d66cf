//! Versioned JSON checkpoints holding any of the three tracers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::akt::AktModel;
use crate::bkt::BktModel;
use crate::data::Step;
use crate::dkt::DktModel;
use crate::error::{KtError, Result};
use crate::model::{Feedback, KnowledgeTracer};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Bkt(BktModel),
    Dkt(DktModel),
    Akt(AktModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Bkt(_) => "bkt",
            Model::Dkt(_) => "dkt",
            Model::Akt(_) => "akt",
        }
    }

    fn tracer(&self) -> &dyn KnowledgeTracer {
        match self {
            Model::Bkt(m) => m,
            Model::Dkt(m) => m,
            Model::Akt(m) => m,
        }
    }

    /// Re-derives the parameter layout and checks it against the stored tensors.
    fn validated(self) -> Result<Self> {
        Ok(match self {
            Model::Bkt(m) => {
                m.default.validate()?;
                for p in m.kcs.values() {
                    p.validate()?;
                }
                Model::Bkt(m)
            }
            Model::Dkt(m) => Model::Dkt(DktModel::from_params(m.config, m.params)?),
            Model::Akt(m) => Model::Akt(AktModel::from_params(m.config, m.params)?),
        })
    }
}

impl KnowledgeTracer for Model {
    fn predict_next(&self, steps: &[Step], responses: &[f64]) -> Result<Vec<f64>> {
        self.tracer().predict_next(steps, responses)
    }

    fn predict_frozen(&self, steps: &[Step], prefix: &[f64]) -> Result<Vec<f64>> {
        self.tracer().predict_frozen(steps, prefix)
    }

    fn predict_accumulative(
        &self,
        steps: &[Step],
        prefix: &[f64],
        feedback: Feedback,
    ) -> Result<Vec<f64>> {
        self.tracer().predict_accumulative(steps, prefix, feedback)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Checkpoint = serde_json::from_str(text)?;
        if raw.format_version != FORMAT_VERSION {
            return Err(KtError::Config(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                raw.format_version
            )));
        }
        Ok(Checkpoint {
            format_version: raw.format_version,
            model: raw.model.validated()?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| KtError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| KtError::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::akt::AktConfig;
    use crate::bkt::BktParams;
    use crate::dkt::{Cell, DktConfig};

    fn steps() -> Vec<Step> {
        (0..5)
            .map(|i| Step {
                question: i % 3,
                concept: i % 2,
            })
            .collect()
    }

    fn round_trip(model: Model) {
        let ck = Checkpoint::new(model);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let r = [1.0, 0.0, 1.0, 1.0, 0.0];
        assert_eq!(
            back.model.predict_next(&steps(), &r).unwrap(),
            ck.model.predict_next(&steps(), &r).unwrap()
        );
    }

    #[test]
    fn every_kind_round_trips_exactly() {
        round_trip(Model::Bkt(BktModel {
            default: BktParams::default(),
            kcs: [(1, BktParams::new(0.3, 0.2, 0.1, 0.25))]
                .into_iter()
                .collect(),
        }));
        round_trip(Model::Dkt(
            DktModel::new(DktConfig::new(2, 5, Cell::Lstm), 3).unwrap(),
        ));
        let cfg = AktConfig {
            d_model: 8,
            num_heads: 2,
            ff_dim: 8,
            ..AktConfig::new(2, 3)
        };
        round_trip(Model::Akt(AktModel::new(cfg, 4).unwrap()));
    }

    #[test]
    fn version_and_layout_are_checked() {
        let ck = Checkpoint::new(Model::Dkt(
            DktModel::new(DktConfig::new(2, 5, Cell::Vanilla), 1).unwrap(),
        ));
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        v["format_version"] = 99.into();
        assert!(matches!(
            Checkpoint::from_json(&v.to_string()),
            Err(KtError::Config(_))
        ));
        v["format_version"] = FORMAT_VERSION.into();
        v["model"]["dkt"]["config"]["hidden_dim"] = 6.into();
        assert!(matches!(
            Checkpoint::from_json(&v.to_string()),
            Err(KtError::Config(_))
        ));
    }
}

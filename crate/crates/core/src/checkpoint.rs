//! Model checkpoints as JSON documents.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so `load(save(m)) == m` bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Labeled;
use crate::error::{Error, Result};
use crate::measure::ParticleMeasure;
use crate::nets::{Activation, DistributionalNetwork, OutputNetwork, PracticalNetwork, TopologicalNetwork};
use crate::params::ParamVector;
use crate::testfn::FamilySpec;
use crate::training::{empirical_risk, LossSpec};

pub const FORMAT_VERSION: u32 = 1;

/// Any trained model, tagged by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "network", rename_all = "snake_case")]
pub enum AnyModel {
    /// A bare head fed the single-atom location of each record.
    Head(OutputNetwork),
    Topological(TopologicalNetwork),
    Distributional(DistributionalNetwork),
    Practical(PracticalNetwork),
}

impl AnyModel {
    pub fn params(&self) -> ParamVector {
        match self {
            AnyModel::Head(m) => m.params(),
            AnyModel::Topological(m) => m.params(),
            AnyModel::Distributional(m) => m.params(),
            AnyModel::Practical(m) => m.params(),
        }
    }

    /// Whether the model reads points rather than measures.
    pub fn reads_points(&self) -> bool {
        matches!(self, AnyModel::Head(_) | AnyModel::Topological(_))
    }

    /// Prediction for a dataset record. Point models require single-atom records.
    pub fn predict(&self, mu: &ParticleMeasure) -> Result<f64> {
        match self {
            AnyModel::Head(m) => m.forward_scalar(as_point(mu)?),
            AnyModel::Topological(m) => m.forward(as_point(mu)?),
            AnyModel::Distributional(m) => m.forward(mu),
            AnyModel::Practical(m) => m.forward(mu),
        }
    }

    /// Mean loss over `records`, computed exactly as during training.
    pub fn risk(&self, records: &[Labeled<ParticleMeasure>], loss: LossSpec) -> Result<f64> {
        match self {
            AnyModel::Head(m) => empirical_risk(m, &points_of(records)?, loss),
            AnyModel::Topological(m) => empirical_risk(m, &points_of(records)?, loss),
            AnyModel::Distributional(m) => empirical_risk(m, records, loss),
            AnyModel::Practical(m) => empirical_risk(m, records, loss),
        }
    }
}

fn as_point(mu: &ParticleMeasure) -> Result<&[f64]> {
    match mu.atoms() {
        [atom] => Ok(&atom.location),
        atoms => Err(Error::InvalidArgument(format!(
            "point models read single-atom records, found {} atoms",
            atoms.len()
        ))),
    }
}

/// Point-valued view of single-atom records.
pub fn points_of(records: &[Labeled<ParticleMeasure>]) -> Result<Vec<Labeled<Vec<f64>>>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = as_point(&r.input).map_err(|e| e.at_record(i))?;
            Ok(Labeled::new(p.to_vec(), r.label))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: u32,
    pub activation: Activation,
    /// Families the model's test functions were enumerated from.
    #[serde(default)]
    pub families: Vec<FamilySpec>,
    pub loss: LossSpec,
    pub model: AnyModel,
}

impl Checkpoint {
    pub fn new(activation: Activation, families: Vec<FamilySpec>, loss: LossSpec, model: AnyModel) -> Self {
        Self {
            format: FORMAT_VERSION,
            activation,
            families,
            loss,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint format {} (expected {FORMAT_VERSION})",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

//! JSON instance, config and solution files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;

use crate::adapters::{
    concentration, ConcentrationInstance, ConcentrationModel, GeneratorConfig, GridInstance, GridModel,
    InterdictionInstance, InterdictionModel, QueueingInstance, QueueingModel,
};
use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::error::{DeriskError, Result};
use crate::features::FeatureModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ConcentrationSpec {
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub instance: Option<ConcentrationInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Problem {
    Queueing(QueueingInstance),
    Interdiction(InterdictionInstance),
    Grid(GridInstance),
    Concentration(ConcentrationSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InstanceFile {
    pub schema_version: u32,
    pub problem: Problem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolutionFile {
    #[serde(alias = "solution")]
    pub x: Vec<f64>,
}

impl Problem {
    pub fn family(&self) -> &'static str {
        match self {
            Self::Queueing(_) => "queueing",
            Self::Interdiction(_) => "interdiction",
            Self::Grid(_) => "grid",
            Self::Concentration(_) => "concentration",
        }
    }

    pub fn build(&self) -> Result<Box<dyn FeatureModel>> {
        Ok(match self {
            Self::Queueing(i) => Box::new(QueueingModel::new(i.clone())?),
            Self::Interdiction(i) => Box::new(InterdictionModel::new(i.clone())?),
            Self::Grid(i) => Box::new(GridModel::new(i.clone())?),
            Self::Concentration(spec) => {
                let inst = match (&spec.generator, &spec.instance) {
                    (Some(g), None) => concentration::generate(g)?,
                    (None, Some(i)) => i.clone(),
                    _ => {
                        return Err(DeriskError::Schema {
                            pointer: "/problem/concentration".into(),
                            message: "give exactly one of generator or instance".into(),
                        })
                    }
                };
                Box::new(ConcentrationModel::new(inst)?)
            }
        })
    }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses JSON, reporting failures with a JSON pointer to the offending value.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| DeriskError::Schema {
        pointer: pointer(e.path()),
        message: e.inner().to_string(),
    })
}

fn check_version(found: u32) -> Result<()> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(DeriskError::Schema {
            pointer: "/schemaVersion".into(),
            message: format!("expected {SCHEMA_VERSION}, found {found}"),
        })
    }
}

pub fn parse_instance(text: &str) -> Result<InstanceFile> {
    let f: InstanceFile = parse_json(text)?;
    check_version(f.schema_version)?;
    Ok(f)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let c: RunConfig = parse_json(text)?;
    check_version(c.schema_version)?;
    c.validate()?;
    Ok(c)
}

pub fn load_instance(path: &Path) -> Result<InstanceFile> {
    parse_instance(&fs::read_to_string(path)?)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

pub fn load_solution(path: &Path) -> Result<SolutionFile> {
    parse_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointer_names_the_bad_field() {
        let text = r#"{"schemaVersion": 1, "problem": {"queueing": {"arcs": [{"capacity": "x", "cost": 1}], "demand": 1}}}"#;
        match parse_instance(text) {
            Err(DeriskError::Schema { pointer, .. }) => assert_eq!(pointer, "/problem/queueing/arcs/0/capacity"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = r#"{"schemaVersion": 2, "problem": {"queueing": {"arcs": [{"capacity": 1, "cost": 1}], "demand": 1}}}"#;
        assert!(matches!(parse_instance(text), Err(DeriskError::Schema { .. })));
    }

    #[test]
    fn unknown_config_field_is_rejected() {
        let text = r#"{"tMax": 3, "thetaPolicy": {"kind": "formal", "lambdaLo": 0.5, "lambdaHi": 0.6, "xi": 0.01},
            "alphaPolicy": {"kind": "theory"}, "bigDelta": 1e-6, "smallDelta": 1e-6,
            "boostingKernel": "exact", "separationKernel": "softmax", "tMaxx": 1}"#;
        match parse_config(text) {
            Err(DeriskError::Schema { message, .. }) => assert!(message.contains("tMaxx")),
            other => panic!("unexpected {other:?}"),
        }
    }
}

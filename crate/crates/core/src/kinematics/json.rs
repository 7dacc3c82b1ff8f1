//! Native JSON chain format, mirroring the XML subset field for field.

use serde::{Deserialize, Serialize};

use super::chain::{JointSpec, SensorSpec, CHAIN_FORMAT_VERSION};
use super::{KinematicChain, KinematicError, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    format_version: u32,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    anchor_link: String,
    links: Vec<LinkSpec>,
    #[serde(default)]
    joints: Vec<JointSpec>,
    #[serde(default)]
    sensor_frames: Vec<SensorSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkSpec {
    name: String,
}

pub fn parse_chain_json(text: &str) -> Result<KinematicChain> {
    let f: ChainFile = serde_json::from_str(text).map_err(|e| KinematicError::Syntax(e.to_string()))?;
    if f.format_version != CHAIN_FORMAT_VERSION {
        return Err(KinematicError::UnsupportedVersion(f.format_version));
    }
    KinematicChain::new(
        f.links.into_iter().map(|l| l.name).collect(),
        f.joints,
        &f.anchor_link,
        f.sensor_frames,
    )
}

pub fn to_json(chain: &KinematicChain, name: &str) -> String {
    let (joints, sensor_frames) = chain.to_specs();
    let f = ChainFile {
        format_version: CHAIN_FORMAT_VERSION,
        name: Some(name.to_string()),
        anchor_link: chain.anchor_link().to_string(),
        links: chain.links().iter().map(|l| LinkSpec { name: l.clone() }).collect(),
        joints,
        sensor_frames,
    };
    serde_json::to_string_pretty(&f).expect("chain serializes")
}

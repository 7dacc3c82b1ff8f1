//! Kinematic chains, rigid poses, and forward kinematics.
//!
//! Chains are read from a URDF-subset XML or an equivalent JSON document and
//! validated once. Sensor poses are reported in the frame of the chain's anchor
//! link, so they do not depend on where the arm carrying the hand is placed.

mod chain;
mod fk;
mod json;
mod pose;
mod xml;

pub use chain::{Joint, JointKind, JointSpec, JointState, KinematicChain, SensorFrame, SensorSpec, CHAIN_FORMAT_VERSION};
pub use fk::{fk_in_world, forward_kinematics};
pub use json::{parse_chain_json, to_json};
pub use pose::{axis_angle, exp_so3, log_so3, rpy, skew, wrap_angle, Origin, Pose6D};
pub use xml::{parse_chain_xml, to_xml};

use thiserror::Error;

/// The bundled planar hand in XML form.
pub const PLANAR_HAND_XML: &str = include_str!("../../assets/planar_hand.urdf.xml");
/// The bundled planar hand in JSON form.
pub const PLANAR_HAND_JSON: &str = include_str!("../../assets/planar_hand.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown tag <{0}>")]
    UnknownTag(String),
    #[error("unknown attribute {attr} on <{tag}>")]
    UnknownAttribute { tag: String, attr: String },
    #[error("<{tag}> is missing attribute {attr}")]
    MissingAttribute { tag: String, attr: String },
    #[error("bad value {value:?} for {attr} on <{tag}>")]
    BadValue { tag: String, attr: String, value: String },
    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u32),
    #[error("duplicate {kind} name {name}")]
    Duplicate { kind: &'static str, name: String },
    #[error("link {link} referenced by {referrer} does not exist")]
    MissingLink { link: String, referrer: String },
    #[error("link {link} has multiple parents ({}, {})", joints[0], joints[1])]
    MultipleParents { link: String, joints: [String; 2] },
    #[error("cycle detected through link {link}")]
    Cycle { link: String },
    #[error("joint {joint} axis has norm {norm}, expected 1")]
    NonUnitAxis { joint: String, norm: f64 },
    #[error("joint {joint} limits [{lower}, {upper}] are inverted")]
    BadLimits { joint: String, lower: f64, upper: f64 },
    #[error("anchor link not found: {0:?}")]
    AnchorNotFound(String),
    #[error("sensor {sensor} is not attached below anchor link {anchor}")]
    SensorNotBelowAnchor { sensor: String, anchor: String },
    #[error("unknown joint {0}")]
    UnknownJoint(String),
    #[error("missing value for joint {0}")]
    MissingJoint(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = KinematicError> = std::result::Result<T, E>;

/// The bundled planar hand chain.
pub fn planar_hand() -> KinematicChain {
    parse_chain_xml(PLANAR_HAND_XML).expect("bundled chain is valid")
}

/// Parse a chain file, choosing the format from the first non-blank character.
pub fn parse_chain(text: &str) -> Result<KinematicChain> {
    if text.trim_start().starts_with('<') {
        parse_chain_xml(text)
    } else {
        parse_chain_json(text)
    }
}

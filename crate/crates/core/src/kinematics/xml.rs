//! URDF-subset reader and writer.
//!
//! Accepted tags: `<robot>`, `<link name>`, `<joint name type>` with `<origin xyz rpy>`,
//! `<axis xyz>`, `<parent link>`, `<child link>`, `<limit lower upper>`, and
//! `<sensor name link>` with an optional `<origin>`. The `<robot>` element carries
//! `format_version` and `anchor_link`.

use std::fmt::Write as _;

use roxmltree::{Document, Node};

use super::chain::{JointKind, JointSpec, SensorSpec, CHAIN_FORMAT_VERSION};
use super::pose::Origin;
use super::{KinematicChain, KinematicError, Result};

pub fn parse_chain_xml(text: &str) -> Result<KinematicChain> {
    let doc = Document::parse(text).map_err(|e| KinematicError::Syntax(e.to_string()))?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(unknown_tag(&robot));
    }
    allow_attrs(&robot, &["name", "format_version", "anchor_link"])?;
    if let Some(v) = robot.attribute("format_version") {
        let v: u32 = v.trim().parse().map_err(|_| bad_value(&robot, "format_version", v))?;
        if v != CHAIN_FORMAT_VERSION {
            return Err(KinematicError::UnsupportedVersion(v));
        }
    }
    let anchor = robot.attribute("anchor_link").unwrap_or("");

    let mut links = Vec::new();
    let mut joints = Vec::new();
    let mut sensors = Vec::new();
    for node in robot.children().filter(Node::is_element) {
        match node.tag_name().name() {
            "link" => {
                allow_attrs(&node, &["name"])?;
                if let Some(child) = node.children().find(Node::is_element) {
                    return Err(unknown_tag(&child));
                }
                links.push(required(&node, "name")?.to_string());
            }
            "joint" => joints.push(parse_joint(&node)?),
            "sensor" => sensors.push(parse_sensor(&node)?),
            _ => return Err(unknown_tag(&node)),
        }
    }
    KinematicChain::new(links, joints, anchor, sensors)
}

fn parse_joint(node: &Node) -> Result<JointSpec> {
    allow_attrs(node, &["name", "type"])?;
    let name = required(node, "name")?.to_string();
    let kind = match required(node, "type")? {
        "revolute" => JointKind::Revolute,
        "fixed" => JointKind::Fixed,
        other => return Err(bad_value(node, "type", other)),
    };
    let mut spec = JointSpec {
        name,
        kind,
        parent: String::new(),
        child: String::new(),
        origin: Origin::default(),
        axis: None,
        limits: None,
    };
    let mut parent = None;
    let mut child = None;
    for c in node.children().filter(Node::is_element) {
        match c.tag_name().name() {
            "origin" => spec.origin = parse_origin(&c)?,
            "axis" => {
                allow_attrs(&c, &["xyz"])?;
                spec.axis = Some(parse_vec3(&c, "xyz")?);
            }
            "parent" => {
                allow_attrs(&c, &["link"])?;
                parent = Some(required(&c, "link")?.to_string());
            }
            "child" => {
                allow_attrs(&c, &["link"])?;
                child = Some(required(&c, "link")?.to_string());
            }
            "limit" => {
                allow_attrs(&c, &["lower", "upper"])?;
                spec.limits = Some([parse_f64(&c, "lower")?, parse_f64(&c, "upper")?]);
            }
            _ => return Err(unknown_tag(&c)),
        }
    }
    spec.parent = parent.ok_or_else(|| KinematicError::Invalid(format!("joint {} has no <parent>", spec.name)))?;
    spec.child = child.ok_or_else(|| KinematicError::Invalid(format!("joint {} has no <child>", spec.name)))?;
    Ok(spec)
}

fn parse_sensor(node: &Node) -> Result<SensorSpec> {
    allow_attrs(node, &["name", "link"])?;
    let mut origin = Origin::default();
    for c in node.children().filter(Node::is_element) {
        match c.tag_name().name() {
            "origin" => origin = parse_origin(&c)?,
            _ => return Err(unknown_tag(&c)),
        }
    }
    Ok(SensorSpec {
        name: required(node, "name")?.to_string(),
        link: required(node, "link")?.to_string(),
        origin,
    })
}

fn parse_origin(node: &Node) -> Result<Origin> {
    allow_attrs(node, &["xyz", "rpy"])?;
    Ok(Origin {
        xyz: if node.has_attribute("xyz") { parse_vec3(node, "xyz")? } else { [0.0; 3] },
        rpy: if node.has_attribute("rpy") { parse_vec3(node, "rpy")? } else { [0.0; 3] },
    })
}

fn required<'a>(node: &Node<'a, '_>, attr: &str) -> Result<&'a str> {
    node.attribute(attr).ok_or_else(|| KinematicError::MissingAttribute {
        tag: node.tag_name().name().to_string(),
        attr: attr.to_string(),
    })
}

fn allow_attrs(node: &Node, allowed: &[&str]) -> Result<()> {
    for a in node.attributes() {
        if !allowed.contains(&a.name()) {
            return Err(KinematicError::UnknownAttribute {
                tag: node.tag_name().name().to_string(),
                attr: a.name().to_string(),
            });
        }
    }
    Ok(())
}

fn parse_f64(node: &Node, attr: &str) -> Result<f64> {
    let s = required(node, attr)?;
    s.trim().parse().map_err(|_| bad_value(node, attr, s))
}

fn parse_vec3(node: &Node, attr: &str) -> Result<[f64; 3]> {
    let s = required(node, attr)?;
    let v: Vec<f64> = s
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad_value(node, attr, s))?;
    v.try_into().map_err(|_| bad_value(node, attr, s))
}

fn unknown_tag(node: &Node) -> KinematicError {
    KinematicError::UnknownTag(node.tag_name().name().to_string())
}

fn bad_value(node: &Node, attr: &str, value: &str) -> KinematicError {
    KinematicError::BadValue {
        tag: node.tag_name().name().to_string(),
        attr: attr.to_string(),
        value: value.to_string(),
    }
}

/// Serialize a chain to the XML subset accepted by [`parse_chain_xml`].
pub fn to_xml(chain: &KinematicChain, robot_name: &str) -> String {
    let (joints, sensors) = chain.to_specs();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<robot name="{robot_name}" format_version="{CHAIN_FORMAT_VERSION}" anchor_link="{}">"#,
        chain.anchor_link()
    );
    for l in chain.links() {
        let _ = writeln!(s, r#"  <link name="{l}"/>"#);
    }
    for j in &joints {
        let _ = writeln!(s, r#"  <joint name="{}" type="{}">"#, j.name, j.kind.as_str());
        let _ = writeln!(s, r#"    <parent link="{}"/>"#, j.parent);
        let _ = writeln!(s, r#"    <child link="{}"/>"#, j.child);
        let _ = writeln!(s, r#"    <origin xyz="{}" rpy="{}"/>"#, fmt3(j.origin.xyz), fmt3(j.origin.rpy));
        if let Some(a) = j.axis {
            let _ = writeln!(s, r#"    <axis xyz="{}"/>"#, fmt3(a));
        }
        if let Some([lo, hi]) = j.limits {
            let _ = writeln!(s, r#"    <limit lower="{lo}" upper="{hi}"/>"#);
        }
        let _ = writeln!(s, "  </joint>");
    }
    for x in &sensors {
        let _ = writeln!(s, r#"  <sensor name="{}" link="{}">"#, x.name, x.link);
        let _ = writeln!(s, r#"    <origin xyz="{}" rpy="{}"/>"#, fmt3(x.origin.xyz), fmt3(x.origin.rpy));
        let _ = writeln!(s, "  </sensor>");
    }
    s.push_str("</robot>\n");
    s
}

fn fmt3(v: [f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

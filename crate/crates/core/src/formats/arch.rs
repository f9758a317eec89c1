//! TOML per-layer architectural parameters.
//!
//! Each `[[layers]]` entry names a layer (by `name`, or by index via `layer`)
//! and gives `uf`, `p` and optionally `ii` (default 1).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archmodel::{ArchParams, LayerArch};
use crate::error::{Error, Result};
use crate::network::NetworkSpec;

#[derive(Debug, Serialize, Deserialize)]
struct RawEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    uf: u64,
    p: u64,
    #[serde(default = "one")]
    ii: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Serialize, Deserialize)]
struct RawArch {
    layers: Vec<RawEntry>,
}

pub fn parse_arch(text: &str, net: &NetworkSpec) -> Result<ArchParams> {
    let raw: RawArch =
        toml::from_str(text).map_err(|e| Error::Format(format!("arch file: {e}")))?;
    let mut layers = Vec::with_capacity(raw.layers.len());
    for e in raw.layers {
        let layer = match (e.layer, &e.name) {
            (Some(i), _) => i,
            (None, Some(name)) => net
                .layers
                .iter()
                .position(|l| &l.name == name)
                .ok_or_else(|| Error::InvalidArch(format!("no layer named '{name}'")))?,
            (None, None) => {
                return Err(Error::InvalidArch(
                    "arch entry needs `name` or `layer`".into(),
                ))
            }
        };
        let spec = net
            .layers
            .get(layer)
            .ok_or_else(|| Error::InvalidArch(format!("layer index {layer} not in network")))?;
        if e.name.as_ref().is_some_and(|n| n != &spec.name) {
            return Err(Error::InvalidArch(format!(
                "entry for layer {layer} is named '{}', network calls it '{}'",
                e.name.unwrap_or_default(),
                spec.name
            )));
        }
        layers.push(LayerArch {
            layer,
            name: spec.name.clone(),
            uf: e.uf,
            p: e.p,
            ii: e.ii,
        });
    }
    let arch = ArchParams { layers };
    arch.check(net)?;
    Ok(arch)
}

pub fn load_arch(path: &Path, net: &NetworkSpec) -> Result<ArchParams> {
    parse_arch(&std::fs::read_to_string(path)?, net)
}

pub fn arch_to_toml(arch: &ArchParams) -> Result<String> {
    let raw = RawArch {
        layers: arch
            .layers
            .iter()
            .map(|a| RawEntry {
                layer: Some(a.layer),
                name: Some(a.name.clone()),
                uf: a.uf,
                p: a.p,
                ii: a.ii,
            })
            .collect(),
    };
    toml::to_string(&raw).map_err(|e| Error::Format(e.to_string()))
}

//! TOML network description with optional per-layer batch-norm blocks.
//!
//! ```toml
//! name = "toy"
//! input = { width = 8, height = 8, depth = 3 }
//!
//! [[layers]]
//! name = "conv1"
//! kind = "conv_first"
//! filter = [3, 3, 3]
//! filters = 16
//!
//! [layers.bn]
//! mu = [0.0, ...]
//! sigma2 = [1.0, ...]
//! gamma = [1.0, ...]
//! beta = [0.0, ...]
//! epsilon = 1e-4
//!
//! [[layers]]
//! name = "fc"
//! kind = "fc_output"
//! inputs = 1024
//! outputs = 10
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fold::BatchNormParams;
use crate::network::{Dims, LayerKind, LayerSpec, NetworkSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Epsilon {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BnBlock {
    mu: Vec<f64>,
    sigma2: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    epsilon: Epsilon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RawLayer {
    name: String,
    kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inputs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outputs: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pool: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pad: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bn: Option<BnBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RawModel {
    name: String,
    input: Dims,
    layers: Vec<RawLayer>,
}

/// Parsed model: the network and any batch-norm parameters it carries.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub spec: NetworkSpec,
    /// Per layer, one entry per output channel when present.
    pub bn: Vec<Option<Vec<BatchNormParams>>>,
}

impl ModelFile {
    pub fn new(spec: NetworkSpec) -> Self {
        let n = spec.layers.len();
        Self {
            spec,
            bn: vec![None; n],
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawModel =
            toml::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
        if raw.layers.is_empty() {
            return Err(Error::InvalidNetwork("model has no layers".into()));
        }
        let mut layers = Vec::with_capacity(raw.layers.len());
        let mut bn = Vec::with_capacity(raw.layers.len());
        for (i, l) in raw.layers.into_iter().enumerate() {
            let fail = |m: &str| Error::layer(i, &l.name, m);
            let mut spec = if l.kind.is_conv() {
                let [fw, fh, fd] = l
                    .filter
                    .ok_or_else(|| fail("conv layer needs `filter = [w, h, d]`"))?;
                let n = l
                    .filters
                    .ok_or_else(|| fail("conv layer needs `filters`"))?;
                LayerSpec {
                    filter_w: fw,
                    filter_h: fh,
                    pad: fw / 2,
                    ..LayerSpec::conv(&l.name, l.kind, fd, n, l.pool)
                }
            } else {
                let n_in = l
                    .inputs
                    .ok_or_else(|| fail("fully-connected layer needs `inputs`"))?;
                let n_out = l
                    .outputs
                    .ok_or_else(|| fail("fully-connected layer needs `outputs`"))?;
                LayerSpec {
                    pool_after: l.pool,
                    ..LayerSpec::fc(&l.name, l.kind, n_in, n_out)
                }
            };
            if let Some(p) = l.pad {
                spec.pad = p;
            }
            if let Some(s) = l.stride {
                spec.stride = s;
            }
            let params =
                l.bn.map(|b| {
                    bn_from_block(&b, spec.n_filters)
                        .map_err(|e| Error::layer(i, &spec.name, e.to_string()))
                })
                .transpose()?;
            layers.push(spec);
            bn.push(params);
        }
        let spec = NetworkSpec {
            name: raw.name,
            input: raw.input,
            layers,
        };
        spec.validate()?;
        Ok(Self { spec, bn })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        let layers = self
            .spec
            .layers
            .iter()
            .zip(&self.bn)
            .map(|(l, bn)| {
                let conv = l.kind.is_conv();
                RawLayer {
                    name: l.name.clone(),
                    kind: l.kind,
                    filter: conv.then_some([l.filter_w, l.filter_h, l.filter_d]),
                    filters: conv.then_some(l.n_filters),
                    inputs: (!conv).then_some(l.filter_d),
                    outputs: (!conv).then_some(l.n_filters),
                    pool: l.pool_after,
                    pad: None,
                    stride: None,
                    bn: bn.as_ref().map(|ps| block_from_bn(ps)),
                }
            })
            .collect();
        let raw = RawModel {
            name: self.spec.name.clone(),
            input: self.spec.input,
            layers,
        };
        toml::to_string(&raw).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Batch-norm parameters of layer `i`, or an error naming the layer.
    pub fn bn_for(&self, i: usize) -> Result<&[BatchNormParams]> {
        self.bn[i]
            .as_deref()
            .ok_or_else(|| Error::layer(i, &self.spec.layers[i].name, "no batch-norm parameters"))
    }
}

fn bn_from_block(b: &BnBlock, channels: usize) -> Result<Vec<BatchNormParams>> {
    let eps: Vec<f64> = match &b.epsilon {
        Epsilon::Scalar(e) => vec![*e; channels],
        Epsilon::PerChannel(v) => v.clone(),
    };
    for (name, v) in [
        ("mu", &b.mu),
        ("sigma2", &b.sigma2),
        ("gamma", &b.gamma),
        ("beta", &b.beta),
        ("epsilon", &eps),
    ] {
        if v.len() != channels {
            return Err(Error::InvalidBatchNorm(format!(
                "{name} has {} entries for {channels} channels",
                v.len()
            )));
        }
    }
    (0..channels)
        .map(|c| BatchNormParams::new(b.mu[c], b.sigma2[c], b.gamma[c], b.beta[c], eps[c]))
        .collect()
}

fn block_from_bn(ps: &[BatchNormParams]) -> BnBlock {
    let eps0 = ps.first().map_or(0.0, |p| p.epsilon);
    let epsilon = if ps.iter().all(|p| p.epsilon == eps0) {
        Epsilon::Scalar(eps0)
    } else {
        Epsilon::PerChannel(ps.iter().map(|p| p.epsilon).collect())
    };
    BnBlock {
        mu: ps.iter().map(|p| p.mu).collect(),
        sigma2: ps.iter().map(|p| p.sigma2).collect(),
        gamma: ps.iter().map(|p| p.gamma).collect(),
        beta: ps.iter().map(|p| p.beta).collect(),
        epsilon,
    }
}

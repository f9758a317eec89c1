//! Declarative layer graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    ConvFirst,
    ConvBinary,
    FcBinary,
    FcOutput,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::ConvFirst => 0,
            LayerKind::ConvBinary => 1,
            LayerKind::FcBinary => 2,
            LayerKind::FcOutput => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => LayerKind::ConvFirst,
            1 => LayerKind::ConvBinary,
            2 => LayerKind::FcBinary,
            3 => LayerKind::FcOutput,
            other => return Err(Error::Format(format!("unknown layer kind code {other}"))),
        })
    }

    pub fn is_conv(self) -> bool {
        matches!(self, LayerKind::ConvFirst | LayerKind::ConvBinary)
    }

    pub fn is_fc(self) -> bool {
        !self.is_conv()
    }
}

/// One layer. FC layers are `1 x 1` filters spanning the flattened input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub filter_w: usize,
    pub filter_h: usize,
    pub filter_d: usize,
    pub n_filters: usize,
    pub pool_after: bool,
    pub pad: usize,
    pub stride: usize,
}

impl LayerSpec {
    pub fn conv(
        name: &str,
        kind: LayerKind,
        filter_d: usize,
        n_filters: usize,
        pool_after: bool,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind,
            filter_w: 3,
            filter_h: 3,
            filter_d,
            n_filters,
            pool_after,
            pad: 1,
            stride: 1,
        }
    }

    pub fn fc(name: &str, kind: LayerKind, n_inputs: usize, n_outputs: usize) -> Self {
        Self {
            name: name.to_string(),
            kind,
            filter_w: 1,
            filter_h: 1,
            filter_d: n_inputs,
            n_filters: n_outputs,
            pool_after: false,
            pad: 0,
            stride: 1,
        }
    }

    /// Taps per output value, `FW * FH * FD`.
    pub fn cnum(&self) -> usize {
        self.filter_w * self.filter_h * self.filter_d
    }

    /// Whether a folded threshold table exists for this layer.
    pub fn has_threshold(&self) -> bool {
        self.kind != LayerKind::FcOutput
    }
}

/// Spatial shape `(width, height, depth)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
}

impl Dims {
    pub const fn new(width: usize, height: usize, depth: usize) -> Self {
        Self {
            width,
            height,
            depth,
        }
    }

    pub fn volume(&self) -> usize {
        self.width * self.height * self.depth
    }
}

/// Input/output shapes of a layer, with the accumulator shape before pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub input: Dims,
    pub pre_pool: Dims,
    pub output: Dims,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input: Dims,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// The CIFAR-10 BCNN: six 3x3 conv layers and three FC layers.
    pub fn reference() -> Self {
        use LayerKind::*;
        Self {
            name: "bcnn-cifar10".to_string(),
            input: Dims::new(32, 32, 3),
            layers: vec![
                LayerSpec::conv("conv1", ConvFirst, 3, 128, false),
                LayerSpec::conv("conv2", ConvBinary, 128, 128, true),
                LayerSpec::conv("conv3", ConvBinary, 128, 256, false),
                LayerSpec::conv("conv4", ConvBinary, 256, 256, true),
                LayerSpec::conv("conv5", ConvBinary, 256, 512, false),
                LayerSpec::conv("conv6", ConvBinary, 512, 512, true),
                LayerSpec::fc("fc1", FcBinary, 8192, 1024),
                LayerSpec::fc("fc2", FcBinary, 1024, 1024),
                LayerSpec::fc("fc3", FcOutput, 1024, 10),
            ],
        }
    }

    /// Checks kind ordering and dimension chaining; returns per-layer shapes.
    pub fn shapes(&self) -> Result<Vec<LayerShape>> {
        let n = self.layers.len();
        if n < 2 {
            return Err(Error::InvalidNetwork(format!(
                "need at least a first layer and an output layer, got {n} layer(s)"
            )));
        }
        if self.input.volume() == 0 {
            return Err(Error::InvalidNetwork("empty input dims".into()));
        }
        let mut shapes = Vec::with_capacity(n);
        let mut cur = self.input;
        let mut seen_fc = false;
        for (i, l) in self.layers.iter().enumerate() {
            let fail = |reason: String| Error::layer(i, &l.name, reason);
            match (i, l.kind) {
                (0, LayerKind::ConvFirst) => {}
                (0, _) => return Err(fail("first layer must be conv_first".into())),
                (_, LayerKind::ConvFirst) => {
                    return Err(fail("conv_first only allowed as layer 0".into()))
                }
                (i, LayerKind::FcOutput) if i != n - 1 => {
                    return Err(fail("fc_output only allowed as the last layer".into()))
                }
                (i, k) if i == n - 1 && k != LayerKind::FcOutput => {
                    return Err(fail("last layer must be fc_output".into()))
                }
                (_, LayerKind::ConvBinary) if seen_fc => {
                    return Err(fail("conv layer after a fully-connected layer".into()))
                }
                _ => {}
            }
            if l.n_filters == 0 || l.cnum() == 0 {
                return Err(fail("empty filter bank".into()));
            }
            if l.stride != 1 {
                return Err(fail(format!("stride {} unsupported (only 1)", l.stride)));
            }
            let input = cur;
            let pre_pool = if l.kind.is_conv() {
                if l.filter_d != cur.depth {
                    return Err(fail(format!(
                        "filter depth {} != input depth {}",
                        l.filter_d, cur.depth
                    )));
                }
                if l.filter_w % 2 == 0 || l.filter_h % 2 == 0 {
                    return Err(fail("conv filters must have odd width and height".into()));
                }
                if 2 * l.pad + 1 != l.filter_w || l.filter_w != l.filter_h {
                    return Err(fail(format!(
                        "pad {} does not give same-size output for a {}x{} filter",
                        l.pad, l.filter_w, l.filter_h
                    )));
                }
                Dims::new(cur.width, cur.height, l.n_filters)
            } else {
                seen_fc = true;
                if l.filter_w != 1 || l.filter_h != 1 || l.pad != 0 {
                    return Err(fail(
                        "fully-connected layers have 1x1 filters and no padding".into(),
                    ));
                }
                if l.filter_d != cur.volume() {
                    return Err(fail(format!(
                        "input length {} != flattened input {}",
                        l.filter_d,
                        cur.volume()
                    )));
                }
                if l.pool_after {
                    return Err(fail("pooling after a fully-connected layer".into()));
                }
                Dims::new(1, 1, l.n_filters)
            };
            let output = if l.pool_after {
                if pre_pool.width % 2 != 0 || pre_pool.height % 2 != 0 {
                    return Err(fail(format!(
                        "cannot 2x2-pool a {}x{} map",
                        pre_pool.width, pre_pool.height
                    )));
                }
                Dims::new(pre_pool.width / 2, pre_pool.height / 2, pre_pool.depth)
            } else {
                pre_pool
            };
            shapes.push(LayerShape {
                input,
                pre_pool,
                output,
            });
            cur = output;
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn output_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_filters)
    }
}

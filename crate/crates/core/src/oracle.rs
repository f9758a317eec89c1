//! Plain-arithmetic reference for binary CNN inference.
//!
//! Everything here works on real-valued `+1/-1` data in channel-major layout,
//! with no bit packing and no folded thresholds. It is slow and exists to be
//! compared against the packed path.

use crate::error::{Error, Result};
use crate::fold::BatchNormParams;
use crate::network::LayerKind;

/// Real tensor, channel-major: element `(d, y, x)` at `(d * height + y) * width + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct RealTensor {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub data: Vec<f64>,
}

impl RealTensor {
    pub fn new(width: usize, height: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * depth {
            return Err(Error::LengthMismatch {
                expected: width * height * depth,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimMismatch("non-finite value in real tensor".into()));
        }
        Ok(Self {
            width,
            height,
            depth,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, depth: usize, v: f64) -> Self {
        Self {
            width,
            height,
            depth,
            data: vec![v; width * height * depth],
        }
    }

    /// Builds from values listed in `(h, w, d)` order, depth innermost.
    pub fn from_hwd(width: usize, height: usize, depth: usize, hwd: &[f64]) -> Result<Self> {
        let mut t = Self::filled(width, height, depth, 0.0);
        if hwd.len() != t.data.len() {
            return Err(Error::LengthMismatch {
                expected: t.data.len(),
                actual: hwd.len(),
            });
        }
        let mut it = hwd.iter();
        for y in 0..height {
            for x in 0..width {
                for d in 0..depth {
                    *t.at_mut(d, y, x) = *it.next().unwrap();
                }
            }
        }
        Ok(t)
    }

    /// Values in `(h, w, d)` order.
    pub fn to_hwd(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for d in 0..self.depth {
                    out.push(self.at(d, y, x));
                }
            }
        }
        out
    }

    pub fn at(&self, d: usize, y: usize, x: usize) -> f64 {
        self.data[(d * self.height + y) * self.width + x]
    }

    pub fn at_mut(&mut self, d: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(d * self.height + y) * self.width + x]
    }
}

/// Same-padded, stride-1 convolution: each output channel is the triple sum
/// of filter times input over its window, with `pad_value` outside the map.
pub fn conv_real(fmap: &RealTensor, filters: &[RealTensor], pad_value: f64) -> Result<RealTensor> {
    let mut out = RealTensor::filled(fmap.width, fmap.height, filters.len(), 0.0);
    for (n, f) in filters.iter().enumerate() {
        if f.depth != fmap.depth {
            return Err(Error::DimMismatch(format!(
                "filter {n} depth {} != input depth {}",
                f.depth, fmap.depth
            )));
        }
        if f.width % 2 == 0 || f.height % 2 == 0 {
            return Err(Error::DimMismatch(
                "filter width and height must be odd".into(),
            ));
        }
        let (rx, ry) = ((f.width / 2) as isize, (f.height / 2) as isize);
        for y in 0..fmap.height {
            for x in 0..fmap.width {
                let mut sum = 0.0;
                for d in 0..fmap.depth {
                    for j in 0..f.height {
                        for i in 0..f.width {
                            let sy = y as isize + j as isize - ry;
                            let sx = x as isize + i as isize - rx;
                            let v = if sy < 0
                                || sx < 0
                                || sy >= fmap.height as isize
                                || sx >= fmap.width as isize
                            {
                                pad_value
                            } else {
                                fmap.at(d, sy as usize, sx as usize)
                            };
                            sum += f.at(d, j, i) * v;
                        }
                    }
                }
                *out.at_mut(n, y, x) = sum;
            }
        }
    }
    Ok(out)
}

/// `(y - mu) / sqrt(sigma2 + epsilon) * gamma + beta`.
pub fn batchnorm_real(y: f64, p: &BatchNormParams) -> Result<f64> {
    let var = p.sigma2 + p.epsilon;
    if var.is_nan() || var <= 0.0 {
        return Err(Error::InvalidBatchNorm(
            "sigma2 + epsilon must be positive".into(),
        ));
    }
    p.validate()?;
    Ok((y - p.mu) / (p.sigma2 + p.epsilon).sqrt() * p.gamma + p.beta)
}

/// Sign function: `true` (bit 1, value +1) when `z >= 0`.
pub fn binarize_real(z: f64) -> bool {
    z >= 0.0
}

/// Dot product of two `+1/-1` vectors in plain integer arithmetic.
pub fn xnor_dot_pm1(a: &[i8], w: &[i8]) -> Result<i64> {
    if a.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: w.len(),
        });
    }
    let mut sum = 0i64;
    for (i, (&x, &y)) in a.iter().zip(w).enumerate() {
        for v in [x, y] {
            if v != 1 && v != -1 {
                return Err(Error::NotBinary {
                    index: i,
                    value: v as i32,
                });
            }
        }
        sum += x as i64 * y as i64;
    }
    Ok(sum)
}

/// How the oracle turns a normalized accumulator into a bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdMode {
    /// Compare the accumulator against the threshold rounded to the integer
    /// grid of the hardware comparator.
    Rounded,
    /// `binarize_real(batchnorm_real(v))` with no rounding.
    ExactReal,
}

/// Binarizes a `+1/-1`-domain accumulator value `v` over `cnum` taps.
///
/// `first_layer` accumulators are plain integer dot products; other layers
/// are `2 * matches - cnum`, so their rounded threshold lives on that grid.
pub fn binarize_accum(
    v: f64,
    p: &BatchNormParams,
    cnum: usize,
    first_layer: bool,
    mode: ThresholdMode,
) -> Result<bool> {
    match mode {
        ThresholdMode::ExactReal => Ok(binarize_real(batchnorm_real(v, p)?)),
        ThresholdMode::Rounded => {
            p.validate()?;
            if p.gamma == 0.0 {
                return Ok(binarize_real(p.beta));
            }
            // Zero crossing of the affine map in the accumulator domain.
            let cross = p.mu - p.beta * (p.sigma2 + p.epsilon).sqrt() / p.gamma;
            let t = if first_layer {
                cross.round()
            } else {
                let n = cnum as f64;
                2.0 * ((n + cross) / 2.0).round() - n
            };
            Ok(if p.gamma > 0.0 { v >= t } else { v <= t })
        }
    }
}

/// 2x2 stride-2 max-pool.
pub fn max_pool_real(t: &RealTensor) -> Result<RealTensor> {
    if !t.width.is_multiple_of(2) || !t.height.is_multiple_of(2) {
        return Err(Error::DimMismatch("odd dims for 2x2 pooling".into()));
    }
    let mut out = RealTensor::filled(t.width / 2, t.height / 2, t.depth, 0.0);
    for d in 0..t.depth {
        for y in 0..out.height {
            for x in 0..out.width {
                let mut m = f64::NEG_INFINITY;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    m = m.max(t.at(d, 2 * y + dy, 2 * x + dx));
                }
                *out.at_mut(d, y, x) = m;
            }
        }
    }
    Ok(out)
}

/// One layer of the reference network.
#[derive(Clone, Debug)]
pub struct OracleLayer {
    pub kind: LayerKind,
    pub pool_after: bool,
    /// Conv filters as `FW x FH x FD` tensors, or FC rows as `1 x 1 x n_in`.
    pub filters: Vec<RealTensor>,
    pub bn: Vec<BatchNormParams>,
}

#[derive(Clone, Debug)]
pub struct OracleNetwork {
    pub layers: Vec<OracleLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleLayerTrace {
    /// `+1/-1`-domain accumulator before pooling.
    pub accum: RealTensor,
    pub pooled: Option<RealTensor>,
    /// Binarized activations as `+1/-1` values; `None` for the output layer.
    pub activation: Option<RealTensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleTrace {
    pub layers: Vec<OracleLayerTrace>,
    pub scores: Vec<f64>,
    pub class: usize,
}

fn flatten_hwd(t: &RealTensor) -> RealTensor {
    let v = t.to_hwd();
    RealTensor {
        width: 1,
        height: 1,
        depth: v.len(),
        data: v,
    }
}

pub fn run_oracle(
    net: &OracleNetwork,
    input: &RealTensor,
    mode: ThresholdMode,
) -> Result<OracleTrace> {
    let mut cur = input.clone();
    let mut layers = Vec::with_capacity(net.layers.len());
    for (li, layer) in net.layers.iter().enumerate() {
        if layer.kind.is_fc() {
            cur = flatten_hwd(&cur);
        }
        let pad = if layer.kind == LayerKind::ConvFirst {
            0.0
        } else {
            -1.0
        };
        let accum = conv_real(&cur, &layer.filters, pad)?;
        let cnum = layer
            .filters
            .first()
            .map_or(0, |f| f.width * f.height * f.depth);
        if layer.kind == LayerKind::FcOutput {
            let scores = (0..accum.depth)
                .map(|c| batchnorm_real(accum.at(c, 0, 0), &layer.bn[c]))
                .collect::<Result<Vec<_>>>()?;
            let mut class = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[class] {
                    class = i;
                }
            }
            layers.push(OracleLayerTrace {
                accum,
                pooled: None,
                activation: None,
            });
            return Ok(OracleTrace {
                layers,
                scores,
                class,
            });
        }
        let pooled = if layer.pool_after {
            Some(max_pool_real(&accum)?)
        } else {
            None
        };
        let src = pooled.as_ref().unwrap_or(&accum);
        let mut act = RealTensor::filled(src.width, src.height, src.depth, 0.0);
        for d in 0..src.depth {
            for y in 0..src.height {
                for x in 0..src.width {
                    let bit = binarize_accum(src.at(d, y, x), &layer.bn[d], cnum, li == 0, mode)?;
                    *act.at_mut(d, y, x) = if bit { 1.0 } else { -1.0 };
                }
            }
        }
        cur = act.clone();
        layers.push(OracleLayerTrace {
            accum,
            pooled,
            activation: Some(act),
        });
    }
    Err(Error::InvalidNetwork(
        "oracle network has no output layer".into(),
    ))
}

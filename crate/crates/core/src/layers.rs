//! Bit-packed inference: first-layer fixed-point conv, XNOR conv, max-pool,
//! NormBinarize, fully-connected layers and the normalized output layer.
//!
//! Binary layers pad with encoded bit 0 (`-1`), so every output pixel sees
//! exactly `cnum = FW * FH * FD` taps. The first layer pads with integer 0.

use crate::bitcore::{has_popcnt, xor_popcount, BitTensor, BitVec, FixedTensor};
use crate::error::{Error, Result};
use crate::fold::{final_layer_affine, BatchNormParams, FoldedThreshold};
use crate::network::{Dims, LayerKind, LayerShape, LayerSpec, NetworkSpec};

/// Integer accumulator outputs in `(h, w, d)` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntFeatureMap {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub values: Vec<i32>,
}

impl IntFeatureMap {
    pub fn new(width: usize, height: usize, depth: usize, values: Vec<i32>) -> Result<Self> {
        if values.len() != width * height * depth {
            return Err(Error::LengthMismatch {
                expected: width * height * depth,
                actual: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            depth,
            values,
        })
    }

    pub fn get(&self, x: usize, y: usize, d: usize) -> i32 {
        self.values[(y * self.width + x) * self.depth + d]
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height, self.depth)
    }
}

/// First-layer filters with `+1/-1` weights, filter-major then `(h, w, d)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedFilters {
    pub fw: usize,
    pub fh: usize,
    pub fd: usize,
    pub n: usize,
    values: Vec<i8>,
}

impl FixedFilters {
    pub fn new(fw: usize, fh: usize, fd: usize, n: usize, values: Vec<i8>) -> Result<Self> {
        let expected = fw * fh * fd * n;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some((index, &v)) = values.iter().enumerate().find(|(_, &v)| v != 1 && v != -1) {
            return Err(Error::NotBinary {
                index,
                value: v as i32,
            });
        }
        Ok(Self {
            fw,
            fh,
            fd,
            n,
            values,
        })
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn filter(&self, f: usize) -> &[i8] {
        let len = self.fw * self.fh * self.fd;
        &self.values[f * len..(f + 1) * len]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerWeights {
    Fixed(FixedFilters),
    /// One `FW x FH x FD` tensor per output channel.
    Binary(Vec<BitTensor>),
}

impl LayerWeights {
    /// Checks kind and shape against `spec`.
    pub fn check(&self, spec: &LayerSpec) -> std::result::Result<(), String> {
        match (spec.kind, self) {
            (LayerKind::ConvFirst, LayerWeights::Fixed(f)) => {
                if (f.fw, f.fh, f.fd, f.n)
                    != (spec.filter_w, spec.filter_h, spec.filter_d, spec.n_filters)
                {
                    return Err(format!(
                        "weights are {}x{}x{} x{}, layer expects {}x{}x{} x{}",
                        f.fw,
                        f.fh,
                        f.fd,
                        f.n,
                        spec.filter_w,
                        spec.filter_h,
                        spec.filter_d,
                        spec.n_filters
                    ));
                }
                Ok(())
            }
            (LayerKind::ConvFirst, _) => Err("first layer needs fixed-point weights".into()),
            (_, LayerWeights::Fixed(_)) => Err("binary layer given fixed-point weights".into()),
            (_, LayerWeights::Binary(fs)) => {
                if fs.len() != spec.n_filters {
                    return Err(format!(
                        "{} filters, layer expects {}",
                        fs.len(),
                        spec.n_filters
                    ));
                }
                for (i, f) in fs.iter().enumerate() {
                    if (f.width(), f.height(), f.depth())
                        != (spec.filter_w, spec.filter_h, spec.filter_d)
                    {
                        return Err(format!(
                            "filter {i} is {}x{}x{}, layer expects {}x{}x{}",
                            f.width(),
                            f.height(),
                            f.depth(),
                            spec.filter_w,
                            spec.filter_h,
                            spec.filter_d
                        ));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Class scores and the argmax (lowest index on ties).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub scores: Vec<f64>,
}

/// A validated network with all inference artifacts.
#[derive(Clone, Debug)]
pub struct Model {
    spec: NetworkSpec,
    shapes: Vec<LayerShape>,
    weights: Vec<LayerWeights>,
    thresholds: Vec<Vec<FoldedThreshold>>,
    output_norm: Vec<BatchNormParams>,
}

impl Model {
    /// `thresholds` holds one table per layer except the output layer.
    pub fn new(
        spec: NetworkSpec,
        weights: Vec<LayerWeights>,
        thresholds: Vec<Vec<FoldedThreshold>>,
        output_norm: Vec<BatchNormParams>,
    ) -> Result<Self> {
        let shapes = spec.shapes()?;
        let n = spec.layers.len();
        for (i, l) in spec.layers.iter().enumerate() {
            let w = weights
                .get(i)
                .ok_or_else(|| Error::layer(i, &l.name, "missing weights"))?;
            w.check(l).map_err(|r| Error::layer(i, &l.name, r))?;
            if l.has_threshold() {
                let t = thresholds
                    .get(i)
                    .ok_or_else(|| Error::layer(i, &l.name, "missing thresholds"))?;
                if t.len() != l.n_filters {
                    return Err(Error::layer(
                        i,
                        &l.name,
                        format!("{} thresholds for {} channels", t.len(), l.n_filters),
                    ));
                }
            }
        }
        if weights.len() != n {
            return Err(Error::InvalidNetwork(format!(
                "{} weight layers for {n} network layers",
                weights.len()
            )));
        }
        if thresholds.len() != n - 1 {
            return Err(Error::InvalidNetwork(format!(
                "{} threshold tables for {} thresholded layers",
                thresholds.len(),
                n - 1
            )));
        }
        let last = &spec.layers[n - 1];
        if output_norm.len() != last.n_filters {
            return Err(Error::layer(
                n - 1,
                &last.name,
                format!(
                    "{} output norm params for {} classes",
                    output_norm.len(),
                    last.n_filters
                ),
            ));
        }
        for p in &output_norm {
            p.validate()
                .map_err(|e| Error::layer(n - 1, &last.name, e.to_string()))?;
        }
        Ok(Self {
            spec,
            shapes,
            weights,
            thresholds,
            output_norm,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn weights(&self) -> &[LayerWeights] {
        &self.weights
    }

    pub fn thresholds(&self) -> &[Vec<FoldedThreshold>] {
        &self.thresholds
    }

    pub fn output_norm(&self) -> &[BatchNormParams] {
        &self.output_norm
    }

    pub fn num_layers(&self) -> usize {
        self.spec.layers.len()
    }
}

pub fn conv_first(
    input: &FixedTensor,
    weights: &FixedFilters,
    spec: &LayerSpec,
) -> Result<IntFeatureMap> {
    if input.depth() != weights.fd || weights.fd != spec.filter_d || weights.n != spec.n_filters {
        return Err(Error::DimMismatch(format!(
            "input depth {}, filter depth {}, layer depth {}",
            input.depth(),
            weights.fd,
            spec.filter_d
        )));
    }
    if (weights.fw, weights.fh) != (spec.filter_w, spec.filter_h) {
        return Err(Error::DimMismatch(
            "filter size differs from layer spec".into(),
        ));
    }
    let (w, h, fd) = (input.width(), input.height(), input.depth());
    let (fw, fh, pad) = (weights.fw, weights.fh, spec.pad as isize);
    let n = weights.n;
    // Weights regrouped as [tap][d][filter] so the inner loop runs over filters.
    let taps = fw * fh;
    let mut wt = vec![0i32; taps * fd * n];
    for f in 0..n {
        for (i, &v) in weights.filter(f).iter().enumerate() {
            wt[i * n + f] = v as i32;
        }
    }
    let mut out = vec![0i32; w * h * n];
    for y in 0..h {
        for x in 0..w {
            let acc = &mut out[(y * w + x) * n..(y * w + x + 1) * n];
            for ky in 0..fh {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..fw {
                    let ix = x as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let col = input.column(ix as usize, iy as usize);
                    let tap = (ky * fw + kx) * fd;
                    for (d, &v) in col.iter().enumerate() {
                        let v = v as i32;
                        let row = &wt[(tap + d) * n..(tap + d + 1) * n];
                        for (a, &s) in acc.iter_mut().zip(row) {
                            *a += v * s;
                        }
                    }
                }
            }
        }
    }
    IntFeatureMap::new(w, h, n, out)
}

/// XNOR convolution; out-of-range taps read as all-zero (all `-1`) columns.
pub fn conv_binary(
    input: &BitTensor,
    filters: &[BitTensor],
    spec: &LayerSpec,
) -> Result<IntFeatureMap> {
    let fd = spec.filter_d;
    if input.depth() != fd {
        return Err(Error::DimMismatch(format!(
            "input depth {} != filter depth {fd}",
            input.depth()
        )));
    }
    if filters.len() != spec.n_filters {
        return Err(Error::DimMismatch(format!(
            "{} filters, layer expects {}",
            filters.len(),
            spec.n_filters
        )));
    }
    let (fw, fh) = (spec.filter_w, spec.filter_h);
    if let Some(f) = filters
        .iter()
        .find(|f| (f.width(), f.height(), f.depth()) != (fw, fh, fd))
    {
        return Err(Error::DimMismatch(format!(
            "filter is {}x{}x{}, layer expects {fw}x{fh}x{fd}",
            f.width(),
            f.height(),
            f.depth()
        )));
    }
    // XNOR of a filter column with an all-zero pad column counts the filter's zeros.
    let pad_matches: Vec<u32> = filters
        .iter()
        .flat_map(|f| {
            (0..fh).flat_map(move |ky| {
                (0..fw).map(move |kx| {
                    fd as u32
                        - f.column(kx, ky)
                            .words()
                            .iter()
                            .map(|w| w.count_ones())
                            .sum::<u32>()
                })
            })
        })
        .collect();
    let out = conv_binary_dispatch(input, filters, fw, fh, spec.pad as isize, &pad_matches);
    IntFeatureMap::new(input.width(), input.height(), filters.len(), out)
}

fn conv_binary_dispatch(
    input: &BitTensor,
    filters: &[BitTensor],
    fw: usize,
    fh: usize,
    pad: isize,
    pad_matches: &[u32],
) -> Vec<i32> {
    #[cfg(target_arch = "x86_64")]
    {
        if has_popcnt() {
            // SAFETY: the popcnt feature was detected at runtime.
            return unsafe { conv_binary_popcnt(input, filters, fw, fh, pad, pad_matches) };
        }
    }
    conv_binary_core(input, filters, fw, fh, pad, pad_matches)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn conv_binary_popcnt(
    input: &BitTensor,
    filters: &[BitTensor],
    fw: usize,
    fh: usize,
    pad: isize,
    pad_matches: &[u32],
) -> Vec<i32> {
    conv_binary_core(input, filters, fw, fh, pad, pad_matches)
}

/// Accumulators in `(h, w, n)` order; pad taps add the precomputed filter zero counts.
#[inline(always)]
fn conv_binary_core(
    input: &BitTensor,
    filters: &[BitTensor],
    fw: usize,
    fh: usize,
    pad: isize,
    pad_matches: &[u32],
) -> Vec<i32> {
    let (w, h, n, fd) = (input.width(), input.height(), filters.len(), input.depth());
    let taps = fw * fh;
    let wpc = input.words_per_column();
    let row_words = fw * wpc;
    let row_bits = (fw * fd) as u32;
    let mut out = vec![0i32; w * h * n];
    for y in 0..h {
        for x in 0..w {
            let acc = &mut out[(y * w + x) * n..(y * w + x + 1) * n];
            let x0 = x as isize - pad;
            let row_inside = x0 >= 0 && x0 as usize + fw <= w;
            for ky in 0..fh {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    for (f, a) in acc.iter_mut().enumerate() {
                        *a += (0..fw)
                            .map(|kx| pad_matches[f * taps + ky * fw + kx] as i32)
                            .sum::<i32>();
                    }
                    continue;
                }
                if row_inside {
                    // The fw input columns of this row are adjacent in memory, as are the filter's.
                    let start = (iy as usize * w + x0 as usize) * wpc;
                    let a_row = &input.words()[start..start + row_words];
                    for (a, filt) in acc.iter_mut().zip(filters) {
                        let w_row = &filt.words()[ky * row_words..(ky + 1) * row_words];
                        *a += (row_bits - xor_popcount(a_row, w_row)) as i32;
                    }
                    continue;
                }
                for kx in 0..fw {
                    let ix = x0 + kx as isize;
                    if ix < 0 || ix >= w as isize {
                        for (f, a) in acc.iter_mut().enumerate() {
                            *a += pad_matches[f * taps + ky * fw + kx] as i32;
                        }
                    } else {
                        let col = input.column(ix as usize, iy as usize).words();
                        for (a, filt) in acc.iter_mut().zip(filters) {
                            *a +=
                                (fd as u32 - xor_popcount(col, filt.column(kx, ky).words())) as i32;
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2x2, stride-2 max-pool over integer accumulators.
pub fn max_pool(y: &IntFeatureMap) -> Result<IntFeatureMap> {
    if !y.width.is_multiple_of(2) || !y.height.is_multiple_of(2) {
        return Err(Error::DimMismatch(format!(
            "max-pool needs even dims, got {}x{}",
            y.width, y.height
        )));
    }
    let (ow, oh, d) = (y.width / 2, y.height / 2, y.depth);
    let mut out = Vec::with_capacity(ow * oh * d);
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..d {
                let m = y
                    .get(2 * ox, 2 * oy, c)
                    .max(y.get(2 * ox + 1, 2 * oy, c))
                    .max(y.get(2 * ox, 2 * oy + 1, c))
                    .max(y.get(2 * ox + 1, 2 * oy + 1, c));
                out.push(m);
            }
        }
    }
    IntFeatureMap::new(ow, oh, d, out)
}

pub fn norm_binarize(y: &IntFeatureMap, thresholds: &[FoldedThreshold]) -> Result<BitTensor> {
    if thresholds.len() != y.depth {
        return Err(Error::DimMismatch(format!(
            "{} thresholds for {} channels",
            thresholds.len(),
            y.depth
        )));
    }
    let mut out = BitTensor::zeros(y.width, y.height, y.depth);
    for py in 0..y.height {
        for px in 0..y.width {
            for (c, t) in thresholds.iter().enumerate() {
                if t.apply(y.get(px, py, c)) {
                    out.set(px, py, c, true);
                }
            }
        }
    }
    Ok(out)
}

fn flat_input(input: &BitTensor) -> BitTensor {
    if input.width() == 1 && input.height() == 1 {
        input.clone()
    } else {
        BitTensor::from_bitvec(input.flatten())
    }
}

fn fc_accumulate(input: &BitTensor, weights: &[BitTensor]) -> Result<IntFeatureMap> {
    let flat = flat_input(input);
    let n_in = flat.depth();
    let spec = LayerSpec::fc("fc", LayerKind::FcBinary, n_in, weights.len());
    conv_binary(&flat, weights, &spec).map_err(|e| match e {
        Error::DimMismatch(_) => Error::LengthMismatch {
            expected: weights.first().map_or(0, |w| w.depth()),
            actual: n_in,
        },
        other => other,
    })
}

/// Fully-connected binary layer: XNOR accumulate then NormBinarize.
pub fn fc_binary(
    input: &BitTensor,
    weights: &[BitTensor],
    thresholds: &[FoldedThreshold],
) -> Result<BitTensor> {
    let y = fc_accumulate(input, weights)?;
    let bits = norm_binarize(&y, thresholds)?;
    Ok(bits)
}

/// Index of the first maximal score.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn classify_counts(y: &IntFeatureMap, cnum: u32, bn: &[BatchNormParams]) -> Result<Prediction> {
    if bn.len() != y.depth {
        return Err(Error::DimMismatch(format!(
            "{} norm params for {} classes",
            bn.len(),
            y.depth
        )));
    }
    let scores = y
        .values
        .iter()
        .zip(bn)
        .map(|(&v, p)| final_layer_affine(v as u32, cnum, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prediction {
        class: argmax(&scores),
        scores,
    })
}

/// Output layer: XNOR accumulate, normalize, argmax.
pub fn classify(
    input: &BitTensor,
    weights: &[BitTensor],
    bn: &[BatchNormParams],
) -> Result<Prediction> {
    let y = fc_accumulate(input, weights)?;
    let cnum = input.len() as u32;
    classify_counts(&y, cnum, bn)
}

/// Data flowing between layer stages.
#[derive(Clone, Debug, PartialEq)]
pub enum Activation {
    Input(FixedTensor),
    Bits(BitTensor),
    Output(Prediction),
}

/// Intermediate values of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    /// Accumulator outputs before pooling.
    pub accum: IntFeatureMap,
    /// Accumulators after pooling, for layers that pool.
    pub pooled: Option<IntFeatureMap>,
    /// Binarized output; `None` for the output layer.
    pub bits: Option<BitTensor>,
}

/// Full forward pass with every intermediate kept.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub layers: Vec<LayerTrace>,
    pub prediction: Prediction,
}

fn layer_forward(
    model: &Model,
    index: usize,
    act: Activation,
    mut trace: Option<&mut Vec<LayerTrace>>,
) -> Result<Activation> {
    let spec = &model.spec.layers[index];
    let shape = model.shapes[index];
    let wrap = |e: Error| match e {
        e @ Error::Layer { .. } => e,
        other => Error::layer(index, &spec.name, other.to_string()),
    };
    let accum = match (&model.weights[index], act) {
        (LayerWeights::Fixed(f), Activation::Input(x)) => {
            if Dims::new(x.width(), x.height(), x.depth()) != shape.input {
                return Err(Error::layer(
                    index,
                    &spec.name,
                    format!(
                        "input is {}x{}x{}, network expects {}x{}x{}",
                        x.width(),
                        x.height(),
                        x.depth(),
                        shape.input.width,
                        shape.input.height,
                        shape.input.depth
                    ),
                ));
            }
            conv_first(&x, f, spec).map_err(wrap)?
        }
        (LayerWeights::Binary(fs), Activation::Bits(b)) if spec.kind.is_conv() => {
            conv_binary(&b, fs, spec).map_err(wrap)?
        }
        (LayerWeights::Binary(fs), Activation::Bits(b)) => fc_accumulate(&b, fs).map_err(wrap)?,
        _ => {
            return Err(Error::layer(
                index,
                &spec.name,
                "activation does not match layer kind",
            ))
        }
    };
    if spec.kind == LayerKind::FcOutput {
        let pred = classify_counts(&accum, spec.cnum() as u32, &model.output_norm).map_err(wrap)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(LayerTrace {
                accum,
                pooled: None,
                bits: None,
            });
        }
        return Ok(Activation::Output(pred));
    }
    let pooled = if spec.pool_after {
        Some(max_pool(&accum).map_err(wrap)?)
    } else {
        None
    };
    let bits =
        norm_binarize(pooled.as_ref().unwrap_or(&accum), &model.thresholds[index]).map_err(wrap)?;
    if let Some(t) = trace {
        t.push(LayerTrace {
            accum,
            pooled,
            bits: Some(bits.clone()),
        });
    }
    Ok(Activation::Bits(bits))
}

/// Runs a single layer on the previous layer's activation.
pub fn run_layer(model: &Model, index: usize, act: Activation) -> Result<Activation> {
    layer_forward(model, index, act, None)
}

pub fn run_network(model: &Model, input: &FixedTensor) -> Result<Prediction> {
    let mut act = Activation::Input(input.clone());
    for i in 0..model.num_layers() {
        act = layer_forward(model, i, act, None)?;
    }
    match act {
        Activation::Output(p) => Ok(p),
        _ => Err(Error::InvalidNetwork(
            "network did not end in an output layer".into(),
        )),
    }
}

pub fn run_network_traced(model: &Model, input: &FixedTensor) -> Result<Trace> {
    let mut layers = Vec::with_capacity(model.num_layers());
    let mut act = Activation::Input(input.clone());
    for i in 0..model.num_layers() {
        act = layer_forward(model, i, act, Some(&mut layers))?;
    }
    match act {
        Activation::Output(prediction) => Ok(Trace { layers, prediction }),
        _ => Err(Error::InvalidNetwork(
            "network did not end in an output layer".into(),
        )),
    }
}

/// Sequential batch inference; images are independent so the batch may be
/// spread over the current rayon pool. Output order matches input order.
pub fn run_batch(model: &Model, inputs: &[FixedTensor]) -> Result<Vec<Prediction>> {
    use rayon::prelude::*;
    inputs.par_iter().map(|x| run_network(model, x)).collect()
}

/// Repacks a flat `+1/-1` weight row into a `1 x 1 x n` filter.
pub fn fc_filter(values: &[i8]) -> Result<BitTensor> {
    Ok(BitTensor::from_bitvec(BitVec::from_pm1(values)?))
}

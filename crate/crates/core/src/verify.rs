//! Random instances and the packed-vs-oracle equivalence check.
//!
//! An [`Instance`] holds a network with logical `+1/-1` weights, batch-norm
//! parameters and an input image. The packed path is built from it by
//! packing and folding; the oracle path by converting to reals. The two are
//! then compared layer by layer.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitcore::{BitTensor, FixedTensor};
use crate::error::Result;
use crate::fold::{fold_binary_layer, fold_first_layer, BatchNormParams};
use crate::formats::model::ModelFile;
use crate::formats::thresholds::ThresholdFile;
use crate::formats::weights::{WeightFile, WeightLayer};
use crate::layers::{run_network_traced, FixedFilters, IntFeatureMap, LayerWeights, Model, Trace};
use crate::network::{Dims, LayerKind, LayerSpec, NetworkSpec};
use crate::oracle::{
    run_oracle, OracleLayer, OracleNetwork, OracleTrace, RealTensor, ThresholdMode,
};

/// Deterministic RNG for case `case` of a run seeded with `seed`.
pub fn case_rng(seed: u64, case: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case);
    rng
}

pub fn random_pm1<R: Rng>(rng: &mut R, n: usize) -> Vec<i8> {
    (0..n)
        .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
        .collect()
}

pub fn random_fixed<R: Rng>(rng: &mut R, dims: Dims) -> FixedTensor {
    let vals = (0..dims.volume())
        .map(|_| rng.gen_range(-31..=31))
        .collect();
    FixedTensor::new(dims.width, dims.height, dims.depth, vals).expect("values drawn in range")
}

/// Batch-norm parameters whose thresholds fall inside the reachable range
/// of an accumulator spanning `[-span, span]`, with some negative and zero
/// gammas mixed in.
pub fn random_bn<R: Rng>(rng: &mut R, span: f64) -> BatchNormParams {
    let gamma = match rng.gen_range(0..10) {
        0 => 0.0,
        1..=3 => -rng.gen_range(0.1..3.0),
        _ => rng.gen_range(0.1..3.0),
    };
    BatchNormParams {
        mu: rng.gen_range(-0.6 * span..=0.6 * span),
        sigma2: rng.gen_range(0.0..(span + 1.0)),
        gamma,
        beta: rng.gen_range(-2.0..2.0),
        epsilon: 1e-4,
    }
}

/// A random 2-4 layer network with feature-map depths 4-32 and maps of at
/// most 16x16.
pub fn random_toy_network<R: Rng>(rng: &mut R) -> NetworkSpec {
    let n_layers = rng.gen_range(2..=4);
    let mut dims = Dims::new(
        rng.gen_range(1..=16),
        rng.gen_range(1..=16),
        rng.gen_range(1..=4),
    );
    let input = dims;
    let mut layers = Vec::with_capacity(n_layers);
    let mut fc = false;
    for i in 0..n_layers {
        let name = format!("l{i}");
        let spec = if i == n_layers - 1 {
            LayerSpec::fc(
                &name,
                LayerKind::FcOutput,
                dims.volume(),
                rng.gen_range(2..=10),
            )
        } else if i > 0 && (fc || rng.gen_bool(0.3)) {
            fc = true;
            LayerSpec::fc(
                &name,
                LayerKind::FcBinary,
                dims.volume(),
                rng.gen_range(4..=32),
            )
        } else {
            let kind = if i == 0 {
                LayerKind::ConvFirst
            } else {
                LayerKind::ConvBinary
            };
            let can_pool = dims.width.is_multiple_of(2) && dims.height.is_multiple_of(2);
            LayerSpec::conv(
                &name,
                kind,
                dims.depth,
                rng.gen_range(4..=32),
                can_pool && rng.gen_bool(0.5),
            )
        };
        dims = if spec.kind.is_conv() {
            let d = Dims::new(dims.width, dims.height, spec.n_filters);
            if spec.pool_after {
                Dims::new(d.width / 2, d.height / 2, d.depth)
            } else {
                d
            }
        } else {
            Dims::new(1, 1, spec.n_filters)
        };
        layers.push(spec);
    }
    NetworkSpec {
        name: "random-toy".into(),
        input,
        layers,
    }
}

/// Network plus logical weights, batch-norm parameters and one input.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub spec: NetworkSpec,
    /// Per layer, `n_filters` filters of `FW*FH*FD` values in `(h, w, d)` order.
    pub weights: Vec<Vec<i8>>,
    pub bn: Vec<Vec<BatchNormParams>>,
    pub input: FixedTensor,
}

/// Spread of random batch-norm parameters relative to a layer's accumulator range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnScale {
    /// Means anywhere in most of the accumulator range; many channels saturate.
    Full,
    /// Means and variances on the scale of a random +1/-1 sum (about `sqrt(cnum)`).
    Typical,
    /// Each layer picks one of the two.
    Mixed,
}

impl Instance {
    pub fn random<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        Self::random_scaled(spec, rng, BnScale::Mixed)
    }

    pub fn random_scaled<R: Rng>(spec: &NetworkSpec, rng: &mut R, scale: BnScale) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::with_capacity(spec.layers.len());
        let mut bn = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            weights.push(random_pm1(rng, l.cnum() * l.n_filters));
            let full = if l.kind == LayerKind::ConvFirst {
                31.0 * l.cnum() as f64
            } else {
                l.cnum() as f64
            };
            let typical = if l.kind == LayerKind::ConvFirst {
                16.0 * (l.cnum() as f64).sqrt()
            } else {
                (l.cnum() as f64).sqrt()
            };
            let span = match scale {
                BnScale::Full => full,
                BnScale::Typical => typical,
                BnScale::Mixed if rng.gen_bool(0.5) => full,
                BnScale::Mixed => typical,
            };
            bn.push((0..l.n_filters).map(|_| random_bn(rng, span)).collect());
        }
        let input = random_fixed(rng, spec.input);
        Ok(Self {
            spec: spec.clone(),
            weights,
            bn,
            input,
        })
    }

    fn filter_len(&self, layer: usize) -> usize {
        self.spec.layers[layer].cnum()
    }

    /// Packed weights for every layer.
    pub fn packed_weights(&self) -> Result<Vec<LayerWeights>> {
        self.spec
            .layers
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| {
                if l.kind == LayerKind::ConvFirst {
                    Ok(LayerWeights::Fixed(FixedFilters::new(
                        l.filter_w,
                        l.filter_h,
                        l.filter_d,
                        l.n_filters,
                        w.clone(),
                    )?))
                } else {
                    w.chunks(l.cnum())
                        .map(|f| BitTensor::pack(f, l.filter_w, l.filter_h, l.filter_d))
                        .collect::<Result<Vec<_>>>()
                        .map(LayerWeights::Binary)
                }
            })
            .collect()
    }

    pub fn thresholds(&self) -> Result<ThresholdFile> {
        let mut layers = Vec::new();
        for (l, bn) in self.spec.layers.iter().zip(&self.bn) {
            if !l.has_threshold() {
                continue;
            }
            layers.push(
                bn.iter()
                    .map(|p| match l.kind {
                        LayerKind::ConvFirst => fold_first_layer(p),
                        _ => fold_binary_layer(p, l.cnum() as u32),
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(ThresholdFile { layers })
    }

    pub fn packed_model(&self) -> Result<Model> {
        Model::new(
            self.spec.clone(),
            self.packed_weights()?,
            self.thresholds()?.layers,
            self.bn.last().cloned().unwrap_or_default(),
        )
    }

    pub fn oracle_network(&self) -> Result<OracleNetwork> {
        let layers = self
            .spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let filters = self.weights[i]
                    .chunks(self.filter_len(i))
                    .map(|f| {
                        let vals: Vec<f64> = f.iter().map(|&v| v as f64).collect();
                        RealTensor::from_hwd(l.filter_w, l.filter_h, l.filter_d, &vals)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(OracleLayer {
                    kind: l.kind,
                    pool_after: l.pool_after,
                    filters,
                    bn: self.bn[i].clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OracleNetwork { layers })
    }

    pub fn oracle_input(&self) -> Result<RealTensor> {
        let x = &self.input;
        let vals: Vec<f64> = x.values().iter().map(|&v| v as f64).collect();
        RealTensor::from_hwd(x.width(), x.height(), x.depth(), &vals)
    }

    /// Negates one logical weight of `layer`.
    pub fn flip_weight(&mut self, layer: usize, index: usize) {
        self.weights[layer][index] = -self.weights[layer][index];
    }

    pub fn model_file(&self) -> ModelFile {
        ModelFile {
            spec: self.spec.clone(),
            bn: self.bn.iter().cloned().map(Some).collect(),
        }
    }

    /// Writes model, weights, thresholds and input for reproducing a failure.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.model_file().save(&dir.join("model.toml"))?;
        let wf = WeightFile {
            layers: self
                .spec
                .layers
                .iter()
                .zip(self.packed_weights()?)
                .map(|(l, weights)| WeightLayer {
                    kind: l.kind,
                    weights,
                })
                .collect(),
        };
        wf.save(&dir.join("weights.bnnw"))?;
        self.thresholds()?.save(&dir.join("thresholds.bin"))?;
        let x = &self.input;
        let vals: Vec<String> = x.values().iter().map(|v| v.to_string()).collect();
        std::fs::write(
            dir.join("input.txt"),
            format!(
                "{} {} {}\n{}\n",
                x.width(),
                x.height(),
                x.depth(),
                vals.join(" ")
            ),
        )?;
        Ok(())
    }
}

/// First point where the packed path and the oracle disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub layer: usize,
    pub stage: &'static str,
    /// Flat `(h, w, d)` index within the stage's tensor.
    pub position: usize,
    pub packed: String,
    pub oracle: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layer {} {} at element {}: packed {} vs oracle {}",
            self.layer, self.stage, self.position, self.packed, self.oracle
        )
    }
}

fn compare_accum(
    layer: usize,
    stage: &'static str,
    packed: &IntFeatureMap,
    oracle: &RealTensor,
    to_pm1: impl Fn(i32) -> f64,
) -> Option<Mismatch> {
    if packed.dims() != Dims::new(oracle.width, oracle.height, oracle.depth) {
        return Some(Mismatch {
            layer,
            stage,
            position: 0,
            packed: format!("{:?}", packed.dims()),
            oracle: format!("{}x{}x{}", oracle.width, oracle.height, oracle.depth),
        });
    }
    let o = oracle.to_hwd();
    packed
        .values
        .iter()
        .zip(&o)
        .position(|(&y, &v)| to_pm1(y) != v)
        .map(|position| Mismatch {
            layer,
            stage,
            position,
            packed: packed.values[position].to_string(),
            oracle: o[position].to_string(),
        })
}

/// Compares two traces element by element, accumulators included.
pub fn compare_traces(
    spec: &NetworkSpec,
    packed: &Trace,
    oracle: &OracleTrace,
) -> Option<Mismatch> {
    for (i, (l, (p, o))) in spec
        .layers
        .iter()
        .zip(packed.layers.iter().zip(&oracle.layers))
        .enumerate()
    {
        let cnum = l.cnum() as i32;
        let to_pm1 = |y: i32| -> f64 {
            if l.kind == LayerKind::ConvFirst {
                y as f64
            } else {
                (2 * y - cnum) as f64
            }
        };
        if let Some(m) = compare_accum(i, "accumulator", &p.accum, &o.accum, to_pm1) {
            return Some(m);
        }
        match (&p.pooled, &o.pooled) {
            (Some(pp), Some(op)) => {
                if let Some(m) = compare_accum(i, "pooled", pp, op, to_pm1) {
                    return Some(m);
                }
            }
            (None, None) => {}
            _ => {
                return Some(Mismatch {
                    layer: i,
                    stage: "pooled",
                    position: 0,
                    packed: format!("{}", p.pooled.is_some()),
                    oracle: format!("{}", o.pooled.is_some()),
                })
            }
        }
        if let (Some(bits), Some(act)) = (&p.bits, &o.activation) {
            let pv = bits.unpack();
            let ov = act.to_hwd();
            if pv.len() != ov.len() {
                return Some(Mismatch {
                    layer: i,
                    stage: "activation",
                    position: 0,
                    packed: format!("{} values", pv.len()),
                    oracle: format!("{} values", ov.len()),
                });
            }
            if let Some(position) = pv.iter().zip(&ov).position(|(&b, &v)| b as f64 != v) {
                return Some(Mismatch {
                    layer: i,
                    stage: "activation",
                    position,
                    packed: pv[position].to_string(),
                    oracle: ov[position].to_string(),
                });
            }
        }
    }
    let last = spec.layers.len() - 1;
    let (ps, os) = (&packed.prediction.scores, &oracle.scores);
    if let Some(position) = (0..ps.len().max(os.len())).find(|&k| match (ps.get(k), os.get(k)) {
        (Some(a), Some(b)) => (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0),
        _ => true,
    }) {
        return Some(Mismatch {
            layer: last,
            stage: "score",
            position,
            packed: format!("{:?}", ps.get(position)),
            oracle: format!("{:?}", os.get(position)),
        });
    }
    if packed.prediction.class != oracle.class {
        return Some(Mismatch {
            layer: last,
            stage: "prediction",
            position: 0,
            packed: packed.prediction.class.to_string(),
            oracle: oracle.class.to_string(),
        });
    }
    None
}

/// Runs both paths on `inst`; `packed_override` replaces the packed model.
pub fn check_instance(
    inst: &Instance,
    packed_override: Option<&Model>,
) -> Result<Option<Mismatch>> {
    let built;
    let model = match packed_override {
        Some(m) => m,
        None => {
            built = inst.packed_model()?;
            &built
        }
    };
    let packed = run_network_traced(model, &inst.input)?;
    let oracle = run_oracle(
        &inst.oracle_network()?,
        &inst.oracle_input()?,
        ThresholdMode::Rounded,
    )?;
    Ok(compare_traces(&inst.spec, &packed, &oracle))
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    /// Flip one random weight of the packed model in every case.
    pub inject_bitflip: bool,
    /// Use a fresh random network per case instead of the given spec.
    pub random_networks: bool,
}

#[derive(Clone, Debug)]
pub struct CaseFailure {
    pub case: u64,
    pub seed: u64,
    pub mismatch: Mismatch,
    pub instance: Instance,
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub cases: u64,
    pub failures: Vec<CaseFailure>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs `cases` random instances of `spec` through both paths.
pub fn run_verify(
    spec: &NetworkSpec,
    seed: u64,
    cases: u64,
    opts: &VerifyOptions,
) -> Result<VerifyReport> {
    let mut report = VerifyReport {
        cases,
        failures: Vec::new(),
    };
    for case in 0..cases {
        let mut rng = case_rng(seed, case);
        let net = if opts.random_networks {
            random_toy_network(&mut rng)
        } else {
            spec.clone()
        };
        let inst = Instance::random(&net, &mut rng)?;
        let mismatch = if opts.inject_bitflip {
            let layer = rng.gen_range(0..inst.weights.len());
            let index = rng.gen_range(0..inst.weights[layer].len());
            let mut sabotaged = inst.clone();
            sabotaged.flip_weight(layer, index);
            check_instance(&inst, Some(&sabotaged.packed_model()?))?
        } else {
            check_instance(&inst, None)?
        };
        if let Some(mismatch) = mismatch {
            report.failures.push(CaseFailure {
                case,
                seed,
                mismatch,
                instance: inst,
            });
        }
    }
    Ok(report)
}

//! Analytical cycle and resource model of a layer-pipelined accelerator, and
//! the layer-balancing planner that picks per-layer unroll factors.
//!
//! Each layer is a loop nest of `Cycle_conv` multiply-accumulates. A layer
//! with unfolding factor `UF` (XNOR lanes per PE), `P` parallel PEs and
//! initiation interval `I` finishes in `ceil(Cycle_conv / (UF * P)) * I`
//! cycles. All layers run concurrently on successive images, so the slowest
//! layer sets the frame rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Dims, LayerSpec, NetworkSpec};

/// Maximum BRAM word width in bits.
pub const BRAM_WORD_BITS: u64 = 32;

/// XNOR gates mapped per 6-input LUT on average.
pub const XNORS_PER_LUT: f64 = 2.5;

/// Clock of the reference implementation.
pub const REFERENCE_FREQ_HZ: f64 = 90e6;

/// LUTs reported in use by the reference implementation.
pub const REFERENCE_LUTS_USED: u64 = 342_126;

/// Cycles per layer measured on the reference implementation.
pub const REFERENCE_MEASURED_CYCLES: [u64; 6] = [5233, 12386, 12296, 13329, 12386, 14473];

/// Per-layer architectural parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerArch {
    /// Index into the network's layer list.
    pub layer: usize,
    pub name: String,
    /// Unfolding factor: XNOR lanes per PE.
    pub uf: u64,
    /// Spatial parallelism: number of PEs.
    pub p: u64,
    /// Initiation interval in cycles.
    #[serde(default = "one")]
    pub ii: u64,
}

fn one() -> u64 {
    1
}

impl LayerArch {
    pub fn lanes(&self) -> u64 {
        self.uf * self.p
    }

    pub fn check(&self, spec: &LayerSpec) -> Result<()> {
        let fail =
            |m: String| Error::InvalidArch(format!("layer {} ({}): {m}", self.layer, spec.name));
        if self.uf == 0 || self.uf > spec.cnum() as u64 {
            return Err(fail(format!("UF {} outside [1, {}]", self.uf, spec.cnum())));
        }
        if self.p == 0 || !(spec.n_filters as u64).is_multiple_of(self.p) {
            return Err(fail(format!(
                "P {} does not divide {} filters",
                self.p, spec.n_filters
            )));
        }
        if self.ii == 0 {
            return Err(fail("initiation interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// Architectural parameters for the layers mapped onto the accelerator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchParams {
    pub layers: Vec<LayerArch>,
}

impl ArchParams {
    /// Balanced assignment of the reference CIFAR-10 implementation.
    pub fn reference() -> Self {
        let rows = [
            ("conv1", 27, 32),
            ("conv2", 384, 32),
            ("conv3", 384, 16),
            ("conv4", 768, 16),
            ("conv5", 768, 8),
            ("conv6", 1536, 8),
        ];
        Self {
            layers: rows
                .iter()
                .enumerate()
                .map(|(i, &(name, uf, p))| LayerArch {
                    layer: i,
                    name: name.to_string(),
                    uf,
                    p,
                    ii: 1,
                })
                .collect(),
        }
    }

    pub fn total_lanes(&self) -> u64 {
        self.layers.iter().map(LayerArch::lanes).sum()
    }

    /// Validates against `net`: entries in layer order, every conv layer covered.
    pub fn check(&self, net: &NetworkSpec) -> Result<()> {
        let mut prev: Option<usize> = None;
        for a in &self.layers {
            let spec = net.layers.get(a.layer).ok_or_else(|| {
                Error::InvalidArch(format!("layer index {} not in network", a.layer))
            })?;
            if prev.is_some_and(|p| a.layer <= p) {
                return Err(Error::InvalidArch(format!(
                    "layer {} listed out of order or twice",
                    a.layer
                )));
            }
            prev = Some(a.layer);
            a.check(spec)?;
        }
        for (i, l) in net.layers.iter().enumerate() {
            if l.kind.is_conv() && !self.layers.iter().any(|a| a.layer == i) {
                return Err(Error::InvalidArch(format!(
                    "no parameters for layer {i} ({})",
                    l.name
                )));
            }
        }
        Ok(())
    }
}

/// Device budget and LUT cost model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceBudget {
    pub luts: u64,
    /// 18Kb-equivalent blocks.
    pub brams: u64,
    pub dsps: u64,
    pub xnors_per_lut: f64,
    /// Multiplier on the XNOR-array LUT count for logic not modeled directly.
    pub lut_overhead: f64,
}

impl ResourceBudget {
    pub fn new(luts: u64, brams: u64, dsps: u64) -> Self {
        Self {
            luts,
            brams,
            dsps,
            xnors_per_lut: XNORS_PER_LUT,
            lut_overhead: 1.0,
        }
    }

    /// Virtex-7 XC7VX690T totals.
    pub fn virtex7_690t() -> Self {
        Self::new(433_200, 2060, 2800)
    }

    pub fn with_overhead(mut self, lut_overhead: f64) -> Self {
        self.lut_overhead = lut_overhead;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.luts == 0 || self.brams == 0 || self.dsps == 0 {
            return Err(Error::InvalidArch("budget counts must be positive".into()));
        }
        if !(self.xnors_per_lut > 0.0 && self.lut_overhead > 0.0) {
            return Err(Error::InvalidArch(
                "LUT cost factors must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Parses `luts=433200,brams=2060,dsps=2800[,overhead=X]`; unset counts
    /// default to the Virtex-7 690T.
    pub fn parse(s: &str) -> Result<Self> {
        let mut b = Self::virtex7_690t();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("budget entry '{part}' is not key=value")))?;
            let int = || {
                v.trim()
                    .parse::<u64>()
                    .map_err(|e| Error::Format(format!("budget {k}: {e}")))
            };
            let real = || {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("budget {k}: {e}")))
            };
            match k.trim() {
                "luts" => b.luts = int()?,
                "brams" => b.brams = int()?,
                "dsps" => b.dsps = int()?,
                "xnors_per_lut" => b.xnors_per_lut = real()?,
                "overhead" | "lut_overhead" => {
                    b.lut_overhead = if v.trim() == "calibrated" {
                        calibrated_lut_overhead()
                    } else {
                        real()?
                    }
                }
                other => return Err(Error::Format(format!("unknown budget key '{other}'"))),
            }
        }
        b.validate()?;
        Ok(b)
    }
}

impl Default for ResourceBudget {
    fn default() -> Self {
        Self::virtex7_690t()
    }
}

/// Multiply-accumulates of one layer without any unrolling:
/// output volume before pooling times filter volume.
pub fn cycle_conv(layer: &LayerSpec, pre_pool_out: Dims) -> u64 {
    let out = if layer.kind.is_fc() {
        layer.n_filters as u64
    } else {
        (pre_pool_out.width * pre_pool_out.height * layer.n_filters) as u64
    };
    out * layer.cnum() as u64
}

/// Cycles with `UF` lanes per PE, `P` PEs and initiation interval `ii`.
pub fn cycle_est(cycle_conv: u64, uf: u64, p: u64, ii: u64) -> Result<u64> {
    if uf == 0 || p == 0 || ii == 0 {
        return Err(Error::InvalidArch(format!(
            "UF={uf}, P={p}, I={ii} must all be >= 1"
        )));
    }
    if uf * p > cycle_conv {
        return Err(Error::InvalidArch(format!(
            "UF*P = {} exceeds {cycle_conv} cycles",
            uf * p
        )));
    }
    Ok(cycle_conv.div_ceil(uf * p) * ii)
}

/// Output maps per second of one layer kernel, `freq / cycle_est`.
pub fn throughput_conv(uf: u64, p: u64, cycle_conv: u64, ii: u64, freq: f64) -> Result<f64> {
    if freq.is_nan() || freq <= 0.0 {
        return Err(Error::InvalidArch(format!(
            "frequency {freq} must be positive"
        )));
    }
    Ok(freq / cycle_est(cycle_conv, uf, p, ii)? as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemThroughput {
    pub fps: f64,
    /// First index holding the maximum cycle count.
    pub bottleneck: usize,
}

/// Frames per second of a layer pipeline: `freq / max(cycles)`.
pub fn system_throughput(cycles: &[u64], freq: f64) -> Result<SystemThroughput> {
    if freq.is_nan() || freq <= 0.0 {
        return Err(Error::InvalidArch(format!(
            "frequency {freq} must be positive"
        )));
    }
    let (bottleneck, &max) = cycles
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, &u64)>, (i, c)| match best {
            Some((_, b)) if c <= b => best,
            _ => Some((i, c)),
        })
        .ok_or_else(|| Error::InvalidArch("empty cycle list".into()))?;
    if max == 0 {
        return Err(Error::InvalidArch("zero cycle count".into()));
    }
    Ok(SystemThroughput {
        fps: freq / max as f64,
        bottleneck,
    })
}

/// Multiply-accumulates per image across all conv and FC layers.
pub fn total_macs(net: &NetworkSpec) -> Result<u64> {
    let shapes = net.shapes()?;
    Ok(net
        .layers
        .iter()
        .zip(&shapes)
        .map(|(l, s)| cycle_conv(l, s.pre_pool))
        .sum())
}

/// Billions of operations per second at `fps`, counting 2 ops per MAC.
pub fn gops(net: &NetworkSpec, fps: f64) -> Result<f64> {
    Ok(2.0 * total_macs(net)? as f64 * fps / 1e9)
}

/// Lower-bound LUT count of the XNOR arrays, scaled by the budget's overhead.
pub fn lut_estimate(arch: &ArchParams, budget: &ResourceBudget) -> u64 {
    lanes_to_luts(arch.total_lanes(), budget)
}

fn lanes_to_luts(lanes: u64, budget: &ResourceBudget) -> u64 {
    (lanes as f64 * budget.lut_overhead / budget.xnors_per_lut).ceil() as u64
}

/// DSP slices used as PE accumulators: one per PE.
pub fn dsp_estimate(arch: &ArchParams) -> u64 {
    arch.layers.iter().map(|a| a.p).sum()
}

/// LUT overhead that maps the reference assignment's XNOR-array estimate
/// onto the LUT count the reference implementation actually used.
pub fn calibrated_lut_overhead() -> f64 {
    let raw = lut_estimate(&ArchParams::reference(), &ResourceBudget::virtex7_690t());
    REFERENCE_LUTS_USED as f64 / raw as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BramPlan {
    /// Bits grouped into one BRAM word.
    pub reshape_factor: u64,
    /// Independent BRAM banks read in parallel.
    pub partitions: u64,
    /// Words stored per bank.
    pub depth_words: u64,
}

/// Reshape by the BRAM word width, then partition for the required bandwidth.
pub fn bram_plan(weight_bits: u64, parallel_bits_per_cycle: u64) -> Result<BramPlan> {
    if parallel_bits_per_cycle == 0 {
        return Err(Error::InvalidArch(
            "parallel bits per cycle must be >= 1".into(),
        ));
    }
    let partitions = parallel_bits_per_cycle.div_ceil(BRAM_WORD_BITS);
    Ok(BramPlan {
        reshape_factor: BRAM_WORD_BITS,
        partitions,
        depth_words: weight_bits.div_ceil(BRAM_WORD_BITS).div_ceil(partitions),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCycles {
    pub layer: usize,
    pub name: String,
    pub uf: u64,
    pub p: u64,
    pub ii: u64,
    pub cycle_conv: u64,
    pub cycle_est: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured: Option<u64>,
    pub bram_partitions: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub network: String,
    pub freq_hz: f64,
    pub layers: Vec<LayerCycles>,
    /// Position in `layers` of the slowest stage.
    pub bottleneck: usize,
    pub fps: f64,
    pub gops: f64,
    pub lut_lower_bound: u64,
    pub lut_overhead: f64,
    pub dsp_estimate: u64,
}

impl CycleReport {
    /// Builds the report; `measured` replaces `cycle_est` in the FPS figure.
    pub fn build(
        net: &NetworkSpec,
        arch: &ArchParams,
        freq: f64,
        measured: Option<&[u64]>,
        budget: &ResourceBudget,
    ) -> Result<Self> {
        arch.check(net)?;
        let shapes = net.shapes()?;
        if let Some(m) = measured {
            if m.len() != arch.layers.len() {
                return Err(Error::InvalidArch(format!(
                    "{} measured cycle counts for {} mapped layers",
                    m.len(),
                    arch.layers.len()
                )));
            }
        }
        let layers = arch
            .layers
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let spec = &net.layers[a.layer];
                let cc = cycle_conv(spec, shapes[a.layer].pre_pool);
                Ok(LayerCycles {
                    layer: a.layer,
                    name: spec.name.clone(),
                    uf: a.uf,
                    p: a.p,
                    ii: a.ii,
                    cycle_conv: cc,
                    cycle_est: cycle_est(cc, a.uf, a.p, a.ii)?,
                    measured: measured.map(|m| m[k]),
                    bram_partitions: bram_plan(
                        spec.cnum() as u64 * spec.n_filters as u64,
                        a.lanes(),
                    )?
                    .partitions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cycles: Vec<u64> = layers
            .iter()
            .map(|l| l.measured.unwrap_or(l.cycle_est))
            .collect();
        let sys = system_throughput(&cycles, freq)?;
        Ok(Self {
            network: net.name.clone(),
            freq_hz: freq,
            bottleneck: sys.bottleneck,
            fps: sys.fps,
            gops: gops(net, sys.fps)?,
            lut_lower_bound: lut_estimate(arch, budget),
            lut_overhead: budget.lut_overhead,
            dsp_estimate: dsp_estimate(arch),
            layers,
        })
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "network: {}  freq: {:.3} MHz",
            self.network,
            self.freq_hz / 1e6
        );
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>5} {:>3} {:>12} {:>10} {:>10} {:>6}",
            "layer", "UF", "P", "I", "cycle_conv", "cycle_est", "measured", "banks"
        );
        for (k, l) in self.layers.iter().enumerate() {
            let mark = if k == self.bottleneck { " *" } else { "" };
            let measured = l.measured.map_or("-".to_string(), |m| m.to_string());
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>5} {:>3} {:>12} {:>10} {:>10} {:>6}{mark}",
                l.name, l.uf, l.p, l.ii, l.cycle_conv, l.cycle_est, measured, l.bram_partitions
            );
        }
        let b = &self.layers[self.bottleneck];
        let _ = writeln!(s, "bottleneck: {} (layer {})", b.name, b.layer);
        let _ = writeln!(s, "fps: {}  ({:.2})", self.fps.floor() as u64, self.fps);
        let _ = writeln!(s, "gops: {:.1}", self.gops);
        let _ = writeln!(
            s,
            "luts (xnor arrays, overhead {:.3}): {}",
            self.lut_overhead, self.lut_lower_bound
        );
        let _ = writeln!(s, "dsps (accumulators): {}", self.dsp_estimate);
        s
    }
}

/// Planner search options.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PlanOptions {
    /// Allow any divisor of `FW * FH * FD` as UF instead of only unrolling
    /// whole filter rows with width and depth fully unfolded.
    pub full_space: bool,
}

/// One (UF, P) choice for a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub uf: u64,
    pub p: u64,
    pub cycles: u64,
}

impl Candidate {
    pub fn lanes(&self) -> u64 {
        self.uf * self.p
    }
}

fn divisors(n: u64) -> Vec<u64> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            lo.push(d);
            if d * d != n {
                hi.push(n / d);
            }
        }
        d += 1;
    }
    lo.extend(hi.into_iter().rev());
    lo
}

/// All (UF, P) candidates of a layer at `I = 1`.
pub fn candidates(layer: &LayerSpec, pre_pool_out: Dims, opts: PlanOptions) -> Vec<Candidate> {
    let cc = cycle_conv(layer, pre_pool_out);
    let ufs: Vec<u64> = if opts.full_space {
        divisors(layer.cnum() as u64)
    } else {
        let row = (layer.filter_w * layer.filter_d) as u64;
        divisors(layer.filter_h as u64)
            .into_iter()
            .map(|h| row * h)
            .collect()
    };
    let n = layer.n_filters as u64;
    let ps: Vec<u64> = (0..64)
        .map(|k| 1u64 << k)
        .take_while(|&p| p <= n)
        .filter(|p| n.is_multiple_of(*p))
        .collect();
    let mut out = Vec::with_capacity(ufs.len() * ps.len());
    for &uf in &ufs {
        for &p in &ps {
            if let Ok(cycles) = cycle_est(cc, uf, p, 1) {
                out.push(Candidate { uf, p, cycles });
            }
        }
    }
    out
}

/// Planner output.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub arch: ArchParams,
    pub max_cycles: u64,
    pub total_lanes: u64,
    pub report: CycleReport,
}

/// Cheapest candidate finishing within `limit` cycles.
fn cheapest_within(cands: &[Candidate], limit: u64) -> Option<Candidate> {
    cands
        .iter()
        .filter(|c| c.cycles <= limit)
        .min_by_key(|c| (c.lanes(), c.cycles, c.uf, c.p))
        .copied()
}

/// Balances the conv layers: minimizes the slowest layer's cycle count under
/// the LUT budget, then the total lane count among those optima.
pub fn plan(
    net: &NetworkSpec,
    budget: &ResourceBudget,
    freq: f64,
    opts: PlanOptions,
) -> Result<Plan> {
    budget.validate()?;
    let shapes = net.shapes()?;
    let mapped: Vec<usize> = (0..net.layers.len())
        .filter(|&i| net.layers[i].kind.is_conv())
        .collect();
    let cands: Vec<Vec<Candidate>> = mapped
        .iter()
        .map(|&i| candidates(&net.layers[i], shapes[i].pre_pool, opts))
        .collect();
    if let Some(k) = cands.iter().position(Vec::is_empty) {
        return Err(Error::Infeasible(format!(
            "no candidates for layer {}",
            mapped[k]
        )));
    }
    let mut limits: Vec<u64> = cands.iter().flatten().map(|c| c.cycles).collect();
    limits.sort_unstable();
    limits.dedup();

    // The cheapest assignment under a cycle limit only gets cheaper as the
    // limit grows, so the first feasible limit is optimal.
    let mut chosen = None;
    for &limit in &limits {
        let picks: Option<Vec<Candidate>> =
            cands.iter().map(|c| cheapest_within(c, limit)).collect();
        let Some(picks) = picks else { continue };
        let lanes: u64 = picks.iter().map(Candidate::lanes).sum();
        if lanes_to_luts(lanes, budget) <= budget.luts {
            chosen = Some(picks);
            break;
        }
    }
    let picks = chosen.ok_or_else(|| {
        let min_lanes: u64 = cands
            .iter()
            .map(|c| c.iter().map(Candidate::lanes).min().unwrap_or(0))
            .sum();
        Error::Infeasible(format!(
            "smallest assignment needs {} LUTs, budget is {}",
            lanes_to_luts(min_lanes, budget),
            budget.luts
        ))
    })?;
    let arch = ArchParams {
        layers: mapped
            .iter()
            .zip(&picks)
            .map(|(&i, c)| LayerArch {
                layer: i,
                name: net.layers[i].name.clone(),
                uf: c.uf,
                p: c.p,
                ii: 1,
            })
            .collect(),
    };
    let report = CycleReport::build(net, &arch, freq, None, budget)?;
    Ok(Plan {
        max_cycles: picks.iter().map(|c| c.cycles).max().unwrap_or(0),
        total_lanes: arch.total_lanes(),
        arch,
        report,
    })
}

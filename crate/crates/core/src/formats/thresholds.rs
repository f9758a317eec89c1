//! Folded threshold table.
//!
//! One block per thresholded layer (every layer but the output layer), in
//! network order: `u32 channel_count`, then per channel `i32 c` and
//! `u8 direction` (0 = GE, 1 = LE, 2 = CONST_ONE, 3 = CONST_ZERO).
//! Little-endian, no header.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fold::{fold_binary_layer, fold_first_layer, Direction, FoldedThreshold};
use crate::formats::model::ModelFile;
use crate::network::{LayerKind, NetworkSpec};

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ThresholdFile {
    pub layers: Vec<Vec<FoldedThreshold>>,
}

impl ThresholdFile {
    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        for layer in &self.layers {
            let n = u32::try_from(layer.len())
                .map_err(|_| Error::Format("channel count overflow".into()))?;
            out.write_all(&n.to_le_bytes())?;
            for t in layer {
                out.write_all(&t.c.to_le_bytes())?;
                out.write_all(&[t.direction.code()])?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut layers = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let li = layers.len();
            let head = bytes.get(pos..pos + 4).ok_or_else(|| {
                Error::Format(format!("truncated channel count for threshold block {li}"))
            })?;
            let n = u32::from_le_bytes(head.try_into().unwrap()) as usize;
            pos += 4;
            let body = bytes.get(pos..pos + 5 * n).ok_or_else(|| {
                Error::Format(format!(
                    "threshold block {li}: expected {n} entries, file truncated"
                ))
            })?;
            let layer = body
                .chunks_exact(5)
                .map(|e| {
                    Ok(FoldedThreshold {
                        c: i32::from_le_bytes([e[0], e[1], e[2], e[3]]),
                        direction: Direction::from_code(e[4])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            pos += 5 * n;
            layers.push(layer);
        }
        Ok(Self { layers })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Checks block count and channel counts against `net`.
    pub fn check(&self, net: &NetworkSpec) -> Result<()> {
        for (i, l) in net
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_threshold())
        {
            let t = self
                .layers
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
        let expected = net.layers.iter().filter(|l| l.has_threshold()).count();
        if self.layers.len() != expected {
            return Err(Error::InvalidNetwork(format!(
                "threshold file has {} blocks, model has {expected} thresholded layers",
                self.layers.len()
            )));
        }
        Ok(())
    }
}

/// Folds every thresholded layer's batch-norm parameters.
pub fn fold_model(model: &ModelFile) -> Result<ThresholdFile> {
    let net = &model.spec;
    let mut layers = Vec::new();
    for (i, l) in net
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.has_threshold())
    {
        let bn = model.bn_for(i)?;
        let wrap = |e: Error| Error::layer(i, &l.name, e.to_string());
        let table = bn
            .iter()
            .map(|p| match l.kind {
                LayerKind::ConvFirst => fold_first_layer(p),
                _ => fold_binary_layer(p, l.cnum() as u32),
            })
            .collect::<Result<Vec<_>>>()
            .map_err(wrap)?;
        layers.push(table);
    }
    if layers.is_empty() {
        return Err(Error::InvalidNetwork(
            "model has no thresholded layers".into(),
        ));
    }
    Ok(ThresholdFile { layers })
}

//! Binary weight file.
//!
//! ```text
//! "BNNW"  u16 version  u16 layer_count
//! per layer:
//!   u8 kind  u32 FW  u32 FH  u32 FD  u32 N
//!   conv_first: N*FH*FW*FD i8 weights in {-1, +1}, filter-major, (h, w, d) order
//!   otherwise:  N filters of FH*FW*ceil(FD/32) u32 words, depth-packed LSB first
//! ```
//!
//! All integers are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::bitcore::{words_for, BitTensor};
use crate::error::{Error, Result};
use crate::layers::{FixedFilters, LayerWeights};
use crate::network::{LayerKind, NetworkSpec};

pub const WEIGHT_MAGIC: &[u8; 4] = b"BNNW";
pub const WEIGHT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightLayer {
    pub kind: LayerKind,
    pub weights: LayerWeights,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct WeightFile {
    pub layers: Vec<WeightLayer>,
}

fn dims(w: &LayerWeights) -> [usize; 4] {
    match w {
        LayerWeights::Fixed(f) => [f.fw, f.fh, f.fd, f.n],
        LayerWeights::Binary(fs) => fs.first().map_or([0, 0, 0, 0], |f| {
            [f.width(), f.height(), f.depth(), fs.len()]
        }),
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("truncated file while reading {what}"))
        }
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

impl WeightFile {
    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        let count = u16::try_from(self.layers.len())
            .map_err(|_| Error::Format("too many layers".into()))?;
        out.write_all(WEIGHT_MAGIC)?;
        out.write_all(&WEIGHT_VERSION.to_le_bytes())?;
        out.write_all(&count.to_le_bytes())?;
        for (i, l) in self.layers.iter().enumerate() {
            out.write_all(&[l.kind.code()])?;
            for d in dims(&l.weights) {
                out.write_all(&u32_of(d, "dimension")?.to_le_bytes())?;
            }
            match (&l.weights, l.kind) {
                (LayerWeights::Fixed(f), LayerKind::ConvFirst) => {
                    let bytes: Vec<u8> = f.values().iter().map(|&v| v as u8).collect();
                    out.write_all(&bytes)?;
                }
                (LayerWeights::Binary(fs), k) if k != LayerKind::ConvFirst => {
                    for f in fs {
                        for w in f.words() {
                            out.write_all(&w.to_le_bytes())?;
                        }
                    }
                }
                _ => {
                    return Err(Error::Format(format!(
                        "layer {i}: weight type does not match kind"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let mut head = [0u8; 8];
        read_exact(input, &mut head, "header")?;
        if &head[..4] != WEIGHT_MAGIC {
            return Err(Error::Format("bad magic, not a BNNW weight file".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != WEIGHT_VERSION {
            return Err(Error::Format(format!(
                "unsupported weight file version {version}"
            )));
        }
        let count = u16::from_le_bytes([head[6], head[7]]) as usize;
        let mut layers = Vec::with_capacity(count);
        for i in 0..count {
            let mut k = [0u8; 1];
            read_exact(input, &mut k, &format!("layer {i} kind"))?;
            let kind = LayerKind::from_code(k[0])?;
            let mut d = [0usize; 4];
            for v in &mut d {
                *v = read_u32(input, &format!("layer {i} dims"))? as usize;
            }
            let [fw, fh, fd, n] = d;
            let weights = if kind == LayerKind::ConvFirst {
                let mut buf = vec![0u8; n * fh * fw * fd];
                read_exact(input, &mut buf, &format!("layer {i} payload"))?;
                let vals = buf.into_iter().map(|b| b as i8).collect();
                LayerWeights::Fixed(
                    FixedFilters::new(fw, fh, fd, n, vals)
                        .map_err(|e| Error::Format(format!("layer {i}: {e}")))?,
                )
            } else {
                let per = fh * fw * words_for(fd);
                let mut filters = Vec::with_capacity(n);
                let mut buf = vec![0u8; per * 4];
                for _ in 0..n {
                    read_exact(input, &mut buf, &format!("layer {i} payload"))?;
                    let words = buf
                        .chunks_exact(4)
                        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                    filters.push(
                        BitTensor::from_words(fw, fh, fd, words)
                            .map_err(|e| Error::Format(format!("layer {i}: {e}")))?,
                    );
                }
                LayerWeights::Binary(filters)
            };
            layers.push(WeightLayer { kind, weights });
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last layer".into()));
        }
        Ok(Self { layers })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(&mut f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Checks layer count, kinds and shapes against `net`; errors name the layer.
    pub fn check(&self, net: &NetworkSpec) -> Result<()> {
        for (i, l) in net.layers.iter().enumerate() {
            let w = self
                .layers
                .get(i)
                .ok_or_else(|| Error::layer(i, &l.name, "missing from weight file"))?;
            if w.kind != l.kind {
                return Err(Error::layer(
                    i,
                    &l.name,
                    format!("weight file has kind {:?}, model has {:?}", w.kind, l.kind),
                ));
            }
            w.weights
                .check(l)
                .map_err(|r| Error::layer(i, &l.name, r))?;
        }
        if self.layers.len() > net.layers.len() {
            return Err(Error::InvalidNetwork(format!(
                "weight file has {} layers, model has {}",
                self.layers.len(),
                net.layers.len()
            )));
        }
        Ok(())
    }

    pub fn into_weights(self) -> Vec<LayerWeights> {
        self.layers.into_iter().map(|l| l.weights).collect()
    }
}

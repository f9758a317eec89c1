//! Image ingestion and prediction CSV output.
//!
//! CIFAR-10 binary records are 1 label byte followed by 3072 pixel bytes,
//! channel-major (1024 red, 1024 green, 1024 blue, each row-major 32x32).
//! Raw input is the same without the label byte. Pixels are rescaled from
//! `[0, 255]` to the 6-bit signed range `[-31, 31]`.

use std::io::Write;
use std::path::Path;

use crate::bitcore::{FixedTensor, FIXED_MAX};
use crate::error::{Error, Result};
use crate::fold::round_half_away;
use crate::layers::Prediction;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS;
pub const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;

/// Maps a pixel byte symmetrically around 127.5 onto `[-31, 31]`.
pub fn rescale_pixel(v: u8) -> i8 {
    round_half_away((v as f64 - 127.5) / 127.5 * FIXED_MAX as f64) as i8
}

/// Converts one channel-major 32x32x3 pixel block into a fixed-point tensor.
pub fn pixels_to_tensor(pixels: &[u8]) -> Result<FixedTensor> {
    if pixels.len() != CIFAR_PIXELS {
        return Err(Error::LengthMismatch {
            expected: CIFAR_PIXELS,
            actual: pixels.len(),
        });
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut values = Vec::with_capacity(CIFAR_PIXELS);
    for p in 0..plane {
        for c in 0..CIFAR_CHANNELS {
            values.push(rescale_pixel(pixels[c * plane + p]));
        }
    }
    FixedTensor::new(CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS, values)
}

/// An input image with its label, when known.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub label: Option<u8>,
    pub image: FixedTensor,
}

/// Parses CIFAR-10 binary records; `count = None` takes all of them.
pub fn parse_cifar10(bytes: &[u8], count: Option<usize>) -> Result<Vec<LabeledImage>> {
    parse_records(bytes, count, true)
}

/// Parses unlabeled channel-major 3072-byte images.
pub fn parse_raw(bytes: &[u8], count: Option<usize>) -> Result<Vec<LabeledImage>> {
    parse_records(bytes, count, false)
}

fn parse_records(bytes: &[u8], count: Option<usize>, labeled: bool) -> Result<Vec<LabeledImage>> {
    let rec = if labeled { CIFAR_RECORD } else { CIFAR_PIXELS };
    if !bytes.len().is_multiple_of(rec) {
        return Err(Error::Format(format!(
            "truncated image file: {} bytes is not a multiple of the {rec}-byte record",
            bytes.len()
        )));
    }
    let available = bytes.len() / rec;
    let n = count.unwrap_or(available);
    if n > available {
        return Err(Error::Format(format!(
            "requested {n} images, file holds {available}"
        )));
    }
    bytes
        .chunks_exact(rec)
        .take(n)
        .map(|r| {
            let (label, px) = if labeled {
                (Some(r[0]), &r[1..])
            } else {
                (None, r)
            };
            Ok(LabeledImage {
                label,
                image: pixels_to_tensor(px)?,
            })
        })
        .collect()
}

pub fn ingest_cifar10(path: &Path, count: Option<usize>) -> Result<Vec<LabeledImage>> {
    parse_cifar10(&std::fs::read(path)?, count)
}

/// Writes `index,label,prediction,score_0,...` rows in input order.
pub fn write_predictions_csv<W: Write>(
    out: &mut W,
    labels: &[Option<u8>],
    preds: &[Prediction],
) -> Result<()> {
    let classes = preds.first().map_or(0, |p| p.scores.len());
    write!(out, "index,label,prediction")?;
    for c in 0..classes {
        write!(out, ",score_{c}")?;
    }
    writeln!(out)?;
    for (i, p) in preds.iter().enumerate() {
        let label = labels
            .get(i)
            .copied()
            .flatten()
            .map_or(String::new(), |l| l.to_string());
        write!(out, "{i},{label},{}", p.class)?;
        for s in &p.scores {
            write!(out, ",{s}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

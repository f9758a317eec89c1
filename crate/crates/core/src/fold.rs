//! Folding batch normalization and binarization into integer thresholds.
//!
//! A binary layer produces a match count `y` in `[0, cnum]`. Normalizing the
//! compensated value `2y - cnum` and taking its sign is a single comparison
//! of `y` against a per-channel constant, so inference only stores that
//! constant and a direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel batch-normalization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub mu: f64,
    pub sigma2: f64,
    pub gamma: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl BatchNormParams {
    pub fn new(mu: f64, sigma2: f64, gamma: f64, beta: f64, epsilon: f64) -> Result<Self> {
        let p = Self {
            mu,
            sigma2,
            gamma,
            beta,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unit scale, zero shift.
    pub fn identity() -> Self {
        Self {
            mu: 0.0,
            sigma2: 1.0,
            gamma: 1.0,
            beta: 0.0,
            epsilon: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.mu, self.sigma2, self.gamma, self.beta, self.epsilon];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBatchNorm("non-finite parameter".into()));
        }
        if self.sigma2 < 0.0 {
            return Err(Error::InvalidBatchNorm(format!(
                "sigma2 = {} < 0",
                self.sigma2
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidBatchNorm(format!(
                "epsilon = {} <= 0",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// `sqrt(sigma2 + epsilon)`.
    pub fn std(&self) -> f64 {
        (self.sigma2 + self.epsilon).sqrt()
    }

    /// Value of the normalized input where the output crosses zero.
    fn zero_crossing(&self) -> f64 {
        self.mu - self.beta * self.std() / self.gamma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Bit is set when `y >= c`.
    Ge,
    /// Bit is set when `y <= c` (negative gamma).
    Le,
    ConstOne,
    ConstZero,
}

impl Direction {
    pub fn code(self) -> u8 {
        match self {
            Direction::Ge => 0,
            Direction::Le => 1,
            Direction::ConstOne => 2,
            Direction::ConstZero => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Direction::Ge,
            1 => Direction::Le,
            2 => Direction::ConstOne,
            3 => Direction::ConstZero,
            other => {
                return Err(Error::Format(format!(
                    "unknown threshold direction code {other}"
                )))
            }
        })
    }
}

/// Integer comparison constant replacing batch norm + sign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FoldedThreshold {
    pub c: i32,
    pub direction: Direction,
}

impl FoldedThreshold {
    pub fn ge(c: i32) -> Self {
        Self {
            c,
            direction: Direction::Ge,
        }
    }

    /// NormBinarize for a single accumulator value.
    #[inline]
    pub fn apply(&self, y: i32) -> bool {
        match self.direction {
            Direction::Ge => y >= self.c,
            Direction::Le => y <= self.c,
            Direction::ConstOne => true,
            Direction::ConstZero => false,
        }
    }
}

/// Nearest integer, ties away from zero.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

fn to_threshold(p: &BatchNormParams, exact: f64) -> Result<FoldedThreshold> {
    if p.gamma == 0.0 {
        return Ok(FoldedThreshold {
            c: 0,
            direction: if p.beta >= 0.0 {
                Direction::ConstOne
            } else {
                Direction::ConstZero
            },
        });
    }
    let rounded = round_half_away(exact);
    if !(i32::MIN as f64..=i32::MAX as f64).contains(&rounded) {
        return Err(Error::InvalidBatchNorm(format!(
            "threshold {exact} out of i32 range"
        )));
    }
    Ok(FoldedThreshold {
        c: rounded as i32,
        direction: if p.gamma > 0.0 {
            Direction::Ge
        } else {
            Direction::Le
        },
    })
}

/// Real-valued threshold on the match count of a binary layer, before rounding.
pub fn binary_layer_threshold_exact(p: &BatchNormParams, cnum: u32) -> f64 {
    (cnum as f64 + p.zero_crossing()) * 0.5
}

/// Threshold for a layer whose accumulator is a match count over `cnum` taps.
pub fn fold_binary_layer(p: &BatchNormParams, cnum: u32) -> Result<FoldedThreshold> {
    p.validate()?;
    if cnum == 0 {
        return Err(Error::InvalidBatchNorm("cnum must be positive".into()));
    }
    to_threshold(p, binary_layer_threshold_exact(p, cnum))
}

/// Threshold for the first layer, whose accumulator is already a true dot product.
pub fn fold_first_layer(p: &BatchNormParams) -> Result<FoldedThreshold> {
    p.validate()?;
    to_threshold(p, p.zero_crossing())
}

/// Normalized (not binarized) output-layer score for match count `y`.
pub fn final_layer_affine(y: u32, cnum: u32, p: &BatchNormParams) -> Result<f64> {
    p.validate()?;
    if y > cnum {
        return Err(Error::CountOutOfRange {
            y: y as i64,
            cnum: cnum as u64,
        });
    }
    let compensated = (2 * y as i64 - cnum as i64) as f64;
    Ok((compensated - p.mu) / (p.sigma2 + p.epsilon).sqrt() * p.gamma + p.beta)
}

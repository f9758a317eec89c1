//! Bit-packed tensors and the two dot-product primitives.
//!
//! Binary values are encoded as `+1 -> 1`, `-1 -> 0`. Tensors are packed
//! along the depth axis into 32-bit words, least-significant bit first, with
//! one run of `ceil(depth / 32)` words per `(h, w)` column in row-major order.
//! Padding bits past the logical length of each column are always zero.

use crate::error::{Error, Result};

/// Bits per packed word.
pub const WORD_BITS: usize = 32;

/// Inclusive bound on first-layer fixed-point magnitudes.
pub const FIXED_MAX: i8 = 31;

/// Number of words needed to hold `bits` bits.
#[inline]
pub const fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

/// Mask selecting the valid bits of the final word of an `n`-bit vector.
#[inline]
pub const fn tail_mask(n: usize) -> u32 {
    match n % WORD_BITS {
        0 => u32::MAX,
        r => (1u32 << r) - 1,
    }
}

fn pm1_bit(index: usize, v: i8) -> Result<bool> {
    match v {
        1 => Ok(true),
        -1 => Ok(false),
        other => Err(Error::NotBinary {
            index,
            value: other as i32,
        }),
    }
}

fn check_padding(len: usize, words: &[u32]) -> Result<()> {
    let needed = words_for(len);
    if words.len() != needed {
        return Err(Error::LengthMismatch {
            expected: needed,
            actual: words.len(),
        });
    }
    if let Some(&last) = words.last() {
        if last & !tail_mask(len) != 0 {
            return Err(Error::Format(format!(
                "nonzero padding bits in final word of {len}-bit vector"
            )));
        }
    }
    Ok(())
}

/// Owned packed bit vector of logical length `len`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitVec {
    len: usize,
    words: Vec<u32>,
}

impl BitVec {
    /// All-zero (all `-1`) vector.
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn from_pm1(values: &[i8]) -> Result<Self> {
        let mut out = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            if pm1_bit(i, v)? {
                out.words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
        Ok(out)
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut out = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                out.words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
        out
    }

    /// Wraps packed words, rejecting wrong word counts and nonzero padding.
    pub fn from_words(len: usize, words: Vec<u32>) -> Result<Self> {
        check_padding(len, &words)?;
        Ok(Self { len, words })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let m = 1u32 << (i % WORD_BITS);
        if bit {
            self.words[i / WORD_BITS] |= m;
        } else {
            self.words[i / WORD_BITS] &= !m;
        }
    }

    pub fn to_pm1(&self) -> Vec<i8> {
        (0..self.len)
            .map(|i| if self.get(i) { 1 } else { -1 })
            .collect()
    }

    /// Bitwise complement, padding kept at zero.
    pub fn not(&self) -> Self {
        let mut words: Vec<u32> = self.words.iter().map(|w| !w).collect();
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(self.len);
        }
        Self {
            len: self.len,
            words,
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn as_slice(&self) -> BitSlice<'_> {
        BitSlice {
            len: self.len,
            words: &self.words,
        }
    }
}

/// Borrowed view of `len` valid bits over packed words.
///
/// The backing slice may be longer than `words_for(len)`; trailing words are
/// ignored.
#[derive(Clone, Copy, Debug)]
pub struct BitSlice<'a> {
    len: usize,
    words: &'a [u32],
}

impl<'a> BitSlice<'a> {
    pub fn new(len: usize, words: &'a [u32]) -> Result<Self> {
        if words.len() < words_for(len) {
            return Err(Error::LengthMismatch {
                expected: words_for(len),
                actual: words.len(),
            });
        }
        Ok(Self { len, words })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &'a [u32] {
        &self.words[..words_for(self.len)]
    }
}

/// Matching-position count over the first `len` bits of two word runs.
///
/// The final word is masked, so garbage past `len` never contributes.
#[inline]
pub(crate) fn xnor_popcount(a: &[u32], w: &[u32], len: usize) -> u32 {
    let n = words_for(len);
    if n == 0 {
        return 0;
    }
    let (a_body, a_last) = (&a[..n - 1], a[n - 1]);
    let (w_body, w_last) = (&w[..n - 1], w[n - 1]);
    let body: u32 = a_body
        .iter()
        .zip(w_body)
        .map(|(x, y)| (!(x ^ y)).count_ones())
        .sum();
    body + (!(a_last ^ w_last) & tail_mask(len)).count_ones()
}

/// Number of differing bits between two equal-length word runs.
///
/// Callers rely on padding bits being zero in both runs, so they never count.
/// Inlined into callers so a `popcnt`-enabled caller gets the instruction.
#[inline(always)]
pub(crate) fn xor_popcount(a: &[u32], w: &[u32]) -> u32 {
    debug_assert_eq!(a.len(), w.len());
    let mut total = 0u32;
    let mut ac = a.chunks_exact(2);
    let mut wc = w.chunks_exact(2);
    for (x, y) in (&mut ac).zip(&mut wc) {
        let x = x[0] as u64 | (x[1] as u64) << 32;
        let y = y[0] as u64 | (y[1] as u64) << 32;
        total += (x ^ y).count_ones();
    }
    for (x, y) in ac.remainder().iter().zip(wc.remainder()) {
        total += (x ^ y).count_ones();
    }
    total
}

/// True when the CPU has a hardware population count.
pub(crate) fn has_popcnt() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("popcnt")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// XNOR dot product: number of positions where `a` and `w` agree.
pub fn xnor_dot(a: BitSlice<'_>, w: BitSlice<'_>) -> Result<u32> {
    if a.len != w.len {
        return Err(Error::LengthMismatch {
            expected: a.len,
            actual: w.len,
        });
    }
    Ok(xnor_popcount(a.words, w.words, a.len))
}

/// Maps a match count back to the `+1/-1` dot product: `2y - cnum`.
pub fn compensate(y: u32, cnum: u32) -> Result<i64> {
    if y > cnum {
        return Err(Error::CountOutOfRange {
            y: y as i64,
            cnum: cnum as u64,
        });
    }
    Ok(2 * y as i64 - cnum as i64)
}

/// Exact first-layer dot product of fixed-point inputs and `+1/-1` weights.
pub fn fixed_dot(a: &[i8], w: &[i8]) -> Result<i32> {
    if a.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: w.len(),
        });
    }
    let mut acc = 0i32;
    for (i, (&x, &wt)) in a.iter().zip(w).enumerate() {
        if !(-FIXED_MAX..=FIXED_MAX).contains(&x) {
            return Err(Error::FixedOutOfRange {
                index: i,
                value: x as i32,
            });
        }
        acc += if pm1_bit(i, wt)? {
            x as i32
        } else {
            -(x as i32)
        };
    }
    Ok(acc)
}

/// 3D binary tensor packed along depth.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitTensor {
    width: usize,
    height: usize,
    depth: usize,
    words: Vec<u32>,
}

impl BitTensor {
    /// All bits zero, i.e. every element `-1`.
    pub fn zeros(width: usize, height: usize, depth: usize) -> Self {
        Self {
            width,
            height,
            depth,
            words: vec![0; width * height * words_for(depth)],
        }
    }

    /// Packs `+1/-1` values given in `(h, w, d)` order with depth innermost.
    pub fn pack(values: &[i8], width: usize, height: usize, depth: usize) -> Result<Self> {
        let n = width * height * depth;
        if values.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        let mut t = Self::zeros(width, height, depth);
        let wpc = t.words_per_column();
        for (col, chunk) in values.chunks(depth.max(1)).enumerate().take(width * height) {
            for (d, &v) in chunk.iter().enumerate() {
                if pm1_bit(col * depth + d, v)? {
                    t.words[col * wpc + d / WORD_BITS] |= 1 << (d % WORD_BITS);
                }
            }
        }
        Ok(t)
    }

    pub fn from_words(width: usize, height: usize, depth: usize, words: Vec<u32>) -> Result<Self> {
        let wpc = words_for(depth);
        let expected = width * height * wpc;
        if words.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: words.len(),
            });
        }
        if wpc > 0 {
            for col in words.chunks(wpc) {
                check_padding(depth, col)?;
            }
        }
        Ok(Self {
            width,
            height,
            depth,
            words,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn words_per_column(&self) -> usize {
        words_for(self.depth)
    }

    /// Logical element count.
    pub fn len(&self) -> usize {
        self.width * self.height * self.depth
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn column_range(&self, x: usize, y: usize) -> std::ops::Range<usize> {
        assert!(
            x < self.width && y < self.height,
            "pixel ({x}, {y}) out of range"
        );
        let wpc = self.words_per_column();
        let start = (y * self.width + x) * wpc;
        start..start + wpc
    }

    /// Packed depth column at pixel `(x, y)`.
    pub fn column(&self, x: usize, y: usize) -> BitSlice<'_> {
        BitSlice {
            len: self.depth,
            words: &self.words[self.column_range(x, y)],
        }
    }

    pub fn get(&self, x: usize, y: usize, d: usize) -> bool {
        assert!(d < self.depth);
        let r = self.column_range(x, y);
        (self.words[r.start + d / WORD_BITS] >> (d % WORD_BITS)) & 1 == 1
    }

    pub fn set(&mut self, x: usize, y: usize, d: usize, bit: bool) {
        assert!(d < self.depth);
        let r = self.column_range(x, y);
        let m = 1u32 << (d % WORD_BITS);
        if bit {
            self.words[r.start + d / WORD_BITS] |= m;
        } else {
            self.words[r.start + d / WORD_BITS] &= !m;
        }
    }

    /// Values in `(h, w, d)` order as `+1/-1`.
    pub fn unpack(&self) -> Vec<i8> {
        let mut out = Vec::with_capacity(self.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for d in 0..self.depth {
                    out.push(if self.get(x, y, d) { 1 } else { -1 });
                }
            }
        }
        out
    }

    pub fn not(&self) -> Self {
        let mask = tail_mask(self.depth);
        let wpc = self.words_per_column();
        let words = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| if (i + 1) % wpc == 0 { !w & mask } else { !w })
            .collect();
        Self {
            words,
            ..self.clone()
        }
    }

    /// Flattens to a single bit vector in `(h, w, d)` order.
    pub fn flatten(&self) -> BitVec {
        if self.depth.is_multiple_of(WORD_BITS) {
            return BitVec {
                len: self.len(),
                words: self.words.clone(),
            };
        }
        let mut out = BitVec::zeros(self.len());
        let mut i = 0;
        for y in 0..self.height {
            for x in 0..self.width {
                for d in 0..self.depth {
                    if self.get(x, y, d) {
                        out.words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
                    }
                    i += 1;
                }
            }
        }
        out
    }

    /// Views a flat vector as a `1 x 1 x len` tensor.
    pub fn from_bitvec(v: BitVec) -> Self {
        Self {
            width: 1,
            height: 1,
            depth: v.len,
            words: v.words,
        }
    }
}

/// 3D tensor of 6-bit signed inputs, `(h, w, d)` order with depth innermost.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FixedTensor {
    width: usize,
    height: usize,
    depth: usize,
    values: Vec<i8>,
}

impl FixedTensor {
    pub fn new(width: usize, height: usize, depth: usize, values: Vec<i8>) -> Result<Self> {
        let n = width * height * depth;
        if values.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        if let Some((index, &v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(-FIXED_MAX..=FIXED_MAX).contains(*v))
        {
            return Err(Error::FixedOutOfRange {
                index,
                value: v as i32,
            });
        }
        Ok(Self {
            width,
            height,
            depth,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize, d: usize) -> i8 {
        self.values[(y * self.width + x) * self.depth + d]
    }

    /// Depth column at pixel `(x, y)`.
    pub fn column(&self, x: usize, y: usize) -> &[i8] {
        let start = (y * self.width + x) * self.depth;
        &self.values[start..start + self.depth]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bit_loop(a: &[i8], w: &[i8]) -> u32 {
        a.iter().zip(w).filter(|(x, y)| x == y).count() as u32
    }

    #[test]
    fn pack_lsb_first() {
        let t = BitTensor::pack(&[1, -1, 1, 1], 1, 1, 4).unwrap();
        assert_eq!(t.words(), &[0b1101]);
    }

    #[test]
    fn pack_27_ones_leaves_padding_clear() {
        let t = BitTensor::pack(&[1; 27], 1, 1, 27).unwrap();
        assert_eq!(t.words(), &[(1u32 << 27) - 1]);
    }

    #[test]
    fn pack_errors() {
        assert!(matches!(
            BitTensor::pack(&[1, 1, 1], 2, 1, 2),
            Err(Error::LengthMismatch {
                expected: 4,
                actual: 3
            })
        ));
        assert!(matches!(
            BitTensor::pack(&[1, 0], 1, 1, 2),
            Err(Error::NotBinary { index: 1, value: 0 })
        ));
    }

    #[test]
    fn from_words_rejects_dirty_padding() {
        assert!(BitTensor::from_words(1, 1, 4, vec![0b1_0000]).is_err());
        assert!(BitTensor::from_words(1, 1, 4, vec![0b1111]).is_ok());
        assert!(BitVec::from_words(33, vec![0, 2]).is_err());
    }

    #[test]
    fn xnor_hand_cases() {
        let a = BitVec::from_words(4, vec![0b1011]).unwrap();
        let w = BitVec::from_words(4, vec![0b1001]).unwrap();
        assert_eq!(xnor_dot(a.as_slice(), w.as_slice()).unwrap(), 3);

        let v = BitVec::from_pm1(&[
            1, -1, 1, -1, -1, 1, 1, 1, -1, 1, 1, -1, 1, 1, 1, 1, -1, 1, -1, -1, 1, 1, -1, 1, 1, -1,
            1,
        ])
        .unwrap();
        assert_eq!(v.len(), 27);
        assert_eq!(xnor_dot(v.as_slice(), v.as_slice()).unwrap(), 27);
        assert_eq!(xnor_dot(v.as_slice(), v.not().as_slice()).unwrap(), 0);
    }

    #[test]
    fn xnor_length_mismatch() {
        let a = BitVec::zeros(5);
        let b = BitVec::zeros(6);
        assert!(xnor_dot(a.as_slice(), b.as_slice()).is_err());
    }

    #[test]
    fn xnor_masks_garbage_past_len() {
        // Slices built from raw words: bits past len are ignored even if set.
        let a = [0xFFFF_FFFFu32];
        let w = [0x0000_000Fu32];
        let sa = BitSlice::new(4, &a).unwrap();
        let sw = BitSlice::new(4, &w).unwrap();
        assert_eq!(xnor_dot(sa, sw).unwrap(), 4);
    }

    #[test]
    fn xnor_random_matches_bit_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a: Vec<i8> = (0..1152).map(|_| if rng.gen() { 1 } else { -1 }).collect();
        let w: Vec<i8> = (0..1152).map(|_| if rng.gen() { 1 } else { -1 }).collect();
        let pa = BitVec::from_pm1(&a).unwrap();
        let pw = BitVec::from_pm1(&w).unwrap();
        assert_eq!(
            xnor_dot(pa.as_slice(), pw.as_slice()).unwrap(),
            bit_loop(&a, &w)
        );
    }

    #[test]
    fn compensate_cases() {
        assert_eq!(compensate(27, 27).unwrap(), 27);
        assert_eq!(compensate(0, 27).unwrap(), -27);
        assert!(compensate(28, 27).is_err());
    }

    #[test]
    fn fixed_dot_cases() {
        assert_eq!(fixed_dot(&[31, -31], &[1, -1]).unwrap(), 62);
        assert_eq!(fixed_dot(&[0; 27], &[1; 27]).unwrap(), 0);
        assert!(matches!(
            fixed_dot(&[1, 2], &[1, 0]),
            Err(Error::NotBinary { index: 1, .. })
        ));
        assert!(fixed_dot(&[1], &[1, 1]).is_err());
        assert!(fixed_dot(&[-32], &[1]).is_err());
    }

    #[test]
    fn fixed_dot_matches_float() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a: Vec<i8> = (0..27).map(|_| rng.gen_range(-31..=31)).collect();
        let w: Vec<i8> = (0..27).map(|_| if rng.gen() { 1 } else { -1 }).collect();
        let float: f64 = a.iter().zip(&w).map(|(&x, &y)| x as f64 * y as f64).sum();
        assert_eq!(fixed_dot(&a, &w).unwrap() as f64, float);
    }

    #[test]
    fn fixed_tensor_range() {
        assert!(FixedTensor::new(1, 1, 2, vec![31, -31]).is_ok());
        assert!(matches!(
            FixedTensor::new(1, 1, 2, vec![31, -32]),
            Err(Error::FixedOutOfRange {
                index: 1,
                value: -32
            })
        ));
    }

    #[test]
    fn flatten_repacks_odd_depth() {
        let vals: Vec<i8> = (0..2 * 2 * 5)
            .map(|i| if i % 3 == 0 { 1 } else { -1 })
            .collect();
        let t = BitTensor::pack(&vals, 2, 2, 5).unwrap();
        assert_eq!(t.flatten().to_pm1(), vals);
        let t32 = BitTensor::pack(&[1i8; 64], 1, 2, 32).unwrap();
        assert_eq!(t32.flatten().count_ones(), 64);
    }

    #[test]
    fn tensor_not_keeps_padding_zero() {
        let t = BitTensor::pack(&[1, -1, 1, -1, 1, -1], 2, 1, 3).unwrap();
        let n = t.not();
        assert_eq!(n.words(), &[0b010, 0b101]);
        assert_eq!(n.not(), t);
    }
}

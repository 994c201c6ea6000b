//! Packed ±1 hash codes and the Hamming / cosine arithmetic over them.
//!
//! A logical `+1` is stored as a set bit and `-1` as a cleared bit. Dimension
//! `r` lives in word `r / 64`, bit `r % 64`, which serializes (little-endian)
//! to byte `r / 8`, bit `r % 8`. Padding bits past the code length are kept
//! at zero so popcounts never need a tail mask.

use std::collections::HashMap;
use std::ops::Deref;

use crate::error::{BrcdError, Result};

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

#[inline]
fn tail_mask(bits: usize) -> u64 {
    match bits % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// A single binary code in `{-1, +1}^b`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitCode {
    words: Vec<u64>,
    len: usize,
}

impl BitCode {
    /// Build from a boolean pattern, `true` meaning `+1`.
    pub fn from_bools(bits: &[bool]) -> Result<Self> {
        if bits.is_empty() {
            return Err(BrcdError::invalid("code length must be at least 1"));
        }
        let mut words = vec![0u64; words_for(bits.len())];
        for (r, &b) in bits.iter().enumerate() {
            if b {
                words[r / 64] |= 1 << (r % 64);
            }
        }
        Ok(BitCode { words, len: bits.len() })
    }

    /// Build from explicit `±1` values. Any other value is rejected.
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        if let Some(v) = signs.iter().find(|&&v| v != 1 && v != -1) {
            return Err(BrcdError::invalid(format!("code entry {v} is not ±1")));
        }
        let bools: Vec<bool> = signs.iter().map(|&v| v == 1).collect();
        Self::from_bools(&bools)
    }

    /// Decode `ceil(len/8)` packed bytes. Padding bits must be zero.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if len == 0 {
            return Err(BrcdError::invalid("code length must be at least 1"));
        }
        if bytes.len() != len.div_ceil(8) {
            return Err(BrcdError::dim(len.div_ceil(8), bytes.len()));
        }
        let mut words = vec![0u64; words_for(len)];
        for (j, &byte) in bytes.iter().enumerate() {
            words[j / 8] |= (byte as u64) << (8 * (j % 8));
        }
        let last = words.len() - 1;
        if words[last] & !tail_mask(len) != 0 {
            return Err(BrcdError::invalid("non-zero padding bits in packed code"));
        }
        Ok(BitCode { words, len })
    }

    pub(crate) fn from_words(words: Vec<u64>, len: usize) -> Self {
        debug_assert_eq!(words.len(), words_for(len));
        debug_assert_eq!(words[words.len() - 1] & !tail_mask(len), 0);
        BitCode { words, len }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8);
        self.words
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(n)
            .collect()
    }

    /// Number of logical dimensions `b`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Logical value of dimension `r` as `±1`.
    pub fn get(&self, r: usize) -> i8 {
        assert!(r < self.len, "dimension {r} out of range for length {}", self.len);
        if self.words[r / 64] >> (r % 64) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.len).map(|r| self.get(r)).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len).map(|r| self.get(r) as f64).collect()
    }

    /// Every bit flipped.
    pub fn complement(&self) -> BitCode {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        let last = words.len() - 1;
        words[last] &= tail_mask(self.len);
        BitCode { words, len: self.len }
    }
}

#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Number of positions at which the two codes differ.
pub fn hamming(a: &BitCode, b: &BitCode) -> Result<u32> {
    if a.len != b.len {
        return Err(BrcdError::dim(a.len, b.len));
    }
    Ok(hamming_words(&a.words, &b.words))
}

/// Inner product of the two codes viewed as `±1` vectors.
pub fn dot_pm1(a: &BitCode, b: &BitCode) -> Result<i64> {
    let h = hamming(a, b)? as i64;
    Ok(a.len as i64 - 2 * h)
}

/// Sign binarization; zero maps to `+1`.
pub fn sign_quantize(values: &[f64]) -> Result<BitCode> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(BrcdError::invalid("non-finite entry in real code"));
    }
    let bools: Vec<bool> = values.iter().map(|&v| v >= 0.0).collect();
    BitCode::from_bools(&bools)
}

/// Cosine similarity. A zero vector on either side yields `0`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(BrcdError::dim(a.len(), b.len()));
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Relaxed (real-valued) student output prior to quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct RealCode(Vec<f64>);

impl RealCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(BrcdError::invalid("real code must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BrcdError::invalid("non-finite entry in real code"));
        }
        Ok(RealCode(values))
    }

    pub fn quantize(&self) -> BitCode {
        sign_quantize(&self.0).expect("RealCode entries are finite")
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for RealCode {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<&BitCode> for RealCode {
    fn from(code: &BitCode) -> Self {
        RealCode(code.to_f64())
    }
}

/// `N` codes of identical length, each tagged with a unique id.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeMatrix {
    bits: usize,
    stride: usize,
    data: Vec<u64>,
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl CodeMatrix {
    /// Rows get ids `0..N`.
    pub fn from_codes(codes: &[BitCode]) -> Result<Self> {
        let ids = (0..codes.len() as u64).collect();
        Self::with_ids(codes, ids)
    }

    pub fn with_ids(codes: &[BitCode], ids: Vec<u64>) -> Result<Self> {
        let first = codes
            .first()
            .ok_or_else(|| BrcdError::invalid("code matrix needs at least one row"))?;
        let bits = first.len();
        let stride = words_for(bits);
        let mut data = Vec::with_capacity(stride * codes.len());
        for c in codes {
            if c.len() != bits {
                return Err(BrcdError::dim(bits, c.len()));
            }
            data.extend_from_slice(c.words());
        }
        Self::from_parts(bits, data, ids)
    }

    pub(crate) fn from_parts(bits: usize, data: Vec<u64>, ids: Vec<u64>) -> Result<Self> {
        let stride = words_for(bits);
        if data.len() != stride * ids.len() {
            return Err(BrcdError::dim(stride * ids.len(), data.len()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(BrcdError::invalid(format!("duplicate id {id} in code matrix")));
            }
        }
        Ok(CodeMatrix { bits, stride, data, ids, index })
    }

    /// Quantize each real row with [`sign_quantize`]; ids `0..N`.
    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let codes = rows
            .iter()
            .map(|r| sign_quantize(r))
            .collect::<Result<Vec<_>>>()?;
        Self::from_codes(&codes)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Code length `b`.
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub(crate) fn row_words(&self, row: usize) -> &[u64] {
        &self.data[row * self.stride..(row + 1) * self.stride]
    }

    pub fn row(&self, row: usize) -> BitCode {
        BitCode::from_words(self.row_words(row).to_vec(), self.bits)
    }

    pub fn rows(&self) -> impl Iterator<Item = BitCode> + '_ {
        (0..self.len()).map(|i| self.row(i))
    }

    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|c| c.to_f64()).collect()
    }

    /// Rows at the given positions, ids preserved.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.stride);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.len() {
                return Err(BrcdError::invalid(format!("row {r} out of range")));
            }
            data.extend_from_slice(self.row_words(r));
            ids.push(self.ids[r]);
        }
        Self::from_parts(self.bits, data, ids)
    }

    /// Same rows, new ids.
    pub fn relabel(&self, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(BrcdError::dim(self.len(), ids.len()));
        }
        Self::from_parts(self.bits, self.data.clone(), ids)
    }
}

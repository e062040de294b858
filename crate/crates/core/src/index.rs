//! Subset masks over `n` variables and binary matrices acting on them.
//!
//! Arithmetic follows the boolean monoid used throughout the crate: addition
//! is logical OR, multiplication is AND, and subtraction `x - y` is only
//! defined when `y <= x` elementwise.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const WORD: usize = 64;

fn words_for(len: usize) -> usize {
    len.div_ceil(WORD)
}

/// An element of `Z_2^n`, stored as a packed bitset. Bit `i` is variable `i`.
///
/// Bits past `len` are always zero, so equality and hashing can work on the
/// raw words.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct IndexVector {
    len: usize,
    words: Vec<u64>,
}

impl IndexVector {
    pub const MAX_LEN: usize = 4096;

    pub fn zeros(len: usize) -> Self {
        assert!(len <= Self::MAX_LEN, "index vector length {len} exceeds {}", Self::MAX_LEN);
        Self { len, words: vec![0; words_for(len)] }
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self::zeros(len);
        v.words.iter_mut().for_each(|w| *w = u64::MAX);
        v.clear_tail();
        v
    }

    pub fn unit(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v.set(i, true);
        v
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v = Self::zeros(len);
        for i in indices {
            v.set(i, true);
        }
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_indices(bits.len(), bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i))
    }

    /// Builds a vector of length `len <= 64` from the integer encoding
    /// `sum_a bit_a * 2^a`.
    pub fn from_u64(len: usize, value: u64) -> Self {
        assert!(len <= WORD, "from_u64 needs len <= 64");
        let mut v = Self::zeros(len);
        if len > 0 {
            v.words[0] = value;
            v.clear_tail();
        }
        v
    }

    /// Integer encoding `sum_a bit_a * 2^a`; `None` if the vector is longer
    /// than 64 bits.
    pub fn to_u64(&self) -> Option<u64> {
        match self.len {
            0 => Some(0),
            l if l <= WORD => Some(self.words[0]),
            _ => None,
        }
    }

    /// Random vector with each bit set independently with probability `p`.
    pub fn bernoulli<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Self {
        let mut v = Self::zeros(len);
        for i in 0..len {
            if rng.random_bool(p) {
                v.set(i, true);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    /// Hamming weight `|k|`.
    pub fn degree(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// `self <= other` elementwise (subset containment).
    pub fn is_subset_of(&self, other: &Self) -> bool {
        debug_assert_eq!(self.len, other.len);
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn intersects(&self, other: &Self) -> bool {
        debug_assert_eq!(self.len, other.len);
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn or(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn and(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn or_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.len, other.len);
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a |= b);
    }

    pub fn complement(&self) -> Self {
        let mut v = Self { len: self.len, words: self.words.iter().map(|w| !w).collect() };
        v.clear_tail();
        v
    }

    /// Boolean subtraction `self - other`, defined only for `other <= self`.
    pub fn checked_sub(&self, other: &Self) -> Option<Self> {
        if self.len != other.len || !other.is_subset_of(self) {
            return None;
        }
        Some(self.zip_with(other, |a, b| a & !b))
    }

    /// Indices of the set bits in increasing order.
    pub fn ones_iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let tz = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * WORD + tz)
            })
        })
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        assert_eq!(self.len, other.len, "index vector length mismatch");
        Self { len: self.len, words: self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect() }
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

/// Lexicographic order of the 0/1 strings (char `i` = variable `i`).
impl Ord for IndexVector {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.words.iter().zip(&other.words) {
            let diff = a ^ b;
            if diff != 0 {
                let bit = diff.trailing_zeros();
                return if a >> bit & 1 == 0 { Ordering::Less } else { Ordering::Greater };
            }
        }
        self.len.cmp(&other.len)
    }
}

impl PartialOrd for IndexVector {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for IndexVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

impl fmt::Debug for IndexVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IndexVector({})", self.to_bit_string())
    }
}

impl FromStr for IndexVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let len = s.chars().count();
        if len > Self::MAX_LEN {
            return Err(Error::DimensionTooLarge { dim: len, max: Self::MAX_LEN });
        }
        let mut v = Self::zeros(len);
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => v.set(i, true),
                other => return Err(Error::Parse(format!("invalid mask character {other:?} in {s:?}"))),
            }
        }
        Ok(v)
    }
}

impl Serialize for IndexVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_bit_string())
    }
}

impl<'de> Deserialize<'de> for IndexVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A `rows x cols` binary matrix stored row-major as index vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoolMatrix {
    cols: usize,
    rows: Vec<IndexVector>,
}

impl BoolMatrix {
    pub fn new(cols: usize, rows: Vec<IndexVector>) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch { expected: cols, found: bad.len() });
        }
        Ok(Self { cols, rows })
    }

    pub fn empty(cols: usize) -> Self {
        Self { cols, rows: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { cols: n, rows: (0..n).map(|i| IndexVector::unit(n, i)).collect() }
    }

    pub fn bernoulli<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Self {
        Self { cols, rows: (0..rows).map(|_| IndexVector::bernoulli(cols, p, rng)).collect() }
    }

    /// Parses rows given as 0/1 strings.
    pub fn from_strs<S: AsRef<str>>(rows: &[S]) -> Result<Self> {
        let parsed = rows.iter().map(|r| r.as_ref().parse()).collect::<Result<Vec<IndexVector>>>()?;
        let cols = parsed.first().map_or(0, IndexVector::len);
        Self::new(cols, parsed)
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, a: usize) -> &IndexVector {
        &self.rows[a]
    }

    pub fn rows(&self) -> &[IndexVector] {
        &self.rows
    }

    /// Stacks `other` below `self`.
    pub fn stack(&self, other: &BoolMatrix) -> Result<BoolMatrix> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, found: other.cols });
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(BoolMatrix { cols: self.cols, rows })
    }

    /// OR-semiring product `M x`: entry `a` is `OR_i (M[a,i] AND x_i)`.
    pub fn matvec(&self, x: &IndexVector) -> Result<IndexVector> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, found: x.len() });
        }
        Ok(self.matvec_unchecked(x))
    }

    pub(crate) fn matvec_unchecked(&self, x: &IndexVector) -> IndexVector {
        let mut out = IndexVector::zeros(self.rows.len());
        for (a, row) in self.rows.iter().enumerate() {
            if row.intersects(x) {
                out.set(a, true);
            }
        }
        out
    }

    /// `M x` for a matrix with at most 64 rows, returned as its integer encoding.
    pub(crate) fn matvec_index(&self, x: &IndexVector) -> usize {
        debug_assert!(self.rows.len() <= WORD);
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, row)| row.intersects(x))
            .fold(0usize, |acc, (a, _)| acc | (1 << a))
    }
}

/// `M x` over the OR/AND monoid.
pub fn bool_matvec(m: &BoolMatrix, x: &IndexVector) -> Result<IndexVector> {
    m.matvec(x)
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    cols: usize,
    rows: Vec<String>,
}

impl Serialize for BoolMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixRepr { cols: self.cols, rows: self.rows.iter().map(IndexVector::to_bit_string).collect() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BoolMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = MatrixRepr::deserialize(deserializer)?;
        let rows = repr
            .rows
            .iter()
            .map(|r| r.parse::<IndexVector>())
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        BoolMatrix::new(repr.cols, rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(s: &str) -> IndexVector {
        s.parse().unwrap()
    }

    #[test]
    fn matvec_identity() {
        let m = BoolMatrix::identity(3);
        assert_eq!(bool_matvec(&m, &iv("101")).unwrap(), iv("101"));
    }

    #[test]
    fn matvec_single_row_or() {
        let m = BoolMatrix::from_strs(&["110", "011"]).unwrap();
        assert_eq!(bool_matvec(&m, &iv("100")).unwrap(), iv("10"));
    }

    #[test]
    fn matvec_saturates() {
        let m = BoolMatrix::from_strs(&["111", "111"]).unwrap();
        assert_eq!(bool_matvec(&m, &iv("010")).unwrap(), iv("11"));
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let m = BoolMatrix::identity(3);
        assert!(matches!(bool_matvec(&m, &iv("10")), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn subtraction_table() {
        assert_eq!(iv("1").checked_sub(&iv("1")), Some(iv("0")));
        assert_eq!(iv("1").checked_sub(&iv("0")), Some(iv("1")));
        assert_eq!(iv("0").checked_sub(&iv("0")), Some(iv("0")));
        assert_eq!(iv("0").checked_sub(&iv("1")), None);
    }

    #[test]
    fn complement_clears_tail_bits() {
        let v = IndexVector::zeros(70).complement();
        assert_eq!(v.degree(), 70);
        assert_eq!(v, IndexVector::ones(70));
    }

    #[test]
    fn ordering_is_string_lexicographic() {
        let mut v = vec![iv("110"), iv("001"), iv("100"), iv("011")];
        v.sort();
        let s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        assert_eq!(s, ["001", "011", "100", "110"]);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!("10x".parse::<IndexVector>().is_err());
    }

    #[test]
    fn ones_iter_spans_words() {
        let v = IndexVector::from_indices(130, [0, 63, 64, 129]);
        assert_eq!(v.ones_iter().collect::<Vec<_>>(), vec![0, 63, 64, 129]);
    }

    fn arb_vec(len: usize) -> impl Strategy<Value = IndexVector> {
        proptest::collection::vec(any::<bool>(), len).prop_map(|b| IndexVector::from_bools(&b))
    }

    proptest! {
        #[test]
        fn matvec_distributes_over_or(
            rows in proptest::collection::vec(arb_vec(70), 1..6),
            x in arb_vec(70),
            y in arb_vec(70),
        ) {
            let m = BoolMatrix::new(70, rows).unwrap();
            let lhs = m.matvec(&x.or(&y)).unwrap();
            let rhs = m.matvec(&x).unwrap().or(&m.matvec(&y).unwrap());
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn string_round_trip(v in arb_vec(97)) {
            let back: IndexVector = v.to_bit_string().parse().unwrap();
            prop_assert_eq!(back, v);
        }

        #[test]
        fn ordering_matches_strings(a in arb_vec(80), b in arb_vec(80)) {
            prop_assert_eq!(a.cmp(&b), a.to_bit_string().cmp(&b.to_bit_string()));
        }
    }
}

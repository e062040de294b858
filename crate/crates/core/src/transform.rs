//! Dense Möbius/zeta transforms over the subset lattice and the sparse
//! coefficient map they produce.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::IndexVector;
use crate::oracle::ValueOracle;

/// Largest dimension a [`DenseFunction`] may have.
pub const MAX_DENSE_DIM: usize = 30;

/// Default cap on `n` for [`brute_force_transform`].
pub const BRUTE_FORCE_MAX_DIM: usize = 20;

/// A real function on `Z_2^dim`, indexed by the integer encoding
/// `sum_a l_a 2^a` (variable 0 is the least significant bit).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseFunction {
    dim: usize,
    values: Vec<f64>,
}

impl DenseFunction {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim > MAX_DENSE_DIM {
            return Err(Error::DimensionTooLarge { dim, max: MAX_DENSE_DIM });
        }
        if values.len() != 1 << dim {
            return Err(Error::DimensionMismatch { expected: 1 << dim, found: values.len() });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("dense function value {bad} is not finite")));
        }
        Ok(Self { dim, values })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        if dim > MAX_DENSE_DIM {
            return Err(Error::DimensionTooLarge { dim, max: MAX_DENSE_DIM });
        }
        Ok(Self { dim, values: vec![0.0; 1 << dim] })
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> f64) -> Result<Self> {
        if dim > MAX_DENSE_DIM {
            return Err(Error::DimensionTooLarge { dim, max: MAX_DENSE_DIM });
        }
        Self::new(dim, (0..1usize << dim).map(f).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }
}

/// In-place forward transform: `F(k) = sum_{m <= k} (-1)^{|k-m|} f(m)`.
pub fn mobius_in_place(values: &mut [f64]) {
    debug_assert!(values.len().is_power_of_two());
    let mut half = 1;
    while half < values.len() {
        for block in values.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            hi.iter_mut().zip(lo.iter()).for_each(|(h, l)| *h -= l);
        }
        half <<= 1;
    }
}

/// In-place inverse (zeta) transform: `f(m) = sum_{k <= m} F(k)`.
pub fn zeta_in_place(values: &mut [f64]) {
    debug_assert!(values.len().is_power_of_two());
    let mut half = 1;
    while half < values.len() {
        for block in values.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            hi.iter_mut().zip(lo.iter()).for_each(|(h, l)| *h += l);
        }
        half <<= 1;
    }
}

pub fn forward_mobius_dense(f: DenseFunction) -> DenseFunction {
    let DenseFunction { dim, mut values } = f;
    mobius_in_place(&mut values);
    DenseFunction { dim, values }
}

pub fn inverse_mobius_dense(coeffs: DenseFunction) -> DenseFunction {
    let DenseFunction { dim, mut values } = coeffs;
    zeta_in_place(&mut values);
    DenseFunction { dim, values }
}

/// Counters describing how a [`SparseMobius`] was recovered.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub total_queries: usize,
    pub unique_queries: usize,
    pub rounds: usize,
    pub zerotons: usize,
    pub singletons: usize,
    pub multitons: usize,
}

/// Sparse Möbius coefficients `F`, keyed by mask in lexicographic order.
/// Zero coefficients are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMobius {
    dim: usize,
    entries: BTreeMap<IndexVector, f64>,
    pub stats: Option<RecoveryStats>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    mask: IndexVector,
    value: f64,
}

impl SparseMobius {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new(), stats: None }
    }

    pub fn from_entries(dim: usize, entries: impl IntoIterator<Item = (IndexVector, f64)>) -> Result<Self> {
        let mut out = Self::new(dim);
        for (k, v) in entries {
            out.insert(k, v)?;
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sets `F(k) = value`; a zero value removes the key.
    pub fn insert(&mut self, k: IndexVector, value: f64) -> Result<()> {
        if k.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: k.len() });
        }
        if value == 0.0 {
            self.entries.remove(&k);
        } else {
            self.entries.insert(k, value);
        }
        Ok(())
    }

    pub fn get(&self, k: &IndexVector) -> f64 {
        self.entries.get(k).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, k: &IndexVector) -> bool {
        self.entries.contains_key(k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&IndexVector, f64)> + '_ {
        self.entries.iter().map(|(k, &v)| (k, v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &IndexVector> + '_ {
        self.entries.keys()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Inverse transform at one point: `f(m) = sum_{k <= m} F(k)`.
    pub fn evaluate(&self, m: &IndexVector) -> Result<f64> {
        if m.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: m.len() });
        }
        Ok(self.evaluate_unchecked(m))
    }

    pub(crate) fn evaluate_unchecked(&self, m: &IndexVector) -> f64 {
        self.entries.iter().filter(|(k, _)| k.is_subset_of(m)).map(|(_, v)| v).sum()
    }

    /// Dense coefficient array (requires `dim <= 30`).
    pub fn to_dense(&self) -> Result<DenseFunction> {
        let mut out = DenseFunction::zeros(self.dim)?;
        for (k, v) in &self.entries {
            let idx = k.to_u64().expect("dim <= 30") as usize;
            out.values[idx] = *v;
        }
        Ok(out)
    }

    /// Keeps the entries of a dense coefficient array whose magnitude exceeds
    /// `rel_tol * max|F|`.
    pub fn from_dense(coeffs: &DenseFunction, rel_tol: f64) -> Self {
        let max = coeffs.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cutoff = rel_tol * max;
        let mut out = Self::new(coeffs.dim);
        for (idx, &v) in coeffs.values.iter().enumerate() {
            if v.abs() > cutoff && v != 0.0 {
                out.entries.insert(IndexVector::from_u64(coeffs.dim, idx as u64), v);
            }
        }
        out
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let entries: Vec<Entry> = self.entries.iter().map(|(k, &v)| Entry { mask: k.clone(), value: v }).collect();
        serde_json::to_writer_pretty(writer, &entries)?;
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_json(&mut buf).expect("in-memory serialization");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Reads the mask/value array. `dim` is taken from the first mask when
    /// `None`; an empty array then needs an explicit dimension.
    pub fn read_json<R: Read>(reader: R, dim: Option<usize>) -> Result<Self> {
        let entries: Vec<Entry> = serde_json::from_reader(reader)?;
        let dim = match (dim, entries.first()) {
            (Some(d), _) => d,
            (None, Some(e)) => e.mask.len(),
            (None, None) => return Err(Error::Parse("empty coefficient file needs an explicit dimension".into())),
        };
        let mut out = Self::new(dim);
        for Entry { mask, value } in entries {
            if out.contains(&mask) {
                return Err(Error::Parse(format!("duplicate mask {mask}")));
            }
            out.insert(mask, value)?;
        }
        Ok(out)
    }
}

/// Relative zero-dropping tolerance used when converting dense to sparse.
pub const ZERO_DROP_TOL: f64 = 1e-9;

/// Queries all `2^n` masks, runs the dense forward transform and prunes
/// near-zero coefficients. Refuses `n > cap`.
pub fn brute_force_transform_capped(oracle: &dyn ValueOracle, cap: usize, batch_size: usize) -> Result<SparseMobius> {
    let n = oracle.dim();
    let cap = cap.min(MAX_DENSE_DIM);
    if n > cap {
        return Err(Error::DimensionTooLarge { dim: n, max: cap });
    }
    let total = 1usize << n;
    let batch_size = batch_size.max(1);
    let mut values = Vec::with_capacity(total);
    let mut start = 0;
    while start < total {
        let end = (start + batch_size).min(total);
        let masks: Vec<IndexVector> = (start..end).map(|i| IndexVector::from_u64(n, i as u64)).collect();
        let batch = crate::oracle::checked_query(oracle, &masks)?;
        values.extend(batch);
        start = end;
    }
    let dense = forward_mobius_dense(DenseFunction::new(n, values)?);
    Ok(SparseMobius::from_dense(&dense, ZERO_DROP_TOL))
}

pub fn brute_force_transform(oracle: &dyn ValueOracle) -> Result<SparseMobius> {
    brute_force_transform_capped(oracle, BRUTE_FORCE_MAX_DIM, 1024)
}

//! Query generation and the aliased bin tables `U_c(j)`.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::designs::SubsamplingDesign;
use crate::error::{Error, Result};
use crate::index::{BoolMatrix, IndexVector};
use crate::oracle::{checked_query, ValueOracle};
use crate::transform::{mobius_in_place, DenseFunction};

pub const DEFAULT_BATCH_SIZE: usize = 1024;

/// The mask queried for bin coordinate `ell` under delay `d`: variable `i` is
/// kept iff `d_i = 0` and `H[a,i] = 0` for every row `a` with `ell_a = 0`.
pub fn query_point(h: &BoolMatrix, ell: &IndexVector, d: &IndexVector) -> Result<IndexVector> {
    if ell.len() != h.nrows() {
        return Err(Error::DimensionMismatch { expected: h.nrows(), found: ell.len() });
    }
    if d.len() != h.ncols() {
        return Err(Error::DimensionMismatch { expected: h.ncols(), found: d.len() });
    }
    let mut suppressed = d.clone();
    for (a, row) in h.rows().iter().enumerate() {
        if !ell.get(a) {
            suppressed.or_assign(row);
        }
    }
    Ok(suppressed.complement())
}

fn query_point_index(h: &BoolMatrix, ell: usize, d: Option<&IndexVector>) -> IndexVector {
    let mut suppressed = d.cloned().unwrap_or_else(|| IndexVector::zeros(h.ncols()));
    for (a, row) in h.rows().iter().enumerate() {
        if ell >> a & 1 == 0 {
            suppressed.or_assign(row);
        }
    }
    suppressed.complement()
}

/// Observations of one group: `2^b` bins, each a vector of `P + 1` values.
#[derive(Clone, Debug, PartialEq)]
pub struct BinTable {
    group: usize,
    b: usize,
    width: usize,
    data: Vec<f64>,
}

impl BinTable {
    pub fn zeros(group: usize, b: usize, width: usize) -> Self {
        Self { group, b, width, data: vec![0.0; width << b] }
    }

    pub fn group(&self) -> usize {
        self.group
    }

    pub fn b(&self) -> usize {
        self.b
    }

    /// `P + 1`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_bins(&self) -> usize {
        1 << self.b
    }

    pub fn bin(&self, j: usize) -> &[f64] {
        &self.data[j * self.width..(j + 1) * self.width]
    }

    pub fn bin_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.width..(j + 1) * self.width]
    }

    /// `U_{c,p}` as a function of the bin index.
    pub fn function(&self, p: usize) -> DenseFunction {
        let values = (0..self.num_bins()).map(|j| self.data[j * self.width + p]).collect();
        DenseFunction::new(self.b, values).expect("bin table values are finite")
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SamplingStats {
    /// `sum_c (P_c + 1) 2^b`.
    pub total_queries: usize,
    pub unique_queries: usize,
    pub query_time: Duration,
    pub transform_time: Duration,
}

/// Queries every `(c, p, ell)` point once (identical masks are shared across
/// groups), then transforms each `(c, p)` slice.
pub fn build_bin_tables(
    oracle: &(impl ValueOracle + ?Sized),
    designs: &[SubsamplingDesign],
    batch_size: usize,
) -> Result<(Vec<BinTable>, SamplingStats)> {
    let start = Instant::now();
    let n = oracle.dim();
    for design in designs {
        if design.n() != n {
            return Err(Error::DimensionMismatch { expected: n, found: design.n() });
        }
    }
    let slices: Vec<(usize, usize)> =
        designs.iter().enumerate().flat_map(|(c, des)| (0..=des.p()).map(move |p| (c, p))).collect();
    let masks_per_slice: Vec<Vec<IndexVector>> = slices
        .par_iter()
        .map(|&(c, p)| {
            let des = &designs[c];
            let d = (p > 0).then(|| des.d.row(p - 1));
            (0..des.num_bins()).map(|ell| query_point_index(&des.h, ell, d)).collect()
        })
        .collect();

    let mut unique: HashMap<IndexVector, usize> = HashMap::new();
    let mut order: Vec<IndexVector> = Vec::new();
    let mut slot: Vec<Vec<usize>> = Vec::with_capacity(masks_per_slice.len());
    let mut total = 0;
    for masks in masks_per_slice {
        total += masks.len();
        slot.push(
            masks
                .into_iter()
                .map(|m| {
                    *unique.entry(m).or_insert_with_key(|m| {
                        order.push(m.clone());
                        order.len() - 1
                    })
                })
                .collect(),
        );
    }
    drop(unique);

    let batch_size = batch_size.max(1);
    let answers: Vec<Vec<f64>> =
        order.par_chunks(batch_size).map(|batch| checked_query(oracle, batch)).collect::<Result<_>>()?;
    let values: Vec<f64> = answers.into_iter().flatten().collect();
    let query_time = start.elapsed();

    let t0 = Instant::now();
    let transformed: Vec<Vec<f64>> = slot
        .par_iter()
        .map(|idx| {
            let mut buf: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            mobius_in_place(&mut buf);
            buf
        })
        .collect();
    let mut tables: Vec<BinTable> =
        designs.iter().enumerate().map(|(c, des)| BinTable::zeros(c, des.b(), des.p() + 1)).collect();
    for (&(c, p), buf) in slices.iter().zip(transformed) {
        let table = &mut tables[c];
        for (j, v) in buf.into_iter().enumerate() {
            table.data[j * table.width + p] = v;
        }
    }
    if let Some(noise) = oracle.bin_noise() {
        let normal =
            Normal::new(0.0, noise.sigma).map_err(|e| Error::InvalidConfig(format!("bin noise sigma: {e}")))?;
        for table in &mut tables {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(table.group as u64 + 1);
            for v in &mut table.data {
                *v += normal.sample(&mut rng);
            }
        }
    }
    let stats = SamplingStats {
        total_queries: total,
        unique_queries: order.len(),
        query_time,
        transform_time: t0.elapsed(),
    };
    Ok((tables, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{make_designs, DesignConfig, Regime};
    use crate::oracle::{CachedOracle, SparseOracle};
    use crate::transform::SparseMobius;

    fn iv(s: &str) -> IndexVector {
        s.parse().unwrap()
    }

    #[test]
    fn freezing_inputs() {
        let h = BoolMatrix::from_strs(&["100000", "010000"]).unwrap();
        let d = IndexVector::zeros(6);
        assert_eq!(query_point(&h, &iv("10"), &d).unwrap(), iv("101111"));
        assert_eq!(query_point(&h, &iv("11"), &d).unwrap(), iv("111111"));
        assert_eq!(query_point(&h, &iv("01"), &IndexVector::ones(6)).unwrap(), iv("000000"));
        assert!(query_point(&h, &iv("1"), &d).is_err());
    }

    #[test]
    fn identity_subsampling_reads_coefficients() {
        let big_f = SparseMobius::from_entries(5, [(iv("10100"), 1.5), (iv("00011"), -2.0), (iv("00000"), 0.5)])
            .unwrap();
        let oracle = SparseOracle::new(big_f.clone());
        let design = SubsamplingDesign {
            group: 0,
            regime: Regime::Uniform,
            h: BoolMatrix::identity(5),
            d: BoolMatrix::identity(5),
            split: None,
            identity_d: true,
        };
        let (tables, _) = build_bin_tables(&oracle, &[design.clone(), design], 7).unwrap();
        let u0 = tables[0].function(0);
        for j in 0..32u64 {
            assert_eq!(u0.get(j as usize), big_f.get(&IndexVector::from_u64(5, j)));
        }
    }

    #[test]
    fn aliasing_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for regime in [Regime::Uniform, Regime::LowDegree] {
            let n = 12;
            let entries: Vec<(IndexVector, f64)> =
                (0..15).map(|i| (IndexVector::bernoulli(n, 0.3, &mut rng), 1.0 + i as f64)).collect();
            let big_f = SparseMobius::from_entries(n, entries).unwrap();
            let cfg = DesignConfig { t: Some(3), ..DesignConfig::new(n, 3, 3, regime) }.with_seed(2);
            let designs = make_designs(&cfg).unwrap();
            let (tables, stats) = build_bin_tables(&SparseOracle::new(big_f.clone()), &designs, 64).unwrap();
            assert_eq!(stats.total_queries, designs.iter().map(|d| d.sample_count()).sum::<usize>());
            for (des, table) in designs.iter().zip(&tables) {
                for j in 0..des.num_bins() {
                    for p in 0..=des.p() {
                        let expect: f64 =
                            big_f.iter().filter(|(k, _)| des.bin_of(k) == j && des.survives(k, p)).map(|(_, v)| v).sum();
                        assert!((table.bin(j)[p] - expect).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn cache_does_not_change_tables() {
        let big_f = SparseMobius::from_entries(8, [(iv("11000000"), 1.0), (iv("00000011"), 2.0)]).unwrap();
        let designs = make_designs(&DesignConfig::uniform(8, 2, 3).with_seed(3)).unwrap();
        let plain = build_bin_tables(&SparseOracle::new(big_f.clone()), &designs, 1024).unwrap().0;
        let cached = CachedOracle::new(SparseOracle::new(big_f));
        let with_cache = build_bin_tables(&cached, &designs, 5).unwrap().0;
        assert_eq!(plain, with_cache);
    }
}

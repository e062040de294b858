//! Subsampling matrices `H_c` and delay matrices `D_c`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::index::{BoolMatrix, IndexVector};
use crate::transform::MAX_DENSE_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Unit-vector `H` on disjoint coordinate sets, `D = I`.
    Uniform,
    /// Bernoulli `H` and a group-testing `D` for degree-bounded supports.
    LowDegree,
    /// Bernoulli `H`, identification rows plus two paired verification blocks.
    Noisy,
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(Regime::Uniform),
            "low-degree" | "lowdegree" | "low_degree" => Ok(Regime::LowDegree),
            "noisy" => Ok(Regime::Noisy),
            other => Err(format!("unknown regime {other:?} (expected uniform, low-degree or noisy)")),
        }
    }
}

fn default_nu() -> f64 {
    std::f64::consts::LN_2
}
fn default_gamma() -> f64 {
    0.5
}
fn default_two() -> f64 {
    2.0
}
fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub n: usize,
    pub b: usize,
    /// Number of subsampling groups.
    pub c: usize,
    pub regime: Regime,
    /// Maximum interaction degree.
    #[serde(default)]
    pub t: Option<usize>,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_two")]
    pub c_gt: f64,
    #[serde(default = "default_two")]
    pub c_ver: f64,
    #[serde(default = "default_one")]
    pub beta: f64,
    /// Overrides the computed number of delay rows. In the noisy regime the
    /// first half goes to identification and the rest is split between the
    /// two verification blocks.
    #[serde(default)]
    pub delay_rows: Option<usize>,
}

impl DesignConfig {
    pub fn new(n: usize, b: usize, c: usize, regime: Regime) -> Self {
        Self {
            n,
            b,
            c,
            regime,
            t: None,
            nu: default_nu(),
            gamma: default_gamma(),
            sigma: 0.0,
            rho: None,
            seed: 0,
            c_gt: 2.0,
            c_ver: 2.0,
            beta: 1.0,
            delay_rows: None,
        }
    }

    pub fn uniform(n: usize, b: usize, c: usize) -> Self {
        Self::new(n, b, c, Regime::Uniform)
    }

    pub fn low_degree(n: usize, b: usize, c: usize, t: usize) -> Self {
        Self { t: Some(t), ..Self::new(n, b, c, Regime::LowDegree) }
    }

    pub fn noisy(n: usize, b: usize, c: usize, t: usize, sigma: f64) -> Self {
        Self { t: Some(t), sigma, ..Self::new(n, b, c, Regime::Noisy) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > IndexVector::MAX_LEN {
            return config_err(format!("n = {} must be in 1..={}", self.n, IndexVector::MAX_LEN));
        }
        if self.c < 2 {
            return config_err(format!("C = {} must be at least 2", self.c));
        }
        if self.b > MAX_DENSE_DIM {
            return config_err(format!("b = {} exceeds {MAX_DENSE_DIM}", self.b));
        }
        if self.regime == Regime::Uniform && self.c * self.b > self.n {
            return config_err(format!("uniform regime needs C*b <= n, got {}*{} > {}", self.c, self.b, self.n));
        }
        match self.t {
            Some(0) => return config_err("t must be at least 1"),
            Some(t) if t > self.n => return config_err(format!("t = {t} exceeds n = {}", self.n)),
            None if self.regime != Regime::Uniform => return config_err("low-degree and noisy regimes need t"),
            _ => {}
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return config_err(format!("gamma = {} must be positive", self.gamma));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return config_err(format!("sigma = {} must be non-negative", self.sigma));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return config_err(format!("rho = {rho} must be positive"));
            }
        }
        for (name, v) in [("nu", self.nu), ("c_gt", self.c_gt), ("c_ver", self.c_ver)] {
            if !(v > 0.0 && v.is_finite()) {
                return config_err(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return config_err(format!("beta = {} must be non-negative", self.beta));
        }
        if self.delay_rows == Some(0) {
            return config_err("delay_rows must be positive");
        }
        Ok(())
    }
}

/// Row counts of the noisy delay matrix `[D_id; D1; D2]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisySplit {
    pub p1: usize,
    pub p2: usize,
}

impl NoisySplit {
    pub fn id_rows(&self) -> std::ops::Range<usize> {
        0..self.p1
    }
    pub fn ver1_rows(&self) -> std::ops::Range<usize> {
        self.p1..self.p1 + self.p2
    }
    pub fn ver2_rows(&self) -> std::ops::Range<usize> {
        self.p1 + self.p2..self.p1 + 2 * self.p2
    }
}

/// One group's matrices. Row `p` of `d` is the delay used by bin entry
/// `p + 1`; entry 0 always uses the all-zero delay, which is not stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsamplingDesign {
    pub group: usize,
    pub regime: Regime,
    pub h: BoolMatrix,
    pub d: BoolMatrix,
    pub split: Option<NoisySplit>,
    /// True when `d` is the identity (either by regime or by fallback).
    pub identity_d: bool,
}

impl SubsamplingDesign {
    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    pub fn b(&self) -> usize {
        self.h.nrows()
    }

    /// Number of stored delay rows `P`.
    pub fn p(&self) -> usize {
        self.d.nrows()
    }

    pub fn num_bins(&self) -> usize {
        1 << self.b()
    }

    /// Queries this group issues before de-duplication: `(P+1) 2^b`.
    pub fn sample_count(&self) -> usize {
        (self.p() + 1) << self.b()
    }

    /// Bin of `k` in this group.
    pub fn bin_of(&self, k: &IndexVector) -> usize {
        self.h.matvec_index(k)
    }

    /// Whether `k` survives delay entry `p` (`p = 0` is the empty delay).
    pub fn survives(&self, k: &IndexVector, p: usize) -> bool {
        p == 0 || !self.d.row(p - 1).intersects(k)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Unit-vector subsampling matrices built from consecutive slices of `perm`.
pub fn make_uniform_h_from_permutation(perm: &[usize], b: usize, c: usize) -> Result<Vec<BoolMatrix>> {
    let n = perm.len();
    if c * b > n {
        return config_err(format!("uniform subsampling needs C*b <= n, got {c}*{b} > {n}"));
    }
    let mut seen = vec![false; n];
    for &i in perm {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return config_err("index list is not a permutation");
        }
    }
    Ok(perm
        .chunks(b.max(1))
        .take(c)
        .map(|slice| {
            let rows = if b == 0 { Vec::new() } else { slice.iter().map(|&i| IndexVector::unit(n, i)).collect() };
            BoolMatrix::new(n, rows).expect("unit rows have n columns")
        })
        .chain(std::iter::repeat_with(|| BoolMatrix::empty(n)))
        .take(c)
        .collect())
}

pub fn make_uniform_h(n: usize, b: usize, c: usize, seed: u64) -> Result<Vec<BoolMatrix>> {
    if c * b > n {
        return config_err(format!("uniform subsampling needs C*b <= n, got {c}*{b} > {n}"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_for(seed, 0));
    make_uniform_h_from_permutation(&perm, b, c)
}

/// Entry density that makes each bin bit of a degree-`t` index a fair coin.
pub fn lowdeg_density(t: usize) -> f64 {
    1.0 - 0.5f64.powf(1.0 / t as f64)
}

pub fn make_lowdeg_h(n: usize, b: usize, c: usize, t: usize, seed: u64) -> Result<Vec<BoolMatrix>> {
    if t == 0 {
        return config_err("t must be at least 1");
    }
    let p = lowdeg_density(t);
    Ok((0..c).map(|g| BoolMatrix::bernoulli(b, n, p, &mut rng_for(seed, 2 * g as u64 + 2))).collect())
}

/// `ceil(scale * t * log2 n)`, at least 1.
fn group_test_rows(scale: f64, t: usize, n: usize) -> usize {
    ((scale * t as f64 * (n as f64).log2()).ceil() as usize).max(1)
}

/// Delay matrix for one group.
pub fn make_d(config: &DesignConfig, group: usize) -> Result<(BoolMatrix, Option<NoisySplit>, bool)> {
    let n = config.n;
    let mut rng = rng_for(config.seed, 2 * group as u64 + 3);
    match config.regime {
        Regime::Uniform => Ok((BoolMatrix::identity(n), None, true)),
        Regime::LowDegree => {
            let t = config.t.expect("validated");
            let p = config.delay_rows.unwrap_or_else(|| group_test_rows(config.c_gt, t, n));
            if 2 * t >= n || p >= n {
                return Ok((BoolMatrix::identity(n), None, true));
            }
            Ok((BoolMatrix::bernoulli(p, n, config.nu / t as f64, &mut rng), None, false))
        }
        Regime::Noisy => {
            let t = config.t.expect("validated");
            let (p1, p2) = match config.delay_rows {
                Some(total) => {
                    let p1 = total.div_ceil(2);
                    (p1, ((total - p1) / 2).max(1))
                }
                None => (group_test_rows(config.c_gt * (1.0 + config.beta), t, n), group_test_rows(config.c_ver, t, n)),
            };
            let (d_id, identity) = if 2 * t >= n {
                (BoolMatrix::identity(n), true)
            } else {
                (BoolMatrix::bernoulli(p1, n, config.nu / t as f64, &mut rng), false)
            };
            let p1 = d_id.nrows();
            let q = lowdeg_density(t);
            let d1 = BoolMatrix::bernoulli(p2, n, q, &mut rng);
            let d2 = BoolMatrix::bernoulli(p2, n, q, &mut rng);
            let d = d_id.stack(&d1)?.stack(&d2)?;
            Ok((d, Some(NoisySplit { p1, p2 }), identity))
        }
    }
}

/// All `C` group designs for `config`.
pub fn make_designs(config: &DesignConfig) -> Result<Vec<SubsamplingDesign>> {
    config.validate()?;
    let hs = match config.regime {
        Regime::Uniform => make_uniform_h(config.n, config.b, config.c, config.seed)?,
        Regime::LowDegree | Regime::Noisy => {
            make_lowdeg_h(config.n, config.b, config.c, config.t.expect("validated"), config.seed)?
        }
    };
    hs.into_iter()
        .enumerate()
        .map(|(group, h)| {
            let (d, split, identity_d) = make_d(config, group)?;
            Ok(SubsamplingDesign { group, regime: config.regime, h, d, split, identity_d })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn iv(s: &str) -> IndexVector {
        s.parse().unwrap()
    }

    #[test]
    fn canonical_split() {
        let hs = make_uniform_h_from_permutation(&[0, 1, 2, 3, 4, 5], 2, 3).unwrap();
        let sets: Vec<Vec<usize>> =
            hs.iter().map(|h| h.rows().iter().flat_map(|r| r.ones_iter().collect::<Vec<_>>()).collect()).collect();
        assert_eq!(sets, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
    }

    #[test]
    fn pigeonhole() {
        assert!(make_uniform_h(4, 2, 3, 0).is_err());
        assert!(DesignConfig::uniform(4, 2, 3).validate().is_err());
    }

    #[test]
    fn uniform_rows_distinct_units() {
        let hs = make_uniform_h(40, 6, 3, 11).unwrap();
        let mut all: Vec<usize> = Vec::new();
        for h in &hs {
            for r in h.rows() {
                assert_eq!(r.degree(), 1);
                all.push(r.ones_iter().next().unwrap());
            }
        }
        let len = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), len);
    }

    #[test]
    fn uniform_h_extracts_coordinates() {
        let hs = make_uniform_h(20, 4, 3, 5).unwrap();
        let mut rng = rng_for(1, 9);
        for _ in 0..100 {
            let k = IndexVector::bernoulli(20, 0.5, &mut rng);
            for h in &hs {
                let hk = h.matvec(&k).unwrap();
                for (a, row) in h.rows().iter().enumerate() {
                    assert_eq!(hk.get(a), k.get(row.ones_iter().next().unwrap()));
                }
            }
        }
    }

    #[test]
    fn density_values() {
        assert_eq!(lowdeg_density(1), 0.5);
        let t = 1000;
        assert!((lowdeg_density(t) * t as f64 - std::f64::consts::LN_2).abs() < 1e-3);
    }

    #[test]
    fn lowdeg_bin_bits_are_fair() {
        let (n, t, draws) = (500, 5, 100_000);
        let p = lowdeg_density(t);
        let mut rng = rng_for(3, 1);
        let mut ones = 0usize;
        for _ in 0..draws {
            // one fresh H row per draw, against a fresh degree-t index
            let row = IndexVector::bernoulli(n, p, &mut rng);
            let k = IndexVector::from_indices(n, rand::seq::index::sample(&mut rng, n, t));
            ones += row.intersects(&k) as usize;
        }
        let rate = ones as f64 / draws as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn uniform_d_is_identity() {
        let designs = make_designs(&DesignConfig::uniform(6, 2, 2)).unwrap();
        assert_eq!(designs[0].d, BoolMatrix::identity(6));
        assert_eq!(designs[0].p(), 6);
        assert_eq!(designs[0].sample_count(), 7 * 4);
    }

    #[test]
    fn group_test_row_count() {
        assert_eq!(group_test_rows(2.0, 5, 500), 90);
        let designs = make_designs(&DesignConfig::low_degree(500, 6, 3, 5)).unwrap();
        assert!(designs.iter().all(|d| d.p() == 90 && !d.identity_d));
        assert_eq!(group_test_rows(2.0, 4, 256), 64);
    }

    #[test]
    fn degenerate_t_falls_back_to_identity() {
        let designs = make_designs(&DesignConfig::low_degree(8, 3, 2, 4)).unwrap();
        assert!(designs.iter().all(|d| d.identity_d && d.p() == 8));
    }

    #[test]
    fn noisy_split_shapes() {
        let cfg = DesignConfig::noisy(100, 5, 3, 5, 0.1);
        let designs = make_designs(&cfg).unwrap();
        let split = designs[0].split.unwrap();
        assert_eq!(split.p1, (2.0f64 * 2.0 * 5.0 * 100f64.log2()).ceil() as usize);
        assert_eq!(split.p2, (2.0f64 * 5.0 * 100f64.log2()).ceil() as usize);
        assert_eq!(designs[0].p(), split.p1 + 2 * split.p2);
    }

    #[test]
    fn binary_search_fixture_distinguishes_singletons() {
        let d = BoolMatrix::from_strs(&["111100", "110011", "101010"]).unwrap();
        assert_eq!(d.matvec(&IndexVector::unit(6, 2)).unwrap(), iv("101"));
        let mut outcomes: Vec<IndexVector> = (0..6).map(|i| d.matvec(&IndexVector::unit(6, i)).unwrap()).collect();
        outcomes.push(d.matvec(&IndexVector::zeros(6)).unwrap());
        let len = outcomes.len();
        outcomes.sort();
        outcomes.dedup();
        assert_eq!(outcomes.len(), len);
    }

    #[test]
    fn pairs_are_identifiable() {
        let (n, t) = (500, 5);
        let designs = make_designs(&DesignConfig::low_degree(n, 6, 3, t).with_seed(17)).unwrap();
        let d = &designs[0].d;
        let mut rng = rng_for(4, 4);
        let draw = |rng: &mut ChaCha8Rng| {
            let deg = rng.random_range(1..=t);
            IndexVector::from_indices(n, rand::seq::index::sample(rng, n, deg))
        };
        let mut distinct = 0;
        for _ in 0..1000 {
            let (a, b) = (draw(&mut rng), draw(&mut rng));
            if a == b || d.matvec(&a).unwrap() != d.matvec(&b).unwrap() {
                distinct += 1;
            }
        }
        assert!(distinct >= 990, "{distinct}");
    }

    #[test]
    fn designs_are_deterministic() {
        let cfg = DesignConfig::noisy(60, 4, 3, 3, 0.2).with_seed(42);
        assert_eq!(make_designs(&cfg).unwrap(), make_designs(&cfg).unwrap());
        let other = make_designs(&cfg.clone().with_seed(43)).unwrap();
        assert_ne!(make_designs(&cfg).unwrap(), other);
    }

    #[test]
    fn design_json_round_trip() {
        let designs = make_designs(&DesignConfig::low_degree(30, 3, 2, 2).with_seed(1)).unwrap();
        let text = serde_json::to_string(&designs).unwrap();
        let back: Vec<SubsamplingDesign> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, designs);
    }

    #[test]
    fn config_validation() {
        assert!(DesignConfig::low_degree(10, 3, 2, 11).validate().is_err());
        assert!(DesignConfig::new(10, 3, 2, Regime::Noisy).validate().is_err());
        let mut cfg = DesignConfig::uniform(10, 3, 2);
        cfg.gamma = 0.0;
        assert!(cfg.validate().is_err());
        assert!(DesignConfig::uniform(10, 3, 1).validate().is_err());
    }
}

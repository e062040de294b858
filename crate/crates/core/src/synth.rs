//! Planted sparse instances.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::index::IndexVector;
use crate::oracle::{NoisyOracle, SparseOracle};
use crate::transform::SparseMobius;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Assumption {
    /// Support drawn uniformly from all `2^n` masks.
    Uniform,
    /// Support drawn uniformly from masks of degree at most `t`.
    LowDegree { t: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ValueLaw {
    /// Uniform on `[-1, -v_min] U [v_min, 1]`.
    Uniform { v_min: f64 },
    /// `+rho` or `-rho` with equal probability.
    Fixed { rho: f64 },
}

impl Default for ValueLaw {
    fn default() -> Self {
        ValueLaw::Uniform { v_min: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub k: usize,
    pub assumption: Assumption,
    #[serde(default)]
    pub value_law: ValueLaw,
    /// Standard deviation of the bin noise; 0 is noiseless.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn uniform(n: usize, k: usize, seed: u64) -> Self {
        Self { n, k, assumption: Assumption::Uniform, value_law: ValueLaw::default(), sigma: 0.0, seed }
    }

    pub fn low_degree(n: usize, k: usize, t: usize, seed: u64) -> Self {
        Self { assumption: Assumption::LowDegree { t }, ..Self::uniform(n, k, seed) }
    }

    /// Number of admissible masks, saturating.
    pub fn support_size(&self) -> u128 {
        match self.assumption {
            Assumption::Uniform => 1u128.checked_shl(self.n as u32).filter(|_| self.n < 128).unwrap_or(u128::MAX),
            Assumption::LowDegree { t } => (0..=t.min(self.n)).fold(0u128, |acc, d| acc.saturating_add(binomial(self.n, d))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > IndexVector::MAX_LEN {
            return config_err(format!("n = {} must be in 1..={}", self.n, IndexVector::MAX_LEN));
        }
        if let Assumption::LowDegree { t } = self.assumption {
            if t > self.n {
                return config_err(format!("t = {t} exceeds n = {}", self.n));
            }
        }
        match self.value_law {
            ValueLaw::Uniform { v_min } if !(v_min > 0.0 && v_min <= 1.0) && v_min != 0.0 => {
                return config_err(format!("v_min = {v_min} must be in [0, 1]"));
            }
            ValueLaw::Fixed { rho } if !(rho > 0.0 && rho.is_finite()) => {
                return config_err(format!("rho = {rho} must be positive"));
            }
            _ => {}
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return config_err(format!("sigma = {} must be non-negative", self.sigma));
        }
        if self.k as u128 > self.support_size() {
            return Err(Error::Infeasible(format!(
                "cannot plant {} distinct masks among {} admissible ones",
                self.k,
                self.support_size()
            )));
        }
        Ok(())
    }
}

/// `C(n, d)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, d: usize) -> u128 {
    if d > n {
        return 0;
    }
    let d = d.min(n - d);
    let mut acc: u128 = 1;
    for i in 0..d {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// A planted function and the oracle that evaluates it.
pub struct SyntheticInstance {
    pub truth: SparseMobius,
    pub oracle: NoisyOracle<SparseOracle>,
}

fn all_low_degree(n: usize, t: usize) -> Vec<IndexVector> {
    fn rec(n: usize, start: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<IndexVector>) {
        out.push(IndexVector::from_indices(n, cur.iter().copied()));
        if left == 0 {
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, i + 1, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, 0, t, &mut Vec::new(), &mut out);
    out
}

fn sample_masks(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<IndexVector> {
    let (n, k) = (spec.n, spec.k);
    let size = spec.support_size();
    // enumerate when rejection would stall
    if size <= 1 << 20 && (k as u128) * 2 > size {
        let pool: Vec<IndexVector> = match spec.assumption {
            Assumption::Uniform => (0..size as u64).map(|i| IndexVector::from_u64(n, i)).collect(),
            Assumption::LowDegree { t } => all_low_degree(n, t),
        };
        return rand::seq::index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i].clone()).collect();
    }
    let degree_law = match spec.assumption {
        Assumption::Uniform => None,
        Assumption::LowDegree { t } => {
            let weights: Vec<f64> = (0..=t).map(|d| binomial(n, d) as f64).collect();
            Some(WeightedIndex::new(weights).expect("positive weights"))
        }
    };
    let mut seen = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let mask = match &degree_law {
            None => IndexVector::bernoulli(n, 0.5, rng),
            Some(law) => {
                let d = law.sample(rng);
                IndexVector::from_indices(n, rand::seq::index::sample(rng, n, d))
            }
        };
        if seen.insert(mask.clone()) {
            out.push(mask);
        }
    }
    out
}

fn sample_value(law: ValueLaw, rng: &mut ChaCha8Rng) -> f64 {
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    match law {
        ValueLaw::Fixed { rho } => sign * rho,
        ValueLaw::Uniform { v_min } => loop {
            let v = rng.random_range(v_min..=1.0);
            if v != 0.0 {
                break sign * v;
            }
        },
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let masks = sample_masks(spec, &mut rng);
    let entries: Vec<_> = masks.into_iter().map(|m| (m, sample_value(spec.value_law, &mut rng))).collect();
    let truth = SparseMobius::from_entries(spec.n, entries)?;
    let noise_seed = spec.seed ^ 0x6e6f_6973_655f_7365;
    let oracle = NoisyOracle::new(SparseOracle::new(truth.clone()), spec.sigma, noise_seed);
    Ok(SyntheticInstance { truth, oracle })
}

/// Noise standard deviation giving `rho^2 / sigma^2 = 10^(snr_db / 10)`.
pub fn sigma_for_snr_db(rho: f64, snr_db: f64) -> f64 {
    if snr_db.is_infinite() && snr_db > 0.0 {
        0.0
    } else {
        rho / 10f64.powf(snr_db / 20.0)
    }
}

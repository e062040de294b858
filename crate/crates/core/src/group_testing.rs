//! Non-adaptive group-testing decoders recovering a sparse `k*` from
//! OR-pooled outcomes `y = D k*`.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::index::{BoolMatrix, IndexVector};

#[derive(Clone, Debug, PartialEq)]
pub struct GroupTestInstance {
    pub tests: BoolMatrix,
    pub outcomes: IndexVector,
    /// Upper bound on the number of defectives, if known.
    pub max_defects: Option<usize>,
    /// Test crossover probability, if the outcomes are noisy.
    pub crossover: Option<f64>,
}

impl GroupTestInstance {
    pub fn new(tests: BoolMatrix, outcomes: IndexVector) -> Result<Self> {
        if outcomes.len() != tests.nrows() {
            return Err(Error::DimensionMismatch { expected: tests.nrows(), found: outcomes.len() });
        }
        Ok(Self { tests, outcomes, max_defects: None, crossover: None })
    }

    pub fn with_max_defects(mut self, t: usize) -> Self {
        self.max_defects = Some(t);
        self
    }

    pub fn n(&self) -> usize {
        self.tests.ncols()
    }

    /// Whether `k` reproduces every outcome.
    pub fn consistent(&self, k: &IndexVector) -> bool {
        self.tests.matvec_unchecked(k) == self.outcomes
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum DecodeFailure {
    #[error("a positive test contains no possible defective")]
    Inconsistent,
    #[error("some possible defectives could not be resolved")]
    Undetermined,
    #[error("linear program is infeasible or unbounded")]
    LpFailed,
    #[error("decoded support does not reproduce the outcomes")]
    Verification,
    #[error("decoded support exceeds the defect bound")]
    TooManyDefects,
}

pub fn decode_identity(y: &IndexVector) -> IndexVector {
    y.clone()
}

/// Items left by COMP elimination and the subset DD confirms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompDd {
    /// Items in no negative test.
    pub possible: IndexVector,
    /// Possible items that are the only candidate of some positive test.
    pub definite: IndexVector,
}

impl CompDd {
    /// Possible items DD could not confirm.
    pub fn undetermined(&self) -> IndexVector {
        self.possible.checked_sub(&self.definite).expect("definite is a subset of possible")
    }
}

/// Runs COMP then DD. Fails when a positive test has no possible item.
pub fn comp_dd(inst: &GroupTestInstance) -> Result<CompDd, DecodeFailure> {
    let n = inst.n();
    let mut cleared = IndexVector::zeros(n);
    for (p, row) in inst.tests.rows().iter().enumerate() {
        if !inst.outcomes.get(p) {
            cleared.or_assign(row);
        }
    }
    let possible = cleared.complement();
    let mut definite = IndexVector::zeros(n);
    for (p, row) in inst.tests.rows().iter().enumerate() {
        if inst.outcomes.get(p) {
            let candidates = row.and(&possible);
            let mut ones = candidates.ones_iter();
            match (ones.next(), ones.next()) {
                (None, _) => return Err(DecodeFailure::Inconsistent),
                (Some(i), None) => definite.set(i, true),
                _ => {}
            }
        }
    }
    Ok(CompDd { possible, definite })
}

/// COMP elimination followed by DD confirmation.
///
/// Items in any negative test are cleared. An item is a definite defective
/// when it is the only remaining candidate in some positive test. With
/// `strict` the decode fails if candidates remain that are neither cleared
/// nor confirmed. Otherwise positive tests the definite set leaves
/// unexplained are covered greedily (SCOMP): the undetermined item sitting in
/// the most unexplained tests is added until none remain.
pub fn decode_comp_dd(inst: &GroupTestInstance, strict: bool) -> Result<IndexVector, DecodeFailure> {
    let CompDd { possible, mut definite } = comp_dd(inst)?;
    if strict && definite != possible {
        return Err(DecodeFailure::Undetermined);
    }
    let rows = inst.tests.rows();
    let mut open: Vec<usize> =
        (0..rows.len()).filter(|&p| inst.outcomes.get(p) && !rows[p].intersects(&definite)).collect();
    while !open.is_empty() {
        let mut hits = vec![0usize; inst.n()];
        for &p in &open {
            for i in rows[p].and(&possible).ones_iter() {
                hits[i] += 1;
            }
        }
        // first index wins ties; comp_dd guarantees every open test has a candidate
        let best = (0..hits.len()).max_by_key(|&i| (hits[i], std::cmp::Reverse(i))).expect("n > 0");
        definite.set(best, true);
        open.retain(|&p| !rows[p].get(best));
    }
    if inst.max_defects.is_some_and(|t| definite.degree() > t) {
        return Err(DecodeFailure::TooManyDefects);
    }
    Ok(definite)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpOptions {
    /// Weight of the slack penalty.
    pub lambda: f64,
    /// `k_i` above this value is rounded to 1.
    pub threshold: f64,
    /// Reject decodes whose re-encoding differs from the outcomes.
    pub verify: bool,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self { lambda: 1.0, threshold: 0.5, verify: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpDecode {
    pub k: IndexVector,
    pub objective: f64,
    /// Relaxed solution before rounding.
    pub relaxed: Vec<f64>,
}

/// Solves `min sum k + lambda sum xi` over `k >= 0` with one slack per test:
/// `d_p.k = xi_p` on negative tests, `d_p.k + xi_p >= 1` and `xi_p <= 1` on
/// positive tests. The solution is rounded at `opts.threshold`.
pub fn solve_lp(inst: &GroupTestInstance, opts: &LpOptions) -> Result<LpDecode, DecodeFailure> {
    let n = inst.n();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let k: Vec<_> = (0..n).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for (p, row) in inst.tests.rows().iter().enumerate() {
        let positive = inst.outcomes.get(p);
        let xi = lp.add_var(opts.lambda, (0.0, if positive { 1.0 } else { f64::INFINITY }));
        let mut expr: Vec<_> = row.ones_iter().map(|i| (k[i], 1.0)).collect();
        if positive {
            expr.push((xi, 1.0));
            lp.add_constraint(expr, ComparisonOp::Ge, 1.0);
        } else {
            expr.push((xi, -1.0));
            lp.add_constraint(expr, ComparisonOp::Eq, 0.0);
        }
    }
    let outcome = lp.solve().map_err(|_| DecodeFailure::LpFailed)?;
    let solution = outcome.solution().ok_or(DecodeFailure::LpFailed)?;
    let relaxed: Vec<f64> = k.iter().map(|&v| solution.var_value(v)).collect();
    let decoded = IndexVector::from_indices(n, relaxed.iter().enumerate().filter(|(_, &v)| v > opts.threshold).map(|(i, _)| i));
    Ok(LpDecode { k: decoded, objective: solution.objective(), relaxed })
}

pub fn decode_lp(inst: &GroupTestInstance, opts: &LpOptions) -> Result<IndexVector, DecodeFailure> {
    let LpDecode { k, .. } = solve_lp(inst, opts)?;
    if inst.max_defects.is_some_and(|t| k.degree() > t) {
        return Err(DecodeFailure::TooManyDefects);
    }
    if opts.verify && !inst.consistent(&k) {
        return Err(DecodeFailure::Verification);
    }
    Ok(k)
}

/// `y_p = 1{|u_p| <= gamma}`: a suppressed row means the delay hit `k*`,
/// which is a positive test.
pub fn threshold_outcomes(u_rows: &[f64], gamma: f64) -> IndexVector {
    IndexVector::from_bools(&u_rows.iter().map(|u| u.abs() <= gamma).collect::<Vec<_>>())
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Upper tail `Q(x)`.
fn q_tail(x: f64) -> f64 {
    std_normal().cdf(-x)
}

/// `ln Q(x)`, using the asymptotic series once the tail underflows.
fn ln_q(x: f64) -> f64 {
    let q = q_tail(x);
    if q > 1e-300 {
        return q.ln();
    }
    let x2 = x * x;
    -0.5 * x2 - (x * (2.0 * std::f64::consts::PI).sqrt()).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
}

/// `(p10, p01)` of the threshold test at `gamma`: `p10` is the chance a
/// present signal of magnitude `rho` reads as absent, `p01` the chance pure
/// noise reads as present.
pub fn crossover_probs(gamma: f64, rho: f64, sigma: f64) -> (f64, f64) {
    let nd = std_normal();
    let p10 = nd.cdf((gamma - rho) / sigma) - nd.cdf((-gamma - rho) / sigma);
    let p01 = 2.0 * q_tail(gamma / sigma);
    (p10, p01)
}

/// `ln p10 - ln p01`, stable when both probabilities underflow.
fn log_gap(gamma: f64, rho: f64, sigma: f64) -> f64 {
    let a = (rho - gamma) / sigma;
    let b = (rho + gamma) / sigma;
    let (la, lb) = (ln_q(a), ln_q(b));
    let ln_p10 = la + (-(lb - la).exp()).ln_1p();
    let ln_p01 = std::f64::consts::LN_2 + ln_q(gamma / sigma);
    ln_p10 - ln_p01
}

/// Threshold `gamma` equalizing the two crossover probabilities, and the
/// common crossover `q`.
pub fn solve_gamma(rho: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0 && rho.is_finite() && sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("solve_gamma needs rho, sigma > 0 (got {rho}, {sigma})")));
    }
    // the gap is increasing in gamma, negative at 0 and positive for large gamma
    let mut lo = 0.0;
    let mut hi = rho;
    while log_gap(hi, rho, sigma) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if log_gap(mid, rho, sigma) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gamma = 0.5 * (lo + hi);
    let (_, p01) = crossover_probs(gamma, rho, sigma);
    Ok((gamma, p01))
}

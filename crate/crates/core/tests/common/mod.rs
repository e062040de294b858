//! Fixtures and slow reference implementations shared by the integration
//! tests and the acceptance runner.

#![allow(dead_code)]

use sparse_mobius::designs::{Regime, SubsamplingDesign};
use sparse_mobius::{BoolMatrix, IndexVector, SparseMobius};

pub fn iv(s: &str) -> IndexVector {
    s.parse().expect("bit string")
}

/// "Her acting never fails to impress", one variable per word.
pub const WORDS: [&str; 6] = ["Her", "acting", "never", "fails", "to", "impress"];

/// The four largest interactions of the sentiment toy: never, never+fails,
/// fails, impress.
pub fn toy_keys() -> [IndexVector; 4] {
    [iv("001000"), iv("001100"), iv("000100"), iv("000001")]
}

pub fn toy_coefficients() -> SparseMobius {
    let [k1, k2, k3, k4] = toy_keys();
    SparseMobius::from_entries(6, [(k1, -0.8), (k2, 2.2), (k3, -0.9), (k4, 0.48)]).expect("n = 6")
}

/// Two hand-picked subsampling groups with `b = 2`. Group 0 sees one
/// zeroton, two singletons and a multiton; group 1 two zerotons, one
/// singleton and a multiton. "Her" in the first row of group 0 touches no
/// coefficient but keeps the groups from sharing any mask besides all-ones.
/// `delays` selects `D = I` or no delays at all.
pub fn toy_designs(delays: bool) -> Vec<SubsamplingDesign> {
    let hs = [["101001", "000101"], ["001100", "000001"]];
    hs.iter()
        .enumerate()
        .map(|(group, rows)| SubsamplingDesign {
            group,
            regime: Regime::LowDegree,
            h: BoolMatrix::from_strs(rows).expect("rows"),
            d: if delays { BoolMatrix::identity(6) } else { BoolMatrix::empty(6) },
            split: None,
            identity_d: true,
        })
        .collect()
}

/// `F(k) = sum_{m <= k} (-1)^{|k| - |m|} f(m)`, one subset at a time.
pub fn naive_mobius(values: &[f64]) -> Vec<f64> {
    (0..values.len())
        .map(|k| {
            // walk the submasks of k
            let mut acc = 0.0;
            let mut m = k;
            loop {
                let sign = if (k ^ m).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * values[m];
                if m == 0 {
                    break;
                }
                m = (m - 1) & k;
            }
            acc
        })
        .collect()
}

/// `f(m) = sum_{k <= m} F(k)`, one subset at a time.
pub fn naive_zeta(coeffs: &[f64]) -> Vec<f64> {
    (0..coeffs.len())
        .map(|m| {
            let mut acc = 0.0;
            let mut k = m;
            loop {
                acc += coeffs[k];
                if k == 0 {
                    break;
                }
                k = (k - 1) & m;
            }
            acc
        })
        .collect()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Shapley and Banzhaf values from their marginal-contribution definitions
/// over all `2^n` coalitions. `values[m]` is `f` at the mask with integer
/// encoding `m` (bit `i` is variable `i`).
pub fn exhaustive_attributions(n: usize, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut sv = vec![0.0; n];
    let mut bz = vec![0.0; n];
    let nf = factorial(n);
    for (i, (s_i, b_i)) in sv.iter_mut().zip(bz.iter_mut()).enumerate() {
        let bit = 1usize << i;
        for s in 0..1usize << n {
            if s & bit != 0 {
                continue;
            }
            let size = s.count_ones() as usize;
            let marginal = values[s | bit] - values[s];
            *s_i += factorial(size) * factorial(n - size - 1) / nf * marginal;
            *b_i += marginal;
        }
        *b_i /= (1u64 << (n - 1)) as f64;
    }
    (sv, bz)
}

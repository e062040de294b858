//! Fit quality and attribution scores derived from Möbius coefficients.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::IndexVector;
use crate::oracle::{checked_query, ValueOracle};
use crate::transform::{zeta_in_place, SparseMobius};

/// Largest `n` for exact faithfulness.
pub const EXACT_FIT_MAX_DIM: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum FitMode {
    Exact,
    Sampled { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub r2: f64,
    /// `sum f(m)^2` (mean over masks when sampled).
    pub norm_f: f64,
    /// `sum (fhat(m) - f(m))^2` (mean over masks when sampled).
    pub norm_residual: f64,
    /// Number of masks evaluated.
    pub sample_count: usize,
    /// Delta-method standard error of `r2` in sampled mode.
    pub std_error: Option<f64>,
}

fn r2_of(norm_f: f64, norm_residual: f64) -> f64 {
    if norm_f > 0.0 {
        1.0 - norm_residual / norm_f
    } else if norm_residual == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    }
}

/// `R^2 = 1 - |fhat - f|^2 / |f|^2` of `f_hat` against the oracle.
pub fn faithfulness(f_hat: &SparseMobius, oracle: &(impl ValueOracle + ?Sized), mode: FitMode) -> Result<FitReport> {
    let n = oracle.dim();
    if f_hat.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: f_hat.dim() });
    }
    match mode {
        FitMode::Exact => {
            if n > EXACT_FIT_MAX_DIM {
                return Err(Error::DimensionTooLarge { dim: n, max: EXACT_FIT_MAX_DIM });
            }
            let mut approx = f_hat.to_dense()?.into_values();
            zeta_in_place(&mut approx);
            let total = 1usize << n;
            let chunk = 4096;
            let sums: Vec<(f64, f64)> = (0..total)
                .step_by(chunk)
                .collect::<Vec<_>>()
                .par_iter()
                .map(|&start| -> Result<(f64, f64)> {
                    let end = (start + chunk).min(total);
                    let masks: Vec<_> = (start..end).map(|i| IndexVector::from_u64(n, i as u64)).collect();
                    let values = checked_query(oracle, &masks)?;
                    Ok(values.iter().zip(&approx[start..end]).fold((0.0, 0.0), |(ff, rr), (f, a)| {
                        (ff + f * f, rr + (a - f) * (a - f))
                    }))
                })
                .collect::<Result<_>>()?;
            let (norm_f, norm_residual) = sums.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
            Ok(FitReport { r2: r2_of(norm_f, norm_residual), norm_f, norm_residual, sample_count: total, std_error: None })
        }
        FitMode::Sampled { samples, seed } => {
            if samples < 2 {
                return Err(Error::InvalidConfig("sampled faithfulness needs at least 2 masks".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let masks: Vec<_> = (0..samples).map(|_| IndexVector::bernoulli(n, 0.5, &mut rng)).collect();
            let values: Vec<f64> =
                masks.par_chunks(1024).map(|b| checked_query(oracle, b)).collect::<Result<Vec<_>>>()?.concat();
            let approx: Vec<f64> = masks.par_iter().map(|m| f_hat.evaluate_unchecked(m)).collect();
            let f2: Vec<f64> = values.iter().map(|f| f * f).collect();
            let e2: Vec<f64> = values.iter().zip(&approx).map(|(f, a)| (a - f) * (a - f)).collect();
            let nn = samples as f64;
            let mean = |x: &[f64]| x.iter().sum::<f64>() / nn;
            let (a, b) = (mean(&e2), mean(&f2));
            let var = |x: &[f64], mx: f64| x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / (nn - 1.0);
            let cov = e2.iter().zip(&f2).map(|(x, y)| (x - a) * (y - b)).sum::<f64>() / (nn - 1.0);
            let std_error = (b > 0.0).then(|| {
                let v = (var(&e2, a) / (b * b) - 2.0 * a * cov / b.powi(3) + a * a * var(&f2, b) / b.powi(4)) / nn;
                v.max(0.0).sqrt()
            });
            Ok(FitReport { r2: r2_of(b, a), norm_f: b, norm_residual: a, sample_count: samples, std_error })
        }
    }
}

/// `sv(i) = sum_{k_i = 1} F(k) / |k|`.
pub fn shapley(f: &SparseMobius) -> Vec<f64> {
    let mut out = vec![0.0; f.dim()];
    for (k, v) in f.iter() {
        let w = v / k.degree().max(1) as f64;
        for i in k.ones_iter() {
            out[i] += w;
        }
    }
    out
}

/// `bz(i) = sum_{k_i = 1} F(k) / 2^{|k| - 1}`.
pub fn banzhaf(f: &SparseMobius) -> Vec<f64> {
    let mut out = vec![0.0; f.dim()];
    for (k, v) in f.iter() {
        let w = v * 0.5f64.powi(k.degree() as i32 - 1);
        for i in k.ones_iter() {
            out[i] += w;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeRow {
    pub degree: usize,
    pub count: usize,
    /// `sum F(k)^2` over coefficients of this degree.
    pub energy: f64,
    pub cumulative_energy: f64,
}

/// Count and energy per interaction degree, ascending, degrees with no
/// coefficient omitted.
pub fn degree_profile(f: &SparseMobius) -> Vec<DegreeRow> {
    let mut by_degree = std::collections::BTreeMap::<usize, (usize, f64)>::new();
    for (k, v) in f.iter() {
        let e = by_degree.entry(k.degree()).or_default();
        e.0 += 1;
        e.1 += v * v;
    }
    let mut cumulative = 0.0;
    by_degree
        .into_iter()
        .map(|(degree, (count, energy))| {
            cumulative += energy;
            DegreeRow { degree, count, energy, cumulative_energy: cumulative }
        })
        .collect()
}

/// `1 - |Fhat - F|^2 / |F|^2` over the union of supports.
pub fn coefficient_r2(truth: &SparseMobius, estimate: &SparseMobius) -> f64 {
    let norm: f64 = truth.iter().map(|(_, v)| v * v).sum();
    let mut resid: f64 = truth.iter().map(|(k, v)| (estimate.get(k) - v).powi(2)).sum();
    resid += estimate.iter().filter(|(k, _)| !truth.contains(k)).map(|(_, v)| v * v).sum::<f64>();
    r2_of(norm, resid)
}

/// F1 score of the recovered support.
pub fn support_f1(truth: &SparseMobius, estimate: &SparseMobius) -> f64 {
    if truth.is_empty() && estimate.is_empty() {
        return 1.0;
    }
    let tp = estimate.keys().filter(|k| truth.contains(k)).count() as f64;
    2.0 * tp / (truth.len() + estimate.len()) as f64
}

/// Exact equality of supports with values within `tol`.
pub fn same_coefficients(a: &SparseMobius, b: &SparseMobius, tol: f64) -> bool {
    a.len() == b.len() && a.iter().all(|(k, v)| b.contains(k) && (b.get(k) - v).abs() <= tol)
}

/// `feature,shapley,banzhaf` rows.
pub fn write_attribution_csv<W: Write>(writer: W, shapley: &[f64], banzhaf: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "shapley", "banzhaf"])?;
    for (i, (s, b)) in shapley.iter().zip(banzhaf).enumerate() {
        w.write_record([i.to_string(), s.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_degree_csv<W: Write>(writer: W, rows: &[DegreeRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Uniformly random masks, for callers that want their own sampled checks.
pub fn random_masks(n: usize, count: usize, seed: u64) -> Vec<IndexVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| IndexVector::bernoulli(n, 0.5, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{FnOracle, SparseOracle};
    use crate::transform::brute_force_transform;
    use proptest::prelude::*;
    use rand::Rng;

    fn iv(s: &str) -> IndexVector {
        s.parse().unwrap()
    }

    fn random_sparse(n: usize, k: usize, seed: u64) -> SparseMobius {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<_> =
            (0..k).map(|_| (IndexVector::bernoulli(n, 0.4, &mut rng), rng.random_range(-1.0..1.0))).collect();
        SparseMobius::from_entries(n, entries).unwrap()
    }

    /// Exact Shapley by the subset formula on the value function.
    fn shapley_brute(f: &SparseMobius) -> Vec<f64> {
        let n = f.dim();
        let fact = |m: usize| (1..=m).map(|x| x as f64).product::<f64>();
        (0..n)
            .map(|i| {
                (0..1u64 << n)
                    .filter(|s| s >> i & 1 == 0)
                    .map(|s| {
                        let size = s.count_ones() as usize;
                        let w = fact(size) * fact(n - size - 1) / fact(n);
                        let with = f.evaluate(&IndexVector::from_u64(n, s | 1 << i)).unwrap();
                        let without = f.evaluate(&IndexVector::from_u64(n, s)).unwrap();
                        w * (with - without)
                    })
                    .sum()
            })
            .collect()
    }

    fn banzhaf_brute(f: &SparseMobius) -> Vec<f64> {
        let n = f.dim();
        (0..n)
            .map(|i| {
                let total: f64 = (0..1u64 << n)
                    .filter(|s| s >> i & 1 == 0)
                    .map(|s| {
                        f.evaluate(&IndexVector::from_u64(n, s | 1 << i)).unwrap()
                            - f.evaluate(&IndexVector::from_u64(n, s)).unwrap()
                    })
                    .sum();
                total / (1u64 << (n - 1)) as f64
            })
            .collect()
    }

    #[test]
    fn pair_interaction_split() {
        let f = SparseMobius::from_entries(3, [(iv("110"), 2.0)]).unwrap();
        assert_eq!(shapley(&f), vec![1.0, 1.0, 0.0]);
        assert_eq!(banzhaf(&f), vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn linear_function_scores() {
        let f = SparseMobius::from_entries(4, [(iv("1000"), 0.5), (iv("0010"), -2.0), (iv("0001"), 3.0)]).unwrap();
        assert_eq!(shapley(&f), vec![0.5, 0.0, -2.0, 3.0]);
        assert_eq!(banzhaf(&f), shapley(&f));
    }

    #[test]
    fn scores_match_enumeration() {
        for seed in 0..3 {
            let f = random_sparse(10, 15, seed);
            for (a, b) in shapley(&f).iter().zip(shapley_brute(&f)) {
                assert!((a - b).abs() < 1e-9);
            }
            for (a, b) in banzhaf(&f).iter().zip(banzhaf_brute(&f)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn full_transform_is_faithful() {
        let oracle = FnOracle::new(8, |m: &IndexVector| (m.degree() as f64).sin() + m.get(3) as u8 as f64);
        let f = brute_force_transform(&oracle).unwrap();
        let fit = faithfulness(&f, &oracle, FitMode::Exact).unwrap();
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert_eq!(fit.sample_count, 256);
    }

    #[test]
    fn empty_fit_of_zero_mean_function() {
        // f(m) = +1 / -1 by parity of variable 0: mean zero
        let oracle = FnOracle::new(4, |m: &IndexVector| if m.get(0) { 1.0 } else { -1.0 });
        let fit = faithfulness(&SparseMobius::new(4), &oracle, FitMode::Exact).unwrap();
        assert_eq!(fit.r2, 0.0);
    }

    #[test]
    fn dropped_coefficient_matches_direct_sum() {
        let n = 12;
        let entries: Vec<_> = (0..10).map(|i| (IndexVector::from_indices(n, [i]), 1.0)).collect();
        let truth = SparseMobius::from_entries(n, entries.clone()).unwrap();
        let partial = SparseMobius::from_entries(n, entries[1..].iter().cloned()).unwrap();
        let oracle = SparseOracle::new(truth.clone());
        let fit = faithfulness(&partial, &oracle, FitMode::Exact).unwrap();
        let (mut ff, mut rr) = (0.0, 0.0);
        for i in 0..1u64 << n {
            let m = IndexVector::from_u64(n, i);
            let f = truth.evaluate(&m).unwrap();
            let a = partial.evaluate(&m).unwrap();
            ff += f * f;
            rr += (a - f) * (a - f);
        }
        assert!((fit.r2 - (1.0 - rr / ff)).abs() < 1e-12);
    }

    #[test]
    fn sampled_fit_is_close() {
        let n = 12;
        let truth = random_sparse(n, 20, 4);
        let partial = SparseMobius::from_entries(n, truth.iter().skip(3).map(|(k, v)| (k.clone(), v))).unwrap();
        let oracle = SparseOracle::new(truth);
        let exact = faithfulness(&partial, &oracle, FitMode::Exact).unwrap();
        let sampled = faithfulness(&partial, &oracle, FitMode::Sampled { samples: 20_000, seed: 1 }).unwrap();
        let se = sampled.std_error.unwrap();
        assert!((exact.r2 - sampled.r2).abs() < 5.0 * se + 1e-9, "{} vs {} (se {se})", exact.r2, sampled.r2);
    }

    #[test]
    fn degree_profiles() {
        assert!(degree_profile(&SparseMobius::new(5)).is_empty());
        let f = SparseMobius::from_entries(5, [(iv("11100"), 2.0)]).unwrap();
        assert_eq!(
            degree_profile(&f),
            vec![DegreeRow { degree: 3, count: 1, energy: 4.0, cumulative_energy: 4.0 }]
        );
    }

    #[test]
    fn coefficient_scores() {
        let truth = SparseMobius::from_entries(3, [(iv("100"), 1.0), (iv("010"), 1.0)]).unwrap();
        assert_eq!(coefficient_r2(&truth, &truth), 1.0);
        assert_eq!(support_f1(&truth, &truth), 1.0);
        let est = SparseMobius::from_entries(3, [(iv("100"), 1.0), (iv("001"), 1.0)]).unwrap();
        assert_eq!(coefficient_r2(&truth, &est), 0.0);
        assert_eq!(support_f1(&truth, &est), 0.5);
        assert_eq!(coefficient_r2(&truth, &SparseMobius::new(3)), 0.0);
    }

    #[test]
    fn csv_output() {
        let mut buf = Vec::new();
        write_attribution_csv(&mut buf, &[1.0, 0.5], &[1.0, 0.25]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "feature,shapley,banzhaf\n0,1,1\n1,0.5,0.25\n");
    }

    proptest! {
        #[test]
        fn argmax_stable_under_scaling(seed in 0u64..1000, c in 0.01f64..100.0) {
            let f = random_sparse(8, 6, seed);
            let scaled = SparseMobius::from_entries(8, f.iter().map(|(k, v)| (k.clone(), c * v))).unwrap();
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i);
            let (a, b) = (shapley(&f), shapley(&scaled));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((c * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
            let top = a.iter().cloned().fold(f64::MIN, f64::max);
            let ties = a.iter().filter(|&&x| (x - top).abs() < 1e-12).count();
            if ties == 1 {
                prop_assert_eq!(argmax(&a), argmax(&b));
            }
        }

        #[test]
        fn zeta_reconstructs_function(values in proptest::collection::vec(-5.0f64..5.0, 1usize << 6)) {
            let table = values.clone();
            let oracle = FnOracle::new(6, move |m: &IndexVector| table[m.to_u64().unwrap() as usize]);
            let f = brute_force_transform(&oracle).unwrap();
            for (i, v) in values.iter().enumerate() {
                prop_assert!((f.evaluate(&IndexVector::from_u64(6, i as u64)).unwrap() - v).abs() < 1e-9);
            }
        }
    }
}

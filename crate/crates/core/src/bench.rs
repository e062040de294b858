//! Parameter sweeps over synthetic instances.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::DesignConfig;
use crate::error::Result;
use crate::metrics::{coefficient_r2, faithfulness, same_coefficients, support_f1, FitMode};
use crate::peeling::{run, EngineConfig, RunOutput};
use crate::synth::{generate, sigma_for_snr_db, SyntheticSpec, ValueLaw};
use crate::transform::brute_force_transform;

/// One CSV line: either a single trial or the aggregate of a cell.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: String,
    pub cell: usize,
    pub n: usize,
    pub b: usize,
    pub t: Option<usize>,
    pub snr_db: Option<f64>,
    pub trial: Option<usize>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub samples: usize,
    pub unique_samples: Option<usize>,
    pub success: Option<f64>,
    pub r2: Option<f64>,
    pub r2_std: Option<f64>,
    pub r2_median: Option<f64>,
    pub faithfulness: Option<f64>,
    pub f1: Option<f64>,
    pub runtime_s: Option<f64>,
    pub sampling_s: Option<f64>,
    pub transform_s: Option<f64>,
    pub detection_s: Option<f64>,
    pub peeling_s: Option<f64>,
    pub brute_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub trials: Vec<SweepRow>,
    pub cells: Vec<SweepRow>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.trials.iter().chain(&self.cells) {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn cell(&self, index: usize) -> Option<&SweepRow> {
        self.cells.iter().find(|r| r.cell == index)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly).0
}

/// `(slope, intercept, r^2)` of an ordinary least-squares line.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

fn cell_seed(base: u64, cell: usize) -> u64 {
    base.wrapping_add(1_000_003u64.wrapping_mul(cell as u64))
}

fn phase_fields(row: &mut SweepRow, out: &RunOutput) {
    let t = &out.timings;
    row.runtime_s = Some(t.total.as_secs_f64());
    row.sampling_s = Some(t.sampling.as_secs_f64());
    row.transform_s = Some(t.transforms.as_secs_f64());
    row.detection_s = Some(t.detection.as_secs_f64());
    row.peeling_s = Some(t.peeling.as_secs_f64());
    row.samples = out.report.total_queries;
    row.unique_samples = Some(out.report.unique_queries);
}

/// Grid for the perfect-reconstruction sweep (uniform supports, `D = I`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionGrid {
    pub ns: Vec<usize>,
    pub bs: Vec<usize>,
    pub k: usize,
    pub c: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ReconstructionGrid {
    fn default() -> Self {
        Self { ns: vec![32, 64, 128], bs: (4..=10).collect(), k: 100, c: 3, trials: 20, seed: 0 }
    }
}

pub fn sweep_reconstruction(grid: &ReconstructionGrid) -> Result<SweepResult> {
    let cells: Vec<(usize, usize)> = grid.ns.iter().flat_map(|&n| grid.bs.iter().map(move |&b| (n, b))).collect();
    let mut result = SweepResult { name: "reconstruction".into(), ..SweepResult::default() };
    for (ci, &(n, b)) in cells.iter().enumerate() {
        let base = cell_seed(grid.seed, ci);
        let rows: Vec<SweepRow> = (0..grid.trials)
            .into_par_iter()
            .map(|trial| -> Result<SweepRow> {
                let seed = base + trial as u64;
                let inst = generate(&SyntheticSpec::uniform(n, grid.k, seed))?;
                let cfg = EngineConfig::new(DesignConfig::uniform(n, b, grid.c).with_seed(seed));
                let out = run(&inst.oracle, &cfg)?;
                let mut row = SweepRow {
                    kind: "trial".into(),
                    cell: ci,
                    n,
                    b,
                    trial: Some(trial),
                    seed: Some(seed),
                    success: Some(same_coefficients(&inst.truth, &out.coefficients, 1e-8) as u8 as f64),
                    r2: Some(coefficient_r2(&inst.truth, &out.coefficients)),
                    f1: Some(support_f1(&inst.truth, &out.coefficients)),
                    ..SweepRow::default()
                };
                phase_fields(&mut row, &out);
                Ok(row)
            })
            .collect::<Result<_>>()?;
        result.cells.push(aggregate(ci, n, b, None, None, &rows));
        result.trials.extend(rows);
    }
    Ok(result)
}

fn aggregate(cell: usize, n: usize, b: usize, t: Option<usize>, snr_db: Option<f64>, rows: &[SweepRow]) -> SweepRow {
    let col = |f: fn(&SweepRow) -> Option<f64>| -> Vec<f64> { rows.iter().filter_map(f).collect() };
    let opt_mean = |v: Vec<f64>| (!v.is_empty()).then(|| mean(&v));
    let r2 = col(|r| r.r2);
    SweepRow {
        kind: "aggregate".into(),
        cell,
        n,
        b,
        t,
        snr_db,
        trials: Some(rows.len()),
        samples: rows.first().map_or(0, |r| r.samples),
        unique_samples: rows.iter().filter_map(|r| r.unique_samples).max(),
        success: opt_mean(col(|r| r.success)),
        r2_std: (!r2.is_empty()).then(|| std_dev(&r2)),
        r2_median: (!r2.is_empty()).then(|| median(&r2)),
        r2: opt_mean(r2),
        faithfulness: opt_mean(col(|r| r.faithfulness)),
        f1: opt_mean(col(|r| r.f1)),
        runtime_s: opt_mean(col(|r| r.runtime_s)),
        sampling_s: opt_mean(col(|r| r.sampling_s)),
        transform_s: opt_mean(col(|r| r.transform_s)),
        detection_s: opt_mean(col(|r| r.detection_s)),
        peeling_s: opt_mean(col(|r| r.peeling_s)),
        brute_s: opt_mean(col(|r| r.brute_s)),
        ..SweepRow::default()
    }
}

/// Grid for the noisy sweep over SNR in dB (`f64::INFINITY` is noiseless).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrGrid {
    pub n: usize,
    pub k: usize,
    pub t: usize,
    pub b: usize,
    pub c: usize,
    pub snrs_db: Vec<f64>,
    pub rho: f64,
    pub trials: usize,
    pub seed: u64,
    /// Overrides the computed delay row count `P`.
    pub delay_rows: Option<usize>,
    /// Also report function-domain faithfulness when `n <= 20`.
    pub faithfulness: bool,
}

impl Default for SnrGrid {
    fn default() -> Self {
        Self {
            n: 100,
            k: 20,
            t: 5,
            b: 5,
            c: 3,
            snrs_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            rho: 1.0,
            trials: 10,
            seed: 0,
            delay_rows: None,
            faithfulness: false,
        }
    }
}

impl SnrGrid {
    /// The large-scale setting: `n = K = 500`, `P = 1000`.
    pub fn large_scale() -> Self {
        Self { n: 500, k: 500, b: 9, delay_rows: Some(1000), ..Self::default() }
    }
}

pub fn sweep_snr(grid: &SnrGrid) -> Result<SweepResult> {
    let mut result = SweepResult { name: "snr".into(), ..SweepResult::default() };
    for (ci, &snr) in grid.snrs_db.iter().enumerate() {
        let sigma = sigma_for_snr_db(grid.rho, snr);
        let base = cell_seed(grid.seed, ci);
        let rows: Vec<SweepRow> = (0..grid.trials)
            .into_par_iter()
            .map(|trial| -> Result<SweepRow> {
                let seed = base + trial as u64;
                let spec = SyntheticSpec {
                    value_law: ValueLaw::Fixed { rho: grid.rho },
                    sigma,
                    ..SyntheticSpec::low_degree(grid.n, grid.k, grid.t, seed)
                };
                let inst = generate(&spec)?;
                let mut design = DesignConfig::noisy(grid.n, grid.b, grid.c, grid.t, sigma).with_seed(seed);
                design.rho = Some(grid.rho);
                design.delay_rows = grid.delay_rows;
                let out = run(&inst.oracle, &EngineConfig::new(design))?;
                let fit = if grid.faithfulness && grid.n <= crate::metrics::EXACT_FIT_MAX_DIM {
                    Some(faithfulness(&out.coefficients, inst.oracle.inner(), FitMode::Exact)?.r2)
                } else {
                    None
                };
                let mut row = SweepRow {
                    kind: "trial".into(),
                    cell: ci,
                    n: grid.n,
                    b: grid.b,
                    t: Some(grid.t),
                    snr_db: Some(snr),
                    trial: Some(trial),
                    seed: Some(seed),
                    success: Some(same_coefficients(&inst.truth, &out.coefficients, 1e-8) as u8 as f64),
                    r2: Some(coefficient_r2(&inst.truth, &out.coefficients)),
                    f1: Some(support_f1(&inst.truth, &out.coefficients)),
                    faithfulness: fit,
                    ..SweepRow::default()
                };
                phase_fields(&mut row, &out);
                Ok(row)
            })
            .collect::<Result<_>>()?;
        result.cells.push(aggregate(ci, grid.n, grid.b, Some(grid.t), Some(snr), &rows));
        result.trials.extend(rows);
    }
    Ok(result)
}

/// Grid for wall-clock scaling in `n` (uniform supports, `D = I`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeGrid {
    pub ns: Vec<usize>,
    pub k: usize,
    pub b: usize,
    pub c: usize,
    pub trials: usize,
    pub seed: u64,
    /// Time the brute-force transform for `n` up to this value.
    pub brute_max_n: usize,
}

impl Default for RuntimeGrid {
    fn default() -> Self {
        Self { ns: vec![64, 128, 256, 512], k: 50, b: 8, c: 3, trials: 3, seed: 0, brute_max_n: 20 }
    }
}

/// Trials run one at a time so the timings do not compete for cores.
pub fn sweep_runtime(grid: &RuntimeGrid) -> Result<SweepResult> {
    let mut result = SweepResult { name: "runtime".into(), ..SweepResult::default() };
    for (ci, &n) in grid.ns.iter().enumerate() {
        let base = cell_seed(grid.seed, ci);
        let mut rows = Vec::with_capacity(grid.trials);
        for trial in 0..grid.trials {
            let seed = base + trial as u64;
            let inst = generate(&SyntheticSpec::uniform(n, grid.k, seed))?;
            let b = grid.b.min(n / grid.c);
            let out = run(&inst.oracle, &EngineConfig::new(DesignConfig::uniform(n, b, grid.c).with_seed(seed)))?;
            let brute_s = (n <= grid.brute_max_n)
                .then(|| {
                    let t0 = Instant::now();
                    brute_force_transform(&inst.oracle).map(|_| t0.elapsed().as_secs_f64())
                })
                .transpose()?;
            let mut row = SweepRow {
                kind: "trial".into(),
                cell: ci,
                n,
                b,
                trial: Some(trial),
                seed: Some(seed),
                success: Some(same_coefficients(&inst.truth, &out.coefficients, 1e-8) as u8 as f64),
                brute_s,
                ..SweepRow::default()
            };
            phase_fields(&mut row, &out);
            rows.push(row);
        }
        result.cells.push(aggregate(ci, n, grid.b.min(n / grid.c), None, None, &rows));
        result.trials.extend(rows);
    }
    Ok(result)
}

/// Slope of mean runtime against `n` on log-log axes.
pub fn runtime_slope(result: &SweepResult) -> f64 {
    let xs: Vec<f64> = result.cells.iter().map(|c| c.n as f64).collect();
    let ys: Vec<f64> = result.cells.iter().map(|c| c.runtime_s.unwrap_or(f64::NAN)).collect();
    loglog_slope(&xs, &ys)
}

//! The subsample / detect / peel loop.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::designs::{make_designs, DesignConfig, SubsamplingDesign};
use crate::detection::{BinDetector, BinType, DetectorConfig};
use crate::error::Result;
use crate::index::IndexVector;
use crate::oracle::ValueOracle;
use crate::sampling::{build_bin_tables, BinTable, DEFAULT_BATCH_SIZE};
use crate::transform::{RecoveryStats, SparseMobius};

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub design: DesignConfig,
    pub detector: DetectorConfig,
    /// Defaults to four times the number of non-empty bins of the busiest
    /// group after the first scan.
    #[serde(default)]
    pub max_rounds: Option<usize>,
    /// Re-classify every bin each round instead of only the touched ones.
    #[serde(default)]
    pub full_rescan: bool,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl EngineConfig {
    pub fn new(design: DesignConfig) -> Self {
        let detector = DetectorConfig::for_design(&design);
        Self { design, detector, max_rounds: None, full_rescan: false, batch_size: DEFAULT_BATCH_SIZE }
    }

    /// Hex SHA-256 of the canonical JSON of this configuration.
    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&json))
}

/// One singleton awaiting peeling.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierEntry {
    pub group: usize,
    pub bin: usize,
    pub k: IndexVector,
    pub value: f64,
    /// The bin's tests admit no other index. Ambiguous singletons wait until
    /// no certain one is left.
    pub certain: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub singletons: usize,
    pub peeled: usize,
    pub redetected: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCounts {
    pub zeroton: usize,
    pub singleton: usize,
    pub multiton: usize,
}

impl BinCounts {
    fn add(&mut self, t: &BinType) {
        match t {
            BinType::Zeroton => self.zeroton += 1,
            BinType::Singleton { .. } => self.singleton += 1,
            BinType::Multiton => self.multiton += 1,
        }
    }
}

/// Everything the loop carries between rounds.
pub struct PeelingState {
    pub designs: Vec<SubsamplingDesign>,
    pub tables: Vec<BinTable>,
    pub recovered: SparseMobius,
    /// Singletons awaiting peeling, keyed by `(group, bin)`.
    pub frontier: BTreeMap<(usize, usize), FrontierEntry>,
    pub round: usize,
    pub rounds: Vec<RoundStats>,
    /// Latest classification of every bin.
    pub types: Vec<Vec<BinType>>,
    hits: HashMap<IndexVector, usize>,
    pub duplicates: usize,
    pub inconsistent: bool,
}

impl PeelingState {
    pub fn new(designs: Vec<SubsamplingDesign>, tables: Vec<BinTable>) -> Self {
        let n = designs.first().map_or(0, |d| d.n());
        let types = tables.iter().map(|t| vec![BinType::Zeroton; t.num_bins()]).collect();
        Self {
            designs,
            tables,
            recovered: SparseMobius::new(n),
            frontier: BTreeMap::new(),
            round: 0,
            rounds: Vec::new(),
            types,
            hits: HashMap::new(),
            duplicates: 0,
            inconsistent: false,
        }
    }

    /// Subtracts `v` from every bin entry of every group that `k` survives
    /// into. Returns the touched `(group, bin)` pairs.
    pub fn peel(&mut self, k: &IndexVector, v: f64) -> Vec<(usize, usize)> {
        let mut touched = Vec::with_capacity(self.designs.len());
        for (design, table) in self.designs.iter().zip(self.tables.iter_mut()) {
            let j = design.bin_of(k);
            let bin = table.bin_mut(j);
            for (p, u) in bin.iter_mut().enumerate() {
                if design.survives(k, p) {
                    *u -= v;
                }
            }
            touched.push((design.group, j));
        }
        touched
    }

    /// Records a newly identified coefficient and peels it.
    pub fn peel_once(&mut self, k: &IndexVector, v: f64) -> Vec<(usize, usize)> {
        self.recovered.insert(k.clone(), v).expect("dimension checked by design");
        self.hits.insert(k.clone(), 1);
        self.peel(k, v)
    }
}

fn classify(
    detectors: &[BinDetector<'_>],
    tables: &[BinTable],
    bins: &[(usize, usize)],
) -> Vec<(BinType, bool)> {
    bins.par_iter().map(|&(c, j)| detectors[c].detect_ranked(tables[c].bin(j), j)).collect()
}

fn all_bins(tables: &[BinTable]) -> Vec<(usize, usize)> {
    tables.iter().enumerate().flat_map(|(c, t)| (0..t.num_bins()).map(move |j| (c, j))).collect()
}

/// Classifies every bin and returns the singletons in `(group, bin)` order.
pub fn initial_frontier(
    tables: &[BinTable],
    designs: &[SubsamplingDesign],
    detector: &DetectorConfig,
    scale: f64,
) -> Vec<FrontierEntry> {
    let detectors: Vec<_> = designs.iter().map(|d| BinDetector::new(d, detector, scale)).collect();
    let bins = all_bins(tables);
    classify(&detectors, tables, &bins)
        .into_iter()
        .zip(bins)
        .filter_map(|((t, certain), (group, bin))| match t {
            BinType::Singleton { k, value } => Some(FrontierEntry { group, bin, k, value, certain }),
            _ => None,
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub unique_queries: usize,
    pub total_queries: usize,
    pub rounds: usize,
    pub bins: BinCounts,
    /// Bins still classified as multitons at the end.
    pub unresolved: usize,
    /// The frontier emptied before the round limit.
    pub converged: bool,
    /// Two singletons disagreed on the value of one index (noiseless).
    pub inconsistent: bool,
    pub duplicates: usize,
    pub seed: u64,
    pub config_digest: String,
}

impl RunReport {
    pub fn complete(&self) -> bool {
        self.converged && self.unresolved == 0 && !self.inconsistent
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimings {
    pub sampling: Duration,
    pub transforms: Duration,
    pub detection: Duration,
    pub peeling: Duration,
    pub total: Duration,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub coefficients: SparseMobius,
    pub report: RunReport,
    pub timings: PhaseTimings,
}

/// Stores fresh classifications, replacing any pending singleton of a
/// re-detected bin.
fn record(state: &mut PeelingState, bins: &[(usize, usize)], types: Vec<(BinType, bool)>) {
    for (&(c, j), (t, certain)) in bins.iter().zip(types) {
        state.frontier.remove(&(c, j));
        if let BinType::Singleton { k, value } = &t {
            state.frontier.insert((c, j), FrontierEntry { group: c, bin: j, k: k.clone(), value: *value, certain });
        }
        state.types[c][j] = t;
    }
}

/// Options of the loop that do not affect the designs.
#[derive(Clone, Debug)]
pub struct LoopOptions {
    pub detector: DetectorConfig,
    pub max_rounds: Option<usize>,
    pub full_rescan: bool,
    pub batch_size: usize,
    pub seed: u64,
    pub config_digest: String,
}

pub fn run(oracle: &(impl ValueOracle + ?Sized), cfg: &EngineConfig) -> Result<RunOutput> {
    run_with_observer(oracle, cfg, |_| {})
}

pub fn run_with_observer(
    oracle: &(impl ValueOracle + ?Sized),
    cfg: &EngineConfig,
    observer: impl FnMut(&PeelingState),
) -> Result<RunOutput> {
    let designs = make_designs(&cfg.design)?;
    let opts = LoopOptions {
        detector: cfg.detector.clone(),
        max_rounds: cfg.max_rounds,
        full_rescan: cfg.full_rescan,
        batch_size: cfg.batch_size,
        seed: cfg.design.seed,
        config_digest: cfg.digest(),
    };
    run_with_designs(oracle, designs, &opts, observer)
}

/// The loop on caller-supplied designs.
pub fn run_with_designs(
    oracle: &(impl ValueOracle + ?Sized),
    designs: Vec<SubsamplingDesign>,
    opts: &LoopOptions,
    mut observer: impl FnMut(&PeelingState),
) -> Result<RunOutput> {
    let start = Instant::now();
    if let Some(msg) = opts.detector.gamma_warning() {
        log::warn!("{msg}");
    }
    let (tables, sampling) = build_bin_tables(oracle, &designs, opts.batch_size)?;
    let scale = tables.iter().map(BinTable::max_abs).fold(0.0, f64::max);
    let noisy = designs.iter().any(|d| d.split.is_some());
    let det_cfg = &opts.detector;

    let mut state = PeelingState::new(designs.clone(), tables);
    let detectors: Vec<_> = designs.iter().map(|d| BinDetector::new(d, det_cfg, scale)).collect();

    let mut detection = Duration::ZERO;
    let mut peeling = Duration::ZERO;

    let t0 = Instant::now();
    let bins = all_bins(&state.tables);
    let types = classify(&detectors, &state.tables, &bins);
    record(&mut state, &bins, types);
    detection += t0.elapsed();
    let busiest = state
        .types
        .iter()
        .map(|g| g.iter().filter(|t| !matches!(t, BinType::Zeroton)).count())
        .max()
        .unwrap_or(0);
    let max_rounds = opts.max_rounds.unwrap_or(4 * busiest.max(1));
    observer(&state);

    while !state.frontier.is_empty() && state.round < max_rounds {
        state.round += 1;
        let t0 = Instant::now();
        let any_certain = state.frontier.values().any(|e| e.certain);
        let batch: Vec<FrontierEntry> = if any_certain {
            let keys: Vec<_> = state.frontier.iter().filter(|(_, e)| e.certain).map(|(&key, _)| key).collect();
            keys.iter().filter_map(|key| state.frontier.remove(key)).collect()
        } else {
            std::mem::take(&mut state.frontier).into_values().collect()
        };
        let mut touched: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut stats = RoundStats { singletons: batch.len(), ..RoundStats::default() };
        for entry in batch {
            let FrontierEntry { k, value, .. } = entry;
            if !state.recovered.contains(&k) {
                touched.extend(state.peel_once(&k, value));
                stats.peeled += 1;
                continue;
            }
            state.duplicates += 1;
            let old = state.recovered.get(&k);
            if noisy {
                let count = state.hits.entry(k.clone()).or_insert(1);
                let avg = (old * *count as f64 + value) / (*count as f64 + 1.0);
                *count += 1;
                state.recovered.insert(k.clone(), avg).expect("same dimension");
                touched.extend(state.peel(&k, avg - old));
            } else if (value - old).abs() > 1e-6 * old.abs().max(value.abs()) {
                state.inconsistent = true;
            }
        }
        peeling += t0.elapsed();

        let t0 = Instant::now();
        let rescan: Vec<(usize, usize)> =
            if opts.full_rescan { all_bins(&state.tables) } else { touched.into_iter().collect() };
        stats.redetected = rescan.len();
        let types = classify(&detectors, &state.tables, &rescan);
        record(&mut state, &rescan, types);
        detection += t0.elapsed();
        state.rounds.push(stats);
        observer(&state);
    }
    let converged = state.frontier.is_empty();

    let t0 = Instant::now();
    let bins = all_bins(&state.tables);
    let mut counts = BinCounts::default();
    for (t, _) in classify(&detectors, &state.tables, &bins) {
        counts.add(&t);
    }
    detection += t0.elapsed();

    let report = RunReport {
        unique_queries: sampling.unique_queries,
        total_queries: sampling.total_queries,
        rounds: state.round,
        bins: counts,
        unresolved: counts.multiton,
        converged,
        inconsistent: state.inconsistent,
        duplicates: state.duplicates,
        seed: opts.seed,
        config_digest: opts.config_digest.clone(),
    };
    let mut coefficients = state.recovered;
    coefficients.stats = Some(RecoveryStats {
        total_queries: report.total_queries,
        unique_queries: report.unique_queries,
        rounds: report.rounds,
        zerotons: counts.zeroton,
        singletons: counts.singleton,
        multitons: counts.multiton,
    });
    let timings = PhaseTimings {
        sampling: sampling.query_time,
        transforms: sampling.transform_time,
        detection,
        peeling,
        total: start.elapsed(),
    };
    Ok(RunOutput { coefficients, report, timings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::DesignConfig;
    use crate::oracle::{FnOracle, SparseOracle};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_function() {
        let oracle = FnOracle::new(10, |_: &IndexVector| 0.0);
        let out = run(&oracle, &EngineConfig::new(DesignConfig::uniform(10, 3, 3))).unwrap();
        assert!(out.coefficients.is_empty());
        assert_eq!(out.report.rounds, 0);
        assert_eq!(out.report.bins.zeroton, 3 * 8);
        assert!(out.report.complete());
    }

    #[test]
    fn single_coefficient_frontier() {
        let k: IndexVector = "0110010011".parse().unwrap();
        let oracle = SparseOracle::new(SparseMobius::from_entries(10, [(k.clone(), 2.0)]).unwrap());
        let cfg = DesignConfig::uniform(10, 3, 3).with_seed(1);
        let designs = make_designs(&cfg).unwrap();
        let (tables, _) = build_bin_tables(&oracle, &designs, 64).unwrap();
        let frontier = initial_frontier(&tables, &designs, &DetectorConfig::for_design(&cfg), 2.0);
        assert_eq!(frontier.len(), 3);
        assert!(frontier.iter().all(|e| e.k == k && e.value == 2.0));

        let mut state = PeelingState::new(designs, tables);
        state.peel_once(&k, 2.0);
        assert!(state.tables.iter().all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn random_instance_cancels_exactly() {
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let entries: Vec<_> = (0..10).map(|i| (IndexVector::bernoulli(n, 0.5, &mut rng), 0.5 + i as f64)).collect();
        let truth = SparseMobius::from_entries(n, entries).unwrap();
        let designs = make_designs(&DesignConfig::uniform(n, 4, 3).with_seed(2)).unwrap();
        let (tables, _) = build_bin_tables(&SparseOracle::new(truth.clone()), &designs, 64).unwrap();
        let mut state = PeelingState::new(designs, tables);
        for (k, v) in truth.iter() {
            state.peel_once(k, v);
        }
        assert!(state.tables.iter().all(|t| t.max_abs() <= 1e-8));
    }

    #[test]
    fn deterministic_runs() {
        let n = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let entries: Vec<_> = (0..12).map(|_| (IndexVector::bernoulli(n, 0.5, &mut rng), 1.0)).collect();
        let oracle = SparseOracle::new(SparseMobius::from_entries(n, entries).unwrap());
        let cfg = EngineConfig::new(DesignConfig::uniform(n, 5, 3).with_seed(9));
        let a = run(&oracle, &cfg).unwrap();
        let b = run(&oracle, &cfg).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn digest_tracks_config() {
        let a = EngineConfig::new(DesignConfig::uniform(20, 5, 3));
        let b = EngineConfig::new(DesignConfig::uniform(20, 5, 3).with_seed(1));
        assert_eq!(a.digest().len(), 64);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }
}

//! One function per subcommand. Flag structs double as the JSON config
//! schema: unset flags serialize as `null` and are filled from the file.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sparse_mobius::bench::{
    runtime_slope, sweep_reconstruction as run_reconstruction, sweep_runtime as run_runtime, sweep_snr as run_snr,
    ReconstructionGrid, RuntimeGrid, SnrGrid, SweepResult,
};
use sparse_mobius::metrics::{
    banzhaf, coefficient_r2, degree_profile, faithfulness, shapley, support_f1, write_attribution_csv,
    write_degree_csv, FitMode, EXACT_FIT_MAX_DIM,
};
use sparse_mobius::oracle::{SparseOracle, SubprocessOracle};
use sparse_mobius::peeling::{json_digest, run, EngineConfig};
use sparse_mobius::synth::{generate, Assumption, SyntheticSpec, ValueLaw};
use sparse_mobius::transform::{brute_force_transform_capped, BRUTE_FORCE_MAX_DIM};
use sparse_mobius::{DesignConfig, IndexVector, Regime, SparseMobius, ValueOracle};

use crate::settings::{config_error, load_config, merge, required, resolve_seed, CliResult, Failure, Outputs};

fn read_coeffs(path: &Path, n: Option<usize>) -> CliResult<SparseMobius> {
    let file = File::open(path).map_err(|e| Failure::Config(format!("cannot open {}: {e}", path.display())))?;
    Ok(SparseMobius::read_json(BufReader::new(file), n)?)
}

/// Exactly one of a command line or a coefficient file.
fn open_oracle(n: Option<usize>, cmd: &Option<String>, coeffs: &Option<PathBuf>) -> CliResult<Box<dyn ValueOracle>> {
    match (cmd, coeffs) {
        (Some(cmd), None) => {
            let n = required(&n, "n")?;
            Ok(Box::new(SubprocessOracle::spawn(cmd, n)?))
        }
        (None, Some(path)) => Ok(Box::new(SparseOracle::new(read_coeffs(path, n)?))),
        (Some(_), Some(_)) => config_error("give either --oracle-cmd or --coeffs, not both"),
        (None, None) => config_error("an oracle is needed: --oracle-cmd or --coeffs"),
    }
}

fn digest_prefix<T: Serialize>(value: &T) -> String {
    json_digest(value)[..12].to_owned()
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of planted coefficients.
    #[arg(long)]
    pub k: Option<usize>,
    /// `uniform` or `low-degree`.
    #[arg(long)]
    pub assumption: Option<String>,
    /// Degree bound for `low-degree`.
    #[arg(long)]
    pub t: Option<usize>,
    /// Smallest magnitude of uniformly drawn values.
    #[arg(long)]
    pub v_min: Option<f64>,
    /// Fixed magnitude; overrides the uniform value law.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn synth(flags: &SynthArgs, config: Option<&Path>, out_dir: &Path) -> CliResult<()> {
    let mut args = merge(load_config(config, "synth")?, flags)?;
    args.seed = Some(resolve_seed(args.seed)?);
    let assumption = match args.assumption.as_deref().unwrap_or("uniform") {
        "uniform" => Assumption::Uniform,
        "low-degree" | "low_degree" | "lowdegree" => Assumption::LowDegree { t: required(&args.t, "t")? },
        other => return config_error(format!("unknown assumption {other:?} (expected uniform or low-degree)")),
    };
    let value_law = match args.rho {
        Some(rho) => ValueLaw::Fixed { rho },
        None => ValueLaw::Uniform { v_min: args.v_min.unwrap_or(0.1) },
    };
    let spec = SyntheticSpec {
        n: required(&args.n, "n")?,
        k: required(&args.k, "k")?,
        assumption,
        value_law,
        sigma: 0.0,
        seed: args.seed.unwrap_or(0),
    };
    let inst = generate(&spec)?;
    let mut out = Outputs::new(out_dir)?;
    let mut w = out.create("truth.json")?;
    inst.truth.write_json(&mut w)?;
    w.flush()?;
    drop(w);
    println!("planted {} coefficients over n = {} in {}", inst.truth.len(), spec.n, out.dir().display());
    out.finish("synth", &args, json!({ "spec": spec }))
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default)]
pub struct TransformArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Bits per bin index (2^b bins per group).
    #[arg(long)]
    pub b: Option<usize>,
    /// Number of subsampling groups.
    #[arg(long)]
    pub c: Option<usize>,
    /// `uniform`, `low-degree` or `noisy`.
    #[arg(long)]
    pub regime: Option<String>,
    /// Maximum interaction degree.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Noise standard deviation the detector assumes.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Known coefficient magnitude.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub c_gt: Option<f64>,
    #[arg(long)]
    pub c_ver: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Overrides the computed number of delay rows.
    #[arg(long)]
    pub delay_rows: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eps_ratio: Option<f64>,
    #[arg(long)]
    pub eps_zero: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub snap_to_rho: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub lp_fallback: Option<bool>,
    #[arg(long)]
    pub lp_lambda: Option<f64>,
    #[arg(long)]
    pub lp_threshold: Option<f64>,
    #[arg(long)]
    pub min_test_bits: Option<f64>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub full_rescan: Option<bool>,
    /// Masks per oracle round trip.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Program speaking the QUERY/END protocol, run through `sh -c`.
    #[arg(long)]
    pub oracle_cmd: Option<String>,
    /// Coefficient file to evaluate in-process instead of an oracle program.
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
}

impl TransformArgs {
    fn engine(&self) -> CliResult<EngineConfig> {
        let regime: Regime = match &self.regime {
            Some(r) => r.parse().map_err(Failure::Config)?,
            None => Regime::Uniform,
        };
        let mut design = DesignConfig::new(required(&self.n, "n")?, required(&self.b, "b")?, required(&self.c, "c")?, regime);
        design.t = self.t;
        design.seed = self.seed.unwrap_or(0);
        design.rho = self.rho;
        design.delay_rows = self.delay_rows;
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { design.$field = v; })* };
        }
        set!(nu, gamma, sigma, c_gt, c_ver, beta);
        design.validate()?;

        let mut cfg = EngineConfig::new(design);
        let det = &mut cfg.detector;
        if let Some(v) = self.eps_ratio {
            det.eps_ratio = v;
        }
        if let Some(v) = self.eps_zero {
            det.eps_zero = v;
        }
        if let Some(v) = self.snap_to_rho {
            det.snap_to_rho = v;
        }
        if let Some(v) = self.lp_fallback {
            det.lp_fallback = v;
        }
        if let Some(v) = self.lp_lambda {
            det.lp.lambda = v;
        }
        if let Some(v) = self.lp_threshold {
            det.lp.threshold = v;
        }
        if self.min_test_bits.is_some() {
            det.min_test_bits = self.min_test_bits;
        }
        cfg.max_rounds = self.max_rounds;
        cfg.full_rescan = self.full_rescan.unwrap_or(false);
        if let Some(b) = self.batch_size {
            if b == 0 {
                return config_error("batch_size must be positive");
            }
            cfg.batch_size = b;
        }
        Ok(cfg)
    }
}

pub fn transform(flags: &TransformArgs, config: Option<&Path>, out_dir: &Path) -> CliResult<()> {
    let mut args = merge(load_config(config, "transform")?, flags)?;
    args.seed = Some(resolve_seed(args.seed)?);
    let cfg = args.engine()?;
    let oracle = open_oracle(args.n, &args.oracle_cmd, &args.coeffs)?;
    if oracle.dim() != cfg.design.n {
        return config_error(format!("oracle has n = {}, config says {}", oracle.dim(), cfg.design.n));
    }
    let result = run(&oracle, &cfg)?;
    drop(oracle);

    let mut out = Outputs::new(out_dir)?;
    let mut w = out.create("coefficients.json")?;
    result.coefficients.write_json(&mut w)?;
    w.flush()?;
    drop(w);
    out.write_json("report.json", &result.report)?;
    let r = &result.report;
    println!(
        "recovered {} coefficients in {} rounds from {} unique queries ({} unresolved bins)",
        result.coefficients.len(),
        r.rounds,
        r.unique_queries,
        r.unresolved
    );
    let t = &result.timings;
    let extra = json!({
        "engine": cfg,
        "complete": r.complete(),
        "timings_s": {
            "sampling": t.sampling.as_secs_f64(),
            "transforms": t.transforms.as_secs_f64(),
            "detection": t.detection.as_secs_f64(),
            "peeling": t.peeling.as_secs_f64(),
            "total": t.total.as_secs_f64(),
        },
    });
    let complete = r.complete();
    let why = if r.inconsistent {
        "singletons disagreed on a coefficient".to_owned()
    } else {
        format!("{} multiton bins left after {} rounds", r.unresolved, r.rounds)
    };
    out.finish("transform", &args, extra)?;
    if complete {
        Ok(())
    } else {
        Err(Failure::Incomplete(why))
    }
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default)]
pub struct BruteArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Refuse larger `n`.
    #[arg(long)]
    pub max_n: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub oracle_cmd: Option<String>,
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
}

pub fn brute(flags: &BruteArgs, config: Option<&Path>, out_dir: &Path) -> CliResult<()> {
    let args = merge(load_config(config, "brute")?, flags)?;
    let oracle = open_oracle(args.n, &args.oracle_cmd, &args.coeffs)?;
    let cap = args.max_n.unwrap_or(BRUTE_FORCE_MAX_DIM);
    let start = Instant::now();
    let coeffs = brute_force_transform_capped(&oracle, cap, args.batch_size.unwrap_or(1024).max(1))?;
    drop(oracle);
    let mut out = Outputs::new(out_dir)?;
    let mut w = out.create("coefficients.json")?;
    coeffs.write_json(&mut w)?;
    w.flush()?;
    drop(w);
    println!("{} non-zero coefficients from {} queries", coeffs.len(), 1u64 << coeffs.dim());
    out.finish("brute", &args, json!({ "elapsed_s": start.elapsed().as_secs_f64() }))
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default)]
pub struct MetricsArgs {
    /// Coefficient file to score.
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Write per-feature Shapley values.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub shapley: Option<bool>,
    /// Write per-feature Banzhaf values.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub banzhaf: Option<bool>,
    /// Write count and energy per interaction degree.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub degrees: Option<bool>,
    /// Ground-truth coefficients: coefficient R^2, support F1 and faithfulness.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Oracle to measure faithfulness against.
    #[arg(long)]
    pub oracle_cmd: Option<String>,
    /// Estimate faithfulness from this many random masks instead of all 2^n.
    #[arg(long)]
    pub fit_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn metrics(flags: &MetricsArgs, config: Option<&Path>, out_dir: &Path) -> CliResult<()> {
    let mut args = merge(load_config(config, "metrics")?, flags)?;
    args.seed = Some(resolve_seed(args.seed)?);
    let f = read_coeffs(&required(&args.coeffs, "coeffs")?, args.n)?;
    let n = f.dim();
    let any = [args.shapley, args.banzhaf, args.degrees].iter().any(|x| x.is_some());
    let want = |x: Option<bool>| x.unwrap_or(!any);

    let mut out = Outputs::new(out_dir)?;
    let mut summary = json!({ "n": n, "coefficients": f.len() });
    if want(args.shapley) || want(args.banzhaf) {
        let sv = if want(args.shapley) { shapley(&f) } else { vec![f64::NAN; n] };
        let bz = if want(args.banzhaf) { banzhaf(&f) } else { vec![f64::NAN; n] };
        write_attribution_csv(out.create("attribution.csv")?, &sv, &bz)?;
    }
    if want(args.degrees) {
        write_degree_csv(out.create("degrees.csv")?, &degree_profile(&f))?;
    }

    let truth = args.truth.as_ref().map(|p| read_coeffs(p, Some(n))).transpose()?;
    if let Some(truth) = &truth {
        summary["coefficient_r2"] = json!(coefficient_r2(truth, &f));
        summary["support_f1"] = json!(support_f1(truth, &f));
    }
    let oracle: Option<Box<dyn ValueOracle>> = match (&args.oracle_cmd, truth) {
        (Some(cmd), _) => Some(Box::new(SubprocessOracle::spawn(cmd, n)?)),
        (None, Some(truth)) => Some(Box::new(SparseOracle::new(truth))),
        (None, None) => None,
    };
    if let Some(oracle) = oracle {
        let mode = match args.fit_samples {
            None if n <= EXACT_FIT_MAX_DIM => FitMode::Exact,
            None => FitMode::Sampled { samples: 10_000, seed: args.seed.unwrap_or(0) },
            Some(samples) => FitMode::Sampled { samples, seed: args.seed.unwrap_or(0) },
        };
        let fit = faithfulness(&f, &oracle, mode)?;
        println!("faithfulness R^2 = {:.6}", fit.r2);
        summary["faithfulness"] = serde_json::to_value(&fit)?;
    }
    out.write_json("metrics.json", &summary)?;
    println!("{} coefficients over n = {n} scored into {}", f.len(), out.dir().display());
    out.finish("metrics", &args, json!({}))
}

fn write_sweep(out: &mut Outputs, result: &SweepResult, digest: &str) -> CliResult<String> {
    let name = format!("{}-{digest}.csv", result.name);
    result.write_csv(out.create(&name)?)?;
    Ok(name)
}

fn print_cells(result: &SweepResult) {
    for c in &result.cells {
        let opt = |x: Option<f64>| x.map_or("-".to_owned(), |v| format!("{v:.3}"));
        let snr = c.snr_db.map_or(String::new(), |s| format!(" snr={s}dB"));
        println!(
            "n={} b={}{snr} trials={} samples={} success={} r2={} runtime_s={}",
            c.n,
            c.b,
            c.trials.unwrap_or(0),
            c.samples,
            opt(c.success),
            opt(c.r2),
            opt(c.runtime_s)
        );
    }
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default)]
pub struct SweepArgs {
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    /// Comma-separated bin bit counts.
    #[arg(long, value_delimiter = ',')]
    pub bs: Option<Vec<usize>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn sweep_reconstruction(flags: &SweepArgs, config: Option<&Path>, out_dir: &Path) -> CliResult<()> {
    let mut args = merge(load_config(config, "sweep-reconstruction")?, flags)?;
    args.seed = Some(resolve_seed(args.seed)?);
    let d = ReconstructionGrid::default();
    let grid = ReconstructionGrid {
        ns: args.ns.clone().unwrap_or(d.ns),
        bs: args.bs.clone().unwrap_or(d.bs),
        k: args.k.unwrap_or(d.k),
        c: args.c.unwrap_or(d.c),
        trials: args.trials.unwrap_or(d.trials),
        seed: args.seed.unwrap_or(0),
    };
    for &n in &grid.ns {
        if let Some(&b) = grid.bs.iter().find(|&&b| grid.c * b > n) {
            return config_error(format!("uniform designs need C*b <= n; b = {b} is too large for n = {n}"));
        }
    }
    let result = run_reconstruction(&grid)?;
    let mut out = Outputs::new(out_dir)?;
    let digest = digest_prefix(&grid);
    write_sweep(&mut out, &result, &digest)?;
    print_cells(&result);
    out.finish("sweep-reconstruction", &args, json!({ "grid": grid }))
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default)]
pub struct SnrArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    /// Comma-separated SNR values in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snrs_db: Option<Vec<f64>>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub delay_rows: Option<usize>,
    /// Also report function-domain faithfulness (n <= 20).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub faithfulness: Option<bool>,
    /// Start from the n = K = 500, P = 1000 setting instead of the desk-scale one.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub large_scale: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn sweep_snr(flags: &SnrArgs, config: Option<&Path>, out_dir: &Path) -> CliResult<()> {
    let mut args = merge(load_config(config, "sweep-snr")?, flags)?;
    args.seed = Some(resolve_seed(args.seed)?);
    let d = if args.large_scale.unwrap_or(false) { SnrGrid::large_scale() } else { SnrGrid::default() };
    let grid = SnrGrid {
        n: args.n.unwrap_or(d.n),
        k: args.k.unwrap_or(d.k),
        t: args.t.unwrap_or(d.t),
        b: args.b.unwrap_or(d.b),
        c: args.c.unwrap_or(d.c),
        snrs_db: args.snrs_db.clone().unwrap_or(d.snrs_db),
        rho: args.rho.unwrap_or(d.rho),
        trials: args.trials.unwrap_or(d.trials),
        seed: args.seed.unwrap_or(0),
        delay_rows: args.delay_rows.or(d.delay_rows),
        faithfulness: args.faithfulness.unwrap_or(d.faithfulness),
    };
    DesignConfig::noisy(grid.n, grid.b, grid.c, grid.t, 0.0).validate()?;
    let result = run_snr(&grid)?;
    let mut out = Outputs::new(out_dir)?;
    let digest = digest_prefix(&grid);
    write_sweep(&mut out, &result, &digest)?;
    print_cells(&result);
    out.finish("sweep-snr", &args, json!({ "grid": grid }))
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default)]
pub struct RuntimeArgs {
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Also time the brute-force transform up to this n.
    #[arg(long)]
    pub brute_max_n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn sweep_runtime(flags: &RuntimeArgs, config: Option<&Path>, out_dir: &Path) -> CliResult<()> {
    let mut args = merge(load_config(config, "sweep-runtime")?, flags)?;
    args.seed = Some(resolve_seed(args.seed)?);
    let d = RuntimeGrid::default();
    let grid = RuntimeGrid {
        ns: args.ns.clone().unwrap_or(d.ns),
        k: args.k.unwrap_or(d.k),
        b: args.b.unwrap_or(d.b),
        c: args.c.unwrap_or(d.c),
        trials: args.trials.unwrap_or(d.trials),
        seed: args.seed.unwrap_or(0),
        brute_max_n: args.brute_max_n.unwrap_or(d.brute_max_n),
    };
    if grid.c < 2 || grid.ns.iter().any(|&n| n < grid.c) {
        return config_error("need C >= 2 and every n >= C");
    }
    let result = run_runtime(&grid)?;
    let slope = runtime_slope(&result);
    let mut out = Outputs::new(out_dir)?;
    let digest = digest_prefix(&grid);
    write_sweep(&mut out, &result, &digest)?;
    print_cells(&result);
    println!("log-log slope of runtime against n: {slope:.3}");
    out.finish("sweep-runtime", &args, json!({ "grid": grid, "loglog_slope": slope }))
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default)]
pub struct OracleArgs {
    /// Coefficient file to serve.
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
}

fn protocol_error(msg: String) -> Failure {
    Failure::Other(anyhow::anyhow!(msg))
}

/// Answers `QUERY <count>` blocks on stdin until `END` or end of input.
pub fn oracle(flags: &OracleArgs, config: Option<&Path>) -> CliResult<()> {
    let args = merge(load_config(config, "oracle")?, flags)?;
    let f = read_coeffs(&required(&args.coeffs, "coeffs")?, args.n)?;
    let stdin = io::stdin().lock();
    let mut stdout = io::BufWriter::new(io::stdout().lock());
    let mut lines = stdin.lines();
    while let Some(line) = lines.next() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "END" {
            break;
        }
        let count: usize = line
            .strip_prefix("QUERY ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| protocol_error(format!("expected `QUERY <count>`, got {line:?}")))?;
        for _ in 0..count {
            let mask = lines.next().ok_or_else(|| protocol_error("input ended inside a query".into()))??;
            let m: IndexVector = mask.trim().parse().map_err(|e| protocol_error(format!("bad mask {mask:?}: {e}")))?;
            writeln!(stdout, "{}", f.evaluate(&m)?)?;
        }
        stdout.flush()?;
    }
    Ok(())
}

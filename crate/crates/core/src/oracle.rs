//! Black-box value oracles: in-process closures, planted sparse functions,
//! noisy wrappers, a memoizing cache and a line-oriented subprocess bridge.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, OracleError, Result};
use crate::index::IndexVector;
use crate::transform::SparseMobius;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    InProcess,
    Subprocess,
    SyntheticSparse,
    SyntheticNoisy,
}

/// Gaussian noise the sampler adds to every transformed bin value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinNoise {
    pub sigma: f64,
    pub seed: u64,
}

pub trait ValueOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn kind(&self) -> OracleKind;

    /// One value per mask, in order.
    fn query(&self, masks: &[IndexVector]) -> Result<Vec<f64>, OracleError>;

    fn bin_noise(&self) -> Option<BinNoise> {
        None
    }
}

impl<T: ValueOracle + ?Sized> ValueOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> OracleKind {
        (**self).kind()
    }
    fn query(&self, masks: &[IndexVector]) -> Result<Vec<f64>, OracleError> {
        (**self).query(masks)
    }
    fn bin_noise(&self) -> Option<BinNoise> {
        (**self).bin_noise()
    }
}

impl<T: ValueOracle + ?Sized> ValueOracle for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> OracleKind {
        (**self).kind()
    }
    fn query(&self, masks: &[IndexVector]) -> Result<Vec<f64>, OracleError> {
        (**self).query(masks)
    }
    fn bin_noise(&self) -> Option<BinNoise> {
        (**self).bin_noise()
    }
}

/// Queries `oracle` and checks the mask dimension, the reply length and that
/// every value is finite.
pub fn checked_query(oracle: &(impl ValueOracle + ?Sized), masks: &[IndexVector]) -> Result<Vec<f64>> {
    let n = oracle.dim();
    if let Some(bad) = masks.iter().find(|m| m.len() != n) {
        return Err(OracleError::Dimension { oracle: n, expected: bad.len() }.into());
    }
    let values = oracle.query(masks)?;
    if values.len() != masks.len() {
        return Err(OracleError::BatchSize { expected: masks.len(), got: values.len() }.into());
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(OracleError::NonFinite { mask: masks[i].to_bit_string(), value: values[i] }.into());
    }
    Ok(values)
}

/// Wraps a plain closure.
pub struct FnOracle<F> {
    dim: usize,
    f: F,
}

impl<F> FnOracle<F>
where
    F: Fn(&IndexVector) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> ValueOracle for FnOracle<F>
where
    F: Fn(&IndexVector) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> OracleKind {
        OracleKind::InProcess
    }
    fn query(&self, masks: &[IndexVector]) -> Result<Vec<f64>, OracleError> {
        Ok(masks.iter().map(&self.f).collect())
    }
}

/// Evaluates a known coefficient map exactly.
#[derive(Clone, Debug)]
pub struct SparseOracle {
    coeffs: SparseMobius,
}

impl SparseOracle {
    pub fn new(coeffs: SparseMobius) -> Self {
        Self { coeffs }
    }

    pub fn coefficients(&self) -> &SparseMobius {
        &self.coeffs
    }
}

impl ValueOracle for SparseOracle {
    fn dim(&self) -> usize {
        self.coeffs.dim()
    }
    fn kind(&self) -> OracleKind {
        OracleKind::SyntheticSparse
    }
    fn query(&self, masks: &[IndexVector]) -> Result<Vec<f64>, OracleError> {
        Ok(masks.iter().map(|m| self.coeffs.evaluate_unchecked(m)).collect())
    }
}

/// Leaves queries untouched and asks the sampler to add `N(0, sigma^2)` to
/// each transformed bin value.
#[derive(Clone, Debug)]
pub struct NoisyOracle<O> {
    inner: O,
    noise: BinNoise,
}

impl<O: ValueOracle> NoisyOracle<O> {
    pub fn new(inner: O, sigma: f64, seed: u64) -> Self {
        Self { inner, noise: BinNoise { sigma, seed } }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: ValueOracle> ValueOracle for NoisyOracle<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn kind(&self) -> OracleKind {
        if self.noise.sigma > 0.0 {
            OracleKind::SyntheticNoisy
        } else {
            self.inner.kind()
        }
    }
    fn query(&self, masks: &[IndexVector]) -> Result<Vec<f64>, OracleError> {
        self.inner.query(masks)
    }
    fn bin_noise(&self) -> Option<BinNoise> {
        (self.noise.sigma > 0.0).then_some(self.noise)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn mask_seed(seed: u64, mask: &IndexVector) -> u64 {
    mask.words().iter().fold(splitmix64(seed ^ mask.len() as u64), |h, &w| splitmix64(h ^ w))
}

/// Adds `N(0, sigma^2)` to every returned value. The noise is a function of
/// `(seed, mask)`, so repeated queries of one mask agree.
#[derive(Clone, Debug)]
pub struct QueryNoiseOracle<O> {
    inner: O,
    normal: Normal<f64>,
    seed: u64,
}

impl<O: ValueOracle> QueryNoiseOracle<O> {
    pub fn new(inner: O, sigma: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(format!("query noise: {e}")))?;
        Ok(Self { inner, normal, seed })
    }
}

impl<O: ValueOracle> ValueOracle for QueryNoiseOracle<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn kind(&self) -> OracleKind {
        self.inner.kind()
    }
    fn query(&self, masks: &[IndexVector]) -> Result<Vec<f64>, OracleError> {
        let mut values = self.inner.query(masks)?;
        for (v, m) in values.iter_mut().zip(masks) {
            let mut rng = ChaCha8Rng::seed_from_u64(mask_seed(self.seed, m));
            *v += self.normal.sample(&mut rng);
        }
        Ok(values)
    }
    fn bin_noise(&self) -> Option<BinNoise> {
        self.inner.bin_noise()
    }
}

/// Memoizes answers by mask. Concurrent inserts of one key are harmless
/// because the wrapped oracle must be deterministic.
pub struct CachedOracle<O> {
    inner: O,
    cache: Mutex<HashMap<IndexVector, f64>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<O: ValueOracle> CachedOracle<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()), hits: AtomicUsize::new(0), misses: AtomicUsize::new(0) }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<O: ValueOracle> ValueOracle for CachedOracle<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn kind(&self) -> OracleKind {
        self.inner.kind()
    }
    fn query(&self, masks: &[IndexVector]) -> Result<Vec<f64>, OracleError> {
        let mut out = vec![f64::NAN; masks.len()];
        let mut missing = Vec::new();
        {
            let cache = self.cache.lock().expect("cache lock");
            for (i, m) in masks.iter().enumerate() {
                match cache.get(m) {
                    Some(&v) => out[i] = v,
                    None => missing.push(i),
                }
            }
        }
        self.hits.fetch_add(masks.len() - missing.len(), Ordering::Relaxed);
        if missing.is_empty() {
            return Ok(out);
        }
        self.misses.fetch_add(missing.len(), Ordering::Relaxed);
        let batch: Vec<IndexVector> = missing.iter().map(|&i| masks[i].clone()).collect();
        let fresh = self.inner.query(&batch)?;
        if fresh.len() != batch.len() {
            return Err(OracleError::BatchSize { expected: batch.len(), got: fresh.len() });
        }
        let mut cache = self.cache.lock().expect("cache lock");
        for ((&i, m), v) in missing.iter().zip(batch).zip(fresh) {
            out[i] = v;
            cache.insert(m, v);
        }
        Ok(out)
    }
    fn bin_noise(&self) -> Option<BinNoise> {
        self.inner.bin_noise()
    }
}

struct Pipe {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
}

/// Talks to an external program over stdin/stdout.
///
/// The engine sends `QUERY <count>` followed by `count` mask lines (char `i`
/// is variable `i`); the program answers with `count` decimal floats, one per
/// line. `END` is sent when the oracle is dropped.
pub struct SubprocessOracle {
    dim: usize,
    command: String,
    pipe: Mutex<Pipe>,
}

impl SubprocessOracle {
    /// Starts `command` through `sh -c`.
    pub fn spawn(command: &str, dim: usize) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| OracleError::Process(format!("cannot start `{command}`: {e}")))?;
        let stdin = Some(BufWriter::new(child.stdin.take().expect("piped stdin")));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { dim, command: command.to_owned(), pipe: Mutex::new(Pipe { child, stdin, stdout }) })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn failure(pipe: &mut Pipe, what: String) -> OracleError {
        match pipe.child.try_wait() {
            Ok(Some(status)) if !status.success() => OracleError::Process(format!("{what}; oracle exited with {status}")),
            _ => OracleError::Protocol(what),
        }
    }
}

impl ValueOracle for SubprocessOracle {
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> OracleKind {
        OracleKind::Subprocess
    }
    fn query(&self, masks: &[IndexVector]) -> Result<Vec<f64>, OracleError> {
        let mut pipe = self.pipe.lock().map_err(|_| OracleError::Process("oracle pipe poisoned".into()))?;
        let pipe = &mut *pipe;
        let Some(stdin) = pipe.stdin.as_mut() else {
            return Err(OracleError::Process("oracle input already closed".into()));
        };
        let mut send = || -> std::io::Result<()> {
            writeln!(stdin, "QUERY {}", masks.len())?;
            for m in masks {
                writeln!(stdin, "{m}")?;
            }
            stdin.flush()
        };
        if let Err(e) = send() {
            // a broken pipe usually means the process already died
            pipe.child.wait().ok();
            return Err(Self::failure(pipe, format!("write failed: {e}")));
        }
        let mut out = Vec::with_capacity(masks.len());
        let mut line = String::new();
        for m in masks {
            line.clear();
            let read = pipe.stdout.read_line(&mut line)?;
            if read == 0 {
                pipe.child.wait().ok();
                return Err(Self::failure(
                    pipe,
                    format!("oracle closed its output after {} of {} values", out.len(), masks.len()),
                ));
            }
            let text = line.trim();
            let value: f64 =
                text.parse().map_err(|_| OracleError::Protocol(format!("malformed float {text:?} for mask {m}")))?;
            if !value.is_finite() {
                return Err(OracleError::NonFinite { mask: m.to_bit_string(), value });
            }
            out.push(value);
        }
        Ok(out)
    }
}

/// How long a finished oracle gets to exit before it is killed.
const EXIT_GRACE: Duration = Duration::from_secs(5);

impl Drop for SubprocessOracle {
    fn drop(&mut self) {
        let Ok(pipe) = self.pipe.get_mut() else { return };
        if let Some(mut stdin) = pipe.stdin.take() {
            let _ = writeln!(stdin, "END");
            let _ = stdin.flush();
        }
        let deadline = Instant::now() + EXIT_GRACE;
        while Instant::now() < deadline {
            match pipe.child.try_wait() {
                Ok(Some(_)) | Err(_) => return,
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            }
        }
        let _ = pipe.child.kill();
        let _ = pipe.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: &str) -> IndexVector {
        s.parse().unwrap()
    }

    #[test]
    fn sparse_oracle_evaluates() {
        let coeffs = SparseMobius::from_entries(3, [(iv("110"), 2.0), (iv("001"), -1.0)]).unwrap();
        let oracle = SparseOracle::new(coeffs);
        assert_eq!(oracle.query(&[iv("111"), iv("110"), iv("001"), iv("000")]).unwrap(), vec![1.0, 2.0, -1.0, 0.0]);
        assert_eq!(oracle.kind(), OracleKind::SyntheticSparse);
    }

    #[test]
    fn checked_query_rejects_nan_and_dimension() {
        let oracle = FnOracle::new(2, |m: &IndexVector| if m.get(0) { f64::NAN } else { 1.0 });
        assert!(checked_query(&oracle, &[iv("00")]).is_ok());
        assert!(matches!(checked_query(&oracle, &[iv("10")]), Err(Error::Oracle(OracleError::NonFinite { .. }))));
        assert!(matches!(checked_query(&oracle, &[iv("100")]), Err(Error::Oracle(OracleError::Dimension { .. }))));
    }

    #[test]
    fn cache_is_transparent() {
        let calls = AtomicUsize::new(0);
        let oracle = FnOracle::new(3, |m: &IndexVector| {
            calls.fetch_add(1, Ordering::Relaxed);
            m.degree() as f64
        });
        let cached = CachedOracle::new(&oracle);
        let masks = [iv("110"), iv("111"), iv("110")];
        assert_eq!(cached.query(&masks).unwrap(), vec![2.0, 3.0, 2.0]);
        assert_eq!(cached.query(&masks).unwrap(), vec![2.0, 3.0, 2.0]);
        assert_eq!(cached.len(), 2);
        assert_eq!(cached.hits(), 3);
    }

    #[test]
    fn query_noise_repeats_per_mask() {
        let base = FnOracle::new(4, |_: &IndexVector| 1.0);
        let noisy = QueryNoiseOracle::new(base, 0.5, 9).unwrap();
        let a = noisy.query(&[iv("1010"), iv("0101")]).unwrap();
        let b = noisy.query(&[iv("0101"), iv("1010")]).unwrap();
        assert_eq!(a[0], b[1]);
        assert_eq!(a[1], b[0]);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn noisy_kind_only_with_noise() {
        let base = SparseOracle::new(SparseMobius::new(2));
        assert_eq!(NoisyOracle::new(base.clone(), 0.0, 1).kind(), OracleKind::SyntheticSparse);
        assert!(NoisyOracle::new(base.clone(), 0.0, 1).bin_noise().is_none());
        let noisy = NoisyOracle::new(base, 0.1, 1);
        assert_eq!(noisy.kind(), OracleKind::SyntheticNoisy);
        assert_eq!(noisy.bin_noise(), Some(BinNoise { sigma: 0.1, seed: 1 }));
    }

    #[test]
    fn subprocess_round_trip() {
        // counts the ones in each mask
        let script = r#"while read cmd count; do
  [ "$cmd" = END ] && exit 0
  i=0
  while [ $i -lt $count ]; do
    read mask
    ones=$(printf %s "$mask" | tr -cd 1 | wc -c)
    echo "$ones.5"
    i=$((i+1))
  done
done"#;
        let oracle = SubprocessOracle::spawn(script, 4).unwrap();
        assert_eq!(oracle.query(&[iv("1100"), iv("0000")]).unwrap(), vec![2.5, 0.5]);
        assert_eq!(oracle.query(&[iv("1111")]).unwrap(), vec![4.5]);
    }

    #[test]
    fn subprocess_failures() {
        let dead = SubprocessOracle::spawn("exit 3", 2).unwrap();
        assert!(dead.query(&[iv("10")]).is_err());
        let garbage = SubprocessOracle::spawn("read a; read b; echo banana; cat >/dev/null", 2).unwrap();
        assert!(matches!(garbage.query(&[iv("10")]), Err(OracleError::Protocol(_))));
        let nan = SubprocessOracle::spawn("read a; read b; echo NaN; cat >/dev/null", 2).unwrap();
        assert!(matches!(nan.query(&[iv("10")]), Err(OracleError::NonFinite { .. })));
    }
}

//! Bin classification: zeroton, singleton `(k, F(k))` or multiton.

use serde::{Deserialize, Serialize};

use crate::designs::{DesignConfig, Regime, SubsamplingDesign};
use crate::group_testing::{
    comp_dd, crossover_probs, decode_identity, decode_lp, solve_gamma, threshold_outcomes, GroupTestInstance,
    LpOptions,
};
use crate::index::{BoolMatrix, IndexVector};

#[derive(Clone, Debug, PartialEq)]
pub enum BinType {
    Zeroton,
    Singleton { k: IndexVector, value: f64 },
    Multiton,
}

impl BinType {
    pub fn is_singleton(&self) -> bool {
        matches!(self, BinType::Singleton { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub regime: Regime,
    /// Largest distance of a ratio from {0, 1} still read as binary.
    pub eps_ratio: f64,
    /// Zero tolerance relative to the largest bin magnitude.
    pub eps_zero: f64,
    /// Slack of the noisy zeroton/singleton verification.
    pub gamma: f64,
    pub sigma: f64,
    /// Known coefficient magnitude.
    pub rho: Option<f64>,
    pub snap_to_rho: bool,
    pub max_degree: Option<usize>,
    pub lp: LpOptions,
    /// Try the LP decoder when COMP/DD fails.
    pub lp_fallback: bool,
    /// Noisy identifications are refused when the thresholded rows carry
    /// fewer bits than this, counting a row with crossover `q` as
    /// `1 - H(q)` clean tests. `for_design` uses the noiseless row budget
    /// `c_gt t log2 n`.
    #[serde(default)]
    pub min_test_bits: Option<f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Uniform,
            eps_ratio: 1e-6,
            eps_zero: 1e-8,
            gamma: 0.5,
            sigma: 0.0,
            rho: None,
            snap_to_rho: true,
            max_degree: None,
            lp: LpOptions::default(),
            lp_fallback: true,
            min_test_bits: None,
        }
    }
}

impl DetectorConfig {
    pub fn for_design(design: &DesignConfig) -> Self {
        Self {
            regime: design.regime,
            gamma: design.gamma,
            sigma: design.sigma,
            rho: design.rho,
            max_degree: design.t,
            min_test_bits: match (design.regime, design.t) {
                (Regime::Noisy, Some(t)) => Some(design.c_gt * t as f64 * (design.n as f64).log2()),
                _ => None,
            },
            ..Self::default()
        }
    }

    /// Variance of one paired observation, `2 sigma^2`.
    pub fn nu2(&self) -> f64 {
        2.0 * self.sigma * self.sigma
    }

    /// `rho^2 / sigma^2`, when both are known.
    pub fn snr(&self) -> Option<f64> {
        let rho = self.rho?;
        (self.sigma > 0.0).then(|| rho * rho / (self.sigma * self.sigma))
    }

    /// Message when `gamma` is outside `(0, eta * SNR / 4)` with
    /// `eta = rho^2 / nu^2`.
    pub fn gamma_warning(&self) -> Option<String> {
        let snr = self.snr()?;
        let rho = self.rho?;
        let eta = rho * rho / self.nu2();
        let bound = eta * snr / 4.0;
        (self.gamma >= bound).then(|| {
            format!("verification slack gamma = {} is not below eta*SNR/4 = {bound:.4}; expect false verifications", self.gamma)
        })
    }
}

/// Entropy in bits of a Bernoulli(`q`) variable.
fn binary_entropy(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    -(q * q.log2() + (1.0 - q) * (1.0 - q).log2())
}

/// `y_p = 1 - U_p / U_0` for `p = 1..=P`. `None` when `U_0 = 0`.
pub fn ratio_vector(bin: &[f64]) -> Option<Vec<f64>> {
    let u0 = bin[0];
    (u0 != 0.0).then(|| bin[1..].iter().map(|u| 1.0 - u / u0).collect())
}

/// Per-group detector with the decode test matrix `[D (or D_id); H]`
/// prebuilt. Bin index bits are exact outcomes for the `H` rows.
pub struct BinDetector<'a> {
    design: &'a SubsamplingDesign,
    cfg: &'a DetectorConfig,
    tests: BoolMatrix,
    scale: f64,
    gamma_thr: Option<f64>,
}

impl<'a> BinDetector<'a> {
    /// `scale` is the reference magnitude for the zero tolerance, normally
    /// the largest entry of the initial bin tables.
    pub fn new(design: &'a SubsamplingDesign, cfg: &'a DetectorConfig, scale: f64) -> Self {
        let d_rows = match design.split {
            Some(split) => BoolMatrix::new(design.n(), design.d.rows()[split.id_rows()].to_vec()).expect("same width"),
            None => design.d.clone(),
        };
        let tests = d_rows.stack(&design.h).expect("same width");
        let gamma_thr = match (cfg.rho, cfg.sigma > 0.0) {
            (Some(rho), true) => solve_gamma(rho, cfg.sigma).ok().map(|(g, _)| g),
            _ => None,
        };
        Self { design, cfg, tests, scale, gamma_thr }
    }

    pub fn detect(&self, bin: &[f64], j: usize) -> BinType {
        self.detect_ranked(bin, j).0
    }

    /// Like [`detect`](Self::detect), also telling whether a singleton's
    /// index is the only one the tests allow.
    pub fn detect_ranked(&self, bin: &[f64], j: usize) -> (BinType, bool) {
        match self.design.split {
            Some(_) => (self.detect_noisy(bin, j), true),
            None => self.detect_noiseless(bin, j),
        }
    }

    fn outcomes(&self, y: &IndexVector, j: usize) -> IndexVector {
        let b = self.design.b();
        let mut out = IndexVector::zeros(y.len() + b);
        for p in y.ones_iter() {
            out.set(p, true);
        }
        for a in 0..b {
            if j >> a & 1 == 1 {
                out.set(y.len() + a, true);
            }
        }
        out
    }

    fn within_degree(&self, k: &IndexVector) -> bool {
        self.cfg.max_degree.is_none_or(|t| k.degree() <= t)
    }

    /// Decoded index and whether the tests pin it down. A COMP/DD decode is
    /// ambiguous when unconfirmed candidates remain and the degree bound
    /// would still admit them: a masked defective looks exactly like that.
    fn decode(&self, y: &IndexVector, j: usize, noisy: bool) -> Option<(IndexVector, bool)> {
        if self.design.identity_d {
            let k = decode_identity(y);
            return (self.design.bin_of(&k) == j && self.within_degree(&k)).then_some((k, true));
        }
        let mut inst = GroupTestInstance::new(self.tests.clone(), self.outcomes(y, j)).expect("sizes agree");
        inst.max_defects = self.cfg.max_degree;
        let (k, certain) = if noisy {
            let opts = LpOptions { verify: false, ..self.cfg.lp };
            (decode_lp(&inst, &opts).ok()?, true)
        } else {
            match comp_dd(&inst) {
                Ok(dd) if inst.consistent(&dd.definite) => {
                    let room = self.cfg.max_degree.is_none_or(|t| dd.definite.degree() < t);
                    let certain = dd.undetermined().is_zero() || !room;
                    (dd.definite, certain)
                }
                _ if self.cfg.lp_fallback => (decode_lp(&inst, &self.cfg.lp).ok()?, false),
                _ => return None,
            }
        };
        (self.design.bin_of(&k) == j && self.within_degree(&k)).then_some((k, certain))
    }

    fn detect_noiseless(&self, bin: &[f64], j: usize) -> (BinType, bool) {
        let tol = self.cfg.eps_zero * self.scale;
        if bin.iter().all(|u| u.abs() <= tol) {
            return (BinType::Zeroton, true);
        }
        let u0 = bin[0];
        if u0.abs() <= tol {
            return (BinType::Multiton, true);
        }
        let Some(ratios) = ratio_vector(bin) else {
            return (BinType::Multiton, true);
        };
        let mut bits = Vec::with_capacity(ratios.len());
        for y in ratios {
            let bit = y >= 0.5;
            if (y - bit as u8 as f64).abs() > self.cfg.eps_ratio {
                return (BinType::Multiton, true);
            }
            bits.push(bit);
        }
        let y = IndexVector::from_bools(&bits);
        match self.decode(&y, j, false) {
            Some((k, certain)) if self.design.d.matvec_unchecked(&k) == y => {
                (BinType::Singleton { k, value: u0 }, certain)
            }
            _ => (BinType::Multiton, true),
        }
    }

    fn detect_noisy(&self, bin: &[f64], j: usize) -> BinType {
        let split = self.design.split.expect("noisy design");
        let pair: Vec<f64> = split
            .ver1_rows()
            .zip(split.ver2_rows())
            .map(|(p1, p2)| bin[1 + p1] - bin[1 + p2])
            .collect();
        let p2 = pair.len() as f64;
        let floor = (self.cfg.eps_zero * self.scale).powi(2);
        let bound = (1.0 + self.cfg.gamma) * self.cfg.nu2().max(floor);
        let energy = pair.iter().map(|u| u * u).sum::<f64>() / p2;
        if energy <= bound {
            return BinType::Zeroton;
        }
        let rho_hat = self.cfg.rho.unwrap_or(bin[0].abs());
        let gamma_thr = match self.gamma_thr {
            Some(g) => g,
            None if self.cfg.sigma > 0.0 && rho_hat > 0.0 => match solve_gamma(rho_hat, self.cfg.sigma) {
                Ok((g, _)) => g,
                Err(_) => return BinType::Multiton,
            },
            None => 0.5 * rho_hat,
        };
        if let (Some(need), true) = (self.cfg.min_test_bits, self.cfg.sigma > 0.0) {
            let q = crossover_probs(gamma_thr, rho_hat, self.cfg.sigma).1.min(0.5);
            let bits = split.p1 as f64 * (1.0 - binary_entropy(q)) + self.design.b() as f64;
            if bits < need {
                return BinType::Multiton;
            }
        }
        let id_rows = &bin[1..1 + split.p1];
        let y = threshold_outcomes(id_rows, gamma_thr);
        let Some((k, _)) = self.decode(&y, j, true) else {
            return BinType::Multiton;
        };
        let sig: Vec<f64> = split
            .ver1_rows()
            .zip(split.ver2_rows())
            .map(|(p1, p2)| self.design.survives(&k, p1 + 1) as u8 as f64 - self.design.survives(&k, p2 + 1) as u8 as f64)
            .collect();
        let ss: f64 = sig.iter().map(|s| s * s).sum();
        if ss == 0.0 {
            return BinType::Multiton;
        }
        let mut value = sig.iter().zip(&pair).map(|(s, u)| s * u).sum::<f64>() / ss;
        if self.cfg.snap_to_rho {
            if let Some(rho) = self.cfg.rho {
                value = rho.copysign(value);
            }
        }
        let residual = pair.iter().zip(&sig).map(|(u, s)| (u - value * s).powi(2)).sum::<f64>() / p2;
        // the unpaired entries must fit too: a wrong index decoded from
        // flipped tests leaves roughly q * rho^2 of excess energy there
        let id_bound = (1.0 + self.cfg.gamma) * (self.cfg.sigma * self.cfg.sigma).max(floor);
        let id_residual = (0..=split.p1)
            .map(|p| (bin[p] - if self.design.survives(&k, p) { value } else { 0.0 }).powi(2))
            .sum::<f64>()
            / (split.p1 + 1) as f64;
        if residual <= bound && id_residual <= id_bound && value != 0.0 {
            BinType::Singleton { k, value }
        } else {
            BinType::Multiton
        }
    }
}

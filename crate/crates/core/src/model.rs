//! Validated system parameters, activity priors, codebook ensembles,
//! Monte-Carlo plans and the log-domain bound value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{log_binomial, log_binomial_pow2, log_sum_exp};

/// Raw system parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Channel uses per codeword.
    pub n: usize,
    /// Payload bits per user; the codebook has 2^j codewords.
    pub j: u32,
    /// Receive antennas.
    pub l: usize,
    /// Maximum transmit power per channel use.
    pub p: f64,
    /// Number of potential users.
    pub k: usize,
}

/// A [`SystemConfig`] whose invariants have been checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidatedConfig {
    cfg: SystemConfig,
    log2_m: f64,
}

impl SystemConfig {
    pub fn validate(self) -> Result<ValidatedConfig> {
        validate_system_config(self)
    }

    /// Same configuration with a different power.
    pub fn with_power(self, p: f64) -> SystemConfig {
        SystemConfig { p, ..self }
    }
}

/// Checks every invariant and reports all violations at once.
pub fn validate_system_config(cfg: SystemConfig) -> Result<ValidatedConfig> {
    let mut issues = Vec::new();
    if cfg.n < 1 {
        issues.push("n ≥ 1".to_string());
    }
    if cfg.j < 1 {
        issues.push("J ≥ 1".to_string());
    }
    if cfg.j > 1000 {
        issues.push("J ≤ 1000".to_string());
    }
    if cfg.l < 1 {
        issues.push("L ≥ 1".to_string());
    }
    if !(cfg.p > 0.0) || !cfg.p.is_finite() {
        issues.push("P > 0".to_string());
    }
    if cfg.k < 1 {
        issues.push("K ≥ 1".to_string());
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    Ok(ValidatedConfig { cfg, log2_m: cfg.j as f64 })
}

impl ValidatedConfig {
    pub fn raw(&self) -> SystemConfig {
        self.cfg
    }
    pub fn n(&self) -> usize {
        self.cfg.n
    }
    pub fn j(&self) -> u32 {
        self.cfg.j
    }
    pub fn l(&self) -> usize {
        self.cfg.l
    }
    pub fn p(&self) -> f64 {
        self.cfg.p
    }
    pub fn k(&self) -> usize {
        self.cfg.k
    }
    pub fn log2_m(&self) -> f64 {
        self.log2_m
    }
    pub fn ln_m(&self) -> f64 {
        self.log2_m * std::f64::consts::LN_2
    }
    /// Codebook size as a float; exact for J ≤ 53 and correctly rounded above.
    pub fn m(&self) -> f64 {
        self.log2_m.exp2()
    }
    pub fn np(&self) -> f64 {
        self.cfg.n as f64 * self.cfg.p
    }
    /// E_b/N_0 in dB with unit noise power.
    pub fn ebn0_db(&self) -> f64 {
        ebn0_db(self.cfg.n, self.cfg.j, self.cfg.p)
    }
    /// ln C(M, k).
    pub fn ln_binom_m(&self, k: usize) -> f64 {
        log_binomial_pow2(self.log2_m, k as u64)
    }
    /// ln C(M - a, k).
    pub fn ln_binom_m_minus(&self, a: usize, k: usize) -> f64 {
        if self.log2_m < 1000.0 {
            log_binomial(self.m() - a as f64, k as u64)
        } else {
            self.ln_binom_m(k)
        }
    }
    /// ln of the collision probability bound C(k,2)/M.
    pub fn ln_collision(&self, k: usize) -> f64 {
        log_binomial(k as f64, 2) - self.ln_m()
    }
    pub fn with_power(&self, p: f64) -> Result<ValidatedConfig> {
        self.cfg.with_power(p).validate()
    }
}

/// E_b/N_0 = nP/J in dB.
pub fn ebn0_db(n: usize, j: u32, p: f64) -> f64 {
    10.0 * (n as f64 * p / j as f64).log10()
}

/// Power that yields a given E_b/N_0 in dB.
pub fn power_from_ebn0_db(n: usize, j: u32, db: f64) -> f64 {
    10f64.powf(db / 10.0) * j as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorKind {
    Binomial { k: usize, p_a: f64 },
    Table,
}

/// Distribution of the number of active users, stored as ln pmf over [0, K].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityPrior {
    kind: PriorKind,
    log_pmf: Vec<f64>,
}

impl ActivityPrior {
    pub fn binomial(k: usize, p_a: f64) -> Result<Self> {
        let mut issues = Vec::new();
        if k < 1 {
            issues.push("binomial prior needs K ≥ 1".to_string());
        }
        if !(0.0..=1.0).contains(&p_a) {
            issues.push(format!("binomial prior needs 0 ≤ p_a ≤ 1, got {p_a}"));
        }
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        let log_pmf = (0..=k)
            .map(|i| {
                let a = if i == 0 { 0.0 } else { i as f64 * p_a.ln() };
                let b = if i == k { 0.0 } else { (k - i) as f64 * (-p_a).ln_1p() };
                log_binomial(k as f64, i as u64) + a + b
            })
            .collect();
        Ok(Self { kind: PriorKind::Binomial { k, p_a }, log_pmf }.normalized())
    }

    /// Builds a prior from nonnegative weights `(count, weight)` on [0, K].
    pub fn table(k: usize, weights: &[(usize, f64)]) -> Result<Self> {
        let mut issues = Vec::new();
        if weights.is_empty() {
            issues.push("table prior is empty".to_string());
        }
        let mut w = vec![0.0; k + 1];
        for &(c, x) in weights {
            if c > k {
                issues.push(format!("table entry {c} outside [0, {k}]"));
            } else if !(x >= 0.0) || !x.is_finite() {
                issues.push(format!("table weight for {c} must be nonnegative, got {x}"));
            } else {
                w[c] += x;
            }
        }
        if issues.is_empty() && w.iter().all(|&x| x == 0.0) {
            issues.push("table prior has zero total mass".to_string());
        }
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        let log_pmf = w.iter().map(|x| x.ln()).collect();
        Ok(Self { kind: PriorKind::Table, log_pmf }.normalized())
    }

    /// Point mass at `ka` on [0, K].
    pub fn point_mass(k: usize, ka: usize) -> Result<Self> {
        Self::table(k, &[(ka, 1.0)])
    }

    fn normalized(mut self) -> Self {
        let z = log_sum_exp(&self.log_pmf);
        for v in &mut self.log_pmf {
            *v -= z;
        }
        self
    }

    pub fn kind(&self) -> &PriorKind {
        &self.kind
    }

    /// Largest supported count K.
    pub fn k_max(&self) -> usize {
        self.log_pmf.len() - 1
    }

    pub fn ln_pmf(&self, ka: usize) -> f64 {
        self.log_pmf.get(ka).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn pmf(&self, ka: usize) -> f64 {
        self.ln_pmf(ka).exp()
    }

    pub fn log_pmf(&self) -> &[f64] {
        &self.log_pmf
    }

    pub fn mean(&self) -> f64 {
        self.log_pmf.iter().enumerate().map(|(i, v)| i as f64 * v.exp()).sum()
    }

    /// Mass on [lo, hi].
    pub fn mass_in(&self, lo: usize, hi: usize) -> f64 {
        if lo > hi {
            return 0.0;
        }
        let hi = hi.min(self.k_max());
        (lo..=hi).map(|i| self.pmf(i)).sum::<f64>().min(1.0)
    }

    /// Mass outside [lo, hi], summed directly so tiny tails keep precision.
    pub fn mass_outside(&self, lo: usize, hi: usize) -> f64 {
        (0..=self.k_max()).filter(|&i| i < lo || i > hi).map(|i| self.pmf(i)).sum()
    }

    /// Smallest window [K_l, K_u] whose outside mass is at most `tail`.
    /// Ends are trimmed greedily, lighter end first.
    pub fn window(&self, tail: f64) -> (usize, usize) {
        let mut lo = 0;
        let mut hi = self.k_max();
        let mut removed = 0.0;
        while lo < hi {
            let (pl, ph) = (self.pmf(lo), self.pmf(hi));
            let (cand, from_lo) = if pl <= ph { (pl, true) } else { (ph, false) };
            if removed + cand > tail {
                break;
            }
            removed += cand;
            if from_lo {
                lo += 1;
            } else {
                hi -= 1;
            }
        }
        (lo, hi)
    }

    /// Counts with positive mass.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.log_pmf
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > f64::NEG_INFINITY)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ensemble {
    /// i.i.d. CN(0, P') entries.
    Gaussian,
    /// Uniform on the sphere of radius sqrt(nP').
    Spherical,
}

impl std::fmt::Display for Ensemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ensemble::Gaussian => "gaussian",
            Ensemble::Spherical => "spherical",
        })
    }
}

impl std::str::FromStr for Ensemble {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Ensemble::Gaussian),
            "spherical" => Ok(Ensemble::Spherical),
            other => Err(Error::Validation(vec![format!("unknown ensemble '{other}'")])),
        }
    }
}

/// Random-codebook ensemble with design power P'.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookSpec {
    pub ensemble: Ensemble,
    pub p_prime: f64,
}

impl CodebookSpec {
    pub fn new(ensemble: Ensemble, p_prime: f64) -> Self {
        Self { ensemble, p_prime }
    }

    pub fn validate(&self, cfg: &ValidatedConfig) -> Result<()> {
        let mut issues = Vec::new();
        if !(self.p_prime > 0.0) {
            issues.push("P' > 0".to_string());
        }
        if self.p_prime > cfg.p() * (1.0 + 1e-12) {
            issues.push(format!("P' ≤ P (P'={}, P={})", self.p_prime, cfg.p()));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }
}

/// Seed and trial count. Trial `i` always draws from substreams keyed by `i`,
/// so results do not depend on how trials are spread over workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloPlan {
    pub seed: u64,
    pub trials: usize,
}

impl MonteCarloPlan {
    pub fn new(seed: u64, trials: usize) -> Result<Self> {
        if trials < 1 {
            return Err(Error::Validation(vec!["trials ≥ 1".into()]));
        }
        Ok(Self { seed, trials })
    }

    pub fn with_trials(self, trials: usize) -> Self {
        Self { trials: trials.max(1), ..self }
    }
}

/// A probability-like quantity stored as a natural log, with its Monte-Carlo
/// standard error (linear scale) and sample count. Closed forms carry zero error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub log_value: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl BoundValue {
    pub const ZERO: BoundValue = BoundValue { log_value: f64::NEG_INFINITY, std_err: 0.0, samples: 0 };

    pub fn closed(log_value: f64) -> Self {
        Self { log_value, std_err: 0.0, samples: 0 }
    }

    pub fn from_linear(v: f64) -> Self {
        Self::closed(v.ln())
    }

    /// Mean of per-sample values given in the log domain.
    pub fn from_log_samples(logs: &[f64]) -> Self {
        let n = logs.len();
        if n == 0 {
            return Self::ZERO;
        }
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Self { log_value: m, std_err: 0.0, samples: n };
        }
        if m == f64::INFINITY {
            return Self { log_value: m, std_err: f64::INFINITY, samples: n };
        }
        let scaled: Vec<f64> = logs.iter().map(|v| (v - m).exp()).collect();
        let mean = scaled.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            scaled.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { log_value: m + mean.ln(), std_err: m.exp() * (var / n as f64).sqrt(), samples: n }
    }

    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }

    pub fn clip_to_probability(&self) -> f64 {
        self.log_value.exp().clamp(0.0, 1.0)
    }

    /// Sum of two bounds; standard errors add linearly since draws may be shared.
    pub fn plus(&self, other: &BoundValue) -> BoundValue {
        BoundValue {
            log_value: crate::specfun::log_add(self.log_value, other.log_value),
            std_err: self.std_err + other.std_err,
            samples: self.samples.max(other.samples),
        }
    }

    /// Multiplies the value by e^{ln_factor}.
    pub fn scaled(&self, ln_factor: f64) -> BoundValue {
        if ln_factor == f64::NEG_INFINITY {
            return BoundValue { samples: self.samples, ..BoundValue::ZERO };
        }
        BoundValue {
            log_value: self.log_value + ln_factor,
            std_err: self.std_err * ln_factor.exp(),
            samples: self.samples,
        }
    }

    /// The smaller of two bounds, keeping that bound's error.
    pub fn min(self, other: BoundValue) -> BoundValue {
        if other.log_value < self.log_value {
            other
        } else {
            self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn binomial_two_coins() {
        let p = ActivityPrior::binomial(2, 0.5).unwrap();
        assert_relative_eq!(p.pmf(0), 0.25, max_relative = 1e-14);
        assert_relative_eq!(p.pmf(1), 0.5, max_relative = 1e-14);
        assert_relative_eq!(p.pmf(2), 0.25, max_relative = 1e-14);
    }

    #[test]
    fn binomial_extreme_probabilities() {
        let p = ActivityPrior::binomial(5, 0.0).unwrap();
        assert_eq!(p.pmf(0), 1.0);
        let p = ActivityPrior::binomial(5, 1.0).unwrap();
        assert_eq!(p.pmf(5), 1.0);
        assert!(ActivityPrior::binomial(5, 1.2).is_err());
    }

    #[test]
    fn point_mass_table() {
        let p = ActivityPrior::table(5, &[(3, 1.0)]).unwrap();
        assert_eq!(p.pmf(3), 1.0);
        assert_eq!(p.pmf(2), 0.0);
        assert!(ActivityPrior::table(5, &[]).is_err());
        assert!(ActivityPrior::table(5, &[(1, -1.0)]).is_err());
        assert!(ActivityPrior::table(5, &[(1, 0.0)]).is_err());
    }

    #[test]
    fn binomial_mean_large_population() {
        let p = ActivityPrior::binomial(200, 0.5).unwrap();
        assert_relative_eq!(p.mean(), 100.0, max_relative = 1e-9);
    }

    #[test]
    fn window_trims_tails() {
        let p = ActivityPrior::binomial(200, 0.5).unwrap();
        let (lo, hi) = p.window(1e-6);
        assert!(p.mass_outside(lo, hi) <= 1e-6);
        assert!(lo > 50 && hi < 150 && lo < 100 && hi > 100);
        let q = ActivityPrior::point_mass(8, 3).unwrap();
        assert_eq!(q.window(1e-6), (3, 3));
    }

    #[test]
    fn config_validation_lists_issues() {
        let ok = SystemConfig { n: 1000, j: 100, l: 128, p: 0.01, k: 600 }.validate();
        assert!(ok.is_ok());
        let bad = SystemConfig { n: 0, j: 100, l: 128, p: -1.0, k: 600 }.validate();
        match bad {
            Err(Error::Validation(v)) => {
                assert!(v.iter().any(|s| s == "n ≥ 1"));
                assert!(v.iter().any(|s| s == "P > 0"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bound_value_clip() {
        assert_eq!(BoundValue::closed(2.0).clip_to_probability(), 1.0);
        assert_eq!(BoundValue::ZERO.clip_to_probability(), 0.0);
        let b = BoundValue::from_log_samples(&[0.0, (0.5f64).ln()]);
        assert_relative_eq!(b.value(), 0.75, max_relative = 1e-14);
        assert_relative_eq!(b.std_err, 0.25, max_relative = 1e-12);
    }
}

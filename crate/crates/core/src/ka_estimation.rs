//! Energy-based estimation of the number of active users and bounds on its
//! error: the Chernoff-type pairwise bound with its Gaussian and spherical
//! variants, a concentration bound, high-power and long-blocklength floors,
//! and the scaling-law interval radius.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BoundValue, CodebookSpec, Ensemble, MonteCarloPlan, ValidatedConfig};
use crate::optim::golden_min;
use crate::randmat::{spectrum_of, unit_columns};
use crate::specfun::ln_upper_gamma;

/// Received block and the metric parameters.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorInput<'a> {
    /// n × L column-major.
    pub y: &'a [Complex64],
    pub n: usize,
    pub l: usize,
    pub p_prime: f64,
    pub k_max: usize,
}

/// argmin over K̃ ∈ [0, k_max] of |‖Y‖²/(nL) − (1 + K̃P')|, ties to the smaller K̃.
pub fn estimate_active_count(input: &EstimatorInput<'_>) -> usize {
    let energy: f64 = input.y.iter().map(|z| z.norm_sqr()).sum::<f64>() / (input.n * input.l) as f64;
    estimate_from_energy(energy, input.p_prime, input.k_max)
}

/// Same estimator given the normalized energy ‖Y‖²/(nL).
pub fn estimate_from_energy(energy: f64, p_prime: f64, k_max: usize) -> usize {
    let metric = |k: usize| (energy - (1.0 + k as f64 * p_prime)).abs();
    let x = ((energy - 1.0) / p_prime).max(0.0);
    let base = if x.is_finite() { (x.floor() as usize).min(k_max) } else { k_max };
    let mut best = base;
    let mut best_m = metric(base);
    // Neighbours cover rounding at integer boundaries.
    let lo = base.saturating_sub(1);
    let hi = (base + 1).min(k_max);
    for k in lo..=hi {
        let m = metric(k);
        if m < best_m || (m == best_m && k < best) {
            best = k;
            best_m = m;
        }
    }
    best
}

/// ln of K_a·P[‖c‖² > nP] (Gaussian) or ln 0 (spherical).
pub fn power_violation_prob(spec: &CodebookSpec, cfg: &ValidatedConfig, ka: usize) -> BoundValue {
    match spec.ensemble {
        Ensemble::Spherical => BoundValue::ZERO,
        Ensemble::Gaussian => {
            if ka == 0 {
                return BoundValue::ZERO;
            }
            let n = cfg.n() as f64;
            BoundValue::closed((ka as f64).ln() + ln_upper_gamma(n, n * cfg.p() / spec.p_prime))
        }
    }
}

/// Default design-power grid: 16 geometric points on [P/100, P] for Gaussian
/// codebooks, the single point P for spherical ones.
pub fn default_p_prime_grid(ensemble: Ensemble, p: f64) -> Vec<f64> {
    match ensemble {
        Ensemble::Spherical => vec![p],
        Ensemble::Gaussian => (0..16).map(|i| p * 10f64.powf(-2.0 + 2.0 * i as f64 / 15.0)).collect(),
    }
}

/// Unit-power Gram spectra of the first K_a codewords, one per trial.
/// Trial t uses codebook substream t, shared with every other bound.
#[derive(Debug, Clone)]
pub struct CountSpectra {
    pub n: usize,
    pub ka: usize,
    spectra: Vec<Vec<f64>>,
}

impl CountSpectra {
    pub fn sample(n: usize, ka: usize, ensemble: Ensemble, plan: MonteCarloPlan) -> Result<Self> {
        let spectra = (0..plan.trials)
            .into_par_iter()
            .map(|t| {
                let cols = unit_columns(n, ka, ensemble, plan.seed, t as u64);
                spectrum_of(&cols, n, ka)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, ka, spectra })
    }

    pub fn trials(&self) -> usize {
        self.spectra.len()
    }

    /// Expectations (p1, p2) of the two Chernoff terms at design power `p_prime`.
    pub fn chernoff_terms(&self, l: usize, ka_prime: usize, p_prime: f64, iters: usize) -> (BoundValue, BoundValue) {
        let n = self.n as f64;
        let lf = l as f64;
        let a1 = 1.0 + (ka_prime as f64 + 0.5) * p_prime;
        let a2 = 1.0 + (ka_prime as f64 - 0.5) * p_prime;
        let (l1, l2): (Vec<f64>, Vec<f64>) = self
            .spectra
            .iter()
            .map(|mu| {
                let m = mu.len() as f64;
                let f1 = |rho: f64| {
                    rho * n * lf * a1
                        - lf * ((n - m) * rho.ln_1p()
                            + mu.iter().map(|x| (rho * (1.0 + p_prime * x)).ln_1p()).sum::<f64>())
                };
                let (_, v1) = golden_min(f1, 0.0, 1.0 / a1, iters);
                let top = 1.0 + p_prime * mu.first().copied().unwrap_or(0.0);
                let f2 = |rho: f64| {
                    -rho * n * lf * a2
                        - lf * ((n - m) * (-rho).ln_1p()
                            + mu.iter().map(|x| (-rho * (1.0 + p_prime * x)).ln_1p()).sum::<f64>())
                };
                let (_, v2) = golden_min(f2, 0.0, (1.0 - 1e-9) / top, iters);
                (v1.min(0.0), v2.min(0.0))
            })
            .unzip();
        (BoundValue::from_log_samples(&l1), BoundValue::from_log_samples(&l2))
    }

    /// The same two terms in the high-power limit, on the unit-power Gram.
    pub fn high_power_terms(&self, l: usize, ka_prime: usize, iters: usize) -> (BoundValue, BoundValue) {
        let n = self.n as f64;
        let lf = l as f64;
        let kp = ka_prime as f64;
        let (l1, l2): (Vec<f64>, Vec<f64>) = self
            .spectra
            .iter()
            .map(|mu| {
                let m = mu.iter().filter(|x| **x > 0.0).count() as f64;
                let f1 = |rho: f64| rho * n * lf * (kp + 0.5) - lf * mu.iter().map(|x| (rho * x).ln_1p()).sum::<f64>();
                let (_, v1) = golden_min(f1, 0.0, (m / (n * (kp + 0.5))).max(1e-300), iters);
                let v2 = if mu.first().copied().unwrap_or(0.0) <= 0.0 {
                    // No signal: the exponent decreases without bound when K'_a ≥ 1.
                    if kp >= 1.0 {
                        f64::NEG_INFINITY
                    } else {
                        0.0
                    }
                } else {
                    let f2 = |rho: f64| -rho * n * lf * (kp - 0.5) - lf * mu.iter().map(|x| (-rho * x).ln_1p()).sum::<f64>();
                    golden_min(f2, 0.0, (1.0 - 1e-9) / mu[0], iters).1
                };
                (v1.min(0.0), v2.min(0.0))
            })
            .unzip();
        (BoundValue::from_log_samples(&l1), BoundValue::from_log_samples(&l2))
    }
}

/// Inputs of the pairwise bound on P[K_a → K'_a].
#[derive(Debug, Clone)]
pub struct PairwiseErrorQuery {
    pub ka: usize,
    pub ka_prime: usize,
    pub cfg: ValidatedConfig,
    pub spec: CodebookSpec,
    pub plan: MonteCarloPlan,
    /// Golden-section iterations for the Chernoff parameter.
    pub rho_iters: usize,
    /// Design powers to minimize over; `None` uses [`default_p_prime_grid`].
    pub p_prime_grid: Option<Vec<f64>>,
}

impl PairwiseErrorQuery {
    pub fn new(cfg: ValidatedConfig, spec: CodebookSpec, ka: usize, ka_prime: usize, plan: MonteCarloPlan) -> Self {
        Self { ka, ka_prime, cfg, spec, plan, rho_iters: 60, p_prime_grid: None }
    }
}

/// Pairwise bound with the design power and the parts that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct PairwiseBound {
    pub value: BoundValue,
    pub p_prime: f64,
    pub chernoff_upper: BoundValue,
    pub chernoff_lower: BoundValue,
    pub power_violation: BoundValue,
    pub ln_collision: f64,
}

/// Combines precomputed spectra into the bound for one pair and one design power.
pub(crate) fn pairwise_from_spectra(
    spectra: &CountSpectra,
    cfg: &ValidatedConfig,
    spec: &CodebookSpec,
    ka_prime: usize,
    rho_iters: usize,
) -> PairwiseBound {
    let (p1, p2) = spectra.chernoff_terms(cfg.l(), ka_prime, spec.p_prime, rho_iters);
    let p0 = power_violation_prob(spec, cfg, spectra.ka);
    let coll = cfg.ln_collision(spectra.ka);
    let value = p1.min(p2).plus(&p0).plus(&BoundValue::closed(coll));
    PairwiseBound { value, p_prime: spec.p_prime, chernoff_upper: p1, chernoff_lower: p2, power_violation: p0, ln_collision: coll }
}

/// Bound on P[K_a → K'_a], minimized over the design-power grid.
pub fn pairwise_error_bound(q: &PairwiseErrorQuery) -> Result<PairwiseBound> {
    if q.ka == q.ka_prime {
        return Err(Error::precondition("pairwise bound needs K'_a ≠ K_a"));
    }
    if q.ka > q.cfg.k() || q.ka_prime > q.cfg.k() {
        return Err(Error::precondition("K_a and K'_a must lie in [0, K]"));
    }
    let grid = q.p_prime_grid.clone().unwrap_or_else(|| default_p_prime_grid(q.spec.ensemble, q.cfg.p()));
    let spectra = CountSpectra::sample(q.cfg.n(), q.ka, q.spec.ensemble, q.plan)?;
    let mut best: Option<PairwiseBound> = None;
    for pp in grid {
        let spec = CodebookSpec::new(q.spec.ensemble, pp);
        spec.validate(&q.cfg)?;
        let b = pairwise_from_spectra(&spectra, &q.cfg, &spec, q.ka_prime, q.rho_iters);
        if best.as_ref().is_none_or(|x| b.value.log_value < x.value.log_value) {
            best = Some(b);
        }
    }
    best.ok_or_else(|| Error::precondition("empty design-power grid"))
}

/// Two-sided concentration bound on the normalized received energy for
/// spherical codebooks. May exceed one.
pub fn concentration_bound(n: usize, l: usize, ka: usize, p: f64, delta: f64) -> Result<BoundValue> {
    if !(delta > 0.0) {
        return Err(Error::domain("concentration bound needs δ > 0"));
    }
    let nf = n as f64;
    let nkp = nf * ka as f64 * p;
    let e1 = (nf * delta).powi(2) / (8.0 * (nf + nkp * nkp));
    let e2 = nf * delta / (4.0 * (1.0 + nkp));
    Ok(BoundValue::closed(2f64.ln() - l as f64 * e1.min(e2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AsymptoticMode {
    /// P, P' → ∞ at fixed n, L.
    HighPower,
    /// n → ∞ at fixed P, L.
    LongBlock,
}

/// Arguments of the asymptotic floors. `log2_m = ∞` drops the collision term.
#[derive(Debug, Clone, Copy)]
pub struct AsymptoticArgs {
    pub ka: usize,
    pub ka_prime: usize,
    pub l: usize,
    pub log2_m: f64,
    /// Blocklength and ensemble for the high-power mode.
    pub n: usize,
    pub ensemble: Ensemble,
    pub plan: Option<MonteCarloPlan>,
    pub rho_iters: usize,
}

/// Closed-form exponent per antenna of the long-blocklength floor.
pub fn long_block_exponent(ka: usize, ka_prime: usize) -> f64 {
    if ka == 0 {
        return f64::NEG_INFINITY;
    }
    let k = ka as f64;
    let kp = ka_prime as f64;
    let s = if ka_prime < ka { 1.0 } else { -1.0 };
    let ratio = (2.0 * kp + s) / (2.0 * k);
    k * (1.0 - ratio + ratio.ln())
}

fn ln_collision_raw(ka: usize, log2_m: f64) -> f64 {
    if log2_m.is_infinite() {
        return f64::NEG_INFINITY;
    }
    crate::specfun::log_binomial(ka as f64, 2) - log2_m * std::f64::consts::LN_2
}

/// Error floors of the pairwise bound.
pub fn asymptotic_pairwise_bound(mode: AsymptoticMode, args: &AsymptoticArgs) -> Result<BoundValue> {
    if args.ka == args.ka_prime {
        return Err(Error::precondition("asymptotic bound needs K'_a ≠ K_a"));
    }
    let coll = BoundValue::closed(ln_collision_raw(args.ka, args.log2_m));
    match mode {
        AsymptoticMode::LongBlock => {
            let e = args.l as f64 * long_block_exponent(args.ka, args.ka_prime);
            Ok(BoundValue::closed(e).plus(&coll))
        }
        AsymptoticMode::HighPower => {
            let plan = args
                .plan
                .ok_or_else(|| Error::precondition("high-power floor needs a Monte-Carlo plan"))?;
            let spectra = CountSpectra::sample(args.n, args.ka, args.ensemble, plan)?;
            let (p1, p2) = spectra.high_power_terms(args.l, args.ka_prime, args.rho_iters);
            Ok(p1.min(p2).plus(&coll))
        }
    }
}

/// Radius of the estimation interval and whether exact estimation is predicted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalRadius {
    pub radius: f64,
    pub exact_regime: bool,
}

pub fn estimation_interval_radius(ka: usize, n: usize, l: usize, p: f64, k: usize, alpha: f64) -> Result<IntervalRadius> {
    if !(alpha > 32.0) {
        return Err(Error::domain("interval radius needs α > 32"));
    }
    if n == 0 || l == 0 || k < 2 || !(p > 0.0) {
        return Err(Error::domain("interval radius needs n, L, P > 0 and K ≥ 2"));
    }
    let (nf, lf, kaf) = (n as f64, l as f64, ka as f64);
    let lnk = (k as f64).ln();
    let radius = (alpha * lnk * (kaf * kaf / lf + 1.0 / (nf * lf * p * p))).sqrt();
    let arg = lf / (alpha * lnk) - 1.0 / (nf * p * p);
    let exact_regime = arg >= 0.0 && kaf <= arg.sqrt();
    Ok(IntervalRadius { radius, exact_regime })
}

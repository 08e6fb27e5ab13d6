//! Desk-scale Monte-Carlo simulation of the channel, the energy-based count
//! estimator and an exhaustive MAP list decoder. Serves as ground truth for
//! the bounds at tiny codebook sizes.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::detection::{detection_error_bounds, DecoderWindow, DetectionQuery, OptimizerSettings};
use crate::error::{Error, Result};
use crate::ka_estimation::{asymptotic_pairwise_bound, estimate_from_energy, pairwise_error_bound, AsymptoticArgs, AsymptoticMode, PairwiseErrorQuery};
use crate::linalg::{adj_mul, gram_cols, idx};
use crate::model::{ActivityPrior, CodebookSpec, Ensemble, MonteCarloPlan, SystemConfig, ValidatedConfig};
use crate::randmat::{mean_and_stderr, unit_column, CodewordBlock};
use crate::specfun::log_binomial;
use crate::streams::{complex_normal, substream, Domain};

/// Largest codebook the exhaustive decoder accepts.
pub const MAX_BRUTE_FORCE_M: usize = 20;
/// Largest number of subsets of the top list size it will enumerate.
pub const MAX_BRUTE_FORCE_SUBSETS: f64 = 1e6;

/// Codebook keys used by the simulator, kept apart from those the bounds use.
const SIM_KEY: u64 = 1 << 48;

/// An empirical rate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub mean: f64,
    pub std_err: f64,
}

impl Rate {
    fn from_samples(v: &[f64]) -> Self {
        let (mean, std_err) = mean_and_stderr(v);
        Self { mean, std_err }
    }

    /// Whether `self ≤ bound + sigmas·(σ_self + σ_bound)`.
    pub fn dominated_by(&self, bound: f64, bound_err: f64, sigmas: f64) -> bool {
        self.mean <= bound + sigmas * (self.std_err + bound_err)
    }
}

/// Codebook with columns 0..m for trial `trial`, scaled to power `p_prime`.
/// Columns whose energy exceeds nP are replaced by zeros, since a code must
/// meet the power constraint.
fn trial_codebook(n: usize, m: usize, spec: &CodebookSpec, p: f64, seed: u64, trial: usize) -> Vec<Complex64> {
    let scale = spec.p_prime.sqrt();
    let cap = n as f64 * p * (1.0 + 1e-9);
    let mut out = Vec::with_capacity(n * m);
    for j in 0..m {
        let mut col = unit_column(n, spec.ensemble, seed, SIM_KEY + trial as u64, j as u64);
        col.iter_mut().for_each(|z| *z *= scale);
        if col.iter().map(|z| z.norm_sqr()).sum::<f64>() > cap {
            col.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        }
        out.extend(col);
    }
    out
}

/// Y = Σ_k c_{w_k} h_kᵀ + Z for the codeword columns listed in `users`.
fn receive(n: usize, l: usize, codebook: &[Complex64], users: &[usize], seed: u64, key: u64, trial: usize) -> Vec<Complex64> {
    let mut fading = substream(seed, Domain::Fading, key, trial as u64);
    let mut noise = substream(seed, Domain::Noise, key, trial as u64);
    let mut y: Vec<Complex64> = (0..n * l).map(|_| complex_normal(&mut noise)).collect();
    for &w in users {
        let c = &codebook[w * n..w * n + n];
        for a in 0..l {
            let h = complex_normal(&mut fading);
            for (yi, ci) in y[a * n..a * n + n].iter_mut().zip(c) {
                *yi += ci * h;
            }
        }
    }
    y
}

fn normalized_energy(y: &[Complex64], n: usize, l: usize) -> f64 {
    y.iter().map(|z| z.norm_sqr()).sum::<f64>() / (n * l) as f64
}

/// Empirical distribution of the count estimate for a fixed true count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountHistogram {
    pub ka: usize,
    /// counts[k] = number of trials with estimate k, for k ∈ [0, K].
    pub counts: Vec<u64>,
    pub trials: usize,
}

impl CountHistogram {
    /// Empirical P[K_a → k] with its binomial standard error.
    pub fn probability(&self, k: usize) -> Rate {
        let c = self.counts.get(k).copied().unwrap_or(0) as f64;
        let t = self.trials as f64;
        let p = c / t;
        Rate { mean: p, std_err: (p * (1.0 - p) / t).sqrt() }
    }

    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (k, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = k;
            }
        }
        best
    }
}

/// Simulates the energy-based estimator with `ka` active users, each sending
/// a fresh codeword.
pub fn simulate_ka_estimation(cfg: &ValidatedConfig, spec: &CodebookSpec, ka: usize, plan: MonteCarloPlan) -> Result<CountHistogram> {
    spec.validate(cfg)?;
    if ka > cfg.k() {
        return Err(Error::precondition(format!("K_a = {ka} exceeds K = {}", cfg.k())));
    }
    let (n, l, k) = (cfg.n(), cfg.l(), cfg.k());
    let users: Vec<usize> = (0..ka).collect();
    let estimates: Vec<usize> = (0..plan.trials)
        .into_par_iter()
        .map(|t| {
            let cb = trial_codebook(n, ka, spec, cfg.p(), plan.seed, t);
            let y = receive(n, l, &cb, &users, plan.seed, ka as u64, t);
            estimate_from_energy(normalized_energy(&y, n, l), spec.p_prime, k)
        })
        .collect();
    let mut counts = vec![0u64; k + 1];
    for e in estimates {
        counts[e] += 1;
    }
    Ok(CountHistogram { ka, counts, trials: plan.trials })
}

/// Decoded message set and its metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodedSet {
    /// Codeword indices, increasing.
    pub indices: Vec<usize>,
    pub metric: f64,
}

fn check_guard(m: usize, top: usize) -> Result<()> {
    if m > MAX_BRUTE_FORCE_M {
        return Err(Error::Guard(format!("codebook size {m} exceeds {MAX_BRUTE_FORCE_M}")));
    }
    let subsets = log_binomial(m as f64, top as u64).exp();
    if subsets > MAX_BRUTE_FORCE_SUBSETS {
        return Err(Error::Guard(format!("C({m}, {top}) = {subsets:.0} subsets exceeds {MAX_BRUTE_FORCE_SUBSETS:.0}")));
    }
    Ok(())
}

/// Depth-first enumeration with a Cholesky factor of I + C_SᴴC_S extended one
/// row per level.
struct SubsetSearch<'a> {
    m: usize,
    l: usize,
    lf: f64,
    gram: &'a [Complex64],
    cy: &'a [Complex64],
    energy: f64,
    /// Per list size: −ln P(k) + ln C(M, k), or +∞ outside the window.
    size_cost: Vec<f64>,
    lo: usize,
    hi: usize,
    // Row d of the factor and of L⁻¹ C_Sᴴ Y at depth d.
    chol: Vec<Complex64>,
    z: Vec<Complex64>,
    path: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl SubsetSearch<'_> {
    fn visit(&mut self, start: usize, depth: usize, logdet: f64, reduction: f64) {
        if depth >= self.lo {
            let metric = self.lf * logdet + self.energy - reduction + self.size_cost[depth];
            let better = match &self.best {
                None => true,
                Some((b, set)) => metric < *b || (metric == *b && depth < set.len()),
            };
            if better {
                self.best = Some((metric, self.path.clone()));
            }
        }
        if depth == self.hi {
            return;
        }
        let (m, l, hi) = (self.m, self.l, self.hi);
        for j in start..m {
            if depth + 1 + (m - j - 1) < self.lo {
                break;
            }
            // w = L⁻¹ g with g = G[S, j].
            let mut w = vec![Complex64::new(0.0, 0.0); depth];
            for i in 0..depth {
                let mut acc = self.gram[idx(self.path[i], j, m)];
                for q in 0..i {
                    acc -= self.chol[i * hi + q] * w[q];
                }
                w[i] = acc / self.chol[i * hi + i].re;
            }
            let d2 = 1.0 + self.gram[idx(j, j, m)].re - w.iter().map(|v| v.norm_sqr()).sum::<f64>();
            if !(d2 > 0.0) {
                continue;
            }
            let d = d2.sqrt();
            for (q, wq) in w.iter().enumerate() {
                self.chol[depth * hi + q] = wq.conj();
            }
            self.chol[depth * hi + depth] = Complex64::new(d, 0.0);
            let mut added = 0.0;
            for a in 0..l {
                let mut acc = self.cy[idx(j, a, m)];
                for (q, wq) in w.iter().enumerate() {
                    acc -= wq.conj() * self.z[q * l + a];
                }
                let v = acc / d;
                self.z[depth * l + a] = v;
                added += v.norm_sqr();
            }
            self.path.push(j);
            self.visit(j + 1, depth + 1, logdet + 2.0 * d.ln(), reduction + added);
            self.path.pop();
        }
    }
}

/// Exact minimizer of the MAP metric over all subsets of the codebook whose
/// size lies in `list` = [lo, hi]. Ties go to the smaller set, then to the
/// lexicographically first one. `y` is n × L column-major.
pub fn brute_force_map_decode(
    y: &[Complex64],
    codebook: &CodewordBlock,
    prior: &ActivityPrior,
    list: (usize, usize),
    cfg: &ValidatedConfig,
) -> Result<DecodedSet> {
    let (n, m, l) = (codebook.n(), codebook.count(), cfg.l());
    let (lo, hi) = list;
    if lo > hi || hi > m {
        return Err(Error::precondition(format!("list sizes [{lo}, {hi}] must satisfy lo ≤ hi ≤ M = {m}")));
    }
    if n != cfg.n() || y.len() != n * l {
        return Err(Error::precondition("received block does not match the configuration"));
    }
    check_guard(m, hi)?;
    let gram = gram_cols(codebook.data(), n, m);
    let cy = adj_mul(codebook.data(), y, n, m, l);
    let size_cost = (0..=hi)
        .map(|k| if k < lo { f64::INFINITY } else { -prior.ln_pmf(k) + cfg.ln_binom_m(k) })
        .collect();
    let mut s = SubsetSearch {
        m,
        l,
        lf: l as f64,
        gram: &gram,
        cy: &cy,
        energy: y.iter().map(|z| z.norm_sqr()).sum(),
        size_cost,
        lo,
        hi,
        chol: vec![Complex64::new(0.0, 0.0); hi.max(1) * hi.max(1)],
        z: vec![Complex64::new(0.0, 0.0); hi.max(1) * l],
        path: Vec::with_capacity(hi),
        best: None,
    };
    s.visit(0, 0, 0.0, 0.0);
    let (metric, indices) = s.best.ok_or_else(|| Error::Numeric("no admissible subset".into()))?;
    Ok(DecodedSet { indices, metric })
}

/// What happened in one two-stage trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub true_count: usize,
    pub estimated_count: usize,
    /// Message of each active user; repeats are collisions.
    pub transmitted: Vec<usize>,
    pub decoded: Vec<usize>,
    /// |W \ Ŵ| with W the set of transmitted messages.
    pub misdetections: usize,
    /// |Ŵ \ W|.
    pub false_alarms: usize,
    /// Active users whose message is not in Ŵ.
    pub missed_users: usize,
    /// Ŵ ≠ W as sets.
    pub joint_error: bool,
}

impl TrialOutcome {
    fn new(true_count: usize, estimated_count: usize, transmitted: Vec<usize>, decoded: Vec<usize>) -> Self {
        let mut w = transmitted.clone();
        w.sort_unstable();
        w.dedup();
        let hit = |x: &usize, set: &[usize]| set.binary_search(x).is_ok();
        let misdetections = w.iter().filter(|x| !hit(x, &decoded)).count();
        let false_alarms = decoded.iter().filter(|x| !hit(x, &w)).count();
        let missed_users = transmitted.iter().filter(|x| !hit(x, &decoded)).count();
        let joint_error = w != decoded;
        Self { true_count, estimated_count, transmitted, decoded, misdetections, false_alarms, missed_users, joint_error }
    }

    /// Per-user misdetection share, 0 without active users.
    pub fn md_share(&self) -> f64 {
        if self.true_count == 0 {
            0.0
        } else {
            self.missed_users as f64 / self.true_count as f64
        }
    }

    /// False-alarm share of the decoded list, 0 for an empty list.
    pub fn fa_share(&self) -> f64 {
        if self.decoded.is_empty() {
            0.0
        } else {
            self.false_alarms as f64 / self.decoded.len() as f64
        }
    }
}

/// Inputs of the two-stage simulation.
#[derive(Debug, Clone)]
pub struct TwoStageQuery {
    pub cfg: ValidatedConfig,
    pub prior: ActivityPrior,
    /// Prior assumed by the decoder; `None` uses the true one.
    pub decoder_prior: Option<ActivityPrior>,
    pub spec: CodebookSpec,
    pub window: DecoderWindow,
    pub plan: MonteCarloPlan,
    pub keep_outcomes: bool,
}

impl TwoStageQuery {
    pub fn new(cfg: ValidatedConfig, prior: ActivityPrior, spec: CodebookSpec, window: DecoderWindow, plan: MonteCarloPlan) -> Self {
        Self { cfg, prior, decoder_prior: None, spec, window, plan, keep_outcomes: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoStageStats {
    pub md: Rate,
    pub fa: Rate,
    pub joint: Rate,
    pub trials: usize,
    pub outcomes: Option<Vec<TrialOutcome>>,
}

fn draw_count(prior: &ActivityPrior, u: f64) -> usize {
    let mut acc = 0.0;
    for k in 0..=prior.k_max() {
        acc += prior.pmf(k);
        if u < acc {
            return k;
        }
    }
    prior.support().last().unwrap_or(0)
}

/// Runs the two-stage scheme: energy-based count estimate clamped to
/// [K_l, K_u], then exhaustive MAP decoding with list sizes within r' of it.
pub fn simulate_two_stage(q: &TwoStageQuery) -> Result<TwoStageStats> {
    let cfg = &q.cfg;
    q.spec.validate(cfg)?;
    if q.prior.k_max() != cfg.k() {
        return Err(Error::precondition(format!("prior is defined on [0, {}] but K = {}", q.prior.k_max(), cfg.k())));
    }
    if cfg.j() > 5 {
        return Err(Error::Guard(format!("J = {} gives more than {MAX_BRUTE_FORCE_M} codewords", cfg.j())));
    }
    let m = 1usize << cfg.j();
    let w = q.window;
    if w.k_l > w.k_u || w.k_u > cfg.k() {
        return Err(Error::Validation(vec![format!("window [{}, {}] must lie in [0, {}]", w.k_l, w.k_u, cfg.k())]));
    }
    if w.k_l > m {
        return Err(Error::precondition(format!("K_l = {} exceeds the codebook size {m}", w.k_l)));
    }
    check_guard(m, w.k_u.min(m))?;
    let (n, l) = (cfg.n(), cfg.l());
    let dec_prior = q.decoder_prior.as_ref().unwrap_or(&q.prior);
    let seed = q.plan.seed;
    let outcomes: Vec<TrialOutcome> = (0..q.plan.trials)
        .into_par_iter()
        .map(|t| -> Result<TrialOutcome> {
            let mut act = substream(seed, Domain::Activity, 0, t as u64);
            let ka = draw_count(&q.prior, act.random::<f64>());
            let mut msg = substream(seed, Domain::Messages, 0, t as u64);
            let transmitted: Vec<usize> = (0..ka).map(|_| msg.random_range(0..m)).collect();
            let cb = trial_codebook(n, m, &q.spec, cfg.p(), seed, t);
            let y = receive(n, l, &cb, &transmitted, seed, 0, t);
            let est = estimate_from_energy(normalized_energy(&y, n, l), q.spec.p_prime, w.k_u).max(w.k_l);
            let (lo, hi) = w.list_bounds(est);
            let block = CodewordBlock::from_columns(n, m, cb, q.spec)?;
            let dec = brute_force_map_decode(&y, &block, dec_prior, (lo.min(m), hi.min(m)), cfg)?;
            Ok(TrialOutcome::new(ka, est, transmitted, dec.indices))
        })
        .collect::<Result<_>>()?;
    let md: Vec<f64> = outcomes.iter().map(TrialOutcome::md_share).collect();
    let fa: Vec<f64> = outcomes.iter().map(TrialOutcome::fa_share).collect();
    let joint: Vec<f64> = outcomes.iter().map(|o| o.joint_error as u8 as f64).collect();
    Ok(TwoStageStats {
        md: Rate::from_samples(&md),
        fa: Rate::from_samples(&fa),
        joint: Rate::from_samples(&joint),
        trials: q.plan.trials,
        outcomes: q.keep_outcomes.then_some(outcomes),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendQuantity {
    /// Bound on P[K_a → K'_a].
    KaBound,
    /// Misdetection bound of the two-stage scheme.
    PmdBound,
    /// Simulated P[K_a → K'_a].
    EmpiricalKa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    L,
    P,
    N,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::L => "L",
            SweepAxis::P => "P",
            SweepAxis::N => "n",
        })
    }
}

/// A sweep of one system parameter. The design power follows P in
/// proportion `spec.p_prime / cfg.p`.
#[derive(Debug, Clone)]
pub struct TrendQuery {
    pub quantity: TrendQuantity,
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub cfg: ValidatedConfig,
    pub spec: CodebookSpec,
    pub ka: usize,
    pub ka_prime: usize,
    /// Prior and window for the misdetection bound.
    pub prior: Option<ActivityPrior>,
    pub window: Option<DecoderWindow>,
    pub settings: OptimizerSettings,
    pub plan: MonteCarloPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendReport {
    pub parameter: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errs: Vec<f64>,
    /// Least-squares slope of ln(value) against L, or against ln(x) for P and n.
    pub slope: f64,
    pub r_squared: f64,
    /// Relative spread over the top half of the grid is below 5%.
    pub plateau: bool,
    /// Asymptotic floor of the estimation bound for P and n sweeps.
    pub floor: Option<f64>,
    /// |last value − floor| / floor.
    pub floor_gap: Option<f64>,
}

/// Relative spread below which the top half of a sweep counts as flat.
pub const PLATEAU_TOLERANCE: f64 = 0.05;

fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}

fn grid_config(base: &ValidatedConfig, axis: SweepAxis, x: f64) -> Result<ValidatedConfig> {
    let mut raw: SystemConfig = base.raw();
    match axis {
        SweepAxis::L => raw.l = x.round() as usize,
        SweepAxis::N => raw.n = x.round() as usize,
        SweepAxis::P => raw.p = x,
    }
    raw.validate()
}

/// Evaluates a quantity along a parameter sweep with common random numbers
/// and summarizes its trend.
pub fn trend_report(q: &TrendQuery) -> Result<TrendReport> {
    if q.grid.len() < 4 {
        return Err(Error::precondition("trend sweeps need at least 4 grid points"));
    }
    if q.grid.windows(2).any(|w| !(w[1] > w[0])) || q.grid.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::precondition("trend grid must be positive and strictly increasing"));
    }
    if q.ka == q.ka_prime && q.quantity != TrendQuantity::PmdBound {
        return Err(Error::precondition("trend of P[K_a → K'_a] needs K'_a ≠ K_a"));
    }
    let ratio = q.spec.p_prime / q.cfg.p();
    let mut values = Vec::with_capacity(q.grid.len());
    let mut std_errs = Vec::with_capacity(q.grid.len());
    for &x in &q.grid {
        let cfg = grid_config(&q.cfg, q.axis, x)?;
        let spec = CodebookSpec::new(q.spec.ensemble, ratio * cfg.p());
        let (v, se) = match q.quantity {
            TrendQuantity::KaBound => {
                let mut pq = PairwiseErrorQuery::new(cfg, spec, q.ka, q.ka_prime, q.plan);
                pq.rho_iters = q.settings.rho_iters;
                if q.spec.ensemble == Ensemble::Gaussian {
                    pq.p_prime_grid = Some(vec![spec.p_prime]);
                }
                let b = pairwise_error_bound(&pq)?.value;
                (b.value(), b.std_err)
            }
            TrendQuantity::EmpiricalKa => {
                let r = simulate_ka_estimation(&cfg, &spec, q.ka, q.plan)?.probability(q.ka_prime);
                (r.mean, r.std_err)
            }
            TrendQuantity::PmdBound => {
                let (Some(prior), Some(window)) = (&q.prior, q.window) else {
                    return Err(Error::precondition("misdetection trend needs a prior and a decoder window"));
                };
                let mut dq = DetectionQuery::new(cfg, prior.clone(), spec, window, q.plan);
                dq.settings = q.settings.clone();
                let b = detection_error_bounds(&dq)?.md;
                (b.value(), b.std_err)
            }
        };
        values.push(v);
        std_errs.push(se);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = q
        .grid
        .iter()
        .zip(&values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(x, v)| (if q.axis == SweepAxis::L { *x } else { x.ln() }, v.ln()))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::Numeric("fewer than two positive values to fit".into()));
    }
    let (slope, r_squared) = fit_line(&xs, &ys);
    let top = &values[values.len() / 2..];
    let hi = top.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = top.iter().copied().fold(f64::INFINITY, f64::min);
    let plateau = hi > 0.0 && (hi - lo) / hi < PLATEAU_TOLERANCE;
    let floor = match (q.axis, q.quantity) {
        (SweepAxis::L, _) | (_, TrendQuantity::PmdBound) => None,
        (axis, _) => {
            let last = grid_config(&q.cfg, axis, *q.grid.last().unwrap())?;
            let args = AsymptoticArgs {
                ka: q.ka,
                ka_prime: q.ka_prime,
                l: last.l(),
                log2_m: last.log2_m(),
                n: last.n(),
                ensemble: q.spec.ensemble,
                plan: Some(q.plan),
                rho_iters: q.settings.rho_iters,
            };
            let mode = if axis == SweepAxis::P { AsymptoticMode::HighPower } else { AsymptoticMode::LongBlock };
            Some(asymptotic_pairwise_bound(mode, &args)?.value())
        }
    };
    let floor_gap = floor.map(|f| (values.last().unwrap() - f).abs() / f);
    Ok(TrendReport {
        parameter: q.axis.to_string(),
        grid: q.grid.clone(),
        values,
        std_errs,
        slope,
        r_squared,
        plateau,
        floor,
        floor_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::map_metric;
    use crate::streams::complex_normal_vec;

    fn cfg(n: usize, j: u32, l: usize, p: f64, k: usize) -> ValidatedConfig {
        SystemConfig { n, j, l, p, k }.validate().unwrap()
    }

    fn random_block(n: usize, m: usize, seed: u64) -> CodewordBlock {
        let spec = CodebookSpec::new(Ensemble::Gaussian, 1.0);
        CodewordBlock::from_columns(n, m, trial_codebook(n, m, &spec, 100.0, seed, 0), spec).unwrap()
    }

    fn all_subsets_min(y: &[Complex64], block: &CodewordBlock, prior: &ActivityPrior, lo: usize, hi: usize, c: &ValidatedConfig) -> (f64, Vec<usize>) {
        let m = block.count();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 0u32..(1 << m) {
            let set: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
            if set.len() < lo || set.len() > hi {
                continue;
            }
            let v = map_metric(y, &block.select(&set), prior, c).unwrap();
            if v < best.0 {
                best = (v, set);
            }
        }
        best
    }

    #[test]
    fn decoder_matches_exhaustive_metric() {
        let c = cfg(6, 3, 2, 1.0, 5);
        let prior = ActivityPrior::binomial(5, 0.4).unwrap();
        for seed in 0..6 {
            let block = random_block(6, 8, seed);
            let y = complex_normal_vec(seed, Domain::Noise, 99, 0, 12);
            let dec = brute_force_map_decode(&y, &block, &prior, (1, 4), &c).unwrap();
            let (best, set) = all_subsets_min(&y, &block, &prior, 1, 4, &c);
            assert!((dec.metric - best).abs() < 1e-9 * (1.0 + best.abs()), "{} vs {best}", dec.metric);
            assert_eq!(dec.indices, set);
            let direct = map_metric(&y, &block.select(&dec.indices), &prior, &c).unwrap();
            assert!((direct - dec.metric).abs() < 1e-9 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn orthogonal_noiseless_single_user_is_recovered() {
        let n = 4;
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            data[i * n + i] = Complex64::new(2.0, 0.0);
        }
        let block = CodewordBlock::from_columns(n, n, data, CodebookSpec::new(Ensemble::Spherical, 1.0)).unwrap();
        let c = cfg(n, 2, 1, 1.0, 1);
        let prior = ActivityPrior::point_mass(1, 1).unwrap();
        for w in 0..n {
            let mut y = vec![Complex64::new(0.0, 0.0); n];
            y[w] = Complex64::new(2.0 * 1.3, -0.4);
            let dec = brute_force_map_decode(&y, &block, &prior, (1, 1), &c).unwrap();
            assert_eq!(dec.indices, vec![w]);
        }
    }

    #[test]
    fn empty_window_decodes_nothing() {
        let c = cfg(6, 3, 2, 1.0, 5);
        let block = random_block(6, 8, 1);
        let y = complex_normal_vec(1, Domain::Noise, 5, 0, 12);
        let prior = ActivityPrior::binomial(5, 0.4).unwrap();
        assert!(brute_force_map_decode(&y, &block, &prior, (0, 0), &c).unwrap().indices.is_empty());
    }

    #[test]
    fn guard_rejects_large_codebooks() {
        let c = cfg(2, 5, 1, 1.0, 5);
        let block = random_block(2, 21, 0);
        let prior = ActivityPrior::binomial(5, 0.4).unwrap();
        let y = vec![Complex64::new(0.0, 0.0); 2];
        assert!(matches!(brute_force_map_decode(&y, &block, &prior, (0, 1), &c), Err(Error::Guard(_))));
    }

    #[test]
    fn outcome_accounting() {
        let o = TrialOutcome::new(3, 3, vec![4, 1, 4], vec![1, 2, 7]);
        assert_eq!((o.misdetections, o.false_alarms, o.missed_users), (1, 2, 2));
        assert!(o.joint_error);
        assert!((o.md_share() - 2.0 / 3.0).abs() < 1e-15);
        let ok = TrialOutcome::new(2, 2, vec![5, 3], vec![3, 5]);
        assert!(!ok.joint_error && ok.md_share() == 0.0 && ok.fa_share() == 0.0);
    }

    #[test]
    fn silent_prior_with_forced_empty_list() {
        let c = cfg(8, 3, 2, 1.0, 4);
        let q = TwoStageQuery::new(
            c,
            ActivityPrior::point_mass(4, 0).unwrap(),
            CodebookSpec::new(Ensemble::Spherical, 1.0),
            DecoderWindow::new(0, 0, 0, 4).unwrap(),
            MonteCarloPlan::new(3, 50).unwrap(),
        );
        let s = simulate_two_stage(&q).unwrap();
        assert_eq!((s.md.mean, s.fa.mean, s.joint.mean), (0.0, 0.0, 0.0));
    }

    #[test]
    fn high_power_estimates_are_exact() {
        let c = cfg(256, 4, 64, 50.0, 8);
        let h = simulate_ka_estimation(&c, &CodebookSpec::new(Ensemble::Spherical, 50.0), 3, MonteCarloPlan::new(1, 200).unwrap()).unwrap();
        assert_eq!(h.mode(), 3);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 - 2.0 * v).collect();
        let (s, r2) = fit_line(&x, &y);
        assert!((s + 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}

//! Converse bounds on the minimum energy per bit.
//!
//! Every feasibility check answers "could some code work at this power?".
//! A power is only declared infeasible when that is certified: list sizes are
//! handled through a Lagrangian relaxation whose dual value is a valid bound,
//! and Monte-Carlo terms are shifted by a few standard errors in the
//! permissive direction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ebn0_db, ActivityPrior, Ensemble, MonteCarloPlan, PriorKind, ValidatedConfig};
use crate::optim::{bisect_log, golden_min};
use crate::randmat::LogdetSampler;
use crate::specfun::{binary_entropy, chi2_sf_inverse, chi2_tail, chi2_tail_lower_bound, log_binomial, log_binomial_pow2, Chi2Side};

const LN2: f64 = std::f64::consts::LN_2;

/// How P[χ²(2L) ≥ x] enters the single-user constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailMode {
    #[default]
    Exact,
    /// Closed-form lower bound on the tail where it applies. Gives a weaker
    /// but still valid converse.
    LowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverseSettings {
    /// Prior mass left outside the subset of counts the bound averages over.
    pub tail: f64,
    pub tail_mode: TailMode,
    /// Standard errors added to the Monte-Carlo side of the Fano constraints.
    pub sigma_shift: f64,
}

impl Default for ConverseSettings {
    fn default() -> Self {
        Self { tail: 1e-6, tail_mode: TailMode::Exact, sigma_shift: 3.0 }
    }
}

/// List size and misdetection budget for one active-user count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListChoice {
    pub ka: usize,
    pub list_size: usize,
    pub md_budget: f64,
}

/// Witness of converse feasibility: a list size and budget per count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConverseAllocation {
    pub choices: Vec<ListChoice>,
    /// Σ P(K_a) ε_{K_a}.
    pub md_used: f64,
    /// Σ P(K_a) max{(K̂_a − K_a)/K̂_a, 0}.
    pub fa_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleUserVerdict {
    pub feasible: bool,
    /// False when neither a witness nor a dual certificate was found. The
    /// power is then reported feasible, which is the safe side for a converse.
    pub certified: bool,
    pub allocation: Option<ConverseAllocation>,
    /// Constraint that rules the power out, when infeasible.
    pub binding: Option<String>,
}

/// Active-user counts the bound averages over, with their prior mass.
fn count_subset(prior: &ActivityPrior, tail: f64) -> Result<Vec<(usize, f64)>> {
    if !(0.0..1.0).contains(&tail) {
        return Err(Error::domain(format!("subset tail mass must lie in [0, 1), got {tail}")));
    }
    let (lo, hi) = prior.window(tail);
    Ok((lo.max(1)..=hi).map(|ka| (ka, prior.pmf(ka))).filter(|(_, w)| *w > 0.0).collect())
}

fn check_targets(md: f64, fa: f64) -> Result<()> {
    let mut issues = Vec::new();
    for (name, v) in [("ε_MD", md), ("ε_FA", fa)] {
        if !(0.0..=1.0).contains(&v) {
            issues.push(format!("{name} must lie in [0, 1], got {v}"));
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(issues))
    }
}

/// Smallest x with (a lower bound on) P[χ²(k) ≥ x] ≤ e^{ln_q}.
fn tail_threshold(k: u32, ln_q: f64, mode: TailMode) -> Result<f64> {
    let exact = chi2_sf_inverse(k, ln_q)?;
    let start = k as f64 - 1.0;
    if mode == TailMode::Exact || k < 2 || exact <= start {
        return Ok(exact);
    }
    let below = |x: f64| chi2_tail_lower_bound(k, x).map(|v| v.ln() <= ln_q);
    if below(start)? {
        return Ok(start);
    }
    // The bound decreases in x, so bisect towards the first crossing.
    let (mut lo, mut hi) = (start, exact);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// ln P[χ²(k) ≥ x], or its lower bound where that applies.
fn ln_tail(k: u32, x: f64, mode: TailMode) -> Result<f64> {
    let exact = chi2_tail(k, x, Chi2Side::Sf)?.ln();
    if mode == TailMode::LowerBound && k >= 2 && x >= k as f64 - 1.0 {
        return Ok(chi2_tail_lower_bound(k, x)?.ln().min(exact));
    }
    Ok(exact)
}

/// Smallest admissible misdetection budget for each list size 1..=K (index
/// 0 unused): the list-decoding constraint forces r ≥ r_min(K̂), and the
/// budget is P[χ²(2L) ≤ r_min].
fn md_floor_by_list_size(cfg: &ValidatedConfig, mode: TailMode) -> Result<Vec<f64>> {
    let k2 = 2 * cfg.l() as u32;
    let scale = 1.0 + (cfg.n() as f64 + 1.0) * cfg.p();
    let mut out = vec![1.0; cfg.k() + 1];
    for (kh, slot) in out.iter_mut().enumerate().skip(1) {
        let ln_q = (kh as f64).ln() - cfg.ln_m();
        if ln_q >= 0.0 {
            *slot = 0.0;
            continue;
        }
        let r = tail_threshold(k2, ln_q, mode)? / scale;
        *slot = chi2_tail(k2, r, Chi2Side::Cdf)?.exp();
    }
    Ok(out)
}

fn fa_cost(ka: usize, kh: usize) -> f64 {
    if kh > ka {
        1.0 - ka as f64 / kh as f64
    } else {
        0.0
    }
}

/// Minimizer of Σ P·ε(K̂) subject to the false-alarm budget, one list size
/// per count.
struct ListKnapsack<'a> {
    items: &'a [(usize, f64)],
    floor: &'a [f64],
    k: usize,
}

impl ListKnapsack<'_> {
    /// Per-count argmin of ε(K̂) + λ·fa(K̂); ties go to the shorter list.
    fn choose(&self, lambda: f64) -> Vec<usize> {
        self.items
            .iter()
            .map(|&(ka, _)| {
                if lambda == f64::INFINITY {
                    return ka;
                }
                let mut best = (f64::INFINITY, ka);
                for kh in ka..=self.k {
                    let v = self.floor[kh] + lambda * fa_cost(ka, kh);
                    if v < best.0 {
                        best = (v, kh);
                    }
                }
                best.1
            })
            .collect()
    }

    fn totals(&self, choice: &[usize]) -> (f64, f64) {
        self.items.iter().zip(choice).fold((0.0, 0.0), |(md, fa), (&(ka, w), &kh)| {
            (md + w * self.floor[kh], fa + w * fa_cost(ka, kh))
        })
    }

    fn allocation(&self, choice: &[usize]) -> ConverseAllocation {
        let (md_used, fa_used) = self.totals(choice);
        let choices = self
            .items
            .iter()
            .zip(choice)
            .map(|(&(ka, _), &kh)| ListChoice { ka, list_size: kh, md_budget: self.floor[kh] })
            .collect();
        ConverseAllocation { choices, md_used, fa_used }
    }
}

/// Single-user converse with the activity pattern revealed to the receiver,
/// evaluated at the configured power.
pub fn single_user_converse_feasible(
    cfg: &ValidatedConfig,
    prior: &ActivityPrior,
    targets: (f64, f64),
    settings: &ConverseSettings,
) -> Result<SingleUserVerdict> {
    check_targets(targets.0, targets.1)?;
    let items = count_subset(prior, settings.tail)?;
    let floor = md_floor_by_list_size(cfg, settings.tail_mode)?;
    Ok(solve_allocation(&ListKnapsack { items: &items, floor: &floor, k: cfg.k() }, targets))
}

fn solve_allocation(ks: &ListKnapsack<'_>, (eps_md, eps_fa): (f64, f64)) -> SingleUserVerdict {
    let feasible = |choice: &[usize]| SingleUserVerdict {
        feasible: true,
        certified: true,
        allocation: Some(ks.allocation(choice)),
        binding: None,
    };
    let infeasible = |why: &str| SingleUserVerdict { feasible: false, certified: true, allocation: None, binding: Some(why.into()) };

    let tight = ks.choose(f64::INFINITY);
    if ks.totals(&tight).0 <= eps_md {
        return feasible(&tight);
    }
    let loose = ks.choose(0.0);
    let (md0, fa0) = ks.totals(&loose);
    if md0 > eps_md {
        return infeasible("misdetection budget exceeded even with the longest lists");
    }
    if fa0 <= eps_fa {
        return feasible(&loose);
    }
    // Bisect the multiplier on the false-alarm usage, tracking the dual value
    // Σ P·min(ε + λ·fa) − λ·ε_FA, which lower-bounds any feasible MD usage.
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    let mut dual = md0;
    let eval = |t: f64, dual: &mut f64| {
        let lambda = t.exp();
        let c = ks.choose(lambda);
        let (md, fa) = ks.totals(&c);
        *dual = dual.max(md + lambda * (fa - eps_fa));
        (c, fa)
    };
    let (mut hi_choice, hi_fa) = eval(hi, &mut dual);
    if hi_fa > eps_fa {
        hi_choice = tight.clone();
    }
    let (mut lo_choice, _) = eval(lo, &mut dual);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let (c, fa) = eval(mid, &mut dual);
        if fa <= eps_fa {
            hi = mid;
            hi_choice = c;
        } else {
            lo = mid;
            lo_choice = c;
        }
    }
    if dual > eps_md {
        return infeasible("misdetection and false-alarm budgets cannot both be met");
    }
    if ks.totals(&hi_choice).0 <= eps_md {
        return feasible(&hi_choice);
    }
    // Mix the two sides of the breakpoint: lengthen lists where that buys the
    // most misdetection per unit of false alarm, while the FA budget lasts.
    let mut mixed = hi_choice.clone();
    let mut moves: Vec<(f64, usize)> = (0..mixed.len())
        .filter(|&i| lo_choice[i] != hi_choice[i])
        .map(|i| {
            let (ka, w) = ks.items[i];
            let d_md = w * (ks.floor[hi_choice[i]] - ks.floor[lo_choice[i]]);
            let d_fa = w * (fa_cost(ka, lo_choice[i]) - fa_cost(ka, hi_choice[i]));
            (d_md / d_fa.max(f64::MIN_POSITIVE), i)
        })
        .collect();
    moves.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in moves {
        let prev = mixed[i];
        mixed[i] = lo_choice[i];
        if ks.totals(&mixed).1 > eps_fa {
            mixed[i] = prev;
        }
    }
    if ks.totals(&mixed).0 <= eps_md {
        return feasible(&mixed);
    }
    SingleUserVerdict {
        feasible: true,
        certified: false,
        allocation: None,
        binding: Some("duality gap: no witness and no certificate".into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinomialVerdict {
    pub feasible: bool,
    /// A clamped target made the constraint vacuous.
    pub vacuous: bool,
    /// min{1, ε_FA/(1−p_a)}.
    pub fa_scaled: f64,
    /// min{1, ε_MD/p_a}.
    pub md_scaled: f64,
    /// ln(right side) − ln(M/K); nonnegative iff feasible.
    pub margin: f64,
}

/// Single-user converse that keeps the uncertainty in one user's activity.
/// Needs a binomial prior.
pub fn binomial_single_user_converse(
    cfg: &ValidatedConfig,
    prior: &ActivityPrior,
    targets: (f64, f64),
    mode: TailMode,
) -> Result<BinomialVerdict> {
    check_targets(targets.0, targets.1)?;
    let PriorKind::Binomial { p_a, .. } = *prior.kind() else {
        return Err(Error::domain("this converse needs a binomial activity prior"));
    };
    if !(p_a > 0.0 && p_a < 1.0) {
        return Err(Error::domain(format!("activity probability must lie in (0, 1), got {p_a}")));
    }
    let fa_scaled = (targets.1 / (1.0 - p_a)).min(1.0);
    let md_scaled = (targets.0 / p_a).min(1.0);
    let ln_ratio = cfg.ln_m() - (cfg.k() as f64).ln();
    if md_scaled >= 1.0 {
        return Ok(BinomialVerdict { feasible: true, vacuous: true, fa_scaled, md_scaled, margin: f64::INFINITY });
    }
    if fa_scaled == 0.0 {
        return Ok(BinomialVerdict { feasible: false, vacuous: false, fa_scaled, md_scaled, margin: f64::NEG_INFINITY });
    }
    let k2 = 2 * cfg.l() as u32;
    let r = crate::specfun::chi2_quantile(k2, md_scaled)?.value();
    let x = (1.0 + (cfg.n() as f64 + 1.0) * cfg.p()) * r;
    let margin = fa_scaled.ln() - ln_tail(k2, x, mode)? - ln_ratio;
    Ok(BinomialVerdict { feasible: margin >= 0.0, vacuous: false, fa_scaled, md_scaled, margin })
}

/// Cached log-det spectra for the Fano-type bounds, keyed by active count.
/// The codebook is taken Gaussian with variance P, as the bounds require.
pub struct FanoContext {
    items: Vec<(usize, f64)>,
    samplers: Vec<LogdetSampler>,
    k: usize,
    shift: f64,
}

impl FanoContext {
    pub fn new(cfg: &ValidatedConfig, prior: &ActivityPrior, settings: &ConverseSettings, plan: MonteCarloPlan) -> Result<Self> {
        let items = count_subset(prior, settings.tail)?;
        let samplers = items
            .par_iter()
            .map(|&(ka, _)| LogdetSampler::new(cfg.n(), ka, Ensemble::Gaussian, plan))
            .collect::<Result<_>>()?;
        Ok(Self { items, samplers, k: cfg.k(), shift: settings.sigma_shift })
    }

    /// Smallest upper bound on max Σ P·log2 K̂ under the FA budget, with the
    /// list sizes chosen at the minimizing multiplier.
    fn list_term(&self, eps_fa: f64) -> (f64, Vec<(usize, usize)>) {
        let pick = |lambda: f64| -> (f64, Vec<(usize, usize)>) {
            let mut total = lambda * eps_fa;
            let mut sizes = Vec::with_capacity(self.items.len());
            for &(ka, w) in &self.items {
                let mut best = (f64::NEG_INFINITY, ka);
                for kh in ka..=self.k.max(ka) {
                    let v = (kh as f64).log2() - lambda * fa_cost(ka, kh);
                    if v > best.0 {
                        best = (v, kh);
                    }
                }
                total += w * best.0;
                sizes.push((ka, best.1));
            }
            (total, sizes)
        };
        let at_zero = pick(0.0);
        let (t, v) = golden_min(|t| pick(t.exp()).0, -30.0, 30.0, 120);
        if v < at_zero.0 {
            (v, pick(t.exp()).1)
        } else {
            at_zero
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FanoVerdict {
    pub feasible: bool,
    pub lhs_bits: f64,
    /// Right side before the standard-error shift.
    pub rhs_bits: f64,
    pub rhs_std_err: f64,
    /// (K_a, K̂_a) at the relaxation optimum.
    pub list_sizes: Vec<(usize, usize)>,
}

/// Fano-type ensemble converse at the configured power.
pub fn fano_converse_feasible(
    cfg: &ValidatedConfig,
    prior: &ActivityPrior,
    targets: (f64, f64),
    settings: &ConverseSettings,
    plan: MonteCarloPlan,
) -> Result<FanoVerdict> {
    fano_check(cfg, &FanoContext::new(cfg, prior, settings, plan)?, targets)
}

fn fano_precondition(cfg: &ValidatedConfig, eps_md: f64) -> Result<()> {
    // ε ≤ M/(1+M) ⇔ ln ε ≤ −ln(1 + 1/M).
    if eps_md.ln() > -(-cfg.ln_m()).exp().ln_1p() {
        return Err(Error::precondition(format!("Fano converse needs ε_MD ≤ M/(1+M), got {eps_md}")));
    }
    Ok(())
}

fn fano_check(cfg: &ValidatedConfig, ctx: &FanoContext, targets: (f64, f64)) -> Result<FanoVerdict> {
    check_targets(targets.0, targets.1)?;
    fano_precondition(cfg, targets.0)?;
    let (n, l, p) = (cfg.n() as f64, cfg.l() as f64, cfg.p());
    let mass: f64 = ctx.items.iter().map(|(_, w)| w).sum();
    let (lists, list_sizes) = ctx.list_term(targets.1);
    let lhs_bits = (mass - targets.0) * cfg.j() as f64 - binary_entropy(targets.0)? - lists;
    let mut rhs_bits = 0.0;
    let mut var = 0.0;
    for (&(ka, w), sampler) in ctx.items.iter().zip(&ctx.samplers) {
        let kf = ka as f64;
        let (mean, se) = sampler.mean_bits(p);
        let collision = 1.0 - (log_binomial(kf, 2) - cfg.ln_m()).exp();
        let coef = w * l * collision / kf;
        rhs_bits += w * n * l * (kf * p).ln_1p() / LN2 / kf - coef * mean;
        var += (coef * se).powi(2);
    }
    let rhs_std_err = var.sqrt();
    Ok(FanoVerdict {
        feasible: lhs_bits <= rhs_bits + ctx.shift * rhs_std_err,
        lhs_bits,
        rhs_bits,
        rhs_std_err,
        list_sizes,
    })
}

/// ln(M!/(M^k (M−k)!)) = Σ_{i<k} ln(1 − i/M), the log-probability that k
/// uniform messages are distinct.
fn ln_distinct(log2_m: f64, k: usize) -> f64 {
    let inv_m = (-log2_m).exp2();
    (0..k).map(|i| (-(i as f64) * inv_m).ln_1p()).sum()
}

/// Left side of the joint-error Fano constraint, in bits.
pub fn joint_fano_lhs_bits(log2_m: f64, ka: usize, eps_j: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eps_j) {
        return Err(Error::domain(format!("ε_J must lie in [0, 1], got {eps_j}")));
    }
    let ln_c = log_binomial_pow2(log2_m, ka as u64);
    if ln_c == f64::NEG_INFINITY {
        return Err(Error::precondition(format!("K_a = {ka} exceeds the codebook size")));
    }
    let ln_d = ln_distinct(log2_m, ka);
    // ε_J ≤ C/(1+C)·distinct ⇔ ln ε_J ≤ −ln(1 + 1/C) + ln distinct.
    if eps_j.ln() > -(-ln_c).exp().ln_1p() + ln_d {
        return Err(Error::precondition(format!("ε_J = {eps_j} exceeds the joint-error Fano limit for K_a = {ka}")));
    }
    let scaled = (eps_j.ln() - ln_d).exp().min(1.0);
    Ok((1.0 - scaled) * ln_c / LN2 - binary_entropy(scaled)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointFanoVerdict {
    pub feasible: bool,
    pub lhs_bits: f64,
    pub rhs_bits: f64,
    pub rhs_std_err: f64,
}

/// Joint-error Fano converse for a known count `ka` at the configured power.
pub fn joint_fano_converse(cfg: &ValidatedConfig, ka: usize, eps_j: f64, sigma_shift: f64, plan: MonteCarloPlan) -> Result<JointFanoVerdict> {
    let sampler = LogdetSampler::new(cfg.n(), ka, Ensemble::Gaussian, plan)?;
    joint_fano_check(cfg, ka, eps_j, sigma_shift, &sampler)
}

fn joint_fano_check(cfg: &ValidatedConfig, ka: usize, eps_j: f64, sigma_shift: f64, sampler: &LogdetSampler) -> Result<JointFanoVerdict> {
    let lhs_bits = joint_fano_lhs_bits(cfg.log2_m(), ka, eps_j)?;
    let (n, l) = (cfg.n() as f64, cfg.l() as f64);
    let (mean, se) = sampler.mean_bits(cfg.p());
    let rhs_bits = n * l * (ka as f64 * cfg.p()).ln_1p() / LN2 - l * mean;
    let rhs_std_err = l * se;
    Ok(JointFanoVerdict { feasible: lhs_bits <= rhs_bits + sigma_shift * rhs_std_err, lhs_bits, rhs_bits, rhs_std_err })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConverseKind {
    SingleUser,
    BinomialSingleUser,
    Fano,
    JointFano,
}

impl std::fmt::Display for ConverseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConverseKind::SingleUser => "single-user",
            ConverseKind::BinomialSingleUser => "binomial-single-user",
            ConverseKind::Fano => "fano",
            ConverseKind::JointFano => "joint-fano",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverseSearch {
    pub p_lo: f64,
    pub p_hi: f64,
    pub tol_db: f64,
    pub settings: ConverseSettings,
}

impl Default for ConverseSearch {
    fn default() -> Self {
        Self { p_lo: 1e-6, p_hi: 100.0, tol_db: 0.01, settings: ConverseSettings::default() }
    }
}

/// Outcome of one converse in the energy-per-bit search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConverseBound {
    pub kind: ConverseKind,
    /// Certified lower bound on E_b/N_0 in dB. `None` when the bottom of the
    /// power bracket is already feasible, so no bound is established.
    pub ebn0_db: Option<f64>,
    /// The whole bracket is infeasible; the value is the top of the bracket.
    pub above_bracket: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConverseReport {
    /// Largest of the individual bounds.
    pub ebn0_db: Option<f64>,
    pub dominant: Option<ConverseKind>,
    pub parts: Vec<ConverseBound>,
}

fn validate_search(search: &ConverseSearch) -> Result<()> {
    if !(search.p_lo > 0.0 && search.p_hi > search.p_lo && search.tol_db > 0.0) {
        return Err(Error::Validation(vec![format!(
            "power bracket needs 0 < P_lo < P_hi and a positive tolerance, got [{}, {}] / {}",
            search.p_lo, search.p_hi, search.tol_db
        )]));
    }
    Ok(())
}

/// Bisects a power-monotone feasibility predicate and keeps the infeasible
/// side, which is what a converse may report.
fn converse_threshold(
    kind: ConverseKind,
    cfg: &ValidatedConfig,
    search: &ConverseSearch,
    mut feasible: impl FnMut(&ValidatedConfig) -> Result<bool>,
) -> Result<ConverseBound> {
    let mut failure = None;
    let mut probe = |p: f64| match cfg.with_power(p).and_then(|c| feasible(&c)) {
        Ok(f) => f,
        Err(e) => {
            failure.get_or_insert(e);
            true
        }
    };
    let db = |p: f64| ebn0_db(cfg.n(), cfg.j(), p);
    let out = if !probe(search.p_hi) {
        ConverseBound { kind, ebn0_db: Some(db(search.p_hi)), above_bracket: true }
    } else if probe(search.p_lo) {
        ConverseBound { kind, ebn0_db: None, above_bracket: false }
    } else {
        let (lo, _) = bisect_log(&mut probe, search.p_lo, search.p_hi, search.tol_db);
        ConverseBound { kind, ebn0_db: Some(db(lo)), above_bracket: false }
    };
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Largest converse E_b/N_0 over the applicable bounds: the single-user one
/// always, the binomial one for binomial priors, the Fano one when ε_MD is
/// small enough.
pub fn min_ebn0_converse(
    cfg: &ValidatedConfig,
    prior: &ActivityPrior,
    targets: (f64, f64),
    search: &ConverseSearch,
    plan: MonteCarloPlan,
) -> Result<ConverseReport> {
    check_targets(targets.0, targets.1)?;
    validate_search(search)?;
    if prior.k_max() != cfg.k() {
        return Err(Error::Validation(vec![format!("prior is defined on [0, {}] but K = {}", prior.k_max(), cfg.k())]));
    }
    let set = &search.settings;
    let mut parts = vec![converse_threshold(ConverseKind::SingleUser, cfg, search, |c| {
        single_user_converse_feasible(c, prior, targets, set).map(|v| v.feasible)
    })?];
    if matches!(prior.kind(), PriorKind::Binomial { p_a, .. } if *p_a > 0.0 && *p_a < 1.0) {
        parts.push(converse_threshold(ConverseKind::BinomialSingleUser, cfg, search, |c| {
            binomial_single_user_converse(c, prior, targets, set.tail_mode).map(|v| v.feasible)
        })?);
    }
    if fano_precondition(cfg, targets.0).is_ok() {
        let ctx = FanoContext::new(cfg, prior, set, plan)?;
        parts.push(converse_threshold(ConverseKind::Fano, cfg, search, |c| fano_check(c, &ctx, targets).map(|v| v.feasible))?);
    }
    Ok(combine(parts))
}

fn combine(parts: Vec<ConverseBound>) -> ConverseReport {
    let best = parts
        .iter()
        .filter_map(|b| b.ebn0_db.map(|v| (v, b.kind)))
        .fold(None, |acc: Option<(f64, ConverseKind)>, (v, k)| match acc {
            Some((a, _)) if a >= v => acc,
            _ => Some((v, k)),
        });
    ConverseReport { ebn0_db: best.map(|b| b.0), dominant: best.map(|b| b.1), parts }
}

/// Converse E_b/N_0 under the joint-error criterion with `ka` known users.
/// The single-user converse also applies when `ka = 1`.
pub fn min_ebn0_joint_converse(
    cfg: &ValidatedConfig,
    ka: usize,
    eps_j: f64,
    search: &ConverseSearch,
    plan: MonteCarloPlan,
) -> Result<ConverseReport> {
    validate_search(search)?;
    joint_fano_lhs_bits(cfg.log2_m(), ka, eps_j)?;
    let sampler = LogdetSampler::new(cfg.n(), ka, Ensemble::Gaussian, plan)?;
    let shift = search.settings.sigma_shift;
    let parts = vec![converse_threshold(ConverseKind::JointFano, cfg, search, |c| {
        joint_fano_check(c, ka, eps_j, shift, &sampler).map(|v| v.feasible)
    })?];
    Ok(combine(parts))
}

//! Data-detection achievability: the MAP decoding metric, misdetection and
//! false-alarm bounds for a random, unknown number of active users, the
//! minimum energy-per-bit search built on them, and the joint-error bound
//! for a known count.

mod kernel;
mod metric;

use std::collections::HashMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ka_estimation::{power_violation_prob, CountSpectra};
use crate::model::{ebn0_db, ActivityPrior, BoundValue, CodebookSpec, Ensemble, MonteCarloPlan, ValidatedConfig};
use crate::optim::bisect_log;
use crate::specfun::log_binomial;

use kernel::{CodePool, EventBound, EventKernel, SampleTerms};
pub use metric::map_metric;

/// Column layout of one error event. The pool holds the transmitted
/// codewords first, then the candidates that can be falsely decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct EventShape {
    pub ka: usize,
    /// Misdetections forced by a list that is too short.
    pub short: usize,
    /// All misdetections, forced ones included.
    pub missed: usize,
    /// False alarms forced by a list that is too long.
    pub surplus: usize,
    /// All false alarms, forced ones included.
    pub extra: usize,
}

impl EventShape {
    fn columns(&self) -> usize {
        self.ka + self.extra
    }

    fn list_size(&self) -> usize {
        self.ka - self.missed + self.extra
    }
}

/// Prior truncation window [K_l, K_u] and decoding radius r'.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderWindow {
    pub k_l: usize,
    pub k_u: usize,
    pub r_prime: usize,
}

impl DecoderWindow {
    pub fn new(k_l: usize, k_u: usize, r_prime: usize, k_max: usize) -> Result<Self> {
        let mut issues = Vec::new();
        if k_l > k_u {
            issues.push(format!("K_l ≤ K_u (K_l={k_l}, K_u={k_u})"));
        }
        if k_u > k_max {
            issues.push(format!("K_u ≤ K (K_u={k_u}, K={k_max})"));
        }
        if issues.is_empty() {
            Ok(Self { k_l, k_u, r_prime })
        } else {
            Err(Error::Validation(issues))
        }
    }

    /// Smallest window whose prior tail mass is at most `tail`.
    pub fn from_prior(prior: &ActivityPrior, tail: f64, r_prime: usize) -> Self {
        let (k_l, k_u) = prior.window(tail);
        Self { k_l, k_u, r_prime }
    }

    /// Allowed decoded list sizes [K'_l, K'_u] given the estimate K'_a.
    pub fn list_bounds(&self, ka_prime: usize) -> (usize, usize) {
        (self.k_l.max(ka_prime.saturating_sub(self.r_prime)), self.k_u.min(ka_prime + self.r_prime))
    }
}

/// One term of the error-event sums: true count, estimate, extra
/// misdetections t and extra false alarms t'.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ErrorEventIndex {
    pub ka: usize,
    pub ka_prime: usize,
    pub t: usize,
    pub t_prime: usize,
}

/// Index ranges for one (K_a, K'_a) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EventRanges {
    pub ka: usize,
    pub ka_prime: usize,
    pub list_lo: usize,
    pub list_hi: usize,
    /// Misdetections forced by the list being too short.
    pub short: usize,
    /// False alarms forced by the list being too long.
    pub surplus: usize,
    codebook: usize,
}

/// Codebook size clamped to something that fits in index arithmetic.
fn codebook_cap(cfg: &ValidatedConfig) -> usize {
    if cfg.log2_m() < 60.0 {
        cfg.m() as usize
    } else {
        1 << 60
    }
}

impl EventRanges {
    pub fn new(window: &DecoderWindow, ka: usize, ka_prime: usize, cfg: &ValidatedConfig) -> Self {
        let (list_lo, list_hi) = window.list_bounds(ka_prime);
        Self {
            ka,
            ka_prime,
            list_lo,
            list_hi,
            short: ka.saturating_sub(list_hi),
            surplus: list_lo.saturating_sub(ka),
            codebook: codebook_cap(cfg),
        }
    }

    /// Extra misdetections t. Values with t > K_a − short would miss more
    /// messages than were sent and are dropped.
    pub fn t_values(&self) -> Range<usize> {
        let room = self.codebook as i64 - self.list_lo as i64 - self.short as i64;
        if room < 0 {
            return 0..0;
        }
        let hi = self.ka.min(self.list_hi).min(room as usize).min(self.ka - self.short);
        0..hi + 1
    }

    pub fn t_upper(&self, t: usize) -> usize {
        let a = self.list_hi.saturating_sub(self.ka) - self.surplus + t;
        a.min(self.codebook.saturating_sub(self.ka.max(self.list_lo)))
    }

    /// t' values summed inside the misdetection term.
    pub fn md_t_prime(&self, t: usize) -> Range<usize> {
        let lo = (self.short as i64 - self.ka.saturating_sub(self.list_lo) as i64 + t as i64).max(0) as usize;
        lo..self.t_upper(t) + 1
    }

    /// t' values summed in the false-alarm term.
    pub fn fa_t_prime(&self, t: usize) -> Range<usize> {
        let lo = self.short as i64 - self.surplus as i64 + self.list_lo.max(1) as i64 - self.ka as i64 + t as i64;
        (lo.max(0) as usize)..self.t_upper(t) + 1
    }

    pub(crate) fn shape(&self, t: usize, t_prime: usize) -> EventShape {
        EventShape {
            ka: self.ka,
            short: self.short,
            missed: self.short + t,
            surplus: self.surplus,
            extra: self.surplus + t_prime,
        }
    }
}

/// Log prior weights ln P(k) − ln C(M, k) of the transmitted set, the set
/// left after the misdetections, the decoded list and the reference list.
/// A count outside the prior's support gives −∞.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapPriorTerms {
    pub transmitted: f64,
    pub retained: f64,
    pub decoded: f64,
    pub reference: f64,
}

impl MapPriorTerms {
    /// All weights zero: the decoder ignores the prior and compares against
    /// the transmitted set itself.
    pub fn zero() -> Self {
        Self { transmitted: 0.0, retained: 0.0, decoded: 0.0, reference: 0.0 }
    }

    pub(crate) fn for_shape(prior: &ActivityPrior, cfg: &ValidatedConfig, s: &EventShape) -> Self {
        let w = |k: usize| {
            let lp = prior.ln_pmf(k);
            if lp == f64::NEG_INFINITY {
                lp
            } else {
                lp - cfg.ln_binom_m(k)
            }
        };
        Self {
            transmitted: w(s.ka),
            retained: w(s.ka - s.missed),
            decoded: w(s.list_size()),
            reference: w(s.ka - s.short + s.surplus),
        }
    }
}

/// Optimizer point of one event bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptVars {
    pub omega: f64,
    pub nu: f64,
    pub delta: f64,
}

/// Effort knobs of the nested minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Grid points for ω on [0, 1].
    pub omega_points: usize,
    /// Grid points for ν around its data-driven center.
    pub nu_points: usize,
    /// Golden-section iterations of the final coordinate refinement; 0 skips it.
    pub refine_iters: usize,
    /// Golden-section iterations for δ.
    pub delta_iters: usize,
    /// Newton iterations of the inner (u, r) problem.
    pub newton_iters: usize,
    /// Draws used to choose (ω, ν); the chosen point is then evaluated on all.
    pub select_samples: usize,
    /// Golden-section iterations for the estimation Chernoff parameter.
    pub rho_iters: usize,
    /// Terms whose cheap bound P(K_a)·weight·min(1, p_est) is below this are
    /// not refined further.
    pub refine_threshold: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            omega_points: 9,
            nu_points: 9,
            refine_iters: 12,
            delta_iters: 40,
            newton_iters: 50,
            select_samples: 32,
            rho_iters: 60,
            refine_threshold: 1e-10,
        }
    }
}

/// Inputs of [`detection_error_bounds`].
#[derive(Debug, Clone)]
pub struct DetectionQuery {
    pub cfg: ValidatedConfig,
    /// True activity distribution.
    pub prior: ActivityPrior,
    /// Prior assumed by the decoder; `None` uses the true one.
    pub decoder_prior: Option<ActivityPrior>,
    pub spec: CodebookSpec,
    pub window: DecoderWindow,
    pub plan: MonteCarloPlan,
    pub settings: OptimizerSettings,
    /// Keep one record per evaluated (K_a, K'_a, t, t') term.
    pub diagnostics: bool,
}

impl DetectionQuery {
    pub fn new(
        cfg: ValidatedConfig,
        prior: ActivityPrior,
        spec: CodebookSpec,
        window: DecoderWindow,
        plan: MonteCarloPlan,
    ) -> Self {
        Self { cfg, prior, decoder_prior: None, spec, window, plan, settings: OptimizerSettings::default(), diagnostics: false }
    }
}

/// One evaluated error-event term; `log_value` is before the min{1, ·} clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellDiagnostic {
    pub index: ErrorEventIndex,
    pub log_value: f64,
    pub std_err: f64,
    pub point: OptVars,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionBounds {
    pub md: BoundValue,
    pub fa: BoundValue,
    /// Power violation, collisions and prior mass outside the window.
    pub p0: BoundValue,
    pub cells: Vec<CellDiagnostic>,
}

/// Upper bounds on the per-user misdetection and false-alarm probabilities.
pub fn detection_error_bounds(q: &DetectionQuery) -> Result<DetectionBounds> {
    q.spec.validate(&q.cfg)?;
    let w = DecoderWindow::new(q.window.k_l, q.window.k_u, q.window.r_prime, q.cfg.k())?;
    if q.prior.k_max() != q.cfg.k() {
        return Err(Error::precondition(format!(
            "prior is defined on [0, {}] but K = {}",
            q.prior.k_max(),
            q.cfg.k()
        )));
    }
    let mut ev = Evaluator::new(&q.cfg, &q.prior, q.decoder_prior.as_ref(), q.spec.ensemble, q.plan, &q.settings);
    let e = ev.bounds(q.cfg.p(), q.spec.p_prime, &w, None, q.diagnostics)?;
    Ok(DetectionBounds { md: e.md, fa: e.fa, p0: e.p0, cells: e.cells })
}

struct Evaluation {
    md: BoundValue,
    fa: BoundValue,
    p0: BoundValue,
    cells: Vec<CellDiagnostic>,
}

/// A misdetection or false-alarm row: P(K_a)·weight·min{1, Σ p, p_est}.
struct Row {
    weight: f64,
    est: BoundValue,
    shapes: Vec<(EventShape, ErrorEventIndex)>,
}

impl Row {
    fn cheap(&self) -> f64 {
        self.weight * self.est.value().min(1.0)
    }

    /// Contribution and its standard error; unevaluated events fall back to
    /// the cheap bound.
    fn value(&self, events: &HashMap<EventShape, EventBound>) -> (f64, f64) {
        let cheap = (self.cheap(), self.weight * self.est.std_err);
        let mut sum = BoundValue::ZERO;
        for (s, _) in &self.shapes {
            match events.get(s) {
                Some(e) => sum = sum.plus(&e.value),
                None => return cheap,
            }
        }
        let v = sum.value();
        if v < self.est.value().min(1.0) {
            (self.weight * v, self.weight * sum.std_err)
        } else {
            cheap
        }
    }
}

/// Keeps codeword pools, count spectra and event bounds across calls that
/// share the configuration, so power and window searches pay for each
/// sample once.
struct Evaluator<'a> {
    cfg: &'a ValidatedConfig,
    prior: &'a ActivityPrior,
    decoder_prior: &'a ActivityPrior,
    ensemble: Ensemble,
    plan: MonteCarloPlan,
    settings: &'a OptimizerSettings,
    pool: Option<CodePool>,
    spectra: HashMap<usize, CountSpectra>,
    estimation: HashMap<(u64, usize, usize), BoundValue>,
    events: HashMap<u64, HashMap<EventShape, EventBound>>,
}

impl<'a> Evaluator<'a> {
    fn new(
        cfg: &'a ValidatedConfig,
        prior: &'a ActivityPrior,
        decoder_prior: Option<&'a ActivityPrior>,
        ensemble: Ensemble,
        plan: MonteCarloPlan,
        settings: &'a OptimizerSettings,
    ) -> Self {
        Self {
            cfg,
            prior,
            decoder_prior: decoder_prior.unwrap_or(prior),
            ensemble,
            plan,
            settings,
            pool: None,
            spectra: HashMap::new(),
            estimation: HashMap::new(),
            events: HashMap::new(),
        }
    }

    fn p0(&self, p: f64, p_prime: f64, window: &DecoderWindow) -> Result<BoundValue> {
        let cfg = self.cfg.with_power(p)?;
        let spec = CodebookSpec::new(self.ensemble, p_prime);
        let mut total = BoundValue::from_linear(self.prior.mass_outside(window.k_l, window.k_u));
        for ka in self.prior.support() {
            let lp = self.prior.ln_pmf(ka);
            let pv = power_violation_prob(&spec, &cfg, ka);
            let per = pv.plus(&BoundValue::closed(cfg.ln_collision(ka)));
            total = total.plus(&per.scaled(lp));
        }
        Ok(total)
    }

    fn estimation_bound(&mut self, ka: usize, ka_prime: usize, p_prime: f64) -> Result<BoundValue> {
        if ka == ka_prime {
            return Ok(BoundValue::closed(0.0));
        }
        let key = (p_prime.to_bits(), ka, ka_prime);
        if let Some(v) = self.estimation.get(&key) {
            return Ok(*v);
        }
        if !self.spectra.contains_key(&ka) {
            self.spectra.insert(ka, CountSpectra::sample(self.cfg.n(), ka, self.ensemble, self.plan)?);
        }
        let (p1, p2) = self.spectra[&ka].chernoff_terms(self.cfg.l(), ka_prime, p_prime, self.settings.rho_iters);
        let v = p1.min(p2);
        self.estimation.insert(key, v);
        Ok(v)
    }

    fn ensure_pool(&mut self, cols: usize) {
        if self.pool.as_ref().is_none_or(|p| p.cols < cols) {
            self.pool = Some(CodePool::sample(self.cfg.n(), cols, self.ensemble, self.plan));
        }
    }

    fn evaluate_shapes(&mut self, shapes: &[EventShape], p_prime: f64) -> Result<()> {
        let cols = shapes.iter().map(EventShape::columns).max().unwrap_or(0);
        self.ensure_pool(cols);
        let pool = self.pool.as_ref().expect("pool sampled");
        let (cfg, prior, settings) = (self.cfg, self.decoder_prior, self.settings);
        let done: Vec<EventBound> = shapes
            .par_iter()
            .map(|s| {
                let terms = MapPriorTerms::for_shape(prior, cfg, s);
                let ln_pairs =
                    log_binomial(s.ka as f64, s.missed as u64) + cfg.ln_binom_m_minus(s.ka, s.extra);
                event_bound(pool, *s, p_prime, terms, ln_pairs, cfg, settings)
            })
            .collect::<Result<_>>()?;
        let cache = self.events.entry(p_prime.to_bits()).or_default();
        for (s, e) in shapes.iter().zip(done) {
            cache.insert(*s, e);
        }
        Ok(())
    }

    /// Both bounds at power `p` and design power `p_prime`. With targets, stops
    /// refining as soon as the partially refined bounds meet them.
    fn bounds(
        &mut self,
        p: f64,
        p_prime: f64,
        window: &DecoderWindow,
        targets: Option<(f64, f64)>,
        diagnostics: bool,
    ) -> Result<Evaluation> {
        if self.prior.mass_in(window.k_l, window.k_u) <= 0.0 {
            return Err(Error::precondition("empty truncated prior"));
        }
        let p0 = self.p0(p, p_prime, window)?;
        let mut md_rows = Vec::new();
        let mut fa_rows = Vec::new();
        for ka in window.k_l..=window.k_u {
            let pk = self.prior.pmf(ka);
            if pk <= 0.0 {
                continue;
            }
            for ka_prime in window.k_l..=window.k_u {
                let est = self.estimation_bound(ka, ka_prime, p_prime)?;
                let r = EventRanges::new(window, ka, ka_prime, self.cfg);
                for t in r.t_values() {
                    let missed = r.short + t;
                    if ka >= 1 && missed > 0 {
                        let shapes = r
                            .md_t_prime(t)
                            .map(|tp| (r.shape(t, tp), ErrorEventIndex { ka, ka_prime, t, t_prime: tp }))
                            .collect();
                        md_rows.push(Row { weight: pk * missed as f64 / ka as f64, est, shapes });
                    }
                    for tp in r.fa_t_prime(t) {
                        let s = r.shape(t, tp);
                        if s.extra == 0 {
                            continue;
                        }
                        let idx = ErrorEventIndex { ka, ka_prime, t, t_prime: tp };
                        fa_rows.push(Row {
                            weight: pk * s.extra as f64 / s.list_size() as f64,
                            est,
                            shapes: vec![(s, idx)],
                        });
                    }
                }
            }
        }

        // Shapes worth refining, most important first.
        let threshold = self.settings.refine_threshold;
        let mut priority: HashMap<EventShape, f64> = HashMap::new();
        for row in md_rows.iter().chain(&fa_rows) {
            let c = row.cheap();
            if c < threshold {
                continue;
            }
            for (s, _) in &row.shapes {
                let e = priority.entry(*s).or_insert(0.0);
                *e = e.max(c);
            }
        }
        let cached = self.events.get(&p_prime.to_bits());
        let mut todo: Vec<(EventShape, f64)> =
            priority.into_iter().filter(|(s, _)| cached.is_none_or(|c| !c.contains_key(s))).collect();
        todo.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let todo: Vec<EventShape> = todo.into_iter().map(|(s, _)| s).collect();

        let empty = HashMap::new();
        let total = |rows: &[Row], events: &HashMap<EventShape, EventBound>| {
            rows.iter().fold((0.0, 0.0), |acc, r| {
                let (v, se) = r.value(events);
                (acc.0 + v, acc.1 + se)
            })
        };
        let meets = |md: f64, fa: f64, p0: f64, t: (f64, f64)| p0 + md <= t.0 && p0 + fa <= t.1;
        let chunk = match targets {
            Some(_) => (todo.len() / 8).max(4),
            None => todo.len().max(1),
        };
        let mut start = 0;
        loop {
            let events = self.events.get(&p_prime.to_bits()).unwrap_or(&empty);
            if let Some(t) = targets {
                let (md, _) = total(&md_rows, events);
                let (fa, _) = total(&fa_rows, events);
                if meets(md, fa, p0.value(), t) || start >= todo.len() {
                    break;
                }
            } else if start >= todo.len() {
                break;
            }
            let end = (start + chunk).min(todo.len());
            self.evaluate_shapes(&todo[start..end], p_prime)?;
            start = end;
        }

        let events = self.events.get(&p_prime.to_bits()).unwrap_or(&empty);
        let (md, md_se) = total(&md_rows, events);
        let (fa, fa_se) = total(&fa_rows, events);
        let samples = self.plan.trials;
        let finish = |v: f64, se: f64| {
            let b = BoundValue { log_value: v.ln(), std_err: se + p0.std_err, samples }.plus(&BoundValue::closed(p0.log_value));
            BoundValue { log_value: b.log_value.min(0.0), ..b }
        };
        let mut cells = Vec::new();
        if diagnostics {
            let mut seen = std::collections::HashSet::new();
            for row in md_rows.iter().chain(&fa_rows) {
                for (s, idx) in &row.shapes {
                    if let Some(e) = events.get(s) {
                        if seen.insert(*idx) {
                            cells.push(CellDiagnostic {
                                index: *idx,
                                log_value: e.value.log_value,
                                std_err: e.value.std_err,
                                point: OptVars { omega: e.omega, nu: e.nu, delta: e.delta },
                            });
                        }
                    }
                }
            }
            cells.sort_by_key(|c| (c.index.ka, c.index.ka_prime, c.index.t, c.index.t_prime));
        }
        Ok(Evaluation { md: finish(md, md_se), fa: finish(fa, fa_se), p0, cells })
    }
}

fn event_bound(
    pool: &CodePool,
    shape: EventShape,
    p_prime: f64,
    terms: MapPriorTerms,
    ln_pairs: f64,
    cfg: &ValidatedConfig,
    settings: &OptimizerSettings,
) -> Result<EventBound> {
    let samples = (0..pool.trials())
        .map(|t| SampleTerms::compute(pool, t, &shape, p_prime))
        .collect::<Result<Vec<_>>>()?;
    let kernel = EventKernel {
        samples: &samples,
        shape,
        terms,
        n: cfg.n(),
        l: cfg.l(),
        ln_pairs,
        ln_missed_sets: log_binomial(shape.ka as f64, shape.missed as u64),
        settings,
    };
    Ok(kernel.optimize())
}

/// Search knobs for the minimum energy-per-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Power bracket; the upper end must be feasible.
    pub p_lo: f64,
    pub p_hi: f64,
    pub tol_db: f64,
    /// Design powers tried, as fractions of P. Spherical codebooks always use P' = P.
    pub p_prime_fractions: Vec<f64>,
    pub r_prime_candidates: Vec<usize>,
    /// Prior mass allowed outside [K_l, K_u].
    pub tail: f64,
    pub optimizer: OptimizerSettings,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            p_lo: 1e-4,
            p_hi: 10.0,
            tol_db: 0.01,
            p_prime_fractions: (0..16).map(|i| 10f64.powf(-2.0 + 2.0 * i as f64 / 15.0)).collect(),
            r_prime_candidates: (1..=30).collect(),
            tail: 1e-6,
            optimizer: OptimizerSettings::default(),
        }
    }
}

/// Parameters that certify feasibility at the reported power.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AchievabilityWitness {
    pub p: f64,
    pub p_prime: f64,
    pub r_prime: usize,
    pub k_l: usize,
    pub k_u: usize,
    pub md: BoundValue,
    pub fa: BoundValue,
}

/// Result of the energy-per-bit search. `ebn0_db` is `None` when even the
/// top of the power bracket is infeasible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AchievabilityReport {
    pub ebn0_db: Option<f64>,
    pub witness: Option<AchievabilityWitness>,
}

/// Smallest E_b/N_0 (dB) at which some design power and decoding radius
/// bring both bounds under their targets.
pub fn min_ebn0_achievability(
    cfg: &ValidatedConfig,
    prior: &ActivityPrior,
    ensemble: Ensemble,
    targets: (f64, f64),
    search: &SearchConfig,
    plan: MonteCarloPlan,
) -> Result<AchievabilityReport> {
    let mut issues = Vec::new();
    for (name, v) in [("ε_MD", targets.0), ("ε_FA", targets.1)] {
        if !(v > 0.0 && v < 1.0) {
            issues.push(format!("{name} must lie in (0, 1), got {v}"));
        }
    }
    if !(search.p_lo > 0.0 && search.p_hi > search.p_lo) {
        issues.push(format!("power bracket needs 0 < P_lo < P_hi, got [{}, {}]", search.p_lo, search.p_hi));
    }
    if !(search.tol_db > 0.0) {
        issues.push("tolerance must be positive".into());
    }
    if search.r_prime_candidates.is_empty() {
        issues.push("no decoding radius candidates".into());
    }
    if ensemble == Ensemble::Gaussian
        && (search.p_prime_fractions.is_empty() || search.p_prime_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)))
    {
        issues.push("design-power fractions must lie in (0, 1]".into());
    }
    if prior.k_max() != cfg.k() {
        issues.push(format!("prior is defined on [0, {}] but K = {}", prior.k_max(), cfg.k()));
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    let (k_l, k_u) = prior.window(search.tail);
    let mut radii: Vec<usize> = search.r_prime_candidates.iter().map(|r| (*r).min(k_u - k_l)).collect();
    radii.dedup();
    let fractions = match ensemble {
        Ensemble::Spherical => vec![1.0],
        Ensemble::Gaussian => search.p_prime_fractions.clone(),
    };
    let mut ev = Evaluator::new(cfg, prior, None, ensemble, plan, &search.optimizer);
    let mut failure: Option<Error> = None;
    let mut feasible = |p: f64, ev: &mut Evaluator| -> Option<AchievabilityWitness> {
        for frac in &fractions {
            let p_prime = frac * p;
            let window = DecoderWindow { k_l, k_u, r_prime: 0 };
            match ev.p0(p, p_prime, &window) {
                Ok(p0) if p0.value() >= targets.0.min(targets.1) => continue,
                Ok(_) => {}
                Err(e) => {
                    failure.get_or_insert(e);
                    return None;
                }
            }
            for &r_prime in &radii {
                let window = DecoderWindow { k_l, k_u, r_prime };
                match ev.bounds(p, p_prime, &window, Some(targets), false) {
                    Ok(e) if e.md.value() <= targets.0 && e.fa.value() <= targets.1 => {
                        return Some(AchievabilityWitness { p, p_prime, r_prime, k_l, k_u, md: e.md, fa: e.fa });
                    }
                    Ok(_) => {}
                    Err(e) => {
                        failure.get_or_insert(e);
                        return None;
                    }
                }
            }
        }
        None
    };
    let Some(top) = feasible(search.p_hi, &mut ev) else {
        if let Some(e) = failure {
            return Err(e);
        }
        return Ok(AchievabilityReport { ebn0_db: None, witness: None });
    };
    if let Some(w) = feasible(search.p_lo, &mut ev) {
        return Ok(AchievabilityReport { ebn0_db: Some(ebn0_db(cfg.n(), cfg.j(), w.p)), witness: Some(w) });
    }
    let mut best = top;
    let (_, hi) = bisect_log(
        |p| match feasible(p, &mut ev) {
            Some(w) => {
                best = w;
                true
            }
            None => false,
        },
        search.p_lo,
        search.p_hi,
        search.tol_db,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    debug_assert_eq!(hi, best.p);
    Ok(AchievabilityReport { ebn0_db: Some(ebn0_db(cfg.n(), cfg.j(), hi)), witness: Some(best) })
}

/// Joint-error bound for a known count, with the per-user variant that
/// weighs t errors by t/K_a.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointErrorBound {
    pub joint: BoundValue,
    pub per_user: BoundValue,
    pub p0: BoundValue,
    /// Event bound for each number of wrongly decoded messages t = 1, 2, ….
    pub terms: Vec<BoundValue>,
}

/// Bound on P[decoded set ≠ transmitted set] with exactly `ka` active users.
pub fn joint_error_achievability(
    cfg: &ValidatedConfig,
    ka: usize,
    spec: &CodebookSpec,
    plan: MonteCarloPlan,
    settings: &OptimizerSettings,
) -> Result<JointErrorBound> {
    spec.validate(cfg)?;
    let m = codebook_cap(cfg);
    if ka > m {
        return Err(Error::precondition(format!("K_a = {ka} exceeds the codebook size")));
    }
    let p0 = power_violation_prob(spec, cfg, ka).plus(&BoundValue::closed(cfg.ln_collision(ka)));
    if ka == 0 {
        return Ok(JointErrorBound { joint: p0, per_user: p0, p0, terms: vec![] });
    }
    let shapes: Vec<EventShape> = (1..=ka.min(m - ka))
        .map(|t| EventShape { ka, short: 0, missed: t, surplus: 0, extra: t })
        .collect();
    let cols = shapes.last().map_or(0, EventShape::columns);
    let pool = CodePool::sample(cfg.n(), cols, spec.ensemble, plan);
    let terms: Vec<BoundValue> = shapes
        .par_iter()
        .map(|s| {
            let ln_pairs = log_binomial(ka as f64, s.missed as u64) + cfg.ln_binom_m_minus(ka, s.extra);
            event_bound(&pool, *s, spec.p_prime, MapPriorTerms::zero(), ln_pairs, cfg, settings).map(|e| {
                let v = e.value;
                BoundValue { log_value: v.log_value.min(0.0), ..v }
            })
        })
        .collect::<Result<_>>()?;
    let mut joint = p0;
    let mut per_user = p0;
    for (i, v) in terms.iter().enumerate() {
        joint = joint.plus(v);
        per_user = per_user.plus(&v.scaled((((i + 1) as f64) / ka as f64).ln()));
    }
    Ok(JointErrorBound { joint, per_user, p0, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemConfig;

    fn tiny() -> (ValidatedConfig, ActivityPrior) {
        let cfg = SystemConfig { n: 32, j: 4, l: 8, p: 0.05, k: 8 }.validate().unwrap();
        (cfg, ActivityPrior::binomial(8, 0.25).unwrap())
    }

    #[test]
    fn window_list_bounds_clip_to_truncation() {
        let w = DecoderWindow::new(1, 6, 2, 8).unwrap();
        assert_eq!(w.list_bounds(0), (1, 2));
        assert_eq!(w.list_bounds(3), (1, 5));
        assert_eq!(w.list_bounds(6), (4, 6));
        assert!(DecoderWindow::new(3, 2, 0, 8).is_err());
        assert!(DecoderWindow::new(0, 9, 0, 8).is_err());
    }

    #[test]
    fn ranges_cover_forced_errors() {
        let (cfg, _) = tiny();
        let w = DecoderWindow::new(0, 8, 1, 8).unwrap();
        // Estimate far below the truth: the list is at most 3 long, so 2 of
        // the 5 transmitted messages are always missed.
        let r = EventRanges::new(&w, 5, 2, &cfg);
        assert_eq!((r.list_lo, r.list_hi, r.short, r.surplus), (1, 3, 2, 0));
        assert_eq!(r.t_values(), 0..4);
        // Estimate far above: at least 2 false alarms.
        let r = EventRanges::new(&w, 2, 5, &cfg);
        assert_eq!((r.short, r.surplus), (0, 2));
        for t in r.t_values() {
            for tp in r.md_t_prime(t).chain(r.fa_t_prime(t)) {
                let s = r.shape(t, tp);
                assert!(s.list_size() >= r.list_lo && s.list_size() <= r.list_hi, "{s:?}");
            }
        }
    }

    #[test]
    fn prior_terms_follow_counts() {
        let (cfg, prior) = tiny();
        let s = EventShape { ka: 3, short: 1, missed: 2, surplus: 0, extra: 1 };
        let t = MapPriorTerms::for_shape(&prior, &cfg, &s);
        assert!((t.transmitted - (prior.ln_pmf(3) - cfg.ln_binom_m(3))).abs() < 1e-12);
        assert!((t.retained - (prior.ln_pmf(1) - cfg.ln_binom_m(1))).abs() < 1e-12);
        assert!((t.decoded - (prior.ln_pmf(2) - cfg.ln_binom_m(2))).abs() < 1e-12);
        assert!((t.reference - (prior.ln_pmf(2) - cfg.ln_binom_m(2))).abs() < 1e-12);
        let point = ActivityPrior::point_mass(8, 3).unwrap();
        assert_eq!(MapPriorTerms::for_shape(&point, &cfg, &s).decoded, f64::NEG_INFINITY);
    }

    #[test]
    fn no_users_means_no_errors() {
        let cfg = SystemConfig { n: 16, j: 4, l: 2, p: 1.0, k: 4 }.validate().unwrap();
        let q = DetectionQuery::new(
            cfg,
            ActivityPrior::point_mass(4, 0).unwrap(),
            CodebookSpec::new(Ensemble::Spherical, 1.0),
            DecoderWindow::new(0, 0, 0, 4).unwrap(),
            MonteCarloPlan::new(0, 4).unwrap(),
        );
        let b = detection_error_bounds(&q).unwrap();
        assert_eq!(b.md.value(), 0.0);
        assert_eq!(b.fa.value(), 0.0);
        assert_eq!(b.p0.value(), 0.0);
    }

    #[test]
    fn empty_truncated_prior_is_rejected() {
        let cfg = SystemConfig { n: 16, j: 4, l: 2, p: 1.0, k: 4 }.validate().unwrap();
        let q = DetectionQuery::new(
            cfg,
            ActivityPrior::point_mass(4, 0).unwrap(),
            CodebookSpec::new(Ensemble::Spherical, 1.0),
            DecoderWindow::new(2, 3, 0, 4).unwrap(),
            MonteCarloPlan::new(0, 4).unwrap(),
        );
        assert!(matches!(detection_error_bounds(&q), Err(Error::Precondition(m)) if m.contains("empty truncated prior")));
    }

    #[test]
    fn joint_bound_edge_cases() {
        let cfg = SystemConfig { n: 16, j: 10, l: 2, p: 1.0, k: 4 }.validate().unwrap();
        let spec = CodebookSpec::new(Ensemble::Spherical, 1.0);
        let plan = MonteCarloPlan::new(0, 4).unwrap();
        let s = OptimizerSettings::default();
        assert_eq!(joint_error_achievability(&cfg, 0, &spec, plan, &s).unwrap().joint.value(), 0.0);
        let one = joint_error_achievability(&cfg, 1, &spec, plan, &s).unwrap();
        assert_eq!(one.p0.value(), 0.0);
        assert!(one.joint.log_value >= one.per_user.log_value);
        let small = SystemConfig { n: 16, j: 1, l: 2, p: 1.0, k: 4 }.validate().unwrap();
        assert!(joint_error_achievability(&small, 3, &spec, plan, &s).is_err());
    }
}

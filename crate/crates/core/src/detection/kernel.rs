//! Per-event bound evaluation.
//!
//! Every covariance in the error-event bound has the form I + C_S C_Sᴴ where S
//! is a contiguous range of one column pool. A Householder QR of the pool
//! moves all of them into the same d-dimensional coordinates, d ≤ pool size,
//! and the Chernoff matrix differs from a multiple of the identity only on
//! the span of the misdetected and falsely alarmed columns. Each sample is
//! therefore reduced to two small Hermitian matrices once, and the inner
//! minimization over (u, r) runs in that k-dimensional space.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    adj_mul, chol_logdet, chol_solve, cholesky_in_place, forward_solve, gram_rows, hermitize, idx, lower_adj_mul,
    lower_mul, orthonormal_basis, qr_r_factor, C64,
};
use crate::model::{BoundValue, Ensemble, MonteCarloPlan};
use crate::optim::golden_min;
use crate::randmat::unit_columns;
use crate::specfun::{ln_lower_gamma, ln_upper_gamma, log_add};

use super::{EventShape, MapPriorTerms, OptimizerSettings};

/// Upper limit on the Chernoff multipliers.
const MULTIPLIER_CAP: f64 = 1e8;
/// Smallest eigenvalue accepted for the Chernoff matrix.
const MIN_EIG: f64 = 1e-10;

/// Unit-power R factors of the first `cols` codewords of every trial.
#[derive(Debug, Clone)]
pub(crate) struct CodePool {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub r: Vec<Vec<C64>>,
}

impl CodePool {
    pub fn sample(n: usize, cols: usize, ensemble: Ensemble, plan: MonteCarloPlan) -> Self {
        let rows = n.min(cols);
        let r = (0..plan.trials)
            .into_par_iter()
            .map(|t| {
                let c = unit_columns(n, cols, ensemble, plan.seed, t as u64);
                qr_r_factor(&c, n, cols)
            })
            .collect();
        Self { n, rows, cols, r }
    }

    pub fn trials(&self) -> usize {
        self.r.len()
    }
}

/// Quantities of one codebook draw needed by both parts of the event bound.
#[derive(Debug, Clone)]
pub(crate) struct SampleTerms {
    /// ln|F| for the transmitted set.
    pub ld: f64,
    /// ln|F₁| for the transmitted set minus the misdetections.
    pub ld1: f64,
    /// ln|F'| for the competing list.
    pub ld_new: f64,
    /// ln|F''| for the reference list.
    pub ld_ref: f64,
    pub k: usize,
    /// Whitened F₁⁻¹ excess (PSD), k×k.
    pub nt: Vec<C64>,
    /// Whitened F'⁻¹ − F''⁻¹, k×k.
    pub mt: Vec<C64>,
    /// ln of the product of the nonzero eigenvalues of F₁⁻¹ C_{W₁} C_{W₁}ᴴ.
    pub lp: f64,
}

fn block(r: &[C64], rows: usize, d: usize, lo: usize, hi: usize, scale: f64) -> Vec<C64> {
    let mut out = Vec::with_capacity(d * (hi - lo));
    for j in lo..hi {
        out.extend(r[j * rows..j * rows + d].iter().map(|z| z * scale));
    }
    out
}

fn chol_of_range(r: &[C64], rows: usize, d: usize, lo: usize, hi: usize, scale: f64) -> Result<(Vec<C64>, f64)> {
    let b = block(r, rows, d, lo, hi, scale);
    let mut f = gram_rows(&b, d, hi - lo);
    for i in 0..d {
        f[idx(i, i, d)] += 1.0;
    }
    if !cholesky_in_place(&mut f, d) {
        return Err(Error::Numeric("covariance factorization failed".into()));
    }
    let ld = chol_logdet(&f, d);
    Ok((f, ld))
}

impl SampleTerms {
    pub fn compute(pool: &CodePool, trial: usize, shape: &EventShape, p_prime: f64) -> Result<Self> {
        let EventShape { ka, short, missed, surplus, extra } = *shape;
        let used = ka + extra;
        let d = pool.n.min(used);
        if d == 0 {
            return Ok(Self { ld: 0.0, ld1: 0.0, ld_new: 0.0, ld_ref: 0.0, k: 0, nt: vec![], mt: vec![], lp: 0.0 });
        }
        debug_assert!(used <= pool.cols);
        let r = &pool.r[trial];
        let rows = pool.rows;
        let sq = p_prime.sqrt();
        let t = missed - short;
        let tp = extra - surplus;

        let (l, ld) = chol_of_range(r, rows, d, 0, ka, sq)?;
        let (l1, ld1) = if missed == 0 { (l.clone(), ld) } else { chol_of_range(r, rows, d, missed, ka, sq)? };
        let new_range = (missed, ka + extra);
        let ref_range = (short, ka + surplus);
        let (lp_f, ld_new) = chol_of_range(r, rows, d, new_range.0, new_range.1, sq)?;
        let (lpp_f, ld_ref) = if ref_range == new_range {
            (lp_f.clone(), ld_new)
        } else {
            chol_of_range(r, rows, d, ref_range.0, ref_range.1, sq)?
        };

        // Spanning set of the two whitened differences.
        let mut span: Vec<C64> = Vec::new();
        let mut k0 = 0;
        let mut y1 = Vec::new();
        if missed > 0 {
            y1 = block(r, rows, d, 0, missed, sq);
            chol_solve(&l1, d, &mut y1, missed);
            span.extend(lower_adj_mul(&l, d, &y1, missed));
            k0 += missed;
        }
        if t + tp > 0 {
            let (lc, _) = chol_of_range(r, rows, d, missed, ka + surplus, sq)?;
            for (lo, hi) in [(short, missed), (ka + surplus, ka + extra)] {
                if hi > lo {
                    let mut y = block(r, rows, d, lo, hi, sq);
                    chol_solve(&lc, d, &mut y, hi - lo);
                    span.extend(lower_adj_mul(&l, d, &y, hi - lo));
                    k0 += hi - lo;
                }
            }
        }
        let (v, k) = orthonormal_basis(&span, d, k0, 1e-10);
        let lv = lower_mul(&l, d, &v, k);

        let mut nt = vec![C64::new(0.0, 0.0); k * k];
        if missed > 0 && k > 0 {
            let mut tmp = lv.clone();
            chol_solve(&l1, d, &mut tmp, k);
            let mut w = lower_adj_mul(&l, d, &tmp, k);
            for (x, y) in w.iter_mut().zip(&v) {
                *x -= y;
            }
            nt = adj_mul(&v, &w, d, k, k);
            hermitize(&mut nt, k);
        }
        let mut mt = vec![C64::new(0.0, 0.0); k * k];
        if ref_range != new_range && k > 0 {
            let mut a1 = lv.clone();
            chol_solve(&lp_f, d, &mut a1, k);
            let mut a2 = lv;
            chol_solve(&lpp_f, d, &mut a2, k);
            for (x, y) in a1.iter_mut().zip(&a2) {
                *x -= y;
            }
            let w = lower_adj_mul(&l, d, &a1, k);
            mt = adj_mul(&v, &w, d, k, k);
            hermitize(&mut mt, k);
        }

        let lp = if missed == 0 {
            0.0
        } else if missed <= pool.n {
            let c1 = block(r, rows, d, 0, missed, sq);
            let mut g = adj_mul(&c1, &y1, d, missed, missed);
            hermitize(&mut g, missed);
            if !cholesky_in_place(&mut g, missed) {
                return Err(Error::Numeric("misdetection Gram is singular".into()));
            }
            chol_logdet(&g, missed)
        } else {
            let c1 = block(r, rows, d, 0, missed, sq);
            let mut g = gram_rows(&c1, d, missed);
            if !cholesky_in_place(&mut g, d) {
                return Err(Error::Numeric("misdetection Gram is singular".into()));
            }
            chol_logdet(&g, d) - ld1
        };
        Ok(Self { ld, ld1, ld_new, ld_ref, k, nt, mt, lp })
    }
}

/// Linear coefficients and fixed variables of one sample's inner problem.
struct InnerProblem<'a> {
    s: &'a SampleTerms,
    lf: f64,
    /// L(n − k): weight of the complement dimensions.
    lc: f64,
    omega: f64,
    c_u: f64,
    c_r: f64,
    fix_u: bool,
    fix_r: bool,
}

struct InnerEval {
    h: f64,
    g: [f64; 2],
    hess: [[f64; 3]; 1],
}

impl InnerProblem<'_> {
    /// Cholesky factor of B − εI, or `None` outside the feasible region.
    /// Using the shifted determinant in the objective only raises it, so the
    /// bound stays valid.
    fn factor(&self, u: f64, r: f64) -> Option<Vec<C64>> {
        let k = self.s.k;
        let alpha = 1.0 + r * (1.0 - self.omega);
        let mut b: Vec<C64> = self.s.mt.iter().zip(&self.s.nt).map(|(m, n)| m * u - n * (r * self.omega)).collect();
        for i in 0..k {
            b[idx(i, i, k)] += alpha - MIN_EIG;
        }
        cholesky_in_place(&mut b, k).then_some(b)
    }

    fn value(&self, u: f64, r: f64) -> Option<f64> {
        let l = self.factor(u, r)?;
        let alpha = 1.0 + r * (1.0 - self.omega);
        Some(self.c_u * u + self.c_r * r - self.lc * alpha.ln() - self.lf * chol_logdet(&l, self.s.k))
    }

    fn eval(&self, u: f64, r: f64) -> Option<InnerEval> {
        let l = self.factor(u, r)?;
        let k = self.s.k;
        let om = self.omega;
        let alpha = 1.0 + r * (1.0 - om);
        let ldb = chol_logdet(&l, k);
        // With B = LLᴴ the traces of B⁻¹M̃ and B⁻¹D_r products are those of
        // the whitened Hermitian matrices L⁻¹M̃L⁻ᴴ and L⁻¹D_rL⁻ᴴ.
        let x = whiten(&l, k, &self.s.mt);
        let mut dr: Vec<C64> = self.s.nt.iter().map(|v| -v * om).collect();
        for i in 0..k {
            dr[idx(i, i, k)] += 1.0 - om;
        }
        let y = whiten(&l, k, &dr);
        let tp = trace(&x, k);
        let tq = trace(&y, k);
        let tpp: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let tqq: f64 = y.iter().map(|z| z.norm_sqr()).sum();
        let tpq: f64 = x.iter().zip(&y).map(|(a, b)| (a * b.conj()).re).sum();
        let h = self.c_u * u + self.c_r * r - self.lc * alpha.ln() - self.lf * ldb;
        let g_u = self.c_u - self.lf * tp;
        let g_r = self.c_r - self.lc * (1.0 - om) / alpha - self.lf * tq;
        let h_uu = self.lf * tpp;
        let h_ur = self.lf * tpq;
        let h_rr = self.lf * tqq + self.lc * (1.0 - om) * (1.0 - om) / (alpha * alpha);
        Some(InnerEval { h, g: [g_u, g_r], hess: [[h_uu, h_ur, h_rr]] })
    }

    /// Projected damped Newton on the convex objective over the box [0, cap]².
    /// Returns (h, u, r); h ≤ 0 since the origin is always feasible.
    fn minimize(&self, start: (f64, f64), max_iter: usize) -> (f64, f64, f64) {
        let clamp = |v: f64, fixed: bool| if fixed { 0.0 } else { v.clamp(0.0, MULTIPLIER_CAP) };
        let mut x = [clamp(start.0, self.fix_u), clamp(start.1, self.fix_r)];
        let mut cur = match self.eval(x[0], x[1]) {
            Some(e) => e,
            None => {
                x = [0.0, 0.0];
                self.eval(0.0, 0.0).expect("origin is feasible")
            }
        };
        let fixed = [self.fix_u, self.fix_r];
        for _ in 0..max_iter {
            let mut free = [false; 2];
            for i in 0..2 {
                free[i] = !fixed[i]
                    && !(x[i] <= 0.0 && cur.g[i] > 0.0)
                    && !(x[i] >= MULTIPLIER_CAP && cur.g[i] < 0.0);
            }
            let [[huu, hur, hrr]] = cur.hess;
            let mut step = [0.0; 2];
            match (free[0], free[1]) {
                (false, false) => break,
                (true, false) => step[0] = newton_1d(cur.g[0], huu),
                (false, true) => step[1] = newton_1d(cur.g[1], hrr),
                (true, true) => {
                    let det = huu * hrr - hur * hur;
                    if det > 1e-12 * (huu * hrr).abs().max(1e-300) && huu > 0.0 {
                        step[0] = -(hrr * cur.g[0] - hur * cur.g[1]) / det;
                        step[1] = -(huu * cur.g[1] - hur * cur.g[0]) / det;
                    } else {
                        step[0] = newton_1d(cur.g[0], huu);
                        step[1] = newton_1d(cur.g[1], hrr);
                    }
                }
            }
            let slope = step[0] * cur.g[0] + step[1] * cur.g[1];
            if !(slope < 0.0) {
                step = [-cur.g[0] * free[0] as u8 as f64, -cur.g[1] * free[1] as u8 as f64];
                let gn = step[0].abs().max(step[1].abs());
                if gn == 0.0 {
                    break;
                }
                let scale = (1.0 + x[0].abs().max(x[1].abs())) / gn;
                step = [step[0] * scale, step[1] * scale];
            }
            let mut s = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let xn = [clamp(x[0] + s * step[0], fixed[0]), clamp(x[1] + s * step[1], fixed[1])];
                if let Some(h) = self.value(xn[0], xn[1]) {
                    let dec = cur.g[0] * (xn[0] - x[0]) + cur.g[1] * (xn[1] - x[1]);
                    if h <= cur.h + 1e-4 * dec.min(0.0) && h <= cur.h {
                        if let Some(e) = self.eval(xn[0], xn[1]) {
                            accepted = Some((xn, e));
                        }
                        break;
                    }
                }
                s *= 0.5;
            }
            let Some((xn, e)) = accepted else { break };
            let moved = (xn[0] - x[0]).abs().max((xn[1] - x[1]).abs());
            let gain = cur.h - e.h;
            x = xn;
            cur = e;
            if gain <= 1e-10 * (1.0 + cur.h.abs()) || moved <= 1e-13 * (1.0 + x[0].max(x[1])) {
                break;
            }
        }
        if cur.h > 0.0 {
            (0.0, 0.0, 0.0)
        } else {
            (cur.h, x[0], x[1])
        }
    }
}

fn newton_1d(g: f64, h: f64) -> f64 {
    if h > 1e-300 {
        -g / h
    } else if g < 0.0 {
        MULTIPLIER_CAP
    } else if g > 0.0 {
        -MULTIPLIER_CAP
    } else {
        0.0
    }
}

/// L⁻¹ A L⁻ᴴ for Hermitian A and lower-triangular L.
fn whiten(l: &[C64], k: usize, a: &[C64]) -> Vec<C64> {
    let mut w = a.to_vec();
    for j in 0..k {
        forward_solve(l, k, &mut w[j * k..(j + 1) * k]);
    }
    // w = L⁻¹A; its adjoint is A L⁻ᴴ.
    let mut out = vec![C64::new(0.0, 0.0); k * k];
    for j in 0..k {
        for i in 0..k {
            out[idx(i, j, k)] = w[idx(j, i, k)].conj();
        }
        forward_solve(l, k, &mut out[j * k..(j + 1) * k]);
    }
    out
}

fn trace(a: &[C64], k: usize) -> f64 {
    (0..k).map(|i| a[idx(i, i, k)].re).sum()
}

/// Bound on one error event, with the optimizer point that produced it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EventBound {
    pub value: BoundValue,
    pub omega: f64,
    pub nu: f64,
    pub delta: f64,
}

/// Evaluates and minimizes q₁ + q₂ for one event shape over (ω, ν).
pub(crate) struct EventKernel<'a> {
    pub samples: &'a [SampleTerms],
    pub shape: EventShape,
    pub terms: MapPriorTerms,
    pub n: usize,
    pub l: usize,
    /// ln of the number of (misdetected, falsely alarmed) set pairs.
    pub ln_pairs: f64,
    /// ln of the number of misdetected sets.
    pub ln_missed_sets: f64,
    pub settings: &'a OptimizerSettings,
}

struct Point {
    total: f64,
    value: BoundValue,
    delta: f64,
}

impl EventKernel<'_> {
    fn nl(&self) -> f64 {
        (self.n * self.l) as f64
    }

    /// q₁ averaged over `samples`. Gives up once the running sum alone
    /// exceeds `budget` (log domain), since every term is nonnegative. The
    /// error then carries the mean extrapolated from the samples seen so far,
    /// which still steers the line searches.
    fn q1(&self, samples: &[SampleTerms], omega: f64, nu: f64, warm: &mut [(f64, f64)], budget: f64) -> std::result::Result<BoundValue, f64> {
        let t = &self.terms;
        if t.decoded == f64::NEG_INFINITY {
            return Ok(BoundValue::ZERO);
        }
        let lf = self.l as f64;
        let fix_u = t.reference == f64::NEG_INFINITY;
        let fix_r = t.retained == f64::NEG_INFINITY && omega > 0.0;
        let wb1 = if omega == 0.0 { 0.0 } else { omega * t.retained };
        let offset = self.ln_pairs - (samples.len() as f64).ln();
        let mut running = f64::NEG_INFINITY;
        let mut logs = Vec::with_capacity(samples.len());
        for (s, w) in samples.iter().zip(warm.iter_mut()) {
            let c_u = if fix_u { 0.0 } else { lf * (s.ld_ref - s.ld_new) + t.decoded - t.reference };
            let c_r = if fix_r { 0.0 } else { self.nl() * nu - lf * s.ld + lf * omega * s.ld1 + t.transmitted - wb1 };
            let prob = InnerProblem { s, lf, lc: lf * (self.n - s.k) as f64, omega, c_u, c_r, fix_u, fix_r };
            let (h, u, r) = prob.minimize(*w, self.settings.newton_iters);
            *w = (u, r);
            logs.push(h);
            running = log_add(running, h);
            if running + offset > budget {
                return Err(self.ln_pairs + running - (logs.len() as f64).ln());
            }
        }
        Ok(BoundValue::from_log_samples(&logs).scaled(self.ln_pairs))
    }

    /// q₂ (some misdetection) or q₂,₀ (none); returns the value and δ.
    fn q2(&self, samples: &[SampleTerms], omega: f64, nu: f64) -> (BoundValue, f64) {
        let t = &self.terms;
        let nl = self.nl();
        let lf = self.l as f64;
        if self.shape.missed == 0 {
            if omega >= 1.0 {
                return (BoundValue::ZERO, 0.0);
            }
            let logs: Vec<f64> = samples
                .iter()
                .map(|s| ln_upper_gamma(nl, (nl * nu / (1.0 - omega) - lf * s.ld + t.transmitted).max(0.0)))
                .collect();
            return (BoundValue::from_log_samples(&logs), 0.0);
        }
        if t.retained == f64::NEG_INFINITY && omega > 0.0 {
            return (BoundValue::ZERO, f64::INFINITY);
        }
        let m = self.n.min(self.shape.missed);
        let shape = lf * m as f64;
        let wb1 = if omega == 0.0 { 0.0 } else { omega * t.retained };
        let base: Vec<(f64, f64)> = samples
            .iter()
            .map(|s| (-omega * lf * s.ld1 + wb1 + lf * s.ld - t.transmitted - nl * nu, (s.lp / m as f64).exp()))
            .collect();
        let expect = |delta: f64| -> BoundValue {
            let logs: Vec<f64> = base
                .iter()
                .map(|&(b0, geo)| {
                    let num = if delta.is_infinite() { b0 } else { nl * (1.0 + delta) * (1.0 - omega) + b0 };
                    if omega == 0.0 {
                        if num > 0.0 {
                            0.0
                        } else {
                            f64::NEG_INFINITY
                        }
                    } else {
                        let x = num / (omega * geo);
                        if x <= 0.0 {
                            f64::NEG_INFINITY
                        } else {
                            ln_lower_gamma(shape, x)
                        }
                    }
                })
                .collect();
            BoundValue::from_log_samples(&logs)
        };
        if omega >= 1.0 {
            return (expect(f64::INFINITY).scaled(self.ln_missed_sets), f64::INFINITY);
        }
        let tail = |delta: f64| ln_upper_gamma(nl, nl * (1.0 + delta));
        let obj = |delta: f64| log_add(tail(delta), expect(delta).log_value);
        let hi = (10.0 / nl.sqrt()).max(1.0);
        let (mut best_d, mut best_v) = golden_min(obj, 0.0, hi, self.settings.delta_iters);
        let v_hi = obj(hi);
        if v_hi < best_v {
            best_d = hi;
            best_v = v_hi;
        }
        let _ = best_v;
        let e = expect(best_d);
        (e.plus(&BoundValue::closed(tail(best_d))).scaled(self.ln_missed_sets), best_d)
    }

    /// q₁ + q₂ at one (ω, ν). When it cannot beat `best` (log domain) the
    /// error holds a rough value for ranking.
    fn point(&self, samples: &[SampleTerms], omega: f64, nu: f64, warm: &mut [(f64, f64)], best: f64) -> std::result::Result<Point, f64> {
        let (q2, delta) = self.q2(samples, omega, nu);
        if q2.log_value >= best {
            return Err(q2.log_value);
        }
        let budget = if best == f64::INFINITY { best } else { best + (-(q2.log_value - best).exp()).ln_1p() };
        let q1 = self.q1(samples, omega, nu, warm, budget).map_err(|q1| log_add(q1, q2.log_value))?;
        let value = q1.plus(&q2);
        Ok(Point { total: value.log_value, value, delta })
    }

    /// Center and spread of the ν grid at this ω.
    fn nu_scale(&self, omega: f64) -> (f64, f64) {
        let t = &self.terms;
        let nl = self.nl();
        let lf = self.l as f64;
        let s = self.samples.len().max(1) as f64;
        let m = self.n.min(self.shape.missed) as f64;
        let wb1 = if omega == 0.0 { 0.0 } else { omega * t.retained };
        let centers: Vec<f64> = self
            .samples
            .iter()
            .map(|x| {
                let v = ((1.0 - omega) * nl - omega * lf * x.ld1 + wb1 + lf * x.ld - t.transmitted) / nl;
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        let mean = centers.iter().sum::<f64>() / s;
        let sd = (centers.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / s).sqrt();
        let geo = if self.shape.missed > 0 {
            self.samples.iter().map(|x| (x.lp / m).exp()).sum::<f64>() / s
        } else {
            0.0
        };
        let spread = 3.0 * (1.0 - omega) / nl.sqrt() + omega * geo * m / self.n as f64 + 3.0 * sd + 1e-9;
        (mean, spread)
    }

    pub fn optimize(&self) -> EventBound {
        let t = &self.terms;
        if t.transmitted == f64::NEG_INFINITY {
            return EventBound { value: BoundValue::closed(0.0), omega: 0.0, nu: 0.0, delta: 0.0 };
        }
        if t.decoded == f64::NEG_INFINITY {
            return EventBound { value: BoundValue::ZERO, omega: 1.0, nu: 0.0, delta: 0.0 };
        }
        let set = self.settings;
        // The optimizer point is chosen on a fixed subsample; any point gives
        // a valid bound, which is then evaluated on every draw.
        let sel = &self.samples[..self.samples.len().min(set.select_samples.max(1))];
        let mut warm = vec![(0.0, 0.0); self.samples.len()];
        let no = set.omega_points.max(2);
        let nn = set.nu_points.max(2);
        let taus: Vec<f64> = (0..nn).map(|j| -2.0 + 10.0 * (j as f64 / (nn - 1) as f64).powi(2)).collect();

        let mut best = EventBound { value: BoundValue::closed(f64::INFINITY), omega: 0.0, nu: 0.0, delta: 0.0 };
        let mut best_grid = (0usize, 0usize);
        let mut grid_nu = vec![vec![0.0; nn]; no];
        let consider = |best: &mut EventBound, p: &Point, omega: f64, nu: f64| -> bool {
            if p.total < best.value.log_value {
                *best = EventBound { value: p.value, omega, nu, delta: p.delta };
                true
            } else {
                false
            }
        };
        for i in 0..no {
            let omega = i as f64 / (no - 1) as f64;
            let (center, spread) = self.nu_scale(omega);
            for (j, tau) in taus.iter().enumerate() {
                let nu = (center + spread * tau).max(0.0);
                grid_nu[i][j] = nu;
                if let Ok(p) = self.point(sel, omega, nu, &mut warm, best.value.log_value) {
                    if consider(&mut best, &p, omega, nu) {
                        best_grid = (i, j);
                    }
                }
            }
        }
        if set.refine_iters > 0 && best.value.log_value > f64::NEG_INFINITY {
            let (i, j) = best_grid;
            let omega = best.omega;
            let lo = if j > 0 { grid_nu[i][j - 1] } else { grid_nu[i][0] };
            let hi = if j + 1 < nn { grid_nu[i][j + 1] } else { grid_nu[i][nn - 1] * 2.0 + 1e-6 };
            let (nu_star, _) = golden_min(
                |nu| match self.point(sel, omega, nu, &mut warm, best.value.log_value) {
                    Ok(p) => {
                        consider(&mut best, &p, omega, nu);
                        p.total
                    }
                    Err(rough) => rough,
                },
                lo,
                hi,
                set.refine_iters,
            );
            let nu = if best.omega == omega { best.nu } else { nu_star };
            let step = 1.0 / (no - 1) as f64;
            let (olo, ohi) = ((omega - step).max(0.0), (omega + step).min(1.0));
            golden_min(
                |om| match self.point(sel, om, nu, &mut warm, best.value.log_value) {
                    Ok(p) => {
                        consider(&mut best, &p, om, nu);
                        p.total
                    }
                    Err(rough) => rough,
                },
                olo,
                ohi,
                set.refine_iters,
            );
        }
        if sel.len() < self.samples.len() && best.value.log_value.is_finite() {
            if let Ok(p) = self.point(self.samples, best.omega, best.nu, &mut warm, f64::INFINITY) {
                best.value = p.value;
                best.delta = p.delta;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dense_f(c: &[C64], n: usize, lo: usize, hi: usize, p: f64) -> DMatrix<C64> {
        let mut f = DMatrix::<C64>::identity(n, n);
        for j in lo..hi {
            let col = DMatrix::from_column_slice(n, 1, &c[j * n..j * n + n]);
            f += &col * col.adjoint() * C64::new(p, 0.0);
        }
        f
    }

    fn logdet(m: &DMatrix<C64>) -> f64 {
        m.clone().determinant().re.ln()
    }

    /// Dense evaluation of the Chernoff exponent at a fixed (u, r), straight
    /// from the n×n matrices.
    #[allow(clippy::too_many_arguments)]
    fn dense_exponent(c: &[C64], n: usize, sh: &EventShape, p: f64, l: f64, omega: f64, u: f64, r: f64) -> Option<f64> {
        let f = dense_f(c, n, 0, sh.ka, p);
        let f1 = dense_f(c, n, sh.missed, sh.ka, p);
        let fnew = dense_f(c, n, sh.missed, sh.ka + sh.extra, p);
        let fref = dense_f(c, n, sh.short, sh.ka + sh.surplus, p);
        let g = fref.clone().try_inverse()? * C64::new(-u, 0.0)
            + fnew.clone().try_inverse()? * C64::new(u, 0.0)
            - f1.clone().try_inverse()? * C64::new(r * omega, 0.0)
            + f.clone().try_inverse()? * C64::new(1.0 + r, 0.0);
        // B = G F shares its spectrum with the Hermitian LᴴGL.
        let lf = f.clone().cholesky()?.l();
        let mut h = lf.adjoint() * g * &lf;
        h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
        let ev = h.symmetric_eigen().eigenvalues;
        if ev.iter().any(|x| *x <= 0.0) {
            return None;
        }
        let ldb: f64 = ev.iter().map(|x| x.ln()).sum();
        Some(l * (u * logdet(&fref) - r * logdet(&f) - u * logdet(&fnew) + r * omega * logdet(&f1) - ldb))
    }

    #[test]
    fn reduced_exponent_matches_dense_matrices() {
        let n = 6;
        let plan = MonteCarloPlan::new(3, 2).unwrap();
        let shape = EventShape { ka: 3, short: 1, missed: 2, surplus: 1, extra: 2 };
        let pool = CodePool::sample(n, 6, Ensemble::Gaussian, plan);
        let p = 0.7;
        let l = 2.0;
        let mut checked = 0;
        for trial in 0..2 {
            let s = SampleTerms::compute(&pool, trial, &shape, p).unwrap();
            let c = unit_columns(n, 6, Ensemble::Gaussian, 3, trial as u64);
            for &(omega, u, r) in &[(0.3, 0.2, 0.1), (0.8, 0.05, 0.4), (0.0, 0.3, 0.0), (0.5, 0.02, 0.02), (0.2, 2.0, 0.5)] {
                let dense = dense_exponent(&c, n, &shape, p, l, omega, u, r);
                let prob = InnerProblem {
                    s: &s,
                    lf: l,
                    lc: l * (n - s.k) as f64,
                    omega,
                    c_u: l * (s.ld_ref - s.ld_new),
                    c_r: -l * s.ld + l * omega * s.ld1,
                    fix_u: false,
                    fix_r: false,
                };
                match (dense, prob.value(u, r)) {
                    (Some(d), Some(f)) => {
                        checked += 1;
                        assert!((d - f).abs() < 1e-8 * (1.0 + d.abs()), "{d} vs {f}");
                    }
                    (None, None) => {}
                    other => panic!("feasibility differs at ({u}, {r}): {other:?}"),
                }
            }
            // Product of the misdetection eigenvalues.
            let f1 = dense_f(&c, n, shape.missed, shape.ka, p);
            let c1 = dense_f(&c, n, 0, shape.missed, p) - DMatrix::<C64>::identity(n, n);
            let l1inv = f1.cholesky().unwrap().l().try_inverse().unwrap();
            let h = &l1inv * c1 * l1inv.adjoint();
            let mut ev: Vec<f64> = ((&h + h.adjoint()) * C64::new(0.5, 0.0)).symmetric_eigen().eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            let lp: f64 = ev[..shape.missed].iter().map(|x| x.ln()).sum();
            assert!((lp - s.lp).abs() < 1e-8);
        }
        assert!(checked >= 4);
    }

    #[test]
    fn newton_matches_grid_minimum() {
        let n = 5;
        let plan = MonteCarloPlan::new(9, 1).unwrap();
        let shape = EventShape { ka: 2, short: 0, missed: 1, surplus: 0, extra: 1 };
        let pool = CodePool::sample(n, 3, Ensemble::Spherical, plan);
        let s = SampleTerms::compute(&pool, 0, &shape, 1.5).unwrap();
        let l = 3.0;
        let omega = 0.6;
        let prob = InnerProblem {
            s: &s,
            lf: l,
            lc: l * (n - s.k) as f64,
            omega,
            c_u: l * (s.ld_ref - s.ld_new),
            c_r: 15.0 * 0.9 * l - l * s.ld + l * omega * s.ld1,
            fix_u: false,
            fix_r: false,
        };
        let (h, _, _) = prob.minimize((0.0, 0.0), 100);
        let mut grid_best = 0.0f64;
        for i in 0..=400 {
            for j in 0..=400 {
                let (u, r) = (i as f64 * 0.005, j as f64 * 0.005);
                if let Some(v) = prob.value(u, r) {
                    grid_best = grid_best.min(v);
                }
            }
        }
        assert!(h <= grid_best + 1e-9, "newton {h} grid {grid_best}");
        assert!(h >= grid_best - 0.05 * grid_best.abs() - 1e-6);
    }
}

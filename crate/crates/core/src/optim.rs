//! Derivative-free scalar minimization and bracketing helpers.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimum of `f` on [lo, hi] with a fixed number of
/// iterations. The left endpoint is also evaluated, since many objectives here
/// are minimized at the boundary. Returns (argmin, min).
pub(crate) fn golden_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let f_lo = f(lo);
    if !(hi > lo) {
        return (lo, f_lo);
    }
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let (mut bx, mut bf) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if f_lo <= bf {
        bx = lo;
        bf = f_lo;
    }
    (bx, bf)
}

/// Bisection on a monotone predicate over a log-scaled interval: `feasible(hi)`
/// is assumed true and `feasible(lo)` false. Stops when hi/lo ≤ 10^(tol_db/10).
/// Returns the final (lo, hi) bracket.
pub(crate) fn bisect_log(mut feasible: impl FnMut(f64) -> bool, mut lo: f64, mut hi: f64, tol_db: f64) -> (f64, f64) {
    let ratio = 10f64.powf(tol_db / 10.0);
    while hi / lo > ratio {
        let mid = (lo * hi).sqrt();
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx) = golden_min(|x| (x - 0.3) * (x - 0.3) + 1.0, 0.0, 2.0, 60);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((fx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn golden_keeps_left_boundary() {
        let (x, _) = golden_min(|x| x, 0.0, 1.0, 40);
        assert_eq!(x, 0.0);
    }

    #[test]
    fn bisection_brackets_threshold() {
        let (lo, hi) = bisect_log(|p| p >= 0.37, 1e-3, 10.0, 0.01);
        assert!(lo < 0.37 && hi >= 0.37);
        assert!(10.0 * (hi / lo).log10() <= 0.01);
    }
}

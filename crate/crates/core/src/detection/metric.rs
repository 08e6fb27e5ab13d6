//! MAP list-decoding metric.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{adj_mul, chol_logdet, chol_solve, cholesky_in_place, gram_cols, gram_rows, idx};
use crate::model::{ActivityPrior, ValidatedConfig};
use crate::randmat::CodewordBlock;

/// Decoding metric of a candidate set (smaller is better):
///
/// L·ln|I + C Cᴴ| + tr(Yᴴ (I + C Cᴴ)⁻¹ Y) − ln P(K̄) + ln C(M, K̄)
///
/// where C holds the K̄ candidate columns and `y` is the n×L received block,
/// column-major. Works on whichever side of C is smaller and never forms an
/// inverse. Returns +∞ when the prior gives K̄ zero mass. Pass a different
/// prior to evaluate a mismatched decoder.
pub fn map_metric(y: &[Complex64], block: &CodewordBlock, prior: &ActivityPrior, cfg: &ValidatedConfig) -> Result<f64> {
    let n = block.n();
    let l = cfg.l();
    if n != cfg.n() {
        return Err(Error::precondition(format!("codewords have length {n}, configuration has n = {}", cfg.n())));
    }
    if y.len() != n * l {
        return Err(Error::precondition(format!("received block needs {} entries, got {}", n * l, y.len())));
    }
    let count = block.count();
    let ln_prior = prior.ln_pmf(count);
    if ln_prior == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    let c = block.data();
    let energy: f64 = y.iter().map(|z| z.norm_sqr()).sum();
    let (logdet, quad) = if count == 0 {
        (0.0, energy)
    } else if count <= n {
        // Woodbury: (I + CCᴴ)⁻¹ = I − C (I + CᴴC)⁻¹ Cᴴ.
        let mut g = gram_cols(c, n, count);
        for i in 0..count {
            g[idx(i, i, count)] += 1.0;
        }
        if !cholesky_in_place(&mut g, count) {
            return Err(Error::Numeric("candidate Gram factorization failed".into()));
        }
        let cy = adj_mul(c, y, n, count, l);
        let mut sol = cy.clone();
        chol_solve(&g, count, &mut sol, l);
        let reduction: f64 = cy.iter().zip(&sol).map(|(a, b)| (a.conj() * b).re).sum();
        (chol_logdet(&g, count), energy - reduction)
    } else {
        let mut f = gram_rows(c, n, count);
        for i in 0..n {
            f[idx(i, i, n)] += 1.0;
        }
        if !cholesky_in_place(&mut f, n) {
            return Err(Error::Numeric("candidate covariance factorization failed".into()));
        }
        let mut sol = y.to_vec();
        chol_solve(&f, n, &mut sol, l);
        let quad: f64 = y.iter().zip(&sol).map(|(a, b)| (a.conj() * b).re).sum();
        (chol_logdet(&f, n), quad)
    };
    Ok(l as f64 * logdet + quad - ln_prior + cfg.ln_binom_m(count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CodebookSpec, Ensemble, SystemConfig};
    use crate::randmat::sample_codebook;
    use crate::streams::{complex_normal_vec, Domain};
    use nalgebra::DMatrix;

    fn dense_metric(y: &[Complex64], c: &CodewordBlock, l: usize, ln_prior: f64, ln_binom: f64) -> f64 {
        let n = c.n();
        let cm = DMatrix::from_column_slice(n, c.count(), c.data());
        let ym = DMatrix::from_column_slice(n, l, y);
        let f = DMatrix::<Complex64>::identity(n, n) + &cm * cm.adjoint();
        let ld = f.determinant().re.ln();
        let q = (ym.adjoint() * f.try_inverse().unwrap() * &ym).trace().re;
        l as f64 * ld + q - ln_prior + ln_binom
    }

    #[test]
    fn matches_dense_oracle_on_both_sides() {
        let cfg = SystemConfig { n: 8, j: 4, l: 2, p: 1.0, k: 12 }.validate().unwrap();
        let prior = ActivityPrior::binomial(12, 0.4).unwrap();
        let spec = CodebookSpec::new(Ensemble::Gaussian, 0.8);
        for count in [0usize, 1, 3, 8, 11] {
            let block = sample_codebook(spec, 8, count, 5, count as u64);
            let y = complex_normal_vec(5, Domain::Noise, count as u64, 0, 16);
            let fast = map_metric(&y, &block, &prior, &cfg).unwrap();
            let dense = dense_metric(&y, &block, 2, prior.ln_pmf(count), cfg.ln_binom_m(count));
            assert!((fast - dense).abs() < 1e-8 * (1.0 + dense.abs()), "{count}: {fast} vs {dense}");
        }
    }

    #[test]
    fn empty_candidate_reduces_to_energy() {
        let cfg = SystemConfig { n: 4, j: 3, l: 2, p: 1.0, k: 3 }.validate().unwrap();
        let prior = ActivityPrior::point_mass(3, 0).unwrap();
        let block = sample_codebook(CodebookSpec::new(Ensemble::Spherical, 1.0), 4, 0, 0, 0);
        assert_eq!(map_metric(&[Complex64::new(0.0, 0.0); 8], &block, &prior, &cfg).unwrap(), 0.0);
        let y = complex_normal_vec(1, Domain::Noise, 0, 0, 8);
        let e: f64 = y.iter().map(|z| z.norm_sqr()).sum();
        assert!((map_metric(&y, &block, &prior, &cfg).unwrap() - e).abs() < 1e-12);
    }

    #[test]
    fn zero_prior_mass_excludes_candidate() {
        let cfg = SystemConfig { n: 4, j: 3, l: 1, p: 1.0, k: 3 }.validate().unwrap();
        let prior = ActivityPrior::point_mass(3, 0).unwrap();
        let block = sample_codebook(CodebookSpec::new(Ensemble::Gaussian, 1.0), 4, 2, 0, 0);
        let y = complex_normal_vec(1, Domain::Noise, 0, 0, 4);
        assert_eq!(map_metric(&y, &block, &prior, &cfg).unwrap(), f64::INFINITY);
    }
}

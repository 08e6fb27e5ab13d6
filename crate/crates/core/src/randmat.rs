//! Codebook sampling, Gram spectra and log-determinants.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{gram_cols, gram_rows, hermitian_eigenvalues};
use crate::model::{BoundValue, CodebookSpec, Ensemble, MonteCarloPlan};
use crate::streams::{complex_normal, substream, Domain};

/// n × count complex matrix of codewords, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CodewordBlock {
    n: usize,
    count: usize,
    data: Vec<Complex64>,
    ensemble: Ensemble,
    p_prime: f64,
}

impl CodewordBlock {
    /// Wraps explicit columns, stored column-major.
    pub fn from_columns(n: usize, count: usize, data: Vec<Complex64>, spec: CodebookSpec) -> Result<Self> {
        if data.len() != n * count {
            return Err(Error::domain(format!(
                "codeword block needs {} entries, got {}",
                n * count,
                data.len()
            )));
        }
        Ok(Self { n, count, data, ensemble: spec.ensemble, p_prime: spec.p_prime })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn count(&self) -> usize {
        self.count
    }
    pub fn ensemble(&self) -> Ensemble {
        self.ensemble
    }
    pub fn p_prime(&self) -> f64 {
        self.p_prime
    }
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
    pub fn column(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    /// Block made of the listed columns, in order.
    pub fn select(&self, cols: &[usize]) -> CodewordBlock {
        let mut data = Vec::with_capacity(cols.len() * self.n);
        for &c in cols {
            data.extend_from_slice(self.column(c));
        }
        CodewordBlock { n: self.n, count: cols.len(), data, ensemble: self.ensemble, p_prime: self.p_prime }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// One codeword column with unit per-entry power: CN(0,1) entries, or for the
/// spherical ensemble a direction scaled to squared norm n.
pub(crate) fn unit_column(n: usize, ensemble: Ensemble, seed: u64, key: u64, index: u64) -> Vec<Complex64> {
    let mut rng = substream(seed, Domain::Codebook, key, index);
    let mut col: Vec<Complex64> = (0..n).map(|_| complex_normal(&mut rng)).collect();
    if ensemble == Ensemble::Spherical {
        let norm2: f64 = col.iter().map(|z| z.norm_sqr()).sum();
        let s = (n as f64 / norm2).sqrt();
        for z in &mut col {
            *z *= s;
        }
    }
    col
}

/// `count` unit-power columns; column j depends only on (seed, key, j).
pub(crate) fn unit_columns(n: usize, count: usize, ensemble: Ensemble, seed: u64, key: u64) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n * count);
    for j in 0..count {
        out.extend(unit_column(n, ensemble, seed, key, j as u64));
    }
    out
}

/// Draws `count` codewords from the ensemble. Column j is a function of
/// (seed, stream, j) only, so longer blocks extend shorter ones.
pub fn sample_codebook(spec: CodebookSpec, n: usize, count: usize, seed: u64, stream: u64) -> CodewordBlock {
    let scale = spec.p_prime.sqrt();
    let mut data = unit_columns(n, count, spec.ensemble, seed, stream);
    for z in &mut data {
        *z *= scale;
    }
    CodewordBlock { n, count, data, ensemble: spec.ensemble, p_prime: spec.p_prime }
}

/// Nonzero part of the spectrum of C Cᴴ, nonincreasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramSpectrum {
    pub eigenvalues: Vec<f64>,
}

impl GramSpectrum {
    pub fn largest(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    /// ln|I_n + scale·C Cᴴ|.
    pub fn logdet_i_plus(&self, scale: f64) -> f64 {
        self.eigenvalues.iter().map(|l| (scale * l).ln_1p()).sum()
    }
}

/// Spectrum of a raw column-major n×s matrix, decomposed on the smaller side.
pub(crate) fn spectrum_of(data: &[Complex64], n: usize, s: usize) -> Result<Vec<f64>> {
    if s == 0 {
        return Ok(Vec::new());
    }
    if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("non-finite codeword entry".into()));
    }
    let (g, d) = if s <= n { (gram_cols(data, n, s), s) } else { (gram_rows(data, n, s), n) };
    let trace: f64 = (0..d).map(|i| g[i + i * d].re).sum();
    let tol = 1e-12 * trace.max(1.0);
    let mut ev = hermitian_eigenvalues(&g, d);
    for v in &mut ev {
        if *v < 0.0 {
            if *v < -tol {
                return Err(Error::Numeric(format!("Gram eigenvalue {v} is negative")));
            }
            *v = 0.0;
        }
    }
    Ok(ev)
}

pub fn gram_spectrum(c: &CodewordBlock) -> Result<GramSpectrum> {
    Ok(GramSpectrum { eigenvalues: spectrum_of(&c.data, c.n, c.count)? })
}

/// ln|I_n + scale·C Cᴴ| through the smaller Gram side.
pub fn logdet_i_plus_gram(c: &CodewordBlock, scale: f64) -> Result<f64> {
    if scale < 0.0 {
        return Err(Error::domain("log-det scale must be nonnegative"));
    }
    Ok(gram_spectrum(c)?.logdet_i_plus(scale))
}

/// Cached unit-power spectra so E[log2|I + X Xᴴ|] can be re-evaluated at many
/// powers with the same draws. X has i.i.d. entries of variance P.
#[derive(Debug, Clone)]
pub struct LogdetSampler {
    spectra: Vec<Vec<f64>>,
}

impl LogdetSampler {
    pub fn new(n: usize, ka: usize, ensemble: Ensemble, plan: MonteCarloPlan) -> Result<Self> {
        if ka == 0 {
            return Ok(Self { spectra: vec![Vec::new(); plan.trials] });
        }
        let spectra = (0..plan.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = substream(plan.seed, Domain::LogDet, ka as u64, t as u64);
                let mut data: Vec<Complex64> = (0..n * ka).map(|_| complex_normal(&mut rng)).collect();
                if ensemble == Ensemble::Spherical {
                    for col in data.chunks_mut(n) {
                        let norm2: f64 = col.iter().map(|z| z.norm_sqr()).sum();
                        let s = (n as f64 / norm2).sqrt();
                        col.iter_mut().for_each(|z| *z *= s);
                    }
                }
                spectrum_of(&data, n, ka)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spectra })
    }

    /// (mean, standard error) of log2|I + P·Z Zᴴ| in bits.
    pub fn mean_bits(&self, p: f64) -> (f64, f64) {
        let vals: Vec<f64> = self
            .spectra
            .iter()
            .map(|ev| ev.iter().map(|l| (p * l).ln_1p()).sum::<f64>() / std::f64::consts::LN_2)
            .collect();
        mean_and_stderr(&vals)
    }
}

pub(crate) fn mean_and_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Monte-Carlo E[log2|I_n + X Xᴴ|] for X with K_a columns of per-entry variance P.
/// The mean is stored as `log_value = ln(mean)` with a linear-scale standard error.
pub fn expected_logdet(n: usize, ka: usize, p: f64, ensemble: Ensemble, plan: MonteCarloPlan) -> Result<BoundValue> {
    if p < 0.0 {
        return Err(Error::domain("power must be nonnegative"));
    }
    if ka == 0 || p == 0.0 {
        return Ok(BoundValue { log_value: f64::NEG_INFINITY, std_err: 0.0, samples: plan.trials });
    }
    let (mean, se) = LogdetSampler::new(n, ka, ensemble, plan)?.mean_bits(p);
    Ok(BoundValue { log_value: mean.ln(), std_err: se, samples: plan.trials })
}

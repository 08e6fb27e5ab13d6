//! Run configuration: TOML sections with command-line overrides on top.

use serde::{Deserialize, Serialize};
use ura_core::converse::{ConverseSearch, ConverseSettings, TailMode};
use ura_core::detection::{OptimizerSettings, SearchConfig};
use ura_core::{ActivityPrior, CodebookSpec, Ensemble, MonteCarloPlan, SystemConfig, ValidatedConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub n: usize,
    #[serde(rename = "J")]
    pub j: u32,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "P")]
    pub p: f64,
    /// Defaults to the prior's K.
    #[serde(rename = "K")]
    pub k: Option<usize>,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self { n: 32, j: 4, l: 8, p: 1.0, k: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    /// `binom:K:p_a`, `point:K:K_a` or `table:K:k=w,k=w,...`.
    pub dist: String,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self { dist: "binom:8:0.25".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub kind: Ensemble,
    /// Design power; defaults to P.
    pub p_prime: Option<f64>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self { kind: Ensemble::Spherical, p_prime: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub eps_md: f64,
    pub eps_fa: f64,
    pub eps_j: f64,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self { eps_md: 0.1, eps_fa: 0.1, eps_j: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub p_lo: f64,
    pub p_hi: f64,
    pub tol_db: f64,
    /// Prior mass left outside [K_l, K_u] and outside the converse subset.
    pub tail: f64,
    pub r_prime: Vec<usize>,
    pub p_prime_fractions: Vec<f64>,
    pub converse_p_lo: f64,
    pub converse_p_hi: f64,
    pub tail_mode: TailMode,
    pub sigma_shift: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        let s = SearchConfig::default();
        let c = ConverseSearch::default();
        Self {
            p_lo: s.p_lo,
            p_hi: s.p_hi,
            tol_db: s.tol_db,
            tail: s.tail,
            r_prime: s.r_prime_candidates,
            p_prime_fractions: s.p_prime_fractions,
            converse_p_lo: c.p_lo,
            converse_p_hi: c.p_hi,
            tail_mode: c.settings.tail_mode,
            sigma_shift: c.settings.sigma_shift,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub seed: u64,
    pub trials: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self { seed: 0, trials: 1000 }
    }
}

/// Everything a command needs besides its own flags.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub prior: PriorSection,
    pub ensemble: EnsembleSection,
    pub targets: TargetSection,
    pub search: SearchSection,
    pub mc: McSection,
    pub optimizer: OptimizerSettings,
}

/// Command-line values that replace file keys when present.
#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long = "J", global = true)]
    pub j: Option<u32>,
    #[arg(long = "L", global = true)]
    pub l: Option<usize>,
    #[arg(long = "P", global = true)]
    pub p: Option<f64>,
    #[arg(long = "K", global = true)]
    pub k: Option<usize>,
    /// Activity prior: binom:K:p_a, point:K:K_a or table:K:k=w,...
    #[arg(long, global = true)]
    pub prior: Option<String>,
    #[arg(long, global = true)]
    pub ensemble: Option<Ensemble>,
    #[arg(long, global = true)]
    pub p_prime: Option<f64>,
    #[arg(long, global = true)]
    pub eps_md: Option<f64>,
    #[arg(long, global = true)]
    pub eps_fa: Option<f64>,
    #[arg(long, global = true)]
    pub eps_j: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(o.n, self.system.n);
        set!(o.j, self.system.j);
        set!(o.l, self.system.l);
        set!(o.p, self.system.p);
        if o.k.is_some() {
            self.system.k = o.k;
        }
        set!(o.prior, self.prior.dist);
        set!(o.ensemble, self.ensemble.kind);
        if o.p_prime.is_some() {
            self.ensemble.p_prime = o.p_prime;
        }
        set!(o.eps_md, self.targets.eps_md);
        set!(o.eps_fa, self.targets.eps_fa);
        set!(o.eps_j, self.targets.eps_j);
        set!(o.seed, self.mc.seed);
        set!(o.trials, self.mc.trials);
    }

    pub fn prior(&self) -> Result<ActivityPrior, CliError> {
        parse_prior(&self.prior.dist)
    }

    /// System parameters with K filled in from the prior.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        let prior = self.prior()?;
        match self.system.k {
            None => self.system.k = Some(prior.k_max()),
            Some(k) if k != prior.k_max() => {
                return Err(ura_core::Error::Validation(vec![format!(
                    "K = {k} but the prior is defined on [0, {}]",
                    prior.k_max()
                )])
                .into())
            }
            Some(_) => {}
        }
        Ok(())
    }

    pub fn system(&self) -> Result<ValidatedConfig, CliError> {
        let s = &self.system;
        let k = s.k.ok_or_else(|| CliError::Config("K unresolved".into()))?;
        Ok(SystemConfig { n: s.n, j: s.j, l: s.l, p: s.p, k }.validate()?)
    }

    pub fn spec_at(&self, p: f64) -> CodebookSpec {
        let p_prime = self.ensemble.p_prime.map_or(p, |pp| pp * p / self.system.p);
        CodebookSpec::new(self.ensemble.kind, p_prime)
    }

    pub fn spec(&self) -> CodebookSpec {
        self.spec_at(self.system.p)
    }

    pub fn plan(&self) -> Result<MonteCarloPlan, CliError> {
        Ok(MonteCarloPlan::new(self.mc.seed, self.mc.trials)?)
    }

    pub fn targets(&self) -> (f64, f64) {
        (self.targets.eps_md, self.targets.eps_fa)
    }

    pub fn achievability_search(&self) -> SearchConfig {
        let s = &self.search;
        SearchConfig {
            p_lo: s.p_lo,
            p_hi: s.p_hi,
            tol_db: s.tol_db,
            p_prime_fractions: s.p_prime_fractions.clone(),
            r_prime_candidates: s.r_prime.clone(),
            tail: s.tail,
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn converse_search(&self) -> ConverseSearch {
        let s = &self.search;
        ConverseSearch {
            p_lo: s.converse_p_lo,
            p_hi: s.converse_p_hi,
            tol_db: s.tol_db,
            settings: self.converse_settings(),
        }
    }

    pub fn converse_settings(&self) -> ConverseSettings {
        ConverseSettings { tail: self.search.tail, tail_mode: self.search.tail_mode, sigma_shift: self.search.sigma_shift }
    }
}

pub fn parse_prior(text: &str) -> Result<ActivityPrior, CliError> {
    let bad = || CliError::Config(format!("cannot parse prior '{text}'; expected binom:K:p_a, point:K:K_a or table:K:k=w,..."));
    let mut parts = text.splitn(3, ':');
    let kind = parts.next().ok_or_else(bad)?;
    let k: usize = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    let rest = parts.next().ok_or_else(bad)?.trim();
    let prior = match kind.trim() {
        "binom" | "binomial" => ActivityPrior::binomial(k, rest.parse().map_err(|_| bad())?)?,
        "point" => ActivityPrior::point_mass(k, rest.parse().map_err(|_| bad())?)?,
        "table" => {
            let mut w = Vec::new();
            for item in rest.split(',') {
                let (c, v) = item.split_once('=').ok_or_else(bad)?;
                w.push((c.trim().parse().map_err(|_| bad())?, v.trim().parse().map_err(|_| bad())?));
            }
            ActivityPrior::table(k, &w)?
        }
        _ => return Err(bad()),
    };
    Ok(prior)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_strings() {
        assert_eq!(parse_prior("binom:2:0.5").unwrap().pmf(1), 0.5);
        assert_eq!(parse_prior("point:5:3").unwrap().pmf(3), 1.0);
        assert!((parse_prior("table:4:1=1,3=3").unwrap().pmf(3) - 0.75).abs() < 1e-15);
        assert!(parse_prior("binom:2").is_err());
        assert!(parse_prior("gauss:2:1").is_err());
    }

    #[test]
    fn toml_sections_round_trip() {
        let mut c = RunConfig::default();
        c.system.n = 100;
        c.system.k = Some(8);
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = toml::from_str("[system]\nn = 64\nL = 16\n").unwrap();
        assert_eq!((partial.system.n, partial.system.l, partial.system.j), (64, 16, 4));
    }

    #[test]
    fn k_follows_prior() {
        let mut c = RunConfig::default();
        c.prior.dist = "binom:20:0.1".into();
        c.resolve().unwrap();
        assert_eq!(c.system.k, Some(20));
        c.system.k = Some(5);
        assert!(c.resolve().is_err());
    }
}

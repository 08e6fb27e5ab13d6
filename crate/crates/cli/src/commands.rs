//! Subcommand arguments and their evaluation into result tables.

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ura_core::converse::{
    binomial_single_user_converse, fano_converse_feasible, joint_fano_converse, min_ebn0_converse,
    single_user_converse_feasible,
};
use ura_core::detection::{detection_error_bounds, joint_error_achievability, min_ebn0_achievability, DecoderWindow, DetectionQuery};
use ura_core::ka_estimation::{asymptotic_pairwise_bound, pairwise_error_bound, AsymptoticArgs, AsymptoticMode, PairwiseErrorQuery};
use ura_core::simulator::{simulate_ka_estimation, simulate_two_stage, trend_report, SweepAxis, TrendQuantity, TrendQuery, TwoStageQuery};
use ura_core::{ActivityPrior, BoundValue, Error, PriorKind, ValidatedConfig};

use crate::config::RunConfig;
use crate::table::{Cell, Table};
use crate::CliError;

/// What a command produced: the table, structured extras for the JSON
/// artifact, and whether the answer is "infeasible".
#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Table,
    pub details: Value,
    pub infeasible: bool,
}

impl Outcome {
    fn plain(table: Table) -> Self {
        Self { table, details: Value::Null, infeasible: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KaBoundMode {
    /// Finite P and n, Monte Carlo over the codebook.
    Finite,
    /// High-power floor at fixed n.
    PInf,
    /// Long-blocklength floor at fixed P.
    NInf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct KaBoundArgs {
    #[arg(long)]
    pub ka: usize,
    /// Estimated count; all other counts in [0, K] when omitted.
    #[arg(long)]
    pub ka_prime: Option<usize>,
    #[arg(long, value_enum, default_value = "finite")]
    pub mode: KaBoundMode,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct KaSimArgs {
    #[arg(long)]
    pub ka: usize,
}

/// Decoder window flags; unset ends come from the prior and the search tail.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct WindowArgs {
    #[arg(long)]
    pub k_l: Option<usize>,
    #[arg(long)]
    pub k_u: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub r_prime: usize,
}

impl WindowArgs {
    fn resolve(&self, prior: &ActivityPrior, cfg: &RunConfig) -> Result<DecoderWindow, CliError> {
        let (lo, hi) = prior.window(cfg.search.tail);
        Ok(DecoderWindow::new(self.k_l.unwrap_or(lo), self.k_u.unwrap_or(hi), self.r_prime, prior.k_max())?)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DetectBoundArgs {
    #[command(flatten)]
    pub window: WindowArgs,
    /// Keep per-term records in the JSON artifact.
    #[arg(long)]
    pub diagnostics: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct JointBoundArgs {
    #[arg(long)]
    pub ka: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ConverseArgs {
    /// Known count for the joint-error converse; skipped when omitted.
    #[arg(long)]
    pub ka: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundSide {
    Achievability,
    Converse,
    Both,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MinEbn0Args {
    #[arg(long, value_enum, default_value = "both")]
    pub bound: BoundSide,
    /// Sweep of E[K_a] with binomial priors on [0, K]; uses the configured prior when omitted.
    #[arg(long, value_delimiter = ',')]
    pub mean_ka: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendKind {
    KaBound,
    PmdBound,
    EmpiricalKa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum TrendAxis {
    #[value(name = "L")]
    L,
    #[value(name = "P")]
    P,
    #[value(name = "n")]
    N,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrendArgs {
    #[arg(long, value_enum)]
    pub quantity: TrendKind,
    #[arg(long, value_enum)]
    pub axis: TrendAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    pub ka: usize,
    #[arg(long, default_value_t = 1)]
    pub ka_prime: usize,
    #[command(flatten)]
    pub window: WindowArgs,
}

fn bound_cells(v: &BoundValue) -> [Cell; 3] {
    [v.clip_to_probability().into(), v.std_err.into(), v.log_value.into()]
}

pub fn ka_bound(cfg: &RunConfig, a: &KaBoundArgs) -> Result<Outcome, CliError> {
    let sys = cfg.system()?;
    let plan = cfg.plan()?;
    let spec = cfg.spec();
    let targets: Vec<usize> = match a.ka_prime {
        Some(k) => vec![k],
        None => (0..=sys.k()).filter(|k| *k != a.ka).collect(),
    };
    let mut t = Table::new(&[
        "mode", "ka_count", "ka_prime_count", "value_prob", "std_err_prob", "value_ln_nat", "p_prime_lin", "collision_ln_nat",
    ]);
    let mode = a.mode.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    for kp in targets {
        let (value, p_prime) = match a.mode {
            KaBoundMode::Finite => {
                let mut q = PairwiseErrorQuery::new(sys, spec, a.ka, kp, plan);
                q.rho_iters = cfg.optimizer.rho_iters;
                if cfg.ensemble.p_prime.is_some() {
                    q.p_prime_grid = Some(vec![spec.p_prime]);
                }
                let b = pairwise_error_bound(&q)?;
                (b.value, Some(b.p_prime))
            }
            KaBoundMode::PInf | KaBoundMode::NInf => {
                let mode = if a.mode == KaBoundMode::PInf { AsymptoticMode::HighPower } else { AsymptoticMode::LongBlock };
                let args = AsymptoticArgs {
                    ka: a.ka,
                    ka_prime: kp,
                    l: sys.l(),
                    log2_m: sys.log2_m(),
                    n: sys.n(),
                    ensemble: spec.ensemble,
                    plan: Some(plan),
                    rho_iters: cfg.optimizer.rho_iters,
                };
                (asymptotic_pairwise_bound(mode, &args)?, None)
            }
        };
        let [v, se, ln] = bound_cells(&value);
        t.push(vec![mode.clone().into(), a.ka.into(), kp.into(), v, se, ln, p_prime.into(), sys.ln_collision(a.ka).into()]);
    }
    Ok(Outcome::plain(t))
}

pub fn ka_sim(cfg: &RunConfig, a: &KaSimArgs) -> Result<Outcome, CliError> {
    let sys = cfg.system()?;
    let h = simulate_ka_estimation(&sys, &cfg.spec(), a.ka, cfg.plan()?)?;
    let mut t = Table::new(&["ka_count", "estimate_count", "empirical_prob", "std_err_prob", "hits_count"]);
    for (k, &c) in h.counts.iter().enumerate() {
        let r = h.probability(k);
        t.push(vec![a.ka.into(), k.into(), r.mean.into(), r.std_err.into(), (c as usize).into()]);
    }
    Ok(Outcome::plain(t))
}

pub fn detect_bound(cfg: &RunConfig, a: &DetectBoundArgs) -> Result<Outcome, CliError> {
    let sys = cfg.system()?;
    let prior = cfg.prior()?;
    let window = a.window.resolve(&prior, cfg)?;
    let spec = cfg.spec();
    let mut q = DetectionQuery::new(sys, prior, spec, window, cfg.plan()?);
    q.settings = cfg.optimizer.clone();
    q.diagnostics = a.diagnostics;
    let b = detection_error_bounds(&q)?;
    let (eps_md, eps_fa) = cfg.targets();
    let meets = b.md.value() <= eps_md && b.fa.value() <= eps_fa;
    let mut t = Table::new(&[
        "p_lin", "p_prime_lin", "ebn0_dB", "k_l_count", "k_u_count", "r_prime_count", "md_prob", "md_std_err_prob", "md_ln_nat",
        "fa_prob", "fa_std_err_prob", "fa_ln_nat", "p0_prob", "meets_targets",
    ]);
    let [md, md_se, md_ln] = bound_cells(&b.md);
    let [fa, fa_se, fa_ln] = bound_cells(&b.fa);
    t.push(vec![
        sys.p().into(),
        spec.p_prime.into(),
        sys.ebn0_db().into(),
        window.k_l.into(),
        window.k_u.into(),
        window.r_prime.into(),
        md,
        md_se,
        md_ln,
        fa,
        fa_se,
        fa_ln,
        b.p0.clip_to_probability().into(),
        meets.into(),
    ]);
    let details = if a.diagnostics { json!({ "cells": b.cells }) } else { Value::Null };
    Ok(Outcome { table: t, details, infeasible: !meets })
}

pub fn joint_bound(cfg: &RunConfig, a: &JointBoundArgs) -> Result<Outcome, CliError> {
    let sys = cfg.system()?;
    let spec = cfg.spec();
    let b = joint_error_achievability(&sys, a.ka, &spec, cfg.plan()?, &cfg.optimizer)?;
    let meets = b.joint.value() <= cfg.targets.eps_j;
    let mut t = Table::new(&[
        "ka_count", "p_lin", "p_prime_lin", "ebn0_dB", "joint_prob", "joint_std_err_prob", "joint_ln_nat", "per_user_prob", "p0_prob",
        "meets_target",
    ]);
    let [j, j_se, j_ln] = bound_cells(&b.joint);
    t.push(vec![
        a.ka.into(),
        sys.p().into(),
        spec.p_prime.into(),
        sys.ebn0_db().into(),
        j,
        j_se,
        j_ln,
        b.per_user.clip_to_probability().into(),
        b.p0.clip_to_probability().into(),
        meets.into(),
    ]);
    let terms: Vec<f64> = b.terms.iter().map(|v| v.log_value).collect();
    Ok(Outcome { table: t, details: json!({ "term_ln": terms }), infeasible: !meets })
}

const CONVERSE_COLUMNS: [&str; 12] = [
    "kind", "p_lin", "ebn0_dB", "feasible", "certified", "lhs_bits", "rhs_bits", "rhs_std_err_bits", "margin_nat", "md_used_prob",
    "fa_used_prob", "note",
];

struct ConverseRow {
    kind: &'static str,
    feasible: Option<bool>,
    certified: Option<bool>,
    lhs_bits: Option<f64>,
    rhs_bits: Option<f64>,
    rhs_std_err: Option<f64>,
    margin: Option<f64>,
    md_used: Option<f64>,
    fa_used: Option<f64>,
    note: Option<String>,
}

impl ConverseRow {
    fn new(kind: &'static str) -> Self {
        Self {
            kind,
            feasible: None,
            certified: None,
            lhs_bits: None,
            rhs_bits: None,
            rhs_std_err: None,
            margin: None,
            md_used: None,
            fa_used: None,
            note: None,
        }
    }

    /// A converse whose precondition fails yields a row with a note instead of an error.
    fn not_applicable(kind: &'static str, e: Error) -> Result<Self, CliError> {
        match e {
            Error::Precondition(m) | Error::Domain(m) => Ok(Self { note: Some(format!("not applicable: {m}")), ..Self::new(kind) }),
            other => Err(other.into()),
        }
    }

    fn cells(self, sys: &ValidatedConfig) -> Vec<Cell> {
        vec![
            self.kind.into(),
            sys.p().into(),
            sys.ebn0_db().into(),
            self.feasible.into(),
            self.certified.into(),
            self.lhs_bits.into(),
            self.rhs_bits.into(),
            self.rhs_std_err.into(),
            self.margin.into(),
            self.md_used.into(),
            self.fa_used.into(),
            self.note.into(),
        ]
    }
}

pub fn converse(cfg: &RunConfig, a: &ConverseArgs) -> Result<Outcome, CliError> {
    let sys = cfg.system()?;
    let prior = cfg.prior()?;
    let targets = cfg.targets();
    let settings = cfg.converse_settings();
    let plan = cfg.plan()?;
    let mut rows = Vec::new();

    let v = single_user_converse_feasible(&sys, &prior, targets, &settings)?;
    rows.push(ConverseRow {
        feasible: Some(v.feasible),
        certified: Some(v.certified),
        md_used: v.allocation.as_ref().map(|x| x.md_used),
        fa_used: v.allocation.as_ref().map(|x| x.fa_used),
        note: v.binding.clone(),
        ..ConverseRow::new("single-user")
    });
    if matches!(prior.kind(), PriorKind::Binomial { .. }) {
        rows.push(match binomial_single_user_converse(&sys, &prior, targets, settings.tail_mode) {
            Ok(b) => ConverseRow {
                feasible: Some(b.feasible),
                margin: Some(b.margin),
                note: b.vacuous.then(|| "vacuous after clamping".to_string()),
                ..ConverseRow::new("binomial-single-user")
            },
            Err(e) => ConverseRow::not_applicable("binomial-single-user", e)?,
        });
    }
    rows.push(match fano_converse_feasible(&sys, &prior, targets, &settings, plan) {
        Ok(f) => ConverseRow {
            feasible: Some(f.feasible),
            lhs_bits: Some(f.lhs_bits),
            rhs_bits: Some(f.rhs_bits),
            rhs_std_err: Some(f.rhs_std_err),
            ..ConverseRow::new("fano")
        },
        Err(e) => ConverseRow::not_applicable("fano", e)?,
    });
    if let Some(ka) = a.ka {
        rows.push(match joint_fano_converse(&sys, ka, cfg.targets.eps_j, settings.sigma_shift, plan) {
            Ok(f) => ConverseRow {
                feasible: Some(f.feasible),
                lhs_bits: Some(f.lhs_bits),
                rhs_bits: Some(f.rhs_bits),
                rhs_std_err: Some(f.rhs_std_err),
                ..ConverseRow::new("joint-fano")
            },
            Err(e) => ConverseRow::not_applicable("joint-fano", e)?,
        });
    }
    let infeasible = rows.iter().any(|r| r.feasible == Some(false));
    let mut t = Table::new(&CONVERSE_COLUMNS);
    for r in rows {
        t.push(r.cells(&sys));
    }
    Ok(Outcome { table: t, details: Value::Null, infeasible })
}

pub fn min_ebn0(cfg: &RunConfig, a: &MinEbn0Args) -> Result<Outcome, CliError> {
    let sys = cfg.system()?;
    let plan = cfg.plan()?;
    let priors: Vec<(f64, ActivityPrior)> = if a.mean_ka.is_empty() {
        let prior = cfg.prior()?;
        vec![(prior.mean(), prior)]
    } else {
        let k = sys.k() as f64;
        a.mean_ka
            .iter()
            .map(|m| {
                if !(*m > 0.0 && *m < k) {
                    return Err(Error::Validation(vec![format!("E[K_a] must lie in (0, K), got {m}")]));
                }
                Ok((*m, ActivityPrior::binomial(sys.k(), m / k)?))
            })
            .collect::<Result<_, _>>()?
    };
    let mut t = Table::new(&[
        "ka_mean_count", "bound", "ebn0_dB", "p_lin", "p_prime_lin", "r_prime_count", "k_l_count", "k_u_count", "md_prob", "fa_prob",
        "dominant", "above_bracket",
    ]);
    let mut infeasible = false;
    let mut parts = Vec::new();
    for (mean, prior) in &priors {
        let mean = *mean;
        if a.bound != BoundSide::Converse {
            let r = min_ebn0_achievability(&sys, prior, cfg.ensemble.kind, cfg.targets(), &cfg.achievability_search(), plan)?;
            infeasible |= r.ebn0_db.is_none();
            let w = r.witness.as_ref();
            t.push(vec![
                mean.into(),
                "achievability".into(),
                r.ebn0_db.into(),
                w.map(|w| w.p).into(),
                w.map(|w| w.p_prime).into(),
                w.map(|w| w.r_prime).into(),
                w.map(|w| w.k_l).into(),
                w.map(|w| w.k_u).into(),
                w.map(|w| w.md.clip_to_probability()).into(),
                w.map(|w| w.fa.clip_to_probability()).into(),
                Cell::Empty,
                r.ebn0_db.is_none().into(),
            ]);
        }
        if a.bound != BoundSide::Achievability {
            let r = min_ebn0_converse(&sys, prior, cfg.targets(), &cfg.converse_search(), plan)?;
            let above = r.parts.iter().any(|p| p.above_bracket);
            t.push(vec![
                mean.into(),
                "converse".into(),
                r.ebn0_db.into(),
                r.ebn0_db.map(|db| ura_core::model::power_from_ebn0_db(sys.n(), sys.j(), db)).into(),
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                r.dominant.map(|k| k.to_string()).into(),
                above.into(),
            ]);
            parts.push(json!({ "ka_mean": mean, "parts": r.parts }));
        }
    }
    Ok(Outcome { table: t, details: json!({ "converse": parts }), infeasible })
}

pub fn simulate(cfg: &RunConfig, a: &SimulateArgs) -> Result<Outcome, CliError> {
    let sys = cfg.system()?;
    let prior = cfg.prior()?;
    let window = a.window.resolve(&prior, cfg)?;
    let spec = cfg.spec();
    let s = simulate_two_stage(&TwoStageQuery::new(sys, prior, spec, window, cfg.plan()?))?;
    let mut t = Table::new(&[
        "p_lin", "p_prime_lin", "ebn0_dB", "k_l_count", "k_u_count", "r_prime_count", "trials_count", "md_prob", "md_std_err_prob",
        "fa_prob", "fa_std_err_prob", "joint_prob", "joint_std_err_prob",
    ]);
    t.push(vec![
        sys.p().into(),
        spec.p_prime.into(),
        sys.ebn0_db().into(),
        window.k_l.into(),
        window.k_u.into(),
        window.r_prime.into(),
        s.trials.into(),
        s.md.mean.into(),
        s.md.std_err.into(),
        s.fa.mean.into(),
        s.fa.std_err.into(),
        s.joint.mean.into(),
        s.joint.std_err.into(),
    ]);
    Ok(Outcome::plain(t))
}

pub fn trend(cfg: &RunConfig, a: &TrendArgs) -> Result<Outcome, CliError> {
    let sys = cfg.system()?;
    let quantity = match a.quantity {
        TrendKind::KaBound => TrendQuantity::KaBound,
        TrendKind::PmdBound => TrendQuantity::PmdBound,
        TrendKind::EmpiricalKa => TrendQuantity::EmpiricalKa,
    };
    let axis = match a.axis {
        TrendAxis::L => SweepAxis::L,
        TrendAxis::P => SweepAxis::P,
        TrendAxis::N => SweepAxis::N,
    };
    let (prior, window) = if quantity == TrendQuantity::PmdBound {
        let prior = cfg.prior()?;
        let w = a.window.resolve(&prior, cfg)?;
        (Some(prior), Some(w))
    } else {
        (None, None)
    };
    let q = TrendQuery {
        quantity,
        axis,
        grid: a.grid.clone(),
        cfg: sys,
        spec: cfg.spec(),
        ka: a.ka,
        ka_prime: a.ka_prime,
        prior,
        window,
        settings: cfg.optimizer.clone(),
        plan: cfg.plan()?,
    };
    let r = trend_report(&q)?;
    let mut t = Table::new(&["parameter", "x_lin", "value_prob", "std_err_prob"]);
    for i in 0..r.grid.len() {
        t.push(vec![r.parameter.clone().into(), r.grid[i].into(), r.values[i].into(), r.std_errs[i].into()]);
    }
    let details = json!({
        "slope": r.slope,
        "r_squared": r.r_squared,
        "plateau": r.plateau,
        "floor": r.floor,
        "floor_gap": r.floor_gap,
    });
    Ok(Outcome { table: t, details, infeasible: false })
}

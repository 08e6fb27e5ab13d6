//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Tolerances and scales are pinned below.

use std::process::Command as Process;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use ura_core::converse::{min_ebn0_converse, ConverseKind, ConverseSearch};
use ura_core::detection::{
    detection_error_bounds, joint_error_achievability, map_metric, min_ebn0_achievability, DecoderWindow, DetectionQuery,
    OptimizerSettings, SearchConfig,
};
use ura_core::ka_estimation::{
    asymptotic_pairwise_bound, concentration_bound, pairwise_error_bound, AsymptoticArgs, AsymptoticMode, PairwiseErrorQuery,
};
use ura_core::randmat::{logdet_i_plus_gram, sample_codebook};
use ura_core::simulator::{simulate_ka_estimation, simulate_two_stage, trend_report, SweepAxis, TrendQuantity, TrendQuery, TwoStageQuery};
use ura_core::specfun::{chi2_quantile, chi2_tail, chi2_tail_lower_bound, log_reg_gamma, Chi2Side, GammaKind};
use ura_core::{ActivityPrior, CodebookSpec, Ensemble, MonteCarloPlan, SystemConfig, ValidatedConfig};

const CLOSED_FORM_REL_TOL: f64 = 1e-6;
/// Reference values are truncated to five decimals.
const PRINTED_DIGITS_TOL: f64 = 1e-5;
const GAMMA_SUM_TOL: f64 = 1e-12;
const QUANTILE_TOL: f64 = 1e-8;
const ORACLE_TOL: f64 = 1e-8;
const ORACLE_INSTANCES: usize = 100;
const SIGMAS: f64 = 3.0;
const SIM_TRIALS: usize = 10_000;
const DETECTION_BOUND_TRIALS: usize = 200;
const ESTIMATION_BOUND_TRIALS: usize = 1000;
/// Codebook draws per detection bound inside the ensemble searches.
const ENSEMBLE_DRAWS: usize = 20;
const TREND_R2_MIN: f64 = 0.99;
const FLOOR_GAP_MAX: f64 = 0.10;

type Verdict = Result<String, String>;

fn config(n: usize, j: u32, l: usize, p: f64, k: usize) -> ValidatedConfig {
    SystemConfig { n, j, l, p, k }.validate().expect("valid acceptance config")
}

fn plan(seed: u64, trials: usize) -> MonteCarloPlan {
    MonteCarloPlan::new(seed, trials).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn long_block(ka: usize, ka_prime: usize, l: usize) -> f64 {
    let args = AsymptoticArgs {
        ka,
        ka_prime,
        l,
        log2_m: f64::INFINITY,
        n: 1,
        ensemble: Ensemble::Spherical,
        plan: None,
        rho_iters: 0,
    };
    asymptotic_pairwise_bound(AsymptoticMode::LongBlock, &args).unwrap().value()
}

fn closed_form_anchors() -> Verdict {
    // Direct evaluation of exp(L·K_a·(1 − ρ + ln ρ)) with ρ = (2K'_a ± 1)/(2K_a).
    let direct = |ka: f64, kp: f64, l: f64| {
        let s = if kp < ka { 1.0 } else { -1.0 };
        let rho = (2.0 * kp + s) / (2.0 * ka);
        (l * ka * (1.0 - rho + rho.ln())).exp()
    };
    // Reference values with half a unit of their last printed digit.
    let cases = [(2, 1, 1, 0.92740, PRINTED_DIGITS_TOL), (1, 2, 1, 0.90980, PRINTED_DIGITS_TOL), (1, 2, 100, 7.84e-5, 5e-8)];
    let mut notes = Vec::new();
    for (ka, kp, l, printed, tol) in cases {
        let v = long_block(ka, kp, l);
        let d = direct(ka as f64, kp as f64, l as f64);
        if rel(v, d) > CLOSED_FORM_REL_TOL {
            return Err(format!("long-block floor ({ka},{kp},L={l}) = {v}, direct {d}"));
        }
        if (v - printed).abs() > tol {
            return Err(format!("long-block floor ({ka},{kp},L={l}) = {v}, printed {printed}"));
        }
        notes.push(format!("{v:.6e}"));
    }
    let c = concentration_bound(100, 10, 1, 1.0, 0.5).unwrap().value();
    let (n, l, nkp, delta) = (100.0f64, 10.0, 100.0, 0.5);
    let e1 = (n * delta).powi(2) / (8.0 * (n + nkp * nkp));
    let e2 = n * delta / (4.0 * (1.0 + nkp));
    let direct_c = 2.0 * (-l * e1.min(e2)).exp();
    if rel(c, direct_c) > CLOSED_FORM_REL_TOL || (c - 1.46777).abs() > PRINTED_DIGITS_TOL {
        return Err(format!("concentration bound {c}, direct {direct_c}, printed 1.46777"));
    }
    notes.push(format!("{c:.6}"));
    Ok(notes.join(", "))
}

fn special_functions() -> Verdict {
    let mut worst_sum = 0.0f64;
    for a in [0.5, 1.0, 2.5, 10.0, 64.0, 300.0, 2048.0] {
        for x in [1e-3, 0.1, 0.5, 1.0, 3.0, 10.0, 50.0, 300.0, 1500.0, 2100.0] {
            let lo = log_reg_gamma(GammaKind::Lower, a, x).unwrap().exp();
            let up = log_reg_gamma(GammaKind::Upper, a, x).unwrap().exp();
            worst_sum = worst_sum.max((lo + up - 1.0).abs());
        }
    }
    if worst_sum > GAMMA_SUM_TOL {
        return Err(format!("lower + upper regularized gamma off by {worst_sum:e}"));
    }
    let mut worst_q = 0.0f64;
    for k in [2u32, 64, 256, 2048] {
        for p in [1e-6, 0.01, 0.3, 0.5, 0.9, 0.999] {
            let x = chi2_quantile(k, p).unwrap().value();
            let back = chi2_tail(k, x, Chi2Side::Cdf).unwrap().exp();
            let x2 = chi2_quantile(k, back).unwrap().value();
            worst_q = worst_q.max((x2 - x).abs() / x.max(1.0));
        }
    }
    if worst_q > QUANTILE_TOL {
        return Err(format!("chi-square quantile round trip off by {worst_q:e}"));
    }
    let mut checked = 0;
    for k in [2u32, 4, 16, 64, 256] {
        for step in 0..40 {
            let u = (k as f64 - 1.0) + step as f64 * (k as f64).sqrt() * 0.5;
            let lb = chi2_tail_lower_bound(k, u).unwrap().ln();
            let exact = chi2_tail(k, u, Chi2Side::Sf).unwrap().ln();
            if lb > exact + 1e-12 {
                return Err(format!("tail lower bound {lb} above exact {exact} at k={k}, u={u}"));
            }
            checked += 1;
        }
    }
    Ok(format!("gamma sum {worst_sum:.1e}, quantile {worst_q:.1e}, {checked} tail points"))
}

fn oracle_equivalence() -> Verdict {
    let mut worst = 0.0f64;
    for i in 0..ORACLE_INSTANCES {
        let n = 2 + i % 15;
        let l = 1 + i % 3;
        let count = i % 6;
        let cfg = config(n, 5, l, 1.0, 8);
        let ens = if i % 2 == 0 { Ensemble::Gaussian } else { Ensemble::Spherical };
        let block = sample_codebook(CodebookSpec::new(ens, 0.3 + 0.1 * (i % 7) as f64), n, count, 11, i as u64);
        let y = sample_codebook(CodebookSpec::new(Ensemble::Gaussian, 1.0), n, l, 12, i as u64).data().to_vec();
        let prior = ActivityPrior::binomial(8, 0.4).unwrap();

        let cm = DMatrix::from_column_slice(n, count, block.data());
        let ym = DMatrix::from_column_slice(n, l, &y);
        let f = DMatrix::<Complex64>::identity(n, n) + &cm * cm.adjoint();
        let ld = f.determinant().re.ln();
        let quad = (ym.adjoint() * f.clone().try_inverse().unwrap() * &ym).trace().re;
        let dense = l as f64 * ld + quad - prior.ln_pmf(count) + cfg.ln_binom_m(count);
        let fast = map_metric(&y, &block, &prior, &cfg).unwrap();
        worst = worst.max((fast - dense).abs() / dense.abs().max(1.0));

        let scale = 0.7;
        let g = DMatrix::<Complex64>::identity(n, n) + &cm * cm.adjoint() * Complex64::new(scale, 0.0);
        let dense_ld = g.determinant().re.ln();
        let fast_ld = logdet_i_plus_gram(&block, scale).unwrap();
        worst = worst.max((fast_ld - dense_ld).abs() / dense_ld.abs().max(1.0));
    }
    if worst > ORACLE_TOL {
        return Err(format!("worst relative deviation {worst:e}"));
    }
    Ok(format!("{ORACLE_INSTANCES} instances, worst {worst:.1e}"))
}

fn estimation_dominance() -> Verdict {
    let p = 0.1;
    let cfg = config(64, 4, 16, p, 16);
    let spec = CodebookSpec::new(Ensemble::Spherical, p);
    let mut checked = 0;
    let mut margin = f64::INFINITY;
    for ka in 0..=8 {
        let hist = simulate_ka_estimation(&cfg, &spec, ka, plan(0, SIM_TRIALS)).unwrap();
        for kp in (0..=16).filter(|k| *k != ka) {
            let mut q = PairwiseErrorQuery::new(cfg, spec, ka, kp, plan(0, ESTIMATION_BOUND_TRIALS));
            q.p_prime_grid = Some(vec![p]);
            let b = pairwise_error_bound(&q).unwrap().value;
            let emp = hist.probability(kp);
            let bound = b.clip_to_probability();
            if !emp.dominated_by(bound, b.std_err, SIGMAS) {
                return Err(format!("P[{ka}→{kp}] empirical {} ± {} above bound {bound}", emp.mean, emp.std_err));
            }
            if emp.mean > 0.0 {
                margin = margin.min(bound - emp.mean);
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} pairs, smallest gap where errors were observed {margin:.4}"))
}

fn detection_dominance() -> Verdict {
    let prior = ActivityPrior::binomial(8, 0.25).unwrap();
    let mut notes = Vec::new();
    for p in [0.3, 1.0] {
        let cfg = config(32, 4, 8, p, 8);
        let spec = CodebookSpec::new(Ensemble::Spherical, p);
        let window = DecoderWindow::new(0, 8, 1, 8).unwrap();
        let sim = simulate_two_stage(&TwoStageQuery::new(cfg, prior.clone(), spec, window, plan(0, SIM_TRIALS))).unwrap();
        let b = detection_error_bounds(&DetectionQuery::new(cfg, prior.clone(), spec, window, plan(0, DETECTION_BOUND_TRIALS)))
            .unwrap();
        for (name, emp, bound) in [("MD", sim.md, b.md), ("FA", sim.fa, b.fa)] {
            if !emp.dominated_by(bound.clip_to_probability(), bound.std_err, SIGMAS) {
                return Err(format!("P={p} {name}: empirical {} ± {} above bound {}", emp.mean, emp.std_err, bound.value()));
            }
        }
        notes.push(format!("P={p}: MD {:.4}≤{:.4} FA {:.4}≤{:.4}", sim.md.mean, b.md.value(), sim.fa.mean, b.fa.value()));

        let ka = 2;
        let point = ActivityPrior::point_mass(8, ka).unwrap();
        let w = DecoderWindow::new(ka, ka, 0, 8).unwrap();
        let sim = simulate_two_stage(&TwoStageQuery::new(cfg, point, spec, w, plan(0, SIM_TRIALS))).unwrap();
        let j = joint_error_achievability(&cfg, ka, &spec, plan(0, DETECTION_BOUND_TRIALS), &OptimizerSettings::default()).unwrap();
        if !sim.joint.dominated_by(j.joint.clip_to_probability(), j.joint.std_err, SIGMAS) {
            return Err(format!("P={p} joint: empirical {} above bound {}", sim.joint.mean, j.joint.value()));
        }
        notes.push(format!("J {:.4}≤{:.4}", sim.joint.mean, j.joint.value()));
    }
    Ok(notes.join("; "))
}

/// Reduced-scale energy-per-bit setting shared by the ensemble and ordering checks.
fn reduced_search() -> SearchConfig {
    SearchConfig {
        p_lo: 1e-2,
        p_hi: 0.1,
        tol_db: 0.1,
        p_prime_fractions: vec![0.5, 0.7, 0.85],
        r_prime_candidates: vec![4],
        ..SearchConfig::default()
    }
}

struct EnsembleRow {
    mean: f64,
    spherical: Option<f64>,
    gaussian: Option<f64>,
    converse: Option<f64>,
}

fn ensemble_sweep() -> Vec<EnsembleRow> {
    let (k, eps) = (40, 1e-3);
    let cfg = config(200, 32, 32, 1.0, k);
    let mut rows = Vec::new();
    for mean in [1.0, 2.0] {
        let prior = ActivityPrior::binomial(k, mean / k as f64).unwrap();
        let run = |ens| min_ebn0_achievability(&cfg, &prior, ens, (eps, eps), &reduced_search(), plan(0, ENSEMBLE_DRAWS)).unwrap().ebn0_db;
        let converse = min_ebn0_converse(&cfg, &prior, (eps, eps), &ConverseSearch::default(), plan(0, 50)).unwrap().ebn0_db;
        rows.push(EnsembleRow { mean, spherical: run(Ensemble::Spherical), gaussian: run(Ensemble::Gaussian), converse });
    }
    rows
}

fn ensemble_ordering(rows: &[EnsembleRow]) -> Verdict {
    let mut notes = Vec::new();
    for r in rows {
        let (Some(s), Some(g)) = (r.spherical, r.gaussian) else {
            return Err(format!("E[K_a]={}: search bracket infeasible (spherical {:?}, gaussian {:?})", r.mean, r.spherical, r.gaussian));
        };
        if s > g {
            return Err(format!("E[K_a]={}: spherical {s:.3} dB above gaussian {g:.3} dB", r.mean));
        }
        notes.push(format!("E={}: {s:.2} ≤ {g:.2} dB", r.mean));
    }
    Ok(notes.join("; "))
}

fn converse_ordering(rows: &[EnsembleRow]) -> Verdict {
    let mut notes = Vec::new();
    for r in rows {
        let ach = [r.spherical, r.gaussian].into_iter().flatten().fold(f64::INFINITY, f64::min);
        match r.converse {
            Some(c) if c > ach => return Err(format!("E[K_a]={}: converse {c:.3} dB above achievability {ach:.3} dB", r.mean)),
            _ => notes.push(format!("E={}: {:?} ≤ {ach:.2}", r.mean, r.converse.map(|c| (c * 100.0).round() / 100.0))),
        }
    }

    // Tiny configuration with loose targets.
    let cfg = config(32, 4, 8, 1.0, 8);
    let prior = ActivityPrior::binomial(8, 0.25).unwrap();
    let targets = (0.2, 0.2);
    let search = SearchConfig { p_lo: 1e-2, p_hi: 10.0, tol_db: 0.1, r_prime_candidates: vec![2], ..SearchConfig::default() };
    let ach = min_ebn0_achievability(&cfg, &prior, Ensemble::Spherical, targets, &search, plan(0, 50)).unwrap().ebn0_db;
    let conv = min_ebn0_converse(&cfg, &prior, targets, &ConverseSearch::default(), plan(0, 50)).unwrap().ebn0_db;
    match (conv, ach) {
        (Some(c), Some(a)) if c <= a => notes.push(format!("tiny: {c:.2} ≤ {a:.2}")),
        other => return Err(format!("tiny config: converse/achievability {other:?}")),
    }

    // Dominant converse along an E[K_a] sweep.
    let k = 200;
    let cfg = config(100, 32, 32, 1.0, k);
    let mut dominant = Vec::new();
    for mean in [10.0, 75.0] {
        let prior = ActivityPrior::binomial(k, mean / k as f64).unwrap();
        let r = min_ebn0_converse(&cfg, &prior, (1e-3, 1e-3), &ConverseSearch::default(), plan(0, 50)).unwrap();
        dominant.push(r.dominant);
    }
    let single = |d: &Option<ConverseKind>| matches!(d, Some(ConverseKind::SingleUser | ConverseKind::BinomialSingleUser));
    if !(single(&dominant[0]) && dominant[1] == Some(ConverseKind::Fano)) {
        return Err(format!("no single-user → Fano crossover: {dominant:?}"));
    }
    notes.push(format!("dominant {:?}", dominant));
    Ok(notes.join("; "))
}

fn trends() -> Verdict {
    let cfg = config(32, 4, 8, 1.0, 8);
    let spec = CodebookSpec::new(Ensemble::Spherical, 1.0);
    let query = |axis, grid: Vec<f64>| TrendQuery {
        quantity: TrendQuantity::KaBound,
        axis,
        grid,
        cfg: cfg,
        spec,
        ka: 2,
        ka_prime: 1,
        prior: None,
        window: None,
        settings: OptimizerSettings::default(),
        plan: plan(0, ESTIMATION_BOUND_TRIALS),
    };
    let l = trend_report(&query(SweepAxis::L, vec![2.0, 4.0, 8.0, 16.0])).unwrap();
    if !(l.slope < 0.0 && l.r_squared >= TREND_R2_MIN) {
        return Err(format!("L sweep slope {} R² {}", l.slope, l.r_squared));
    }
    let mut notes = vec![format!("L slope {:.4} R² {:.5}", l.slope, l.r_squared)];
    for (axis, grid) in [
        (SweepAxis::P, vec![1.0, 10.0, 100.0, 1e3, 1e4, 1e5]),
        (SweepAxis::N, vec![32.0, 320.0, 3200.0, 32_000.0, 320_000.0]),
    ] {
        let r = trend_report(&query(axis, grid)).unwrap();
        let gap = r.floor_gap.unwrap_or(f64::INFINITY);
        if !(r.plateau && gap <= FLOOR_GAP_MAX) {
            return Err(format!("{axis} sweep plateau {} floor gap {gap}", r.plateau));
        }
        notes.push(format!("{axis} plateau, floor gap {gap:.1e}"));
    }
    Ok(notes.join("; "))
}

fn ura(args: &[&str]) -> (Option<i32>, Vec<u8>) {
    let out = Process::new(env!("CARGO_BIN_EXE_ura")).args(args).output().expect("ura runs");
    (out.status.code(), out.stdout)
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let search = dir.path().join("search.toml");
    std::fs::write(&search, "[search]\ntol_db = 0.5\nr_prime = [0]\n").unwrap();
    let search = search.to_str().unwrap().to_string();
    let commands: Vec<Vec<&str>> = vec![
        vec!["ka-bound", "--ka", "2", "--trials", "200"],
        vec!["ka-bound", "--mode", "p-inf", "--ka", "2", "--ka-prime", "1", "--trials", "200"],
        vec!["ka-sim", "--ka", "3", "--trials", "2000"],
        vec!["detect-bound", "--trials", "20", "--prior", "binom:4:0.5", "--J", "3"],
        vec!["joint-bound", "--ka", "2", "--trials", "50"],
        vec!["converse", "--ka", "2", "--trials", "50"],
        vec!["min-ebn0", "--config", &search, "--prior", "point:4:1", "--J", "10", "--trials", "20"],
        vec!["simulate", "--trials", "500"],
        vec!["trend", "--quantity", "empirical-ka", "--axis", "P", "--grid", "0.1,0.3,1,3", "--trials", "500"],
    ];
    for (i, cmd) in commands.iter().enumerate() {
        let mut reference: Option<Vec<u8>> = None;
        for threads in ["1", "4", "8"] {
            let json = dir.path().join(format!("c{i}_{threads}.json"));
            let mut args = cmd.clone();
            let json_s = json.to_str().unwrap().to_string();
            args.extend_from_slice(&["--threads", threads, "--json", &json_s]);
            let (code, csv) = ura(&args);
            if !matches!(code, Some(0) | Some(3)) {
                return Err(format!("{cmd:?} exited {code:?}"));
            }
            match &reference {
                None => reference = Some(csv),
                Some(r) if *r != csv => return Err(format!("{cmd:?}: CSV differs with {threads} threads")),
                Some(_) => {}
            }
            let (_, replayed) = ura(&["replay", &json_s, "--threads", threads]);
            if Some(&replayed) != reference.as_ref() {
                return Err(format!("{cmd:?}: replay with {threads} threads differs"));
            }
        }
    }
    Ok(format!("{} commands × 3 thread counts, with replay", commands.len()))
}

fn main() {
    let start = Instant::now();
    let mut failed = 0;
    let mut report = |id: u32, name: &str, v: Verdict, t: Instant| {
        let secs = t.elapsed().as_secs_f64();
        match v {
            Ok(msg) => println!("criterion {id} PASS  {name} ({secs:.1} s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {id} FAIL  {name} ({secs:.1} s): {msg}");
            }
        }
    };
    let t = Instant::now();
    report(1, "closed-form anchors", closed_form_anchors(), t);
    let t = Instant::now();
    report(2, "special functions", special_functions(), t);
    let t = Instant::now();
    report(3, "oracle equivalence", oracle_equivalence(), t);
    let t = Instant::now();
    report(4, "estimation dominance", estimation_dominance(), t);
    let t = Instant::now();
    report(5, "detection dominance", detection_dominance(), t);
    let t = Instant::now();
    let rows = ensemble_sweep();
    report(6, "spherical vs gaussian ordering", ensemble_ordering(&rows), t);
    let t = Instant::now();
    report(7, "converse/achievability ordering", converse_ordering(&rows), t);
    let t = Instant::now();
    report(8, "trend checks", trends(), t);
    let t = Instant::now();
    report(9, "thread-count determinism", determinism(), t);
    println!("acceptance: {} of 9 criteria passed in {:.0} s", 9 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}

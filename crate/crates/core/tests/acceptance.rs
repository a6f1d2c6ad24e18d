//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! `RRME_ACCEPTANCE_ONLY=1,3` runs a subset. `RRME_ACCEPTANCE_FULL=1` makes
//! the PC-count criterion re-select the penalties of every grid cell on
//! every replicate instead of once.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use common::oracles::{log_marginal, mc_t_moments, posterior_u_moments, stationarity_report};
use common::*;
use nalgebra::DVector;
use rrme::evaluation::{evaluate_fit, EvalReport, SplineModel};
use rrme::model::{e_step, fit, penalized_objective, FitOptions, Lambdas, PairedDataset};
use rrme::selection::{
    choose_by_rule, cv_score, default_grid, make_folds, select_pc_numbers, select_penalties, GridCell,
    NelderMeadOptions, SearchOptions,
};
use rrme::simulation::{simulate, Scenario};
use rrme::smnfamily::conditional_u_moments;
use rrme::splinebasis::penalty_matrix;
use rrme::{make_basis, FamilyKind, MixingFamily, OrthonormalBasis};

const N: usize = 100;
const SIGMA2: f64 = 0.04;
/// Seed of the extra replicate the penalties are selected on.
const SELECTION_SEED: u64 = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn basis() -> OrthonormalBasis {
    unit_basis(10)
}

fn search(max_evals: usize) -> SearchOptions {
    SearchOptions {
        simplex: NelderMeadOptions {
            max_evals,
            ..NelderMeadOptions::default()
        },
        fit: FitOptions {
            max_iter: 300,
            rel_tol: 1e-4,
            ..FitOptions::default()
        },
        ..SearchOptions::default()
    }
}

fn fit_options(lambdas: Lambdas) -> FitOptions {
    FitOptions {
        lambdas,
        max_iter: 1000,
        rel_tol: 1e-6,
        ..FitOptions::default()
    }
}

fn select_once(scenario: Scenario, gamma: Option<f64>, kind: FamilyKind, basis: &OrthonormalBasis) -> Lambdas {
    let (ds, _) = simulate(scenario, gamma, SIGMA2, N, SELECTION_SEED).unwrap();
    let plan = make_folds(&ds, 5, 1).unwrap();
    select_penalties(&ds, basis, 2, 2, kind, &plan, &search(120)).unwrap().lambdas
}

/// Column-wise means of the evaluation reports over `reps` replicates.
fn replicate_means(
    scenario: Scenario,
    gamma: Option<f64>,
    kind: FamilyKind,
    lambdas: Lambdas,
    basis: &OrthonormalBasis,
    reps: u64,
) -> Vec<(String, f64)> {
    let opts = fit_options(lambdas);
    let mut sums: Vec<(String, f64)> = Vec::new();
    for rep in 0..reps {
        let (ds, truth) = simulate(scenario, gamma, SIGMA2, N, rep).unwrap();
        let r = fit(&ds, basis, 2, 2, kind, &opts).unwrap();
        let report: EvalReport = evaluate_fit(&SplineModel { params: &r.params, basis }, &truth, &ds).unwrap();
        let mut cols = report.columns();
        cols.push(("pc".into(), report.pc_mean()));
        cols.push(("individual".into(), report.individual_mean()));
        if sums.is_empty() {
            sums = cols.iter().map(|(k, _)| (k.clone(), 0.0)).collect();
        }
        for (s, (_, v)) in sums.iter_mut().zip(cols) {
            s.1 += v;
        }
    }
    sums.into_iter().map(|(k, v)| (k, v / reps as f64)).collect()
}

fn column(cols: &[(String, f64)], name: &str) -> f64 {
    cols.iter().find(|(k, _)| k == name).unwrap().1
}

fn robustness_gap() -> Outcome {
    let basis = basis();
    let (scenario, gamma) = (Scenario::StudentT, Some(2.0));
    let lt = select_once(scenario, gamma, FamilyKind::StudentT, &basis);
    let ln = select_once(scenario, gamma, FamilyKind::Normal, &basis);
    let t = replicate_means(scenario, gamma, FamilyKind::StudentT, lt, &basis, 50);
    let n = replicate_means(scenario, gamma, FamilyKind::Normal, ln, &basis, 50);
    let (tp, np) = (column(&t, "pc"), column(&n, "pc"));
    let (ti, ni) = (column(&t, "individual"), column(&n, "individual"));
    let gap = (ni - ti) / ni;
    outcome(
        tp <= 0.10 && np >= 0.13 && gap >= 0.08,
        format!(
            "PC IAE t {tp:.4} (need <= 0.10), normal {np:.4} (need >= 0.13); individual IAE t {ti:.4}, normal {ni:.4}, gap {:.1}% (need >= 8%)",
            100.0 * gap
        ),
    )
}

fn null_robustness_cost() -> Outcome {
    // Both models share one penalty choice so only the mixing law differs.
    let basis = basis();
    let l = select_once(Scenario::Normal, None, FamilyKind::Normal, &basis);
    let t = replicate_means(Scenario::Normal, None, FamilyKind::StudentT, l, &basis, 50);
    let n = replicate_means(Scenario::Normal, None, FamilyKind::Normal, l, &basis, 50);
    let mut worst = (String::new(), 0.0);
    let mut cells = Vec::new();
    for ((name, tv), (_, nv)) in t.iter().zip(&n) {
        if name == "pc" || name == "individual" {
            continue;
        }
        let rel = (tv - nv).abs() / nv;
        if rel > worst.1 {
            worst = (name.clone(), rel);
        }
        cells.push(format!("{name} {:.1}/{:.1}", 1000.0 * tv, 1000.0 * nv));
    }
    outcome(
        worst.1 <= 0.10,
        format!(
            "largest relative difference {:.2}% on {} (need <= 10%); x1000 t/normal: {}",
            100.0 * worst.1,
            worst.0,
            cells.join(", ")
        ),
    )
}

fn pc_count_selection() -> Outcome {
    let basis = basis();
    let (scenario, gamma, kind) = (Scenario::StudentT, Some(5.0), FamilyKind::StudentT);
    let grid = default_grid();
    let full = std::env::var("RRME_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let cell_search = search(40);
    let fixed: Vec<Lambdas> = if full {
        Vec::new()
    } else {
        let (ds, _) = simulate(scenario, gamma, SIGMA2, N, SELECTION_SEED).unwrap();
        let plan = make_folds(&ds, 5, 1).unwrap();
        grid.iter()
            .map(|&(ka, kb)| select_penalties(&ds, &basis, ka, kb, kind, &plan, &cell_search).unwrap().lambdas)
            .collect()
    };
    let reps = 20;
    let (mut hit_r5, mut hit_r0) = (0, 0);
    for rep in 0..reps {
        let (ds, _) = simulate(scenario, gamma, SIGMA2, N, rep).unwrap();
        let plan = make_folds(&ds, 5, rep + 1).unwrap();
        let cells: Vec<GridCell> = if full {
            select_pc_numbers(&ds, &basis, kind, &grid, 0.05, &plan, &cell_search).unwrap().cells
        } else {
            grid.iter()
                .zip(&fixed)
                .map(|(&(ka, kb), &l)| {
                    let cv = cv_score(&ds, &basis, ka, kb, kind, l, &plan, &cell_search.fit).ok();
                    GridCell {
                        k_alpha: ka,
                        k_beta: kb,
                        cv: cv.map(|r| r.mae_combined),
                        lambdas: Some(l),
                        error: None,
                    }
                })
                .collect()
        };
        hit_r5 += (choose_by_rule(&cells, 0.05) == Some((2, 2))) as usize;
        hit_r0 += (choose_by_rule(&cells, 0.0) == Some((2, 2))) as usize;
    }
    let (p5, p0) = (hit_r5 as f64 / reps as f64, hit_r0 as f64 / reps as f64);
    outcome(
        p5 >= 0.90 && p0 <= 0.70,
        format!(
            "(2,2) chosen in {:.0}% of replicates at r=0.05 (need >= 90%) and {:.0}% at r=0 (need <= 70%); {} protocol",
            100.0 * p5,
            100.0 * p0,
            if full { "full" } else { "reduced" }
        ),
    )
}

fn em_monotonicity() -> Outcome {
    let basis = unit_basis(8);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for seed in 0..20u64 {
        for (scenario, gamma) in [(Scenario::Normal, None), (Scenario::StudentT, Some(2.0)), (Scenario::Slash, Some(1.0))] {
            let (ds, _) = simulate(scenario, gamma, SIGMA2, 60, 500 + seed).unwrap();
            for kind in [FamilyKind::Normal, FamilyKind::StudentT, FamilyKind::Slash] {
                let opts = FitOptions {
                    lambdas: Lambdas::uniform(1e-3),
                    max_iter: 80,
                    rel_tol: 0.0,
                    ..FitOptions::default()
                };
                let r = fit(&ds, &basis, 2, 2, kind, &opts).unwrap();
                let mut prev = r.initial_objective;
                for &v in &r.objective_trace {
                    let rise = (v - prev) / prev.abs();
                    worst = worst.max(rise);
                    if rise > 1e-8 {
                        violations += 1;
                    }
                    prev = v;
                }
                runs += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over {runs} fits; largest relative rise {worst:.1e} (slack 1e-8)"),
    )
}

fn posterior_moments() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for kind in [FamilyKind::StudentT, FamilyKind::Slash] {
        for gamma in [0.5, 2.0, 5.0, 20.0, 100.0] {
            let fam = kind.with_gamma(gamma);
            for d in [1usize, 4, 15, 50] {
                for delta in [0.0, 0.5, 3.0, 12.0, 60.0] {
                    let got = conditional_u_moments(&fam, delta, d).unwrap();
                    let (u, lu) = posterior_u_moments(&fam, delta, d);
                    let err = ((got.u_hat - u).abs() / u.abs().max(1.0)).max((got.log_u_hat - lu).abs() / lu.abs().max(1.0));
                    worst = worst.max(err);
                    points += 1;
                }
            }
        }
    }

    let basis = unit_basis(3);
    let mut p = random_params(basis.dim(), 1, 1, MixingFamily::StudentT { gamma: 3.0 }, 11);
    p.theta_mu *= 0.3;
    p.theta_nu *= 0.3;
    let s = tiny_subject();
    let ds = PairedDataset::new(vec![s.clone()], (0.0, 1.0)).unwrap();
    let post = &e_step(&p, &basis, &ds).unwrap()[0];
    let mc = mc_t_moments(&p, &basis, &s, 1_000_000, 2024);
    let mut z_max: f64 = 0.0;
    for j in 0..2 {
        z_max = z_max.max((post.w_first[j] - mc.w_first[j]).abs() / mc.se_first[j]);
        for k in 0..2 {
            z_max = z_max.max((post.w_second[(j, k)] - mc.w_second[(j, k)]).abs() / mc.se_second[(j, k)]);
        }
    }
    outcome(
        worst < 1e-8 && z_max < 3.0,
        format!(
            "{points} grid points, worst relative error {worst:.1e} (need < 1e-8); weighted moments within {z_max:.2} MC standard errors (need < 3)"
        ),
    )
}

fn marginal_likelihood() -> Outcome {
    let basis = unit_basis(4);
    let ds = random_dataset(&[(3, 2), (5, 4), (2, 6)], 21);
    let zero = Lambdas::uniform(0.0);
    let mut worst: f64 = 0.0;
    for family in [MixingFamily::Normal, MixingFamily::StudentT { gamma: 3.5 }, MixingFamily::Slash { gamma: 1.2 }] {
        let p = random_params(basis.dim(), 2, 1, family, 4);
        let got = penalized_objective(&p, &basis, &ds, &zero).unwrap();
        let oracle = -2.0 / 3.0 * ds.subjects.iter().map(|s| log_marginal(&p, &basis, s)).sum::<f64>();
        worst = worst.max((got - oracle).abs() / oracle.abs());
    }
    outcome(worst < 1e-6, format!("worst relative error {worst:.1e} over three families (need < 1e-6)"))
}

fn m_step_stationarity() -> Outcome {
    let mut worst = (String::new(), 0.0);
    for family in [FamilyKind::Normal, FamilyKind::StudentT, FamilyKind::Slash] {
        let (basis, ds, p, lambdas) = seed_zero_instance(family);
        for (block, g) in stationarity_report(&p, &basis, &ds, &lambdas) {
            if g >= worst.1 {
                worst = (format!("{family} {block}"), g);
            }
        }
    }
    outcome(worst.1 < 1e-4, format!("largest gradient {:.1e} at {} (need < 1e-4)", worst.1, worst.0))
}

fn normal_limit() -> Outcome {
    let (ds, _) = simulate(Scenario::Normal, None, SIGMA2, N, 8).unwrap();
    let basis = unit_basis(8);
    let base = FitOptions {
        lambdas: Lambdas::uniform(1e-3),
        max_iter: 3000,
        rel_tol: 1e-10,
        ..FitOptions::default()
    };
    let normal = fit(&ds, &basis, 2, 2, FamilyKind::Normal, &base).unwrap();
    let frozen = FitOptions {
        gamma_init: Some(1e6),
        fix_gamma: true,
        ..base
    };
    let t = fit(&ds, &basis, 2, 2, FamilyKind::StudentT, &frozen).unwrap();
    let d_mu = (&normal.params.theta_mu - &t.params.theta_mu).amax();
    let d_nu = (&normal.params.theta_nu - &t.params.theta_nu).amax();
    let d_s = (normal.params.sigma2_eps - t.params.sigma2_eps)
        .abs()
        .max((normal.params.sigma2_xi - t.params.sigma2_xi).abs());
    let worst = d_mu.max(d_nu).max(d_s);
    outcome(
        worst < 1e-4,
        format!("max difference mean coefficients {:.1e}, variances {d_s:.1e} (need < 1e-4)", d_mu.max(d_nu)),
    )
}

fn basis_suite() -> Outcome {
    let bases = [
        unit_basis(10),
        unit_basis(3),
        make_basis((-5.0, 45.0), (1..=15).map(|i| -5.0 + 50.0 * i as f64 / 16.0).collect(), 3).unwrap(),
        make_basis((0.0, 1.0), vec![0.05, 0.1, 0.5, 0.52, 0.9], 3).unwrap(),
        make_basis((0.0, 2.0), vec![0.3, 1.1, 1.7], 2).unwrap(),
    ];
    let ortho = bases.iter().map(orthonormality_error).fold(0.0, f64::max);
    let partition = bases.iter().map(partition_error).fold(0.0, f64::max);

    let basis = &bases[0];
    let ev = penalty_spectrum(basis);
    let top = ev[ev.len() - 1];
    let null_ok = ev[0].abs() < 1e-8 * top && ev[1].abs() < 1e-8 * top && ev[2] > 1e-6 * top;
    let omega = penalty_matrix(basis).unwrap();
    let full = basis.knots().full();
    let p = basis.knots().degree;
    let raw = DVector::from_fn(basis.dim(), |k, _| 1.5 - 4.0 * full[k + 1..=k + p].iter().sum::<f64>() / p as f64);
    let linear = (&omega * basis.coefficients_from_raw(&raw)).amax();
    let cubic = cubic_penalty_error(basis, [0.3, -1.0, 2.0, 0.7]);
    outcome(
        ortho < 1e-8 && partition < 1e-12 && null_ok && linear < 1e-8 && cubic < 1e-8,
        format!(
            "orthonormality {ortho:.1e} (need < 1e-8), partition of unity {partition:.1e} (need < 1e-12), \
             penalty null space dimension {} (need 2), linear residual {linear:.1e}, cubic curvature error {cubic:.1e}",
            ev.iter().filter(|v| v.abs() < 1e-8 * top).count()
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("RRME_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("robustness gap", robustness_gap),
        ("null robustness cost", null_robustness_cost),
        ("PC-count selection", pc_count_selection),
        ("EM monotonicity", em_monotonicity),
        ("posterior-moment oracle", posterior_moments),
        ("marginal-likelihood oracle", marginal_likelihood),
        ("M-step stationarity", m_step_stationarity),
        ("normal limit", normal_limit),
        ("basis suite", basis_suite),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !result.pass as usize;
        println!(
            "[{}] {id}. {name}: {} [{:.0} s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

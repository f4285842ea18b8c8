//! End-to-end acceptance checks. Runs as a plain binary so each criterion's
//! verdict is printed whether it passes or not.

use std::time::Instant;

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_reach::dynamics::{AffineEval, ControlBox, UncertaintyBoundsEval};
use robust_reach::ensemble::TrainConfig;
use robust_reach::experiments::{
    self, ensemble_quality, filtering_demo, invariance_trials, learn_pendulum, multiplier_sweep, nested,
    pendulum_controller, pendulum_study, sample_states, DubinsSetup, Method, PendulumSetup, StudyOutcome,
};
use robust_reach::grid::{Grid, ScalarField};
use robust_reach::hamiltonian::{partial_game_bounds, solve_game, GamePoint};
use robust_reach::solver::{safe_set, solve, ModelTable, SolveConfig};

/// Smaller networks than the configured defaults keep the suite within a
/// few minutes on one core; the fit is still far above the quality gate.
fn test_ensemble() -> TrainConfig {
    TrainConfig {
        hidden_width: 64,
        epochs: 500,
        ..TrainConfig::default()
    }
}

fn pendulum() -> PendulumSetup {
    PendulumSetup {
        ensemble: test_ensemble(),
        ..PendulumSetup::default()
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// Game oracle

struct RandomGame {
    p: Vec<f64>,
    nominal: AffineEval,
    bounds: UncertaintyBoundsEval,
    controls: ControlBox,
}

fn random_game(rng: &mut ChaCha8Rng) -> RandomGame {
    let nx = rng.gen_range(2..=4);
    let nu = rng.gen_range(1..=2);
    let mut sym = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-s..s)).collect() };
    let p = sym(nx, 2.0);
    let f1 = sym(nx, 2.0);
    let f2 = sym(nx * nu, 2.0);
    let mut neg = |n: usize| -> Vec<f64> { (0..n).map(|_| -rng.gen_range(0.0..1.0)).collect() };
    let d1_lo = neg(nx);
    let d2_lo = neg(nx * nu);
    let mut pos = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(0.0..1.0)).collect() };
    let d1_hi = pos(nx);
    let d2_hi = pos(nx * nu);
    let u_lo: Vec<f64> = (0..nu).map(|_| -rng.gen_range(0.05..2.0)).collect();
    let u_hi: Vec<f64> = (0..nu).map(|_| rng.gen_range(0.05..2.0)).collect();
    RandomGame {
        p,
        nominal: AffineEval::new(f1, f2, nu),
        bounds: UncertaintyBoundsEval {
            d1_lo,
            d1_hi,
            d2_lo,
            d2_hi,
            nu,
        },
        controls: ControlBox::new(u_lo, u_hi).unwrap(),
    }
}

/// `min_d ⟨p, f̄1 + d1 + (f̄2 + d2) u⟩` over the error box. For fixed `u`
/// the objective is linear in `d`, so its minimum is at a vertex; each
/// coordinate of that vertex is chosen by comparing both box endpoints.
fn inner_min(g: &RandomGame, u: &[f64]) -> f64 {
    let nx = g.p.len();
    let nu = u.len();
    let mut h = 0.0;
    for i in 0..nx {
        let term = |d: f64| g.p[i] * d;
        h += g.p[i] * g.nominal.f1[i] + term(g.bounds.d1_lo[i]).min(term(g.bounds.d1_hi[i]));
        for (j, uj) in u.iter().enumerate() {
            let e = i * nu + j;
            let term = |d: f64| g.p[i] * (g.nominal.f2[e] + d) * uj;
            h += term(g.bounds.d2_lo[e]).min(term(g.bounds.d2_hi[e]));
        }
    }
    h
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    v.push(0.0);
    v
}

/// `max_u min_d` over a gridded control box (plus its vertices and 0).
fn oracle(g: &RandomGame, n: usize) -> f64 {
    let axes: Vec<Vec<f64>> = (0..g.controls.dim())
        .map(|j| axis(g.controls.lo()[j], g.controls.hi()[j], n))
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; axes.len()];
    loop {
        let u: Vec<f64> = idx.iter().zip(&axes).map(|(k, a)| a[*k]).collect();
        best = best.max(inner_min(g, &u));
        let mut d = 0;
        loop {
            if d == idx.len() {
                return best;
            }
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Bound on how far the true maximum can sit above a gridded maximum: the
/// objective's Lipschitz constant in `u_j` times the grid spacing.
fn grid_resolution(g: &RandomGame, n: usize) -> f64 {
    let nu = g.controls.dim();
    (0..nu)
        .map(|j| {
            let lip: f64 = (0..g.p.len())
                .map(|i| {
                    let e = i * nu + j;
                    g.p[i].abs() * (g.nominal.f2[e].abs() + g.bounds.d2_lo[e].abs().max(g.bounds.d2_hi[e].abs()))
                })
                .sum();
            lip * (g.controls.hi()[j] - g.controls.lo()[j]) / (n - 1) as f64
        })
        .sum()
}

fn games() -> Vec<RandomGame> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_251_014);
    (0..10_000).map(|_| random_game(&mut rng)).collect()
}

fn criterion_1(games: &[RandomGame]) -> Verdict {
    let mut below = 0;
    let mut mismatched = 0;
    let mut refined = 0;
    for g in games {
        let point = GamePoint {
            p: &g.p,
            nominal: &g.nominal,
            bounds: &g.bounds,
            controls: &g.controls,
        };
        let h = solve_game(&point).h_value;
        let mut o = oracle(g, 21);
        if h < o - 1e-9 {
            below += 1;
            continue;
        }
        if h - o > grid_resolution(g, 21) + 1e-9 {
            refined += 1;
            o = oracle(g, 201);
            if h < o - 1e-9 || h - o > grid_resolution(g, 201) + 1e-9 {
                mismatched += 1;
            }
        }
    }
    verdict(
        below == 0 && mismatched == 0,
        format!("{} points: {below} below oracle, {mismatched} outside grid resolution ({refined} refined)", games.len()),
    )
}

/// `⟨p, f̄1 + d1 + (f̄2 + d2) u⟩` in exact rational arithmetic on the f64
/// inputs.
fn exact_h(p: &[f64], nominal: &AffineEval, d1: &[f64], d2: &[f64], u: &[f64]) -> BigRational {
    let q = |v: f64| BigRational::from_float(v).unwrap();
    let nu = u.len();
    let mut h = q(0.0);
    for (i, &pi) in p.iter().enumerate() {
        let mut xdot = q(nominal.f1[i]) + q(d1[i]);
        for (j, &uj) in u.iter().enumerate() {
            let e = i * nu + j;
            xdot += (q(nominal.f2[e]) + q(d2[e])) * q(uj);
        }
        h += q(pi) * xdot;
    }
    h
}

fn criterion_2(games: &[RandomGame]) -> Verdict {
    let mut exceed = 0;
    let mut ties = 0;
    for g in games {
        let full = solve_game(&GamePoint {
            p: &g.p,
            nominal: &g.nominal,
            bounds: &g.bounds,
            controls: &g.controls,
        });
        let pb = partial_game_bounds(&g.bounds, &g.controls);
        let partial = solve_game(&GamePoint {
            p: &g.p,
            nominal: &g.nominal,
            bounds: &pb,
            controls: &g.controls,
        });
        if partial.h_value > full.h_value {
            // Floating-point summation can split an exact tie by an ulp;
            // settle it on the exact values of the returned (u*, d*).
            let f = exact_h(&g.p, &g.nominal, &full.d1_star, &full.d2_star, &full.u_star);
            let pe = exact_h(&g.p, &g.nominal, &partial.d1_star, &partial.d2_star, &partial.u_star);
            if pe > f {
                exceed += 1;
            } else {
                ties += 1;
            }
        }
    }
    verdict(
        exceed == 0,
        format!("{exceed} exceptions in exact arithmetic ({ties} floating-point ties resolved exactly)"),
    )
}

// ---------------------------------------------------------------------------
// Solver

/// Periodic 1-D advection `ẋ = c` with `l = sin(πx)` on `[-1, 1)`; returns
/// the max error against `min_{s ∈ [0, τ]} l(x + c s)`.
fn advection_error(dx: f64) -> f64 {
    let n = (2.0 / dx).round() as usize;
    let g = Grid::new(&[-1.0], &[1.0], &[n], &[true]).unwrap();
    let pi = std::f64::consts::PI;
    let l = ScalarField::from_fn(&g, |x| (pi * x[0]).sin());
    let c = 0.8;
    let tau = 0.5;
    let controls = ControlBox::symmetric(&[1.0]).unwrap();
    let nominal = vec![AffineEval::new(vec![c], vec![0.0], 1); g.len()];
    let bounds = vec![UncertaintyBoundsEval::zeros(1, 1); g.len()];
    let table = ModelTable::from_parts(g.clone(), controls, nominal, bounds).unwrap();
    let out = solve(
        &l,
        &table,
        &SolveConfig {
            horizon: tau,
            ..SolveConfig::default()
        },
    )
    .unwrap();
    let exact = |x: f64| {
        // sin(π(x + c s)) over s ∈ [0, τ]: endpoints, or -1 if a trough lies inside.
        let (a, b) = (x, x + c * tau);
        let trough = ((a + 0.5) / 2.0).ceil() * 2.0 - 0.5;
        if trough <= b {
            -1.0
        } else {
            (pi * a).sin().min((pi * b).sin())
        }
    };
    (0..g.len())
        .map(|k| (out.value.field.values()[k] - exact(g.coord(k)[0])).abs())
        .fold(0.0, f64::max)
}

fn criterion_3() -> Verdict {
    let slope = std::f64::consts::PI;
    let e1 = advection_error(0.01);
    let e2 = advection_error(0.005);
    let ratio = e1 / e2;
    verdict(
        e1 <= 3.0 * 0.01 * slope && (1.5..=2.7).contains(&ratio),
        format!("err(0.01) = {e1:.3e} (limit {:.3e}), err(0.005) = {e2:.3e}, ratio {ratio:.2}", 3.0 * 0.01 * slope),
    )
}

// ---------------------------------------------------------------------------
// Pendulum

fn criterion_4(study: &StudyOutcome) -> Verdict {
    let setup = pendulum();
    let grid = setup.grid().unwrap();
    let set = safe_set(&study.ground_truth.value.field, 0.0);
    let max_angle = (0..grid.len())
        .filter(|k| set.mask[*k])
        .map(|k| grid.coord(k)[0].abs())
        .fold(0.0, f64::max);
    let fine = PendulumSetup {
        grid_counts: vec![201, 201],
        ..setup.clone()
    };
    let fine_vf = safe_set(&experiments::pendulum_ground_truth(&fine).unwrap().value.field, 0.0).volume_fraction;
    let change = (fine_vf - set.volume_fraction).abs() / set.volume_fraction;
    verdict(
        set.count() > 0 && max_angle < setup.failure_angle && change < 0.02,
        format!(
            "vf {:.4} at 101², {fine_vf:.4} at 201² (change {:.2}%), max |θ| in set {max_angle:.4} < {:.4}",
            set.volume_fraction,
            100.0 * change,
            setup.failure_angle
        ),
    )
}

fn report(study: &StudyOutcome, seed: u64, m: Method) -> &experiments::SafeSetReport {
    study.reports.iter().find(|r| r.seed == seed && r.method == m).unwrap()
}

fn criterion_5(study: &StudyOutcome, seeds: &[u64]) -> Verdict {
    let ours: Vec<f64> = seeds.iter().map(|s| report(study, *s, Method::Ours).violation).collect();
    let b1: Vec<f64> = seeds.iter().map(|s| report(study, *s, Method::MeanDynamics).violation).collect();
    let positive = b1.iter().filter(|v| **v > 0.0).count();
    verdict(
        ours.iter().all(|v| *v == 0.0) && positive >= 2,
        format!("ours violation {ours:.4?}, mean-dynamics violation {b1:.4?} ({positive}/{} positive)", seeds.len()),
    )
}

fn criterion_6(study: &StudyOutcome, seeds: &[u64]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for &s in seeds {
        let b2 = report(study, s, Method::Conformal);
        let b3 = report(study, s, Method::PartialGame);
        let ours = report(study, s, Method::Ours);
        ok &= b2.recovered <= b3.recovered && b3.recovered <= ours.recovered && b2.volume_fraction < 0.05;
        parts.push(format!(
            "seed {s}: {:.3} ≤ {:.3} ≤ {:.3}, conformal vf {:.3}",
            b2.recovered, b3.recovered, ours.recovered, b2.volume_fraction
        ));
    }
    verdict(ok, parts.join("; "))
}

fn criterion_7(study: &StudyOutcome) -> Verdict {
    let setup = pendulum();
    let grid = setup.grid().unwrap();
    let (learned, _) = &study.per_seed[0];
    let sweep = multiplier_sweep(&setup, learned, &[0.0, 1.0, 3.0, 5.0]).unwrap();
    let ok = sweep.windows(2).all(|w| nested(&grid, &w[1].1, &w[0].1));
    let vfs: Vec<String> = sweep.iter().map(|(m, s)| format!("{m}: {:.4}", s.volume_fraction)).collect();
    verdict(ok, format!("volume fractions {}", vfs.join(", ")))
}

fn criterion_8(study: &StudyOutcome) -> Verdict {
    let setup = pendulum();
    let grid = setup.grid().unwrap();
    let truth = setup.truth().unwrap();
    let (mut ours_ok, mut ours_n, mut b1_fail, mut b1_n) = (true, 0, 0, 0);
    let mut parts = Vec::new();
    for (learned, solves) in &study.per_seed {
        let c_ours = pendulum_controller(&setup, learned, solves.get(Method::Ours).unwrap(), Method::Ours).unwrap();
        let c_b1 = pendulum_controller(&setup, learned, solves.get(Method::MeanDynamics).unwrap(), Method::MeanDynamics)
            .unwrap();
        let margin = c_ours.default_epsilon();
        let inside = sample_states(&grid, 200, learned.seed, |x| c_ours.value(0.0, x).unwrap() >= margin);
        let r_ours = invariance_trials(&truth, &c_ours, &inside, setup.horizon, 0.01, |x| setup.is_failure(x));
        let outside = sample_states(&grid, 200, learned.seed + 99, |x| {
            c_b1.value(0.0, x).unwrap() > 0.0 && c_ours.value(0.0, x).unwrap() <= 0.0
        });
        let r_b1 = invariance_trials(&truth, &c_b1, &outside, setup.horizon, 0.01, |x| setup.is_failure(x));
        ours_ok &= r_ours.trials >= 100 && r_ours.failure_rate() <= 0.05;
        ours_n += r_ours.trials;
        b1_fail += r_b1.failures;
        b1_n += r_b1.trials;
        parts.push(format!(
            "seed {}: ours {}/{} safe, mean-dynamics {}/{} failed",
            learned.seed,
            r_ours.trials - r_ours.failures,
            r_ours.trials,
            r_b1.failures,
            r_b1.trials
        ));
    }
    let b1_rate = b1_fail as f64 / b1_n as f64;
    verdict(
        ours_ok && b1_n >= 100 && b1_rate >= 0.2,
        format!("{}; pooled mean-dynamics failure rate {:.1}% over {b1_n} ({ours_n} ours trials)", parts.join("; "), 100.0 * b1_rate),
    )
}

fn criterion_9() -> Verdict {
    let setup = DubinsSetup {
        ensemble: TrainConfig {
            epochs: 200,
            ..test_ensemble()
        },
        ..DubinsSetup::default()
    };
    match filtering_demo(&setup, 0) {
        Ok(d) => verdict(
            d.analytic.exited && !d.learned.exited && d.learned.min_margin > d.analytic.min_margin,
            format!(
                "analytic exited {} (t = {:?}, min margin {:.4}); learned exited {} (min margin {:.4})",
                d.analytic.exited,
                d.analytic.trajectory.first_failure,
                d.analytic.min_margin,
                d.learned.exited,
                d.learned.min_margin
            ),
        ),
        Err(e) => verdict(false, format!("demo failed: {e}")),
    }
}

fn criterion_10() -> Verdict {
    let setup = pendulum();
    let learned = learn_pendulum(&setup, 1000, 0).unwrap();
    let q = ensemble_quality(&setup, &learned, 0).unwrap();
    verdict(
        q.r_squared.iter().all(|r| *r > 0.95) && q.coverage >= 0.92,
        format!("R² {:.4?}, conformal coverage {:.3} at nominal {}", q.r_squared, q.coverage, setup.coverage),
    )
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored,
    // except `--list`, which the test runner uses for discovery.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // `ACCEPTANCE_ONLY=2,9` runs a subset.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if !wanted(n) {
            return;
        }
        let t = Instant::now();
        let v = f();
        println!(
            "criterion {n:>2} [{}] {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        results.push((n, name, v));
    };

    let gs = games();
    record(1, "closed-form game vs oracle", &mut || criterion_1(&gs));
    record(2, "partial-game dominance", &mut || criterion_2(&gs));
    record(3, "solver verification", &mut criterion_3);

    let seeds = [0u64, 1, 2];
    if (4..=8).any(wanted) {
        let study = pendulum_study(&pendulum(), 300, &seeds).expect("pendulum study");
        record(4, "ground-truth pendulum", &mut || criterion_4(&study));
        record(5, "containment", &mut || criterion_5(&study, &seeds));
        record(6, "conservativeness ordering", &mut || criterion_6(&study, &seeds));
        record(7, "monotonicity in alpha = gamma", &mut || criterion_7(&study));
        record(8, "closed-loop invariance", &mut || criterion_8(&study));
    }
    record(9, "filtering demo", &mut criterion_9);
    record(10, "ensemble quality gate", &mut criterion_10);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

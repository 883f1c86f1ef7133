//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p pinning-core --test acceptance`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pinning_core::critical::{lambda_cr1, richardson};
use pinning_core::dual::{
    classify_regions, default_band_tol, recover_vorticity, solve_dual, verify_duality, DualMode, DualOptions,
    DualSolution, RegionKind,
};
use pinning_core::grid::{DomainShape, GridDomain, ScalarField};
use pinning_core::micro::{
    build_micro, gamma_convergence_report, micro_energy, minimize_degrees, recovery_sequence, tile_blocks,
    GammaOptions, MinimizeOptions,
};
use pinning_core::multiplicity::{cell_minimum_oracle, legendre_numeric, phi, phi_star, PinningStrength};

struct Outcome {
    id: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn run(id: &'static str, budget: Option<Duration>, check: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (mut passed, mut detail) = check();
    let elapsed = start.elapsed();
    if let Some(limit) = budget {
        if elapsed > limit {
            passed = false;
            detail.push_str(&format!("; over budget {:.0?}", limit));
        }
    }
    let outcome = Outcome {
        id,
        passed,
        detail,
        elapsed,
    };
    report(format_args!(
        "{} criterion {}: {} [{:.1?}]",
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.id,
        outcome.detail,
        outcome.elapsed
    ));
    outcome
}

/// Writes past the test harness capture so the lines show up in every run.
fn report(line: std::fmt::Arguments) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

/// Modified Bessel function `I₀` by its power series.
fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..60 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

fn disk(n: usize) -> Arc<GridDomain> {
    GridDomain::build(&DomainShape::UnitDisk, n).unwrap()
}

fn square(n: usize) -> Arc<GridDomain> {
    GridDomain::build(&DomainShape::UnitSquare, n).unwrap()
}

fn full(domain: &Arc<GridDomain>, lambda: f64, tol: f64) -> DualSolution {
    solve_dual(domain, lambda, 1.0, DualMode::FullPhiStar, &DualOptions::with_tol(tol)).unwrap()
}

fn max_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.domain()
        .interior()
        .iter()
        .map(|&i| (a.at(i) - b.at(i)).abs())
        .fold(0.0, f64::max)
}

fn cell_problem() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let d: f64 = rng.gen_range(-6.0..=6.0);
        let (oracle, _) = cell_minimum_oracle(d, 8).unwrap();
        worst = worst.max((phi(d).unwrap() - oracle).abs());
    }
    (worst <= 1e-9, format!("max |Φ − cell minimum| = {worst:.2e} over 10⁴ samples"))
}

fn conjugate() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut unreliable = 0;
    for &g in &[0.5, 1.0, 2.0] {
        let gamma = PinningStrength::new(g).unwrap();
        for _ in 0..334 {
            let f: f64 = rng.gen_range(-5.0 * g..=5.0 * g);
            let est = legendre_numeric(f, gamma, 14.0 * PI, 2.0 * PI / 8.0).unwrap();
            if !est.reliable {
                unreliable += 1;
            }
            worst = worst.max((phi_star(f, gamma).unwrap() - est.value).abs());
        }
    }
    (
        worst <= 1e-9 && unreliable == 0,
        format!("max |Φ* − sampled transform| = {worst:.2e}, edge maxima = {unreliable}"),
    )
}

fn zero_vorticity() -> (bool, String) {
    let domain = disk(129);
    let lambda = 0.8 * lambda_cr1(&domain, 1.0).unwrap();
    let sol = full(&domain, lambda, 1e-9);
    let i0 = bessel_i0(1.0);
    let err = domain
        .interior()
        .iter()
        .map(|&i| {
            let (x, y) = domain.coords(i);
            let exact = lambda * (bessel_i0((x * x + y * y).sqrt()) / i0 - 1.0);
            (sol.field().at(i) - exact).abs()
        })
        .fold(0.0, f64::max);
    let d = recover_vorticity(&sol).unwrap().d.max_abs();
    (
        err <= 1e-3 && d <= 5e-3,
        format!("λ = {lambda:.4}, ‖f̄ − λf₁‖∞ = {err:.2e}, ‖D‖∞ = {d:.2e}"),
    )
}

fn critical_value() -> (bool, String) {
    let oracle = 1.0 / (2.0 * (1.0 - 1.0 / bessel_i0(1.0)));
    let coarse = lambda_cr1(&disk(129), 1.0).unwrap();
    let fine = lambda_cr1(&disk(257), 1.0).unwrap();
    let extrapolated = richardson(coarse, fine, 2.0);
    let rel = (extrapolated - oracle).abs() / oracle;
    (
        rel <= 5e-3,
        format!("λ_cr1 = {extrapolated:.5} (n=129: {coarse:.5}, n=257: {fine:.5}), oracle {oracle:.5}, rel err {rel:.1e}"),
    )
}

/// Disk, γ = 1, λ = 4, n = 129: the fractional-coexistence minimizer.
fn coexistence_solution() -> DualSolution {
    full(&disk(129), 4.0, 1e-8)
}

fn coexistence(sol: &DualSolution) -> (bool, String) {
    let report = classify_regions(sol, default_band_tol(sol.gamma, sol.tol)).unwrap();
    let band = report
        .regions
        .iter()
        .find(|r| r.kind == RegionKind::Band && r.level == 1)
        .and_then(|r| r.d.map(|s| (r.area, s.mean)));
    let expected = (4.0 - 0.5) / (2.0 * PI);
    let obstacle = solve_dual(
        sol.domain(),
        4.0,
        1.0,
        DualMode::Obstacle { bound: 0.5, levels: 0 },
        &DualOptions::with_tol(sol.tol),
    )
    .unwrap();
    let gap = max_diff(sol.field(), obstacle.field());
    match band {
        Some((area, mean)) => {
            let rel = (mean - expected).abs() / expected;
            (
                area > 0.0 && rel <= 0.05 && gap <= 2.0 * sol.tol,
                format!(
                    "band area {area:.4}, mean D {mean:.5} vs {expected:.5} ({:.1}%), ‖f_full − f_obstacle‖∞ = {gap:.1e}",
                    100.0 * rel
                ),
            )
        }
        None => (false, "no coincidence band".into()),
    }
}

fn monotone_nesting() -> (bool, String) {
    let domain = disk(129);
    let tol = 1e-8;
    let mut prev: Option<ScalarField> = None;
    let (mut worst_rise, mut nest_failures, mut deepest) = (0.0f64, 0usize, 0usize);
    for step in 1..=40 {
        let lambda = 0.5 * step as f64;
        let sol = full(&domain, lambda, tol);
        if let Some(p) = &prev {
            for &i in domain.interior() {
                worst_rise = worst_rise.max(sol.field().at(i) - p.at(i));
            }
        }
        let report = classify_regions(&sol, default_band_tol(1.0, tol)).unwrap();
        deepest = deepest.max(report.levels);
        for pair in report.omega_masks.windows(2) {
            if domain.interior().iter().any(|&i| pair[1][i] && !pair[0][i]) {
                nest_failures += 1;
            }
        }
        prev = Some(sol.field().clone());
    }
    (
        worst_rise <= 2.0 * tol && nest_failures == 0,
        format!("max pointwise rise {worst_rise:.1e}, nesting violations {nest_failures}, deepest level {deepest}"),
    )
}

fn duality_consistency() -> (bool, String) {
    // the discrete pair is exactly dual, so the mismatch sits at rounding level;
    // "decreasing" is judged above that floor
    const FLOOR: f64 = 1e-10;
    let mut ok = true;
    let mut parts = Vec::new();
    for lambda in [3.0, 7.0, 12.0] {
        let m: Vec<f64> = [129, 257]
            .iter()
            .map(|&n| verify_duality(&full(&disk(n), lambda, 1e-8), 0.02).unwrap().mismatch)
            .collect();
        ok &= m[0] <= 0.02 && (m[1] < m[0] || m[1].max(m[0]) <= FLOOR);
        parts.push(format!("λ={lambda}: {:.1e} → {:.1e}", m[0], m[1]));
    }
    (ok, parts.join(", "))
}

fn integer_exactness() -> (bool, String) {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in [21, 41, 81] {
        let domain = square(n);
        for lambda in [0.0, 6.0, 12.0] {
            let problem = build_micro(&domain, 0.2, lambda, 1.0).unwrap();
            assert_eq!(problem.hole_count(), 9);
            let descent = minimize_degrees(&problem, &MinimizeOptions::default()).unwrap();
            let exact = minimize_degrees(&problem, &MinimizeOptions::exact(2, 9)).unwrap();
            worst = worst.max((descent.model_energy - exact.model_energy).abs() / exact.model_energy.abs().max(1.0));
            cases += 1;
        }
    }
    (worst <= 1e-12, format!("{cases} instances, max relative difference {worst:.1e}"))
}

fn gamma_trend(lambda: f64, n: usize) -> (bool, String) {
    let report = gamma_convergence_report(
        &square(n),
        lambda,
        1.0,
        &[1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
        &GammaOptions::default(),
    )
    .unwrap();
    let gaps: Vec<f64> = report.rows.iter().map(|r| r.gap.abs()).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    let last = *gaps.last().unwrap();
    let final_ok = last <= 0.05 * report.limit_energy.abs();
    let spread = report.degree_bound_spread();
    let bounds: Vec<String> = report.rows.iter().map(|r| format!("{:.4}", r.degree_bound)).collect();
    (
        monotone && final_ok && spread <= 0.2,
        format!(
            "λ={lambda}, n={n}: E₀ = {:.5}, gaps {:?}, degree bounds [{}] (spread {:.1}%)",
            report.limit_energy,
            gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>(),
            bounds.join(", "),
            100.0 * spread
        ),
    )
}

fn recovery_bound(sol: &DualSolution) -> (bool, String) {
    let duality = verify_duality(sol, 1.0).unwrap();
    let target = duality.vorticity.clone().unwrap();
    let problem = build_micro(sol.domain(), 1.0 / 16.0, 4.0, 1.0).unwrap();
    let mut ok = true;
    let mut prev_excess = f64::INFINITY;
    let mut parts = Vec::new();
    for m in [1usize, 2, 4] {
        let rec = recovery_sequence(&problem, &target, m).unwrap();
        let excess = micro_energy(&problem, &rec.degrees).unwrap().total - duality.e0;
        let size = ((2 * m + 1) * (2 * m + 1)) as f64;
        let mut worst = 0.0f64;
        for block in tile_blocks(&problem, m).unwrap() {
            let (mut sum, mut count) = (0.0, 0);
            for &j in &block.holes {
                for &node in &problem.holes()[j].nodes {
                    sum += target.at(node);
                    count += 1;
                }
            }
            let mean = sum / count as f64;
            let d = (mean + 1e-12).floor();
            let alpha = d + 1.0 - mean;
            let low = block.holes.iter().filter(|&&j| rec.degrees.d[j] as f64 == d).count();
            let high = block.holes.iter().filter(|&&j| rec.degrees.d[j] as f64 == d + 1.0).count();
            ok &= low + high == block.holes.len();
            worst = worst.max((low as f64 / size - alpha).abs());
        }
        ok &= excess <= prev_excess + 1e-12 && worst <= 1.0 / size;
        prev_excess = excess;
        parts.push(format!("M={m}: excess {excess:.4}, max |μ_d − α| {worst:.4} ≤ {:.4}", 1.0 / size));
    }
    (ok, parts.join("; "))
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let mut outcomes = vec![
        run("1", Some(secs(5)), cell_problem),
        run("2", Some(secs(5)), conjugate),
        run("3", Some(secs(30)), zero_vorticity),
        run("4", Some(secs(60)), critical_value),
    ];
    let sol = coexistence_solution();
    outcomes.push(run("5", None, || coexistence(&sol)));
    outcomes.push(run("6", Some(secs(600)), monotone_nesting));
    outcomes.push(run("7", None, duality_consistency));
    outcomes.push(run("8", Some(secs(60)), integer_exactness));
    outcomes.push(run("9", Some(secs(900)), || gamma_trend(6.0, 257)));
    outcomes.push(run("9 (λ = 12 companion)", Some(secs(900)), || gamma_trend(12.0, 129)));
    outcomes.push(run("10", None, || recovery_bound(&sol)));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    report(format_args!("acceptance: {} of {} passed", outcomes.len() - failed.len(), outcomes.len()));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

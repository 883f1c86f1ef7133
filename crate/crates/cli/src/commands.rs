use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use pinning_core::critical::{critical_ladder, phase_diagram};
use pinning_core::dual::{
    classify_regions, default_band_tol, recover_vorticity, solve_dual, verify_duality,
};
use pinning_core::grid::ScalarField;
use pinning_core::io::{
    degrees_to_csv, field_to_csv, gamma_to_csv, heatmap_ppm, phase_to_csv, read_field_csv, write_atomic,
    write_json,
};
use pinning_core::micro::{
    build_micro, empirical_partition, gamma_convergence_report, micro_energy, minimize_with_model,
    recovery_sequence, DegreeAssignment, GammaOptions, InteractionModel, MicroProblem, MinimizeMode,
    MinimizeOptions,
};
use pinning_core::multiplicity::{
    cell_minimum_oracle, legendre_numeric, phi, phi_star, phi_star_mollified, PinningStrength,
};

use crate::config::RunConfig;
use crate::Failure;

type Outcome = Result<(), Failure>;

fn write(dir: &Path, name: &str, text: &str) -> Outcome {
    Ok(write_atomic(&dir.join(name), text.as_bytes())?)
}

fn write_field(dir: &Path, stem: &str, field: &ScalarField) -> Outcome {
    write(dir, &format!("{stem}.csv"), &field_to_csv(field))?;
    write(dir, &format!("{stem}.ppm"), &heatmap_ppm(field))
}

fn save_config(dir: &Path, cfg: &RunConfig) -> Outcome {
    Ok(write_json(&dir.join("config.json"), cfg)?)
}

pub fn dual(cfg: &RunConfig) -> Outcome {
    let domain = cfg.domain()?;
    let mode = cfg.dual_mode()?;
    let out = cfg.out_dir()?;
    save_config(&out, cfg)?;
    let sol = solve_dual(&domain, cfg.lambda(), cfg.gamma(), mode, &cfg.dual_options())?;
    info!(
        "dual solve: {} sweeps, converged = {}, objective = {}",
        sol.iterations, sol.converged, sol.objective
    );
    write_field(&out, "f", sol.field())?;
    write_json(&out.join("solution.json"), &sol.sidecar())?;
    if !sol.converged {
        return Err(Failure::convergence(format!(
            "no convergence after {} sweeps (last update {:e})",
            sol.iterations, sol.final_update
        )));
    }
    let vort = recover_vorticity(&sol)?;
    write_field(&out, "D", &vort.d)?;
    let band_tol = cfg.band_tol.unwrap_or_else(|| default_band_tol(cfg.gamma(), sol.tol));
    let regions = classify_regions(&sol, band_tol)?;
    let labels = regions.region_labels(&domain);
    let label_field = ScalarField::new(
        domain.clone(),
        labels.iter().map(|&l| if l < 0 { f64::NAN } else { l as f64 }).collect(),
    )?;
    write(&out, "regions.ppm", &heatmap_ppm(&label_field))?;
    let duality = verify_duality(&sol, cfg.duality_tol.unwrap_or(1e-6))?;
    write_json(
        &out.join("regions.json"),
        &serde_json::json!({
            "solution": sol.sidecar(),
            "regions": regions,
            "duality": duality,
        }),
    )?;
    if !duality.passed {
        if let Some(h) = &duality.hbar {
            write_field(&out, "hbar", h)?;
        }
        return Err(Failure::property(format!(
            "duality mismatch {:e} exceeds {:e}",
            duality.mismatch, duality.tol
        )));
    }
    Ok(())
}

pub fn critical(cfg: &RunConfig) -> Outcome {
    let domain = cfg.domain()?;
    let out = cfg.out_dir()?;
    save_config(&out, cfg)?;
    let levels = cfg.levels.unwrap_or(1) as usize;
    if levels == 0 {
        return Err(Failure::validation("levels must be at least 1"));
    }
    let opts = cfg.dual_options();
    let ladder = critical_ladder(&domain, cfg.gamma(), levels, cfg.bisect_tol.unwrap_or(1e-4), &opts)?;
    info!("critical ladder: {:?}", ladder.lambdas);
    write_json(&out.join("ladder.json"), &ladder)?;

    let top = ladder
        .lambdas
        .iter()
        .chain(&ladder.thresholds)
        .copied()
        .fold(0.0, f64::max);
    let lambda_max = cfg.lambda_max.unwrap_or(1.1 * top);
    let steps = cfg.lambda_steps.unwrap_or(24).max(1);
    let grid: Vec<f64> = (1..=steps).map(|i| lambda_max * i as f64 / steps as f64).collect();
    let rows = phase_diagram(&domain, cfg.gamma(), &grid, &opts, cfg.threads())?;
    write(&out, "phase.csv", &phase_to_csv(&rows))?;

    if !ladder.is_strictly_increasing() {
        return Err(Failure::property(format!(
            "critical ladder is not strictly increasing: {:?}",
            ladder.lambdas
        )));
    }
    if rows.windows(2).any(|w| w[1].levels < w[0].levels) {
        return Err(Failure::property("deepest level J(λ) decreases along the phase diagram"));
    }
    if let Some(bad) = rows.iter().find(|r| !r.valid) {
        return Err(Failure::convergence(format!("phase row at λ = {} did not converge", bad.lambda)));
    }
    Ok(())
}

#[derive(Serialize)]
struct MicroSummary {
    epsilon: f64,
    lambda: f64,
    gamma: f64,
    holes: usize,
    rho: f64,
    mode: MinimizeMode,
    energy: pinning_core::micro::MicroEnergyBreakdown,
    model_energy: f64,
    degree_bound: f64,
    steps: u64,
    descent_energy: Option<f64>,
    descent_matches_exact: Option<bool>,
}

fn write_partition(out: &Path, problem: &MicroProblem, degrees: &DegreeAssignment, m: usize) -> Outcome {
    let part = empirical_partition(problem, degrees, m)?;
    for (k, field) in &part.mu {
        write(out, &format!("mu_{k}.csv"), &field_to_csv(field))?;
    }
    write_field(out, "D_eps", &part.d_eps)
}

pub fn micro(cfg: &RunConfig) -> Outcome {
    let domain = cfg.domain()?;
    let out = cfg.out_dir()?;
    save_config(&out, cfg)?;
    let problem = build_micro(&domain, cfg.epsilon.unwrap_or(0.125), cfg.lambda(), cfg.gamma())?;
    let m = cfg.block_m.unwrap_or(1);
    info!("lattice with {} holes", problem.hole_count());

    if let Some(target_path) = &cfg.recover {
        let target = read_field_csv(&domain, target_path)?;
        let rec = recovery_sequence(&problem, &target, m)?;
        let energy = micro_energy(&problem, &rec.degrees)?;
        write(&out, "degrees.csv", &degrees_to_csv(&problem, &rec.degrees))?;
        write_partition(&out, &problem, &rec.degrees, m)?;
        write_json(
            &out.join("recovery.json"),
            &serde_json::json!({
                "epsilon": problem.epsilon(),
                "M": m,
                "holes": problem.hole_count(),
                "energy": energy,
                "blocks": rec.blocks,
            }),
        )?;
        return Ok(());
    }

    let exact = cfg.exact.unwrap_or(false);
    let opts = MinimizeOptions {
        mode: if exact {
            MinimizeMode::Exact {
                d_max: cfg.dmax.unwrap_or(2),
                max_holes: cfg.max_holes.unwrap_or(9),
            }
        } else {
            MinimizeMode::Descent
        },
        threads: cfg.threads(),
    };
    let mut model = InteractionModel::new(&problem)?;
    let result = minimize_with_model(&problem, &mut model, &opts)?;
    let (descent_energy, matches) = if exact {
        let descent = minimize_with_model(&problem, &mut model, &MinimizeOptions::default())?;
        let scale = result.model_energy.abs().max(1e-12);
        let ok = (descent.model_energy - result.model_energy).abs() <= 1e-9 * scale;
        info!(
            "exact energy {} vs descent energy {} (match = {ok})",
            result.model_energy, descent.model_energy
        );
        (Some(descent.model_energy), Some(ok))
    } else {
        (None, None)
    };
    write(&out, "degrees.csv", &degrees_to_csv(&problem, &result.degrees))?;
    write_partition(&out, &problem, &result.degrees, m)?;
    write_json(
        &out.join("micro.json"),
        &MicroSummary {
            epsilon: problem.epsilon(),
            lambda: problem.lambda(),
            gamma: problem.gamma(),
            holes: problem.hole_count(),
            rho: problem.rho(),
            mode: opts.mode,
            energy: result.energy,
            model_energy: result.model_energy,
            degree_bound: result.degrees.scaled_sum_squares(problem.epsilon()),
            steps: result.steps,
            descent_energy,
            descent_matches_exact: matches,
        },
    )?;
    if matches == Some(false) {
        return Err(Failure::property("descent energy differs from the exhaustive optimum"));
    }
    Ok(())
}

pub fn gamma_check(cfg: &RunConfig) -> Outcome {
    let domain = cfg.domain()?;
    let out = cfg.out_dir()?;
    save_config(&out, cfg)?;
    let epsilons = cfg.epsilons.clone().unwrap_or_else(|| vec![0.125, 0.0625, 0.03125]);
    let opts = GammaOptions {
        dual: cfg.dual_options(),
        minimize: MinimizeOptions {
            mode: MinimizeMode::Descent,
            threads: cfg.threads(),
        },
        block_m: cfg.block_m.unwrap_or(1),
    };
    let report = gamma_convergence_report(&domain, cfg.lambda(), cfg.gamma(), &epsilons, &opts)?;
    write(&out, "gamma.csv", &gamma_to_csv(&report))?;
    write_json(&out.join("gamma.json"), &report)?;
    let floor = 1e-6 * report.limit_energy.abs().max(1.0);
    if !report.gaps_decrease(floor) {
        return Err(Failure::property("energy gap does not decrease along the ε sweep"));
    }
    Ok(())
}

#[derive(Serialize)]
struct SuiteResult {
    name: &'static str,
    samples: usize,
    max_error: f64,
    tolerance: f64,
    passed: bool,
}

pub fn oracle_check(cfg: &RunConfig) -> Outcome {
    let out = cfg.out_dir()?;
    save_config(&out, cfg)?;
    let samples = cfg.samples.unwrap_or(10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let mut suites = Vec::new();

    let mut err = 0.0f64;
    for _ in 0..samples {
        let d: f64 = rng.gen_range(-6.0..=6.0);
        let (value, _) = cell_minimum_oracle(d, 8)?;
        err = err.max((value - phi(d)?).abs());
    }
    suites.push(SuiteResult {
        name: "cell_problem",
        samples,
        max_error: err,
        tolerance: 1e-9,
        passed: err <= 1e-9,
    });

    let mut err = 0.0f64;
    let per_gamma = samples.div_ceil(10).max(1);
    for g in [0.5, 1.0, 2.0] {
        let gamma = PinningStrength::new(g)?;
        for _ in 0..per_gamma {
            let f: f64 = rng.gen_range(-5.0 * g..=5.0 * g);
            let est = legendre_numeric(f, gamma, 14.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI / 8.0)?;
            let e = if est.reliable { (est.value - phi_star(f, gamma)?).abs() } else { f64::INFINITY };
            err = err.max(e);
        }
    }
    suites.push(SuiteResult {
        name: "legendre_conjugate",
        samples: 3 * per_gamma,
        max_error: err,
        tolerance: 1e-9,
        passed: err <= 1e-9,
    });

    let mut worst = 0.0f64;
    let gamma = PinningStrength::new(cfg.gamma())?;
    for _ in 0..per_gamma {
        let f: f64 = rng.gen_range(-5.0..=5.0);
        let delta: f64 = rng.gen_range(0.01..=0.5);
        let below = phi_star(f, gamma)? - phi_star_mollified(f, gamma, delta)?;
        worst = worst.max(below);
    }
    suites.push(SuiteResult {
        name: "mollified_dominates",
        samples: per_gamma,
        max_error: worst.max(0.0),
        tolerance: 1e-10,
        passed: worst <= 1e-10,
    });

    let passed = suites.iter().all(|s| s.passed);
    write_json(
        &out.join("oracle.json"),
        &serde_json::json!({ "seed": cfg.seed(), "passed": passed, "suites": suites }),
    )?;
    if !passed {
        let names: Vec<_> = suites.iter().filter(|s| !s.passed).map(|s| s.name).collect();
        return Err(Failure::property(format!("oracle suites failed: {names:?}")));
    }
    Ok(())
}

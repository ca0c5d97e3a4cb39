//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! with the measured value and the pinned threshold before asserting.
//!
//! The cutoff-ladder criteria share a single ladder run (N = 8, 16, 32, 64;
//! two species sigma = +-1, alpha = 2, lambda = 1, beta = 0.3) built once per
//! test process. Run with `--nocapture` to see every line.

use once_cell::sync::Lazy;
use vlasim::config::{CutoffConfig, NumericsConfig, RunConfig, SpeciesParams};
use vlasim::energy::{field_energy_quadrature, kinetic_energy, potential_double_sum, verify_identity};
use vlasim::harness::{ladder_report, run_ladder, LadderReport, LadderRun, LadderSpec};
use vlasim::initial_data::{grid_ensemble, Ensemble, Particle};
use vlasim::integrator::{fixed_steps, NoHooks, SimState};
use vlasim::vec3::Vec3;

fn check(criterion: &str, ok: bool, detail: &str) {
    println!(
        "[{}] {}: {}",
        criterion,
        if ok { "PASS" } else { "FAIL" },
        detail
    );
    assert!(ok, "[{criterion}] {detail}");
}

fn base_numerics() -> NumericsConfig {
    NumericsConfig {
        dx: 0.95,
        dv: 1.7,
        softening: 0.475,
        dt_max: 1e-2,
        t_final: 1.0,
        weight_floor: 1e-8,
        quad_radius_factor: 4.0,
        quad_spacing: 0.95,
        output_cadence: 0.1,
        max_velocity_floor: 1.0,
        max_particles: 5_000_000,
        max_quad_cells: 2_000_000,
    }
}

/// The acceptance configuration: two species sigma = +1 / -1 with the same
/// decay exponents but different amplitudes (identical amplitudes would make
/// the signed density vanish identically and the dynamics degenerate).
fn acceptance_config() -> RunConfig {
    RunConfig {
        species: vec![
            SpeciesParams {
                id: 1,
                sigma: 1.0,
                c1: 0.5,
                lambda: 1.0,
                alpha: 2.0,
            },
            SpeciesParams {
                id: 2,
                sigma: -1.0,
                c1: 0.25,
                lambda: 1.0,
                alpha: 2.0,
            },
        ],
        cutoff: CutoffConfig {
            n_cut: 16.0,
            beta: 0.3,
        },
        numerics: base_numerics(),
        ladder: Some(vec![8.0, 16.0, 32.0, 64.0]),
        checkpoint_every_steps: None,
    }
}

struct LadderFixture {
    runs: Vec<LadderRun>,
    report: LadderReport,
    elapsed_seconds: f64,
}

static LADDER: Lazy<LadderFixture> = Lazy::new(|| {
    let started = std::time::Instant::now();
    let cfg = acceptance_config();
    let spec = LadderSpec::new(cfg, vec![8.0, 16.0, 32.0, 64.0], None);
    let runs = run_ladder(&spec).expect("acceptance ladder must run");
    let report = ladder_report(&runs).expect("ladder report must assemble");
    LadderFixture {
        runs,
        report,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    }
});

/// Midpoint-gridded uniform ball (charge q, radius r) at rest.
fn gridded_ball(q: f64, r: f64, h: f64) -> Ensemble {
    let rho = q / (4.0 / 3.0 * std::f64::consts::PI * r * r * r);
    let lo = (-r / h - 0.5).ceil() as i64;
    let hi = (r / h - 0.5).floor() as i64;
    let mut particles = Vec::new();
    for i in lo..=hi {
        for j in lo..=hi {
            for k in lo..=hi {
                let x = Vec3::new(
                    (i as f64 + 0.5) * h,
                    (j as f64 + 0.5) * h,
                    (k as f64 + 0.5) * h,
                );
                if x.norm_sq() <= r * r {
                    particles.push(Particle {
                        species: 1,
                        x,
                        v: Vec3::ZERO,
                        x0: x,
                        v0: Vec3::ZERO,
                        weight: rho * h * h * h,
                    });
                }
            }
        }
    }
    Ensemble::from_parts(particles, &[(1, 1.0)], h, 1.0)
}

#[test]
fn criterion_01_field_energy_identity_uniform_ball() {
    // 32^3-cell gridding of the unit ball, softening R/64. Oracle: the
    // closed-form self-energy (3/5) Q^2/R and int |E|^2 = (24 pi/5) Q^2/R,
    // i.e. both estimators must return 3/5.
    let (q, r) = (1.0, 1.0);
    let ball = gridded_ball(q, r, r / 16.0);
    let mut num = base_numerics();
    num.softening = r / 64.0;
    num.quad_spacing = r / 8.0;
    let cut = CutoffConfig {
        n_cut: 1.0,
        beta: 1.0,
    };
    let expect = 0.6 * q * q / r;

    let pair = potential_double_sum(&ball, num.softening);
    let quad = field_energy_quadrature(&ball, &num, &cut, 0.0, 0.0).unwrap();
    let id = verify_identity(&ball, &num, &cut, 0.0, 0.0).unwrap();

    let pair_rel = (pair - expect).abs() / expect;
    let quad_rel = (quad.total - expect).abs() / expect;
    check(
        "criterion 1a",
        pair_rel < 0.02,
        &format!("potential_double_sum {pair:.6} vs 3/5, rel {pair_rel:.4} < 0.02"),
    );
    check(
        "criterion 1b",
        quad_rel < 0.02,
        &format!(
            "field_energy_quadrature {:.6} vs 3/5, rel {quad_rel:.4} < 0.02",
            quad.total
        ),
    );
    check(
        "criterion 1c",
        id.residual < 0.02,
        &format!("identity residual {:.5} < 0.02", id.residual),
    );
}

#[test]
fn criterion_02_signed_potential_positivity() {
    // overlapping smooth two-species profiles, sigma = +1 / -1, alpha = 2;
    // the signed pair sum must stay above -1e-3 * kinetic and the negative
    // floor must halve when dx and the softening are halved together
    let config = |dx: f64| RunConfig {
        species: vec![
            SpeciesParams {
                id: 1,
                sigma: 1.0,
                c1: 0.5,
                lambda: 1.0,
                alpha: 2.0,
            },
            SpeciesParams {
                id: 2,
                sigma: -1.0,
                c1: 0.25,
                lambda: 1.0,
                alpha: 2.0,
            },
        ],
        cutoff: CutoffConfig {
            n_cut: 2.0,
            beta: 0.5,
        },
        numerics: NumericsConfig {
            dx,
            dv: 0.7,
            softening: dx / 2.0,
            dt_max: 1e-2,
            t_final: 1.0,
            weight_floor: 1e-12,
            quad_radius_factor: 4.0,
            quad_spacing: dx,
            output_cadence: 0.1,
            max_velocity_floor: 1.0,
            max_particles: 5_000_000,
            max_quad_cells: 2_000_000,
        },
        ladder: None,
        checkpoint_every_steps: None,
    };
    let measure = |dx: f64| {
        let cfg = config(dx);
        let ens = grid_ensemble(&cfg).unwrap();
        let kin = kinetic_energy(&ens);
        let pot = potential_double_sum(&ens, cfg.numerics.softening);
        (kin, pot)
    };
    let (kin_c, pot_c) = measure(0.5);
    let (kin_f, pot_f) = measure(0.25);
    check(
        "criterion 2a",
        pot_c >= -1e-3 * kin_c,
        &format!("coarse potential {pot_c:.5} >= -1e-3 * kinetic {kin_c:.5}"),
    );
    check(
        "criterion 2b",
        pot_f >= -1e-3 * kin_f,
        &format!("refined potential {pot_f:.5} >= -1e-3 * kinetic {kin_f:.5}"),
    );
    let floor_c = (-pot_c).max(0.0);
    let floor_f = (-pot_f).max(0.0);
    check(
        "criterion 2c",
        floor_f <= 0.5 * floor_c,
        &format!("negative floor {floor_f:.3e} <= half of {floor_c:.3e}"),
    );
}

#[test]
fn criterion_03_energy_conservation() {
    let fix = &*LADDER;
    let run = fix
        .runs
        .iter()
        .find(|r| r.summary.n_cut == 16.0)
        .expect("N = 16 rung");
    let drift = run.summary.energy_drift;
    check(
        "criterion 3",
        drift < 1e-3,
        &format!(
            "relative energy drift {drift:.3e} < 1e-3 over [0, 1] (E0 {:.5}, ET {:.5})",
            run.summary.energy0.total, run.summary.energy_final.total
        ),
    );
}

#[test]
fn criterion_04_energy_scaling() {
    let rep = &LADDER.report;
    check(
        "criterion 4a",
        rep.total_energy_ok,
        &format!(
            "total-energy slope {:.4} <= 3 beta + 0.2 = {:.4}",
            rep.total_energy_slope, rep.total_energy_limit
        ),
    );
    check(
        "criterion 4b",
        rep.kinetic_ok,
        &format!(
            "kinetic slope {:.4} within beta(3-alpha) = {:.2} +- 0.2",
            rep.kinetic_slope, rep.kinetic_target
        ),
    );
}

#[test]
fn criterion_05_far_field_decay() {
    let rep = &LADDER.report;
    check(
        "criterion 5a",
        rep.farfield_slope_ok,
        &format!(
            "max|E| r^2 slope {:.4} within beta(3-alpha) = {:.2} +- 0.15",
            rep.farfield_slope, rep.farfield_target
        ),
    );
    check(
        "criterion 5b",
        rep.farfield_bound_ok,
        "max|E(x,0)| r^2 never exceeds 4 sum_i M_i at any sampled radius",
    );
}

#[test]
fn criterion_06_maximal_velocity_bound() {
    let rep = &LADDER.report;
    check(
        "criterion 6",
        rep.vmax_ok,
        &format!("v_max(T) slope {:.4} <= 1.1", rep.vmax_slope),
    );
}

#[test]
fn criterion_07_local_energy_scaling() {
    let rep = &LADDER.report;
    check(
        "criterion 7",
        rep.qsup_ok,
        &format!(
            "Q^N(R^N(T), T) slope {:.4} <= 1 - 1/15 + 0.1 = {:.4}",
            rep.qsup_slope, rep.qsup_limit
        ),
    );
}

#[test]
fn criterion_08_time_averaged_field() {
    let rep = &LADDER.report;
    check(
        "criterion 8",
        rep.tau_ok,
        &format!(
            "tau ratios {:?} all < 2/3 + 0.1 = {:.4}",
            rep.tau_ratios, rep.tau_limit
        ),
    );
}

#[test]
fn criterion_09_cauchy_convergence() {
    let rep = &LADDER.report;
    let sups: Vec<f64> = rep.cauchy.pairs.iter().map(|p| p.sup_x).collect();
    check(
        "criterion 9a",
        rep.cauchy.non_increasing,
        &format!("sup trajectory distances nonincreasing along the ladder: {sups:?}"),
    );
    check(
        "criterion 9b",
        rep.cauchy_halving_ok,
        &format!("sup distances halve per doubling of N: {sups:?}"),
    );
}

#[test]
fn criterion_10_integrator_quality() {
    // (a) time reversibility (fixed dt) on the N = 8 acceptance ensemble
    let mut cfg = acceptance_config();
    cfg.cutoff.n_cut = 8.0;
    let num = cfg.numerics;
    let ens = grid_ensemble(&cfg).unwrap();
    let x0: Vec<Vec3> = ens.particles.iter().map(|p| p.x).collect();
    let scale = ens.support_radius();
    let mut state = SimState::new(ens, &num);
    fixed_steps(&mut state, 100, 0.01, &num, &mut NoHooks).unwrap();
    state.reverse_velocities();
    fixed_steps(&mut state, 100, 0.01, &num, &mut NoHooks).unwrap();
    let mut worst = 0.0f64;
    for (p, x) in state.ensemble.particles.iter().zip(&x0) {
        worst = worst.max((p.x - *x).norm());
    }
    let rel = worst / scale;
    check(
        "criterion 10a",
        rel < 1e-6,
        &format!("reversal error {rel:.3e} < 1e-6 relative after 100 steps"),
    );

    // (b) softened circular two-body orbit: closed-form orbital velocity
    // v = sqrt(w d r / (d^2 + eps^2)^{3/2}), radius drift < 1e-4 / 100 orbits
    let (w, r, eps): (f64, f64, f64) = (1.0, 1.0, 0.1);
    let d = 2.0 * r;
    let accel = w * d / (d * d + eps * eps).powf(1.5);
    let v = (accel * r).sqrt();
    let t_orbit = 2.0 * std::f64::consts::PI * r / v;
    let particle = |species: u32, x: Vec3, vel: Vec3| Particle {
        species,
        x,
        v: vel,
        x0: x,
        v0: vel,
        weight: w,
    };
    let pair = Ensemble::from_parts(
        vec![
            particle(1, Vec3::new(r, 0.0, 0.0), Vec3::new(0.0, v, 0.0)),
            particle(2, Vec3::new(-r, 0.0, 0.0), Vec3::new(0.0, -v, 0.0)),
        ],
        &[(1, 1.0), (2, -1.0)],
        1.0,
        1.0,
    );
    let mut onum = base_numerics();
    onum.softening = eps;
    let mut orbit = SimState::new(pair, &onum);
    let dt = t_orbit / 1000.0;
    let mean_radius = |s: &mut SimState| -> f64 {
        let mut acc = 0.0;
        for _ in 0..1000 {
            vlasim::integrator::step(s, &onum, dt).unwrap();
            acc += s.ensemble.particles[0].x.norm();
        }
        acc / 1000.0
    };
    let first = mean_radius(&mut orbit);
    fixed_steps(&mut orbit, 98 * 1000, dt, &onum, &mut NoHooks).unwrap();
    let last = mean_radius(&mut orbit);
    let drift = (last - first).abs() / r;
    check(
        "criterion 10b",
        drift < 1e-4,
        &format!("orbit radius drift {drift:.3e} < 1e-4 over 100 orbits"),
    );
}

#[test]
fn criterion_11_envelope_propagation() {
    let fix = &*LADDER;
    let lambdas: Vec<f64> = fix
        .runs
        .iter()
        .map(|r| {
            r.summary
                .envelope
                .expect("acceptance rungs fit an envelope")
                .lambda_prime
        })
        .collect();
    let positive = lambdas.iter().all(|l| *l > 0.0);
    check(
        "criterion 11a",
        positive,
        &format!("fitted lambda' all positive: {lambdas:?}"),
    );
    let mean = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
    let stable = lambdas.iter().all(|l| (l - mean).abs() <= 0.2 * mean);
    check(
        "criterion 11b",
        stable,
        &format!("lambda' stable within +-20% across the ladder: {lambdas:?} (mean {mean:.4})"),
    );
}

#[test]
fn ladder_fits_desk_scale_budget() {
    let fix = &*LADDER;
    let total_particles: usize = fix.runs.iter().map(|r| r.summary.particle_count).sum();
    println!(
        "ladder totals: {} particles across rungs, built in {:.1}s",
        total_particles, fix.elapsed_seconds
    );
    for r in &fix.runs {
        println!(
            "  N = {:>2}: {:>6} particles, E0 {:.5e}, drift {:.2e}, v_max {:.3}, Q^N {:.4e}, tau {:?}, lambda' {:?}",
            r.summary.n_cut,
            r.summary.particle_count,
            r.summary.energy0.total,
            r.summary.energy_drift,
            r.summary.kinematics_final.v_max,
            r.summary.qsup_final,
            r.summary.kinematics_final.tau_ratio,
            r.summary.envelope.map(|e| e.lambda_prime),
        );
    }
    for p in &fix.report.cauchy.pairs {
        println!(
            "  cauchy N {} -> {}: {} common, sup|dx| {:.4e}, mean|dx| {:.4e}, sup|dv| {:.4e}",
            p.n_small, p.n_large, p.common, p.sup_x, p.mean_x, p.sup_v
        );
    }
    assert!(fix.runs.iter().all(|r| r.summary.particle_count <= 100_000));
    assert!(
        fix.elapsed_seconds < 1800.0,
        "ladder took {:.0}s, budget 30 min",
        fix.elapsed_seconds
    );
}

//! Mollified local energy W(mu, R) and its sup over centers, plus the
//! kinematic trackers (maximal velocity, displacement radius, time-averaged
//! field integrals).
//!
//! The mollifier is radial: 1 inside the unit ball, 0 beyond 2, with a cubic
//! smoothstep transition whose derivative stays within [-1.5, 0] (well inside
//! the required [-2, 0] envelope).

use crate::error::{Error, Result};
use crate::initial_data::Ensemble;
use crate::integrator::SimState;
use crate::sum::Compensated;
use crate::vec3::Vec3;
use rayon::prelude::*;

/// phi(r): 1 on [0,1], cubic smoothstep down to 0 on [1,2], 0 beyond.
pub fn mollifier_eval(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let u = r - 1.0;
        1.0 - (3.0 * u * u - 2.0 * u * u * u)
    }
}

/// Analytic derivative of [`mollifier_eval`]; minimum -1.5 at r = 1.5.
pub fn mollifier_deriv(r: f64) -> f64 {
    if !(1.0..2.0).contains(&r) {
        0.0
    } else {
        let u = r - 1.0;
        -(6.0 * u - 6.0 * u * u)
    }
}

/// Mollified local energy around center mu at scale radius,
/// `(1/2) sum_p phi_p w_p |v_p|^2 + (1/2) sum_{p!=q} phi_p qw_p qw_q k(p,q)`
/// with `phi_p = phi(|x_p - mu| / radius)`. Direct double sum; use
/// [`LocalEnergyScan`] when many centers are needed.
pub fn local_energy(ens: &Ensemble, mu: Vec3, radius: f64, softening: f64) -> f64 {
    let eps2 = softening * softening;
    let qw: Vec<f64> = ens
        .particles
        .iter()
        .map(|p| ens.sigma_of(p.species) * p.weight)
        .collect();
    let mut acc = Compensated::new();
    for (i, p) in ens.particles.iter().enumerate() {
        let phi = mollifier_eval((p.x - mu).norm() / radius);
        if phi == 0.0 {
            continue;
        }
        let mut pot = Compensated::new();
        for (j, q) in ens.particles.iter().enumerate() {
            if j == i {
                continue;
            }
            let d = p.x - q.x;
            pot.add(qw[j] / (d.norm_sq() + eps2).sqrt());
        }
        acc.add(phi * (0.5 * p.weight * p.v.norm_sq() + 0.5 * qw[i] * pot.value()));
    }
    acc.value()
}

/// Per-particle local-energy contributions with the pair potential
/// precomputed once (O(P^2)), so scanning centers costs O(P) each.
pub struct LocalEnergyScan {
    positions: Vec<Vec3>,
    terms: Vec<f64>,
}

impl LocalEnergyScan {
    pub fn new(ens: &Ensemble, softening: f64) -> LocalEnergyScan {
        let n = ens.len();
        let eps2 = softening * softening;
        let mut x = Vec::with_capacity(n);
        let mut qw = Vec::with_capacity(n);
        for p in &ens.particles {
            x.push(p.x);
            qw.push(ens.sigma_of(p.species) * p.weight);
        }
        // potential at each particle: sum over everyone, then subtract the
        // self term qw_i / eps so the inner loop stays branch-free
        let potentials: Vec<f64> = (0..n)
            .into_par_iter()
            .with_min_len(16)
            .map(|i| {
                let xi = x[i];
                let mut acc = Compensated::new();
                let mut j = 0;
                while j < n {
                    let end = (j + 256).min(n);
                    let mut block = 0.0f64;
                    for k in j..end {
                        let d = xi - x[k];
                        block += qw[k] / (d.norm_sq() + eps2).sqrt();
                    }
                    acc.add(block);
                    j = end;
                }
                acc.add(-qw[i] / eps2.sqrt());
                acc.value()
            })
            .collect();
        let terms: Vec<f64> = ens
            .particles
            .iter()
            .enumerate()
            .map(|(i, p)| 0.5 * p.weight * p.v.norm_sq() + 0.5 * qw[i] * potentials[i])
            .collect();
        LocalEnergyScan {
            positions: x,
            terms,
        }
    }

    pub fn value_at(&self, mu: Vec3, radius: f64) -> f64 {
        let mut acc = Compensated::new();
        for (x, term) in self.positions.iter().zip(&self.terms) {
            let phi = mollifier_eval((*x - mu).norm() / radius);
            if phi > 0.0 {
                acc.add(phi * term);
            }
        }
        acc.value()
    }
}

/// Maximum of the local energy over a cubic lattice of centers covering the
/// particle support inflated by 2 * radius. The lattice is anchored at the
/// support bounding box, so the argmax shifts along with the ensemble.
/// The mollifier has Lipschitz constant 2/radius, so a spacing of radius/2
/// underestimates the true sup by a bounded factor.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // negation also rejects NaN
pub fn q_sup(
    ens: &Ensemble,
    radius: f64,
    softening: f64,
    grid_spacing: f64,
) -> Result<(f64, Vec3)> {
    if !(grid_spacing <= radius / 2.0) {
        return Err(Error::Ladder(format!(
            "q_sup grid spacing {grid_spacing} must be <= radius/2 = {}",
            radius / 2.0
        )));
    }
    if ens.is_empty() {
        return Ok((0.0, Vec3::ZERO));
    }
    let scan = LocalEnergyScan::new(ens, softening);
    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &ens.particles {
        lo.x = lo.x.min(p.x.x);
        lo.y = lo.y.min(p.x.y);
        lo.z = lo.z.min(p.x.z);
        hi.x = hi.x.max(p.x.x);
        hi.y = hi.y.max(p.x.y);
        hi.z = hi.z.max(p.x.z);
    }
    let pad = 2.0 * radius;
    let counts = |a: f64, b: f64| (((b - a + 2.0 * pad) / grid_spacing).ceil() as i64 + 1).max(1);
    let (nx, ny, nz) = (
        counts(lo.x, hi.x),
        counts(lo.y, hi.y),
        counts(lo.z, hi.z),
    );
    let centers: Vec<Vec3> = (0..nx * ny * nz)
        .map(|idx| {
            let i = idx / (ny * nz);
            let j = (idx / nz) % ny;
            let k = idx % nz;
            Vec3::new(
                lo.x - pad + i as f64 * grid_spacing,
                lo.y - pad + j as f64 * grid_spacing,
                lo.z - pad + k as f64 * grid_spacing,
            )
        })
        .collect();
    let values: Vec<f64> = centers
        .par_iter()
        .with_min_len(32)
        .map(|&mu| scan.value_at(mu, radius))
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut best_mu = centers[0];
    for (mu, v) in centers.iter().zip(&values) {
        if *v > best {
            best = *v;
            best_mu = *mu;
        }
    }
    Ok((best, best_mu))
}

/// Kinematic diagnostics at one time.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct KinematicsRecord {
    pub t: f64,
    /// Running maximal speed, floored at C3.
    pub v_max: f64,
    /// Displacement radius 1 + int_0^t V(s) ds (trapezoidal).
    pub r_disp: f64,
    /// max over particles of int_0^t |E(X_p(s), s)| ds.
    pub max_field_integral: f64,
    /// log(max_field_integral) / log(v_max); None when v_max <= 1 or the
    /// integral vanishes.
    pub tau_ratio: Option<f64>,
}

/// Accumulates the kinematic quantities along a run, reusing the field values
/// already computed by the stepper (left-endpoint rule in time for the
/// per-particle field integrals).
#[derive(Debug, Clone)]
pub struct KinematicsTracker {
    c3: f64,
    v_max: f64,
    r_disp: f64,
    field_integrals: Vec<f64>,
}

impl KinematicsTracker {
    pub fn new(state: &SimState, c3: f64) -> KinematicsTracker {
        KinematicsTracker {
            c3,
            v_max: state.max_speed().max(c3),
            r_disp: 1.0,
            field_integrals: vec![0.0; state.ensemble.len()],
        }
    }

    /// Call before a step of size dt, while the cached field still holds the
    /// values at the current time.
    pub fn pre_step(&mut self, state: &SimState, dt: f64) {
        for (acc, e) in self.field_integrals.iter_mut().zip(&state.field) {
            *acc += e.norm() * dt;
        }
    }

    /// Call after the step completes.
    pub fn post_step(&mut self, state: &SimState, dt: f64) {
        let before = self.v_max;
        self.v_max = self.v_max.max(state.max_speed()).max(self.c3);
        self.r_disp += 0.5 * dt * (before + self.v_max);
    }

    pub fn max_field_integral(&self) -> f64 {
        self.field_integrals.iter().copied().fold(0.0, f64::max)
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn record(&self, t: f64) -> KinematicsRecord {
        let max_int = self.max_field_integral();
        let tau_ratio = if self.v_max > 1.0 && max_int > 0.0 {
            Some(max_int.ln() / self.v_max.ln())
        } else {
            None
        };
        KinematicsRecord {
            t,
            v_max: self.v_max,
            r_disp: self.r_disp,
            max_field_integral: max_int,
            tau_ratio,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CutoffConfig, NumericsConfig, SpeciesParams};
    use crate::energy::{kinetic_energy, potential_double_sum};
    use crate::initial_data::{default_profile, grid_particles, Particle};
    use crate::integrator::{fixed_steps, NoHooks, SimState};

    #[test]
    fn mollifier_plateau_support_and_midpoint() {
        assert_eq!(mollifier_eval(0.5), 1.0);
        assert_eq!(mollifier_eval(3.0), 0.0);
        assert!((mollifier_eval(1.5) - 0.5).abs() < 1e-15); // smoothstep symmetry
        assert_eq!(mollifier_eval(1.0), 1.0);
        assert_eq!(mollifier_eval(2.0), 0.0);
    }

    #[test]
    fn mollifier_derivative_within_bounds_and_matches_fd() {
        let h = 1e-6;
        for k in 0..1000 {
            let r = 0.003 + 2.994 * k as f64 / 999.0;
            let ana = mollifier_deriv(r);
            let fd = (mollifier_eval(r + h) - mollifier_eval(r - h)) / (2.0 * h);
            assert!((ana - fd).abs() < 1e-8, "r={r}: {ana} vs {fd}");
            assert!((-2.0..=0.0).contains(&ana));
            assert!(ana.abs() <= 1.5 + 1e-12);
        }
        // nonincreasing
        let mut prev = mollifier_eval(0.0);
        for k in 1..600 {
            let cur = mollifier_eval(3.0 * k as f64 / 599.0);
            assert!(cur <= prev + 1e-15);
            prev = cur;
        }
    }

    fn small_ensemble() -> Ensemble {
        let s = SpeciesParams {
            id: 1,
            sigma: 1.0,
            c1: 1.0,
            lambda: 1.0,
            alpha: 2.0,
        };
        let cut = CutoffConfig {
            n_cut: 2.0,
            beta: 0.5,
        };
        let num = NumericsConfig {
            dx: 0.5,
            dv: 0.9,
            softening: 0.25,
            dt_max: 1e-2,
            t_final: 1.0,
            weight_floor: 1e-12,
            quad_radius_factor: 4.0,
            quad_spacing: 0.5,
            output_cadence: 0.1,
            max_velocity_floor: 1.0,
            max_particles: 10_000_000,
            max_quad_cells: 2_000_000,
        };
        let profile = default_profile(&s);
        grid_particles(&profile, &s, &cut, &num).unwrap()
    }

    #[test]
    fn huge_radius_recovers_global_energy() {
        let ens = small_ensemble();
        let eps = 0.25;
        let global = kinetic_energy(&ens) + potential_double_sum(&ens, eps);
        let w = local_energy(&ens, Vec3::new(0.3, -0.2, 0.1), 1e9, eps);
        assert!(
            (w - global).abs() < 1e-12 * global.abs(),
            "{w} vs {global}"
        );
    }

    #[test]
    fn far_center_gives_zero() {
        let ens = small_ensemble();
        let radius = 1.0;
        let far = ens.support_radius() + 2.0 * radius + 1.0;
        let w = local_energy(&ens, Vec3::new(far, 0.0, 0.0), radius, 0.25);
        assert_eq!(w, 0.0);
    }

    #[test]
    fn scan_agrees_with_direct_evaluation() {
        let ens = small_ensemble();
        let eps = 0.25;
        let scan = LocalEnergyScan::new(&ens, eps);
        for mu in [Vec3::ZERO, Vec3::new(0.7, 0.1, -0.4), Vec3::new(1.5, 1.5, 0.0)] {
            for radius in [0.5, 1.3] {
                let direct = local_energy(&ens, mu, radius, eps);
                let fast = scan.value_at(mu, radius);
                assert!(
                    (direct - fast).abs() <= 1e-12 * direct.abs().max(1.0),
                    "mu {mu:?} r {radius}: {direct} vs {fast}"
                );
            }
        }
    }

    #[test]
    fn single_sign_local_energy_positive_and_below_global() {
        let ens = small_ensemble();
        let eps = 0.25;
        let global = kinetic_energy(&ens) + potential_double_sum(&ens, eps);
        let w = local_energy(&ens, Vec3::ZERO, 0.6, eps);
        assert!(w > 0.0);
        assert!(w <= global * (1.0 + 1e-12));
    }

    #[test]
    fn q_sup_single_particle_is_its_kinetic_term() {
        let p = Particle {
            species: 1,
            x: Vec3::new(0.3, 0.1, -0.2),
            v: Vec3::new(2.0, 0.0, 1.0),
            x0: Vec3::ZERO,
            v0: Vec3::ZERO,
            weight: 0.7,
        };
        let kin = 0.5 * p.weight * p.v.norm_sq();
        let ens = Ensemble::from_parts(vec![p], &[(1, 1.0)], 1.0, 1.0);
        let (q, mu) = q_sup(&ens, 1.0, 0.1, 0.5).unwrap();
        assert_eq!(q, kin); // some center lies within the phi = 1 plateau
        assert!((mu - p.x).norm() <= 2.0 * 3.0f64.sqrt());
    }

    #[test]
    fn q_sup_translation_equivariant() {
        let ens = small_ensemble();
        let eps = 0.25;
        let (q0, mu0) = q_sup(&ens, 0.8, eps, 0.4).unwrap();
        let shift = Vec3::new(5.0, -3.0, 2.0);
        let mut moved = ens.clone();
        for p in &mut moved.particles {
            p.x += shift;
        }
        let (q1, mu1) = q_sup(&moved, 0.8, eps, 0.4).unwrap();
        assert!((q1 - q0).abs() < 1e-9 * q0.abs().max(1.0), "{q0} vs {q1}");
        assert!((mu1 - (mu0 + shift)).norm() < 1e-9);
    }

    #[test]
    fn q_sup_rejects_coarse_grid() {
        let ens = small_ensemble();
        assert!(q_sup(&ens, 1.0, 0.25, 0.6).is_err());
    }

    fn free_state(v: Vec3) -> SimState {
        let p = Particle {
            species: 1,
            x: Vec3::ZERO,
            v,
            x0: Vec3::ZERO,
            v0: v,
            weight: 0.0,
        };
        let ens = Ensemble::from_parts(vec![p], &[(1, 1.0)], 1.0, 1.0);
        let num = NumericsConfig {
            dx: 0.5,
            dv: 0.5,
            softening: 0.1,
            dt_max: 1e-2,
            t_final: 1.0,
            weight_floor: 1e-12,
            quad_radius_factor: 4.0,
            quad_spacing: 0.5,
            output_cadence: 0.1,
            max_velocity_floor: 1.0,
            max_particles: 1000,
            max_quad_cells: 100_000,
        };
        SimState::new(ens, &num)
    }

    #[test]
    fn v_max_floored_at_c3() {
        let state = free_state(Vec3::new(0.2, 0.0, 0.0));
        let mut tracker = KinematicsTracker::new(&state, 1.0);
        let mut s = state;
        let num = crate::config::NumericsConfig {
            dx: 0.5,
            dv: 0.5,
            softening: 0.1,
            dt_max: 1e-2,
            t_final: 1.0,
            weight_floor: 1e-12,
            quad_radius_factor: 4.0,
            quad_spacing: 0.5,
            output_cadence: 0.1,
            max_velocity_floor: 1.0,
            max_particles: 1000,
            max_quad_cells: 100_000,
        };
        for _ in 0..10 {
            tracker.pre_step(&s, 0.01);
            crate::integrator::step(&mut s, &num, 0.01).unwrap();
            tracker.post_step(&s, 0.01);
        }
        assert_eq!(tracker.v_max(), 1.0); // everything slower than C3
        let rec = tracker.record(s.t);
        // r_disp = 1 + C3 * t for constant V
        assert!((rec.r_disp - (1.0 + 1.0 * s.t)).abs() < 1e-12);
        assert!(rec.tau_ratio.is_none()); // no field, no integral
    }

    #[test]
    fn free_streaming_kinematics() {
        let state = free_state(Vec3::new(5.0, 0.0, 0.0));
        let mut tracker = KinematicsTracker::new(&state, 1.0);
        let mut s = state;
        let num = crate::config::NumericsConfig {
            dx: 0.5,
            dv: 0.5,
            softening: 0.1,
            dt_max: 1e-2,
            t_final: 1.0,
            weight_floor: 1e-12,
            quad_radius_factor: 4.0,
            quad_spacing: 0.5,
            output_cadence: 0.1,
            max_velocity_floor: 1.0,
            max_particles: 1000,
            max_quad_cells: 100_000,
        };
        fixed_steps(&mut s, 0, 0.01, &num, &mut NoHooks).unwrap();
        for _ in 0..20 {
            tracker.pre_step(&s, 0.01);
            crate::integrator::step(&mut s, &num, 0.01).unwrap();
            tracker.post_step(&s, 0.01);
        }
        assert_eq!(tracker.v_max(), 5.0);
        let rec = tracker.record(s.t);
        assert!((rec.r_disp - (1.0 + 5.0 * s.t)).abs() < 1e-12);
    }
}

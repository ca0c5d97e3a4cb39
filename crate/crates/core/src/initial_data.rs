//! Deterministic phase-space gridding of the truncated initial densities.
//!
//! Each species' initial density is sampled on a midpoint tensor lattice over
//! the box [-N^beta, N^beta]^3 x [-N, N]^3; nodes outside the balls
//! |x| <= N^beta or |v| <= N are dropped (sharp characteristic-function
//! truncation), as are nodes whose density falls below the relative weight
//! floor. The lattice is anchored at the origin (cell centers at half-integer
//! multiples of the spacing) independently of the cutoff, so the ensemble at
//! cutoff N is a subset of the ensemble at any larger cutoff with the same
//! spacings. That subset property is what makes trajectory comparison across
//! cutoffs well defined.

use crate::config::{CutoffConfig, NumericsConfig, RunConfig, SpeciesParams};
use crate::error::{Error, Result};
use crate::sum::Compensated;
use crate::vec3::Vec3;

/// A weighted characteristic. The weight is the phase-space mass
/// f(x0, v0) * dx^3 * dv^3 and stays constant for the particle's lifetime
/// (the density is invariant along characteristics).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub species: u32,
    pub x: Vec3,
    pub v: Vec3,
    pub x0: Vec3,
    pub v0: Vec3,
    pub weight: f64,
}

/// Per-species bookkeeping of the gridded ensemble.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpeciesTotals {
    pub id: u32,
    pub sigma: f64,
    /// M_i = sum of weights.
    pub mass: f64,
    /// Signed charge sigma_i * M_i.
    pub charge: f64,
    pub count: usize,
}

/// The full weighted-particle ensemble, all species merged in species order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    pub totals: Vec<SpeciesTotals>,
    pub dx: f64,
    pub dv: f64,
}

impl Ensemble {
    /// Build an ensemble from explicit particles; totals are recomputed.
    /// `sigma` maps species ids to their charge-per-mass values.
    pub fn from_parts(particles: Vec<Particle>, sigma: &[(u32, f64)], dx: f64, dv: f64) -> Ensemble {
        let mut totals: Vec<SpeciesTotals> = sigma
            .iter()
            .map(|&(id, s)| SpeciesTotals {
                id,
                sigma: s,
                mass: 0.0,
                charge: 0.0,
                count: 0,
            })
            .collect();
        totals.sort_by_key(|t| t.id);
        let mut acc: Vec<Compensated> = vec![Compensated::new(); totals.len()];
        for p in &particles {
            let k = totals
                .binary_search_by_key(&p.species, |t| t.id)
                .expect("particle species must appear in sigma map");
            acc[k].add(p.weight);
            totals[k].count += 1;
        }
        for (t, a) in totals.iter_mut().zip(&acc) {
            t.mass = a.value();
            t.charge = t.sigma * t.mass;
        }
        Ensemble {
            particles,
            totals,
            dx,
            dv,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Phase-space cell volume dx^3 * dv^3.
    pub fn cell_volume(&self) -> f64 {
        self.dx.powi(3) * self.dv.powi(3)
    }

    pub fn sigma_of(&self, species: u32) -> f64 {
        self.totals
            .binary_search_by_key(&species, |t| t.id)
            .map(|k| self.totals[k].sigma)
            .unwrap_or(0.0)
    }

    /// Sum_i M_i (unsigned).
    pub fn unsigned_mass(&self) -> f64 {
        self.totals.iter().map(|t| t.mass).sum()
    }

    /// Sum_i sigma_i M_i.
    pub fn net_charge(&self) -> f64 {
        self.totals.iter().map(|t| t.charge).sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.particles
            .iter()
            .map(|p| p.v.norm())
            .fold(0.0, f64::max)
    }

    pub fn support_radius(&self) -> f64 {
        self.particles
            .iter()
            .map(|p| p.x.norm())
            .fold(0.0, f64::max)
    }
}

/// The canonical initial datum: the decay envelope itself,
/// C1 * exp(-lambda |v|^2) / (1 + |x|)^alpha.
pub fn default_profile(species: &SpeciesParams) -> impl Fn(Vec3, Vec3) -> f64 + Sync + '_ {
    move |x: Vec3, v: Vec3| {
        species.c1 * (-species.lambda * v.norm_sq()).exp() * (1.0 + x.norm()).powf(-species.alpha)
    }
}

/// Midpoint lattice centers (i + 1/2) h covering [-radius, radius].
fn axis_centers(radius: f64, h: f64) -> Vec<f64> {
    let lo = (-radius / h - 0.5).ceil() as i64;
    let hi = (radius / h - 0.5).floor() as i64;
    (lo..=hi).map(|i| (i as f64 + 0.5) * h).collect()
}

/// Visit every surviving lattice node of one species' truncated density.
/// Iteration order is fixed (x lattice outer, v lattice inner), which makes
/// gridding deterministic and byte-identical across runs.
fn for_each_node<F>(
    profile: &(impl Fn(Vec3, Vec3) -> f64 + ?Sized),
    floor_abs: f64,
    cut: &CutoffConfig,
    num: &NumericsConfig,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(Vec3, Vec3, f64) -> Result<()>,
{
    let rx = cut.space_radius();
    let rv = cut.n_cut;
    let xs = axis_centers(rx, num.dx);
    let vs = axis_centers(rv, num.dv);
    // Precompute the velocity nodes inside the ball once; the x loop reuses it.
    let mut v_nodes: Vec<Vec3> = Vec::new();
    for &a in &vs {
        for &b in &vs {
            for &c in &vs {
                let v = Vec3::new(a, b, c);
                if v.norm_sq() <= rv * rv {
                    v_nodes.push(v);
                }
            }
        }
    }
    for &a in &xs {
        for &b in &xs {
            for &c in &xs {
                let x = Vec3::new(a, b, c);
                if x.norm_sq() > rx * rx {
                    continue;
                }
                for &v in &v_nodes {
                    let f = profile(x, v);
                    if f >= floor_abs && f > 0.0 {
                        visit(x, v, f)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Grid one species into weighted particles.
///
/// Profiles are normalized so that their supremum equals `species.c1`; the
/// weight floor is `num.weight_floor * c1`, relative to that peak.
pub fn grid_particles(
    profile: &(impl Fn(Vec3, Vec3) -> f64 + ?Sized),
    species: &SpeciesParams,
    cut: &CutoffConfig,
    num: &NumericsConfig,
) -> Result<Ensemble> {
    let cell = num.dx.powi(3) * num.dv.powi(3);
    let floor_abs = num.weight_floor * species.c1;
    let mut particles = Vec::new();
    let cap = num.max_particles;
    for_each_node(profile, floor_abs, cut, num, |x, v, f| {
        if particles.len() as u64 >= cap {
            let rx = cut.space_radius();
            let est = (2.0 * rx / num.dx).powi(3) * (2.0 * cut.n_cut / num.dv).powi(3);
            let suggested_dx = num.dx * (est / cap as f64).max(1.0).powf(1.0 / 6.0);
            return Err(Error::ParticleCap {
                count: particles.len() as u64 + 1,
                cap,
                suggested_dx,
            });
        }
        particles.push(Particle {
            species: species.id,
            x,
            v,
            x0: x,
            v0: v,
            weight: f * cell,
        });
        Ok(())
    })?;
    Ok(Ensemble::from_parts(
        particles,
        &[(species.id, species.sigma)],
        num.dx,
        num.dv,
    ))
}

/// Total mass of the gridded density, streamed without storing particles.
/// Matches `grid_particles(..).totals[0].mass` exactly (same nodes, same
/// summation order).
pub fn lattice_mass(
    profile: &(impl Fn(Vec3, Vec3) -> f64 + ?Sized),
    species: &SpeciesParams,
    cut: &CutoffConfig,
    num: &NumericsConfig,
) -> Result<f64> {
    let cell = num.dx.powi(3) * num.dv.powi(3);
    let floor_abs = num.weight_floor * species.c1;
    let mut acc = Compensated::new();
    for_each_node(profile, floor_abs, cut, num, |_, _, f| {
        acc.add(f * cell);
        Ok(())
    })?;
    Ok(acc.value())
}

/// Grid all species of a run with their default envelope profiles and merge
/// into a single ensemble (species in ascending id order).
pub fn grid_ensemble(cfg: &RunConfig) -> Result<Ensemble> {
    grid_ensemble_at(cfg, cfg.cutoff.n_cut)
}

/// Same as [`grid_ensemble`], overriding the velocity cutoff (ladder runs).
pub fn grid_ensemble_at(cfg: &RunConfig, n_cut: f64) -> Result<Ensemble> {
    let cut = CutoffConfig {
        n_cut,
        beta: cfg.cutoff.beta,
    };
    // The weight floor is relative to the largest initial density over all
    // species, so one species does not get a different effective cutoff.
    let f_max = cfg.max_initial_density();
    let mut particles = Vec::new();
    let mut sigma = Vec::new();
    let mut remaining = cfg.numerics.max_particles;
    for s in &cfg.species {
        let mut num = cfg.numerics;
        num.weight_floor = cfg.numerics.weight_floor * f_max / s.c1;
        num.max_particles = remaining;
        let profile = default_profile(s);
        let ens = grid_particles(&profile, s, &cut, &num)?;
        remaining = remaining.saturating_sub(ens.particles.len() as u64);
        particles.extend(ens.particles);
        sigma.push((s.id, s.sigma));
    }
    Ok(Ensemble::from_parts(
        particles,
        &sigma,
        cfg.numerics.dx,
        cfg.numerics.dv,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CutoffConfig, NumericsConfig, SpeciesParams};

    fn species(alpha: f64, lambda: f64, c1: f64) -> SpeciesParams {
        SpeciesParams {
            id: 1,
            sigma: 1.0,
            c1,
            lambda,
            alpha,
        }
    }

    fn numerics(dx: f64, dv: f64) -> NumericsConfig {
        NumericsConfig {
            dx,
            dv,
            softening: dx / 2.0,
            dt_max: 1e-2,
            t_final: 1.0,
            weight_floor: 1e-12,
            quad_radius_factor: 4.0,
            quad_spacing: dx,
            output_cadence: 0.1,
            max_velocity_floor: 1.0,
            max_particles: 200_000_000,
            max_quad_cells: 2_000_000,
        }
    }

    /// Composite Simpson on [0, b]; the 1-D radial oracle used throughout.
    fn simpson(f: impl Fn(f64) -> f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = b / n as f64;
        let mut s = f(0.0) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn envelope_values() {
        let s = species(2.0, 1.0, 1.0);
        let f = default_profile(&s);
        assert_eq!(f(Vec3::ZERO, Vec3::ZERO), 1.0);
        assert!((f(Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO) - 0.25).abs() < 1e-15);
        // |v|^2 = 1/lambda gives one e-fold
        let v = Vec3::new(1.0, 0.0, 0.0);
        assert!((f(Vec3::ZERO, v) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_profile_gives_empty_ensemble() {
        let s = species(2.0, 1.0, 1.0);
        let cut = CutoffConfig {
            n_cut: 2.0,
            beta: 0.5,
        };
        let num = numerics(0.5, 0.5);
        let ens = grid_particles(&|_, _| 0.0, &s, &cut, &num).unwrap();
        assert!(ens.is_empty());
        assert_eq!(ens.totals[0].mass, 0.0);
    }

    #[test]
    fn constant_box_mass_is_exact_when_aligned() {
        // Box [-a,a]^3 x [-b,b]^3 with a, b integer multiples of the spacing:
        // every lattice cell is entirely in or out, so the midpoint sum is the
        // exact volume integral.
        let s = species(2.0, 1.0, 3.0);
        let cut = CutoffConfig {
            n_cut: 4.0,
            beta: 0.5,
        }; // balls of radius 2 and 4
        let num = numerics(0.25, 0.5);
        let (a, b) = (0.75, 1.0); // 3*dx, 2*dv; box diagonal < ball radii
        let c = 3.0;
        let profile = move |x: Vec3, v: Vec3| {
            let inx = x.x.abs() < a && x.y.abs() < a && x.z.abs() < a;
            let inv = v.x.abs() < b && v.y.abs() < b && v.z.abs() < b;
            if inx && inv {
                c
            } else {
                0.0
            }
        };
        let ens = grid_particles(&profile, &s, &cut, &num).unwrap();
        let expect = c * (2.0 * a).powi(3) * (2.0 * b).powi(3);
        assert!(
            (ens.totals[0].mass - expect).abs() < 1e-10 * expect,
            "mass {} vs {}",
            ens.totals[0].mass,
            expect
        );
    }

    #[test]
    fn constant_box_mass_unaligned_within_one_cell_layer() {
        let s = species(2.0, 1.0, 1.0);
        let cut = CutoffConfig {
            n_cut: 4.0,
            beta: 0.5,
        };
        let num = numerics(0.25, 0.5);
        let (a, b) = (0.8, 1.1); // not lattice-aligned
        let profile = move |x: Vec3, v: Vec3| {
            let inx = x.x.abs() < a && x.y.abs() < a && x.z.abs() < a;
            let inv = v.x.abs() < b && v.y.abs() < b && v.z.abs() < b;
            if inx && inv {
                1.0
            } else {
                0.0
            }
        };
        let ens = grid_particles(&profile, &s, &cut, &num).unwrap();
        let vol = (2.0 * a).powi(3) * (2.0 * b).powi(3);
        // one boundary cell layer in each factor
        let bound = vol
            * (6.0 * num.dx / (2.0 * a) + 6.0 * num.dv / (2.0 * b));
        assert!(
            (ens.totals[0].mass - vol).abs() < bound,
            "mass {} vs {} (bound {})",
            ens.totals[0].mass,
            vol,
            bound
        );
    }

    /// The gridded mass of the default envelope matches the product of 1-D
    /// radial quadratures within 2% at spacing N^beta / 8.
    #[test]
    fn default_profile_mass_matches_radial_oracle() {
        let s = species(2.0, 1.0, 1.0);
        let cut = CutoffConfig {
            n_cut: 4.0,
            beta: 0.5,
        };
        // independent oracle at 10x resolution of the lattice spacing
        let pi = std::f64::consts::PI;
        let mx = simpson(|r| 4.0 * pi * r * r * (1.0 + r).powi(-2), 2.0, 800);
        let mv = simpson(|r| 4.0 * pi * r * r * (-r * r).exp(), 4.0, 1600);
        let oracle = mx * mv;

        // spec spacing N^beta/8 = 0.25 via the streaming path (the full
        // 6-D lattice at this spacing holds ~3.7e7 nodes)
        let m_fine = lattice_mass(&default_profile(&s), &s, &cut, &numerics(0.25, 0.25)).unwrap();
        assert!(
            (m_fine - oracle).abs() < 0.02 * oracle,
            "fine mass {m_fine} vs oracle {oracle}"
        );

        // the stored-particle path agrees with the streaming path exactly
        let num = numerics(0.25, 1.0);
        let ens = grid_particles(&default_profile(&s), &s, &cut, &num).unwrap();
        let m_stream = lattice_mass(&default_profile(&s), &s, &cut, &num).unwrap();
        assert_eq!(ens.totals[0].mass, m_stream);
        assert!(
            (ens.totals[0].mass - oracle).abs() < 0.02 * oracle,
            "grid mass {} vs oracle {oracle}",
            ens.totals[0].mass
        );
    }

    #[test]
    fn gridding_is_deterministic() {
        let s = species(2.0, 1.0, 1.0);
        let cut = CutoffConfig {
            n_cut: 2.0,
            beta: 0.5,
        };
        let num = numerics(0.4, 0.6);
        let a = grid_particles(&default_profile(&s), &s, &cut, &num).unwrap();
        let b = grid_particles(&default_profile(&s), &s, &cut, &num).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn smaller_cutoff_is_subset_of_larger() {
        let s = species(2.0, 1.0, 1.0);
        let num = numerics(0.4, 0.6);
        let small = grid_particles(
            &default_profile(&s),
            &s,
            &CutoffConfig {
                n_cut: 4.0,
                beta: 0.5,
            },
            &num,
        )
        .unwrap();
        let large = grid_particles(
            &default_profile(&s),
            &s,
            &CutoffConfig {
                n_cut: 8.0,
                beta: 0.5,
            },
            &num,
        )
        .unwrap();
        use std::collections::HashSet;
        let key = |p: &Particle| {
            (
                p.species,
                p.x0.x.to_bits(),
                p.x0.y.to_bits(),
                p.x0.z.to_bits(),
                p.v0.x.to_bits(),
                p.v0.y.to_bits(),
                p.v0.z.to_bits(),
            )
        };
        let big: HashSet<_> = large.particles.iter().map(key).collect();
        assert!(small.len() < large.len());
        for p in &small.particles {
            assert!(big.contains(&key(p)), "missing {:?}", p.x0);
        }
    }

    #[test]
    fn refinement_halving_converges() {
        // second-order midpoint behavior: each halving changes the mass less
        // than the previous halving did
        let s = species(2.0, 1.0, 1.0);
        let cut = CutoffConfig {
            n_cut: 4.0,
            beta: 0.5,
        };
        let m = |h: f64| {
            lattice_mass(&default_profile(&s), &s, &cut, &numerics(h, h)).unwrap()
        };
        let (m0, m1, m2) = (m(1.0), m(0.5), m(0.25));
        assert!(
            (m2 - m1).abs() < (m1 - m0).abs(),
            "halving steps: {} then {}",
            (m1 - m0).abs(),
            (m2 - m1).abs()
        );
    }

    #[test]
    fn weight_floor_drops_far_tail_nodes() {
        let s = species(2.0, 1.0, 1.0);
        let cut = CutoffConfig {
            n_cut: 8.0,
            beta: 0.25,
        };
        let mut num = numerics(0.5, 0.5);
        num.weight_floor = 1e-4;
        let ens = grid_particles(&default_profile(&s), &s, &cut, &num).unwrap();
        assert!(!ens.is_empty());
        let floor_abs = num.weight_floor * s.c1 * ens.cell_volume();
        for p in &ens.particles {
            assert!(p.weight >= floor_abs);
        }
        // the floor truncates the velocity ball well inside |v| = 8
        assert!(ens.max_speed() < 4.0);
    }

    #[test]
    fn particle_cap_is_fatal_with_suggestion() {
        let s = species(2.0, 1.0, 1.0);
        let cut = CutoffConfig {
            n_cut: 4.0,
            beta: 0.5,
        };
        let mut num = numerics(0.4, 0.4);
        num.max_particles = 100;
        let err = grid_particles(&default_profile(&s), &s, &cut, &num).unwrap_err();
        match err {
            Error::ParticleCap {
                count,
                cap,
                suggested_dx,
            } => {
                assert!(count > cap);
                assert!(suggested_dx > num.dx);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn support_and_speed_respect_cutoffs() {
        let s = species(2.0, 1.0, 1.0);
        let cut = CutoffConfig {
            n_cut: 4.0,
            beta: 0.5,
        };
        let ens = grid_particles(&default_profile(&s), &s, &cut, &numerics(0.4, 0.6)).unwrap();
        assert!(ens.support_radius() <= cut.space_radius());
        assert!(ens.max_speed() <= cut.n_cut);
    }
}

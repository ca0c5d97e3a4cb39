//! Coulomb field and potential of the signed particle ensemble, plus the
//! analytic two-piece bound on the initial field.
//!
//! Fields are Plummer-softened direct sums,
//!     E(x) = sum_p qw_p (x - x_p) / (|x - x_p|^2 + eps^2)^{3/2},
//! with qw_p = sigma_p w_p. Summation runs in fixed particle order with
//! block-compensated accumulation, so results do not depend on the number of
//! rayon workers. Targets are evaluated in parallel and merged in target
//! order.

use crate::config::CutoffConfig;
use crate::error::{Error, Result};
use crate::initial_data::Ensemble;
use crate::sum::Compensated;
use crate::vec3::Vec3;
use rayon::prelude::*;

/// Field and potential evaluated at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub point: Vec3,
    pub e_vec: Vec3,
    pub phi: f64,
}

/// One row of the far-field decay table.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct FarFieldRow {
    pub radius: f64,
    pub max_e: f64,
    /// 4 * (sum_i M_i) / r^2, the unsigned-mass tail bound.
    pub bound: f64,
    pub ratio: f64,
}

/// Structure-of-arrays copy of the sources, in ensemble order.
pub struct PackedSources {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    qw: Vec<f64>,
}

/// Inner accumulation runs plain within blocks of this many sources and
/// compensated across blocks: error stays near machine level without paying
/// the compensation cost on every pair.
const BLOCK: usize = 256;

impl PackedSources {
    pub fn from_ensemble(ens: &Ensemble) -> Self {
        let n = ens.len();
        let mut s = PackedSources {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            qw: Vec::with_capacity(n),
        };
        for p in &ens.particles {
            s.x.push(p.x.x);
            s.y.push(p.x.y);
            s.z.push(p.x.z);
            s.qw.push(ens.sigma_of(p.species) * p.weight);
        }
        s
    }

    /// Reorder sources by uniform spatial cell (binning accelerator). The
    /// field values change only through summation order; with compensated
    /// accumulation the relative deviation stays below 1e-12.
    pub fn binned(ens: &Ensemble, cell: f64) -> Self {
        let mut order: Vec<usize> = (0..ens.len()).collect();
        let key = |p: &crate::initial_data::Particle| {
            (
                (p.x.z / cell).floor() as i64,
                (p.x.y / cell).floor() as i64,
                (p.x.x / cell).floor() as i64,
            )
        };
        order.sort_by_key(|&i| key(&ens.particles[i]));
        let mut s = PackedSources {
            x: Vec::with_capacity(ens.len()),
            y: Vec::with_capacity(ens.len()),
            z: Vec::with_capacity(ens.len()),
            qw: Vec::with_capacity(ens.len()),
        };
        for &i in &order {
            let p = &ens.particles[i];
            s.x.push(p.x.x);
            s.y.push(p.x.y);
            s.z.push(p.x.z);
            s.qw.push(ens.sigma_of(p.species) * p.weight);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// E at one target. Pairs at exactly zero separation contribute nothing
    /// (self-interaction), which only matters for eps = 0; for eps > 0 the
    /// inner loop is branch-free so it vectorizes.
    pub fn e_at(&self, t: Vec3, eps2: f64) -> Vec3 {
        let n = self.len();
        let (mut ex, mut ey, mut ez) = (Compensated::new(), Compensated::new(), Compensated::new());
        let guarded = eps2 == 0.0;
        let mut i = 0;
        while i < n {
            let end = (i + BLOCK).min(n);
            let (mut bx, mut by, mut bz) = (0.0f64, 0.0f64, 0.0f64);
            if guarded {
                for j in i..end {
                    let dx = t.x - self.x[j];
                    let dy = t.y - self.y[j];
                    let dz = t.z - self.z[j];
                    let r2 = dx * dx + dy * dy + dz * dz;
                    if r2 > 0.0 {
                        let inv = 1.0 / r2.sqrt();
                        let w = self.qw[j] * inv * inv * inv;
                        bx += dx * w;
                        by += dy * w;
                        bz += dz * w;
                    }
                }
            } else {
                for j in i..end {
                    let dx = t.x - self.x[j];
                    let dy = t.y - self.y[j];
                    let dz = t.z - self.z[j];
                    let r2 = dx * dx + dy * dy + dz * dz + eps2;
                    let inv = 1.0 / r2.sqrt();
                    let w = self.qw[j] * inv * inv * inv;
                    bx += dx * w;
                    by += dy * w;
                    bz += dz * w;
                }
            }
            ex.add(bx);
            ey.add(by);
            ez.add(bz);
            i = end;
        }
        Vec3::new(ex.value(), ey.value(), ez.value())
    }

    /// E and the potential at one target.
    pub fn sample_at(&self, t: Vec3, eps2: f64) -> FieldSample {
        let n = self.len();
        let (mut ex, mut ey, mut ez, mut ph) = (
            Compensated::new(),
            Compensated::new(),
            Compensated::new(),
            Compensated::new(),
        );
        let guarded = eps2 == 0.0;
        let mut i = 0;
        while i < n {
            let end = (i + BLOCK).min(n);
            let (mut bx, mut by, mut bz, mut bp) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            if guarded {
                for j in i..end {
                    let dx = t.x - self.x[j];
                    let dy = t.y - self.y[j];
                    let dz = t.z - self.z[j];
                    let r2 = dx * dx + dy * dy + dz * dz;
                    if r2 > 0.0 {
                        let inv = 1.0 / r2.sqrt();
                        let w = self.qw[j] * inv * inv * inv;
                        bx += dx * w;
                        by += dy * w;
                        bz += dz * w;
                        bp += self.qw[j] * inv;
                    }
                }
            } else {
                for j in i..end {
                    let dx = t.x - self.x[j];
                    let dy = t.y - self.y[j];
                    let dz = t.z - self.z[j];
                    let r2 = dx * dx + dy * dy + dz * dz + eps2;
                    let inv = 1.0 / r2.sqrt();
                    let w = self.qw[j] * inv * inv * inv;
                    bx += dx * w;
                    by += dy * w;
                    bz += dz * w;
                    bp += self.qw[j] * inv;
                }
            }
            ex.add(bx);
            ey.add(by);
            ez.add(bz);
            ph.add(bp);
            i = end;
        }
        FieldSample {
            point: t,
            e_vec: Vec3::new(ex.value(), ey.value(), ez.value()),
            phi: ph.value(),
        }
    }
}

/// Evaluate field and potential at a batch of targets.
pub fn eval_field(ens: &Ensemble, targets: &[Vec3], softening: f64) -> Vec<FieldSample> {
    let src = PackedSources::from_ensemble(ens);
    eval_field_packed(&src, targets, softening)
}

pub fn eval_field_packed(
    src: &PackedSources,
    targets: &[Vec3],
    softening: f64,
) -> Vec<FieldSample> {
    let eps2 = softening * softening;
    targets
        .par_iter()
        .with_min_len(16)
        .map(|&t| src.sample_at(t, eps2))
        .collect()
}

/// Field only (no potential); the integrator's hot path.
pub fn eval_e_packed(src: &PackedSources, targets: &[Vec3], softening: f64) -> Vec<Vec3> {
    let eps2 = softening * softening;
    targets
        .par_iter()
        .with_min_len(16)
        .map(|&t| src.e_at(t, eps2))
        .collect()
}

/// E at every particle position (self term vanishes by oddness).
pub fn eval_e_at_particles(ens: &Ensemble, softening: f64) -> Vec<Vec3> {
    let src = PackedSources::from_ensemble(ens);
    let targets: Vec<Vec3> = ens.particles.iter().map(|p| p.x).collect();
    eval_e_packed(&src, &targets, softening)
}

/// Radial mass integral m(R) = 4 pi int_0^R r^2 (1+r)^{-alpha} dr.
pub fn envelope_mass(alpha: f64, radius: f64) -> f64 {
    4.0 * std::f64::consts::PI * simpson(|r| r * r * (1.0 + r).powf(-alpha), radius, 4000)
}

fn simpson(f: impl Fn(f64) -> f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = b / n as f64;
    let mut acc = Compensated::new();
    acc.add(f(0.0) + f(b));
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc.add(w * f(i as f64 * h));
    }
    acc.value() * h / 3.0
}

/// int_0^inf r^2 (1+r)^{-s} dr for s > 3 (Beta-function value).
fn tail_moment(s: f64) -> f64 {
    2.0 / ((s - 1.0) * (s - 2.0) * (s - 3.0))
}

/// Holder constant for sup_x int (1+|y|)^{-alpha} |x-y|^{-2} dy, assembled
/// from the near split (q < 3/2, p > 3) and the far split (q > 3/2, p < 3,
/// alpha p > 3), each minimized numerically over its admissible exponent.
fn holder_near_constant(alpha: f64) -> f64 {
    let pi4 = 4.0 * std::f64::consts::PI;
    // |x-y| <= 1 piece
    let mut near_best = f64::INFINITY;
    let mut p = 3.05;
    while p <= 8.0 {
        let q = p / (p - 1.0); // q < 3/2 since p > 3
        let lp = (pi4 * tail_moment(alpha * p)).powf(1.0 / p);
        let lq = (pi4 / (3.0 - 2.0 * q)).powf(1.0 / q);
        near_best = near_best.min(lp * lq);
        p += 0.05;
    }
    // |x-y| > 1 piece: p in (3/alpha, 3)
    let mut far_best = f64::INFINITY;
    let lo = 3.0 / alpha + 1e-3;
    let hi = 3.0 - 1e-3;
    for k in 0..60 {
        let p = lo + (hi - lo) * (k as f64 + 0.5) / 60.0;
        if alpha * p <= 3.0 {
            continue;
        }
        let q = p / (p - 1.0); // q > 3/2 since p < 3
        let lp = (pi4 * tail_moment(alpha * p)).powf(1.0 / p);
        let lq = (pi4 / (2.0 * q - 3.0)).powf(1.0 / q);
        far_best = far_best.min(lp * lq);
    }
    near_best + far_best
}

/// Two-piece bound on |E(x, 0)| generated by a unit-amplitude envelope
/// density (1+|y|)^{-alpha} truncated at |y| <= N^beta:
/// a far piece ~ N^{beta(3-alpha)}/|x|^2 beyond 2 N^beta and a constant near
/// piece inside. Only meaningful in the infinite-mass regime 1 < alpha < 3.
pub fn initial_field_bound(alpha: f64, beta: f64, n_cut: f64, x: Vec3) -> Result<f64> {
    if !(alpha > 1.0 && alpha < 3.0) {
        return Err(Error::ConfigInvalid {
            field: "alpha",
            reason: format!(
                "field bound assumes the infinite-mass regime 1 < alpha < 3, got {alpha}"
            ),
        });
    }
    let rb = n_cut.powf(beta);
    let r = x.norm();
    if r >= 2.0 * rb {
        // 2/|x|^2 * int_{|y| <= N^beta} (1+|y|)^{-alpha} dy
        Ok(2.0 * envelope_mass(alpha, rb) / (r * r))
    } else {
        Ok(holder_near_constant(alpha))
    }
}

/// C_far with the cutoff dependence factored out: the far piece equals
/// C_far * N^{beta(3-alpha)} / |x|^2.
pub fn far_bound_coefficient(alpha: f64, beta: f64, n_cut: f64) -> f64 {
    2.0 * envelope_mass(alpha, n_cut.powf(beta)) / n_cut.powf(beta * (3.0 - alpha))
}

/// Deterministic quasi-uniform unit-sphere point set.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(rho * phi.cos(), rho * phi.sin(), z)
        })
        .collect()
}

/// Sample max |E| on spheres of the given radii and compare against the
/// unsigned-mass tail bound 4 (sum_i M_i) / r^2. Radii must exceed twice the
/// support estimate N^beta + V_max t.
pub fn far_field_tail_check(
    ens: &Ensemble,
    cut: &CutoffConfig,
    v_max: f64,
    t: f64,
    radii: &[f64],
    softening: f64,
) -> Result<Vec<FarFieldRow>> {
    let support = cut.space_radius() + v_max * t;
    for &r in radii {
        if r <= 2.0 * support {
            return Err(Error::RadiusInsideSupport {
                radius: r,
                required: 2.0 * support,
            });
        }
    }
    let src = PackedSources::from_ensemble(ens);
    let unit = fibonacci_sphere(192);
    let unsigned = ens.unsigned_mass();
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let targets: Vec<Vec3> = unit.iter().map(|&u| u * r).collect();
        let max_e = eval_e_packed(&src, &targets, softening)
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max);
        let bound = 4.0 * unsigned / (r * r);
        rows.push(FarFieldRow {
            radius: r,
            max_e,
            bound,
            ratio: if bound > 0.0 { max_e / bound } else { 0.0 },
        });
    }
    Ok(rows)
}

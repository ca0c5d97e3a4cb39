//! Time integration of the characteristics system with a kick-drift-kick
//! leapfrog.
//!
//! The field is evaluated once per step at the updated positions; the second
//! half-kick of one step and the first half-kick of the next reuse the same
//! evaluation. Weights never change (the density is transported along
//! characteristics), so the scheme is the Hamiltonian dynamics of softened
//! point charges and conserves the discrete energy to O(dt^2) without drift.

use crate::config::NumericsConfig;
use crate::error::{Error, Result};
use crate::field::{eval_e_packed, PackedSources};
use crate::initial_data::Ensemble;
use crate::vec3::Vec3;

/// Complete integrator state between steps.
#[derive(Debug, Clone)]
pub struct SimState {
    pub ensemble: Ensemble,
    pub t: f64,
    pub step_count: u64,
    pub dt: f64,
    /// E at each particle's current position, from the latest evaluation.
    pub field: Vec<Vec3>,
}

impl SimState {
    /// Initialize at t = 0 with a fresh field evaluation.
    pub fn new(ensemble: Ensemble, num: &NumericsConfig) -> SimState {
        Self::resume(ensemble, 0.0, 0, num)
    }

    /// Rebuild a state at an arbitrary time (checkpoint resume). The field is
    /// a pure function of the particle positions, so recomputing it restores
    /// the pre-checkpoint state bit-for-bit.
    pub fn resume(ensemble: Ensemble, t: f64, step_count: u64, num: &NumericsConfig) -> SimState {
        let field = eval_field_at(&ensemble, num.softening);
        SimState {
            ensemble,
            t,
            step_count,
            dt: num.dt_max,
            field,
        }
    }

    /// max_p |sigma_p E_p| from the cached field.
    pub fn max_accel(&self) -> f64 {
        self.ensemble
            .particles
            .iter()
            .zip(&self.field)
            .map(|(p, e)| (*e * self.ensemble.sigma_of(p.species)).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_speed(&self) -> f64 {
        self.ensemble.max_speed()
    }

    /// Total momentum sum_p w_p v_p.
    pub fn momentum(&self) -> Vec3 {
        let mut m = Vec3::ZERO;
        for p in &self.ensemble.particles {
            m += p.v * p.weight;
        }
        m
    }

    /// Negate all velocities (time reversal).
    pub fn reverse_velocities(&mut self) {
        for p in &mut self.ensemble.particles {
            p.v = -p.v;
        }
    }
}

fn eval_field_at(ens: &Ensemble, softening: f64) -> Vec<Vec3> {
    let src = PackedSources::from_ensemble(ens);
    let targets: Vec<Vec3> = ens.particles.iter().map(|p| p.x).collect();
    eval_e_packed(&src, &targets, softening)
}

/// Adaptive step size: dt = min(dt_max, 0.1 / max(1, V_max),
/// 0.3 sqrt(softening / max |a|)), from the cached field of the last
/// evaluation.
pub fn choose_dt(state: &SimState, num: &NumericsConfig) -> f64 {
    let v_max = state.max_speed();
    let a_max = state.max_accel();
    let mut dt = num.dt_max;
    dt = dt.min(0.1 / v_max.max(1.0));
    if a_max > 0.0 {
        dt = dt.min(0.3 * (num.softening / a_max).sqrt());
    }
    dt
}

/// One kick-drift-kick step of size dt.
pub fn step(state: &mut SimState, num: &NumericsConfig, dt: f64) -> Result<()> {
    let half = 0.5 * dt;
    let sigmas: Vec<f64> = state
        .ensemble
        .particles
        .iter()
        .map(|p| state.ensemble.sigma_of(p.species))
        .collect();
    // kick with the field at the current positions
    for (i, p) in state.ensemble.particles.iter_mut().enumerate() {
        p.v += state.field[i] * (sigmas[i] * half);
    }
    // drift
    for p in state.ensemble.particles.iter_mut() {
        p.x += p.v * dt;
    }
    // field at the updated positions, second kick
    state.field = eval_field_at(&state.ensemble, num.softening);
    for (i, p) in state.ensemble.particles.iter_mut().enumerate() {
        p.v += state.field[i] * (sigmas[i] * half);
        if !p.x.is_finite() || !p.v.is_finite() {
            return Err(Error::NonFinite {
                particle: i,
                step: state.step_count + 1,
            });
        }
    }
    state.t += dt;
    state.step_count += 1;
    state.dt = dt;
    Ok(())
}

/// Callbacks invoked by [`run`]. `pre_step` sees the state (and its cached
/// field) before the step at time t; `post_step` sees the completed step;
/// `on_output` fires whenever the run lands exactly on the output cadence.
pub trait StepHooks {
    fn pre_step(&mut self, _state: &SimState, _dt: f64) {}
    fn post_step(&mut self, _state: &SimState) {}
    fn on_output(&mut self, _state: &SimState) -> Result<()> {
        Ok(())
    }
}

/// No-op hooks for plain integration.
pub struct NoHooks;
impl StepHooks for NoHooks {}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Fixed step size; bypasses the adaptive criterion (cadence snapping
    /// still applies). Fixed-dt runs are exactly time reversible and resume
    /// bit-exactly from checkpoints.
    pub dt_override: Option<f64>,
}

/// Advance to t_final, snapping steps onto the output cadence so diagnostics
/// fall on exact times (which makes them comparable across cutoffs).
pub fn run(
    state: &mut SimState,
    t_final: f64,
    num: &NumericsConfig,
    opts: RunOptions,
    hooks: &mut dyn StepHooks,
) -> Result<()> {
    let cadence = num.output_cadence;
    let eps = 1e-9 * cadence.max(num.dt_max);
    let on_cadence = |t: f64| (t / cadence - (t / cadence).round()).abs() < 1e-9;
    if on_cadence(state.t) || state.t == 0.0 {
        hooks.on_output(state)?;
    }
    while state.t < t_final - eps {
        let mut dt = opts.dt_override.unwrap_or_else(|| choose_dt(state, num));
        // snap down so the next cadence point and the horizon land exactly
        let k = (state.t / cadence + 1e-9).floor() + 1.0;
        let next_mark = (k * cadence).min(t_final);
        let mut snapped = false;
        if state.t + dt >= next_mark - eps {
            dt = next_mark - state.t;
            snapped = true;
        }
        hooks.pre_step(state, dt);
        step(state, num, dt)?;
        if snapped {
            state.t = next_mark;
        }
        hooks.post_step(state);
        if on_cadence(state.t) || (state.t - t_final).abs() <= eps {
            hooks.on_output(state)?;
        }
    }
    Ok(())
}

/// Advance exactly n steps of fixed size dt with no snapping. Used by the
/// reversibility and checkpoint paths where bitwise repeatability matters.
pub fn fixed_steps(
    state: &mut SimState,
    n: u64,
    dt: f64,
    num: &NumericsConfig,
    hooks: &mut dyn StepHooks,
) -> Result<()> {
    for _ in 0..n {
        hooks.pre_step(state, dt);
        step(state, num, dt)?;
        hooks.post_step(state);
    }
    Ok(())
}

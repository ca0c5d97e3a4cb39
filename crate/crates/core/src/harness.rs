//! Cutoff-ladder experiments: run the full pipeline per cutoff, fit scaling
//! exponents across the ladder, and check Cauchy-in-N convergence of the
//! matched characteristics.

use crate::config::{CutoffConfig, NumericsConfig, RunConfig, SpeciesParams};
use crate::energy::{self, EnergyReport, IdentityReport};
use crate::envelope::{fit_envelope, EnvelopeFit};
use crate::error::{Error, Result};
use crate::field::{far_field_tail_check, FarFieldRow};
use crate::initial_data::{grid_ensemble_at, Ensemble, SpeciesTotals};
use crate::integrator::{run, RunOptions, SimState, StepHooks};
use crate::local_energy::{q_sup, KinematicsRecord, KinematicsTracker};
use crate::output;
use crate::vec3::Vec3;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Ordinary least squares on (log N, log value): returns (slope, r^2).
#[allow(clippy::neg_cmp_op_on_partial_ord)] // negations also reject NaN
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::Fit(format!(
            "need >= 3 points, got {}",
            points.len()
        )));
    }
    for &(n, v) in points {
        if !(v > 0.0) {
            return Err(Error::Fit(format!("nonpositive value {v} at N = {n}")));
        }
        if !(n > 0.0) {
            return Err(Error::Fit(format!("nonpositive N = {n}")));
        }
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|&(n, v)| (n.ln(), v.ln())).collect();
    let n = xy.len() as f64;
    let sx: f64 = xy.iter().map(|(x, _)| x).sum();
    let sy: f64 = xy.iter().map(|(_, y)| y).sum();
    let sxx: f64 = xy.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = xy.iter().map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::Fit("need distinct N".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = xy.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = xy
        .iter()
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok((slope, r2))
}

/// A ladder of strictly increasing cutoffs sharing one base configuration.
#[derive(Debug, Clone)]
pub struct LadderSpec {
    pub n_values: Vec<f64>,
    pub base: RunConfig,
    pub out_dir: Option<PathBuf>,
    /// Enforce 3 beta < 14/15 (required by the Q^N scaling check).
    pub enforce_q_exponent: bool,
}

impl LadderSpec {
    pub fn new(base: RunConfig, n_values: Vec<f64>, out_dir: Option<PathBuf>) -> LadderSpec {
        LadderSpec {
            n_values,
            base,
            out_dir,
            enforce_q_exponent: true,
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // negation also rejects NaN
    pub fn validate(&self) -> Result<()> {
        if self.n_values.len() < 3 {
            return Err(Error::Ladder(format!(
                "need >= 3 entries, got {}",
                self.n_values.len()
            )));
        }
        for w in self.n_values.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Ladder(format!(
                    "entries must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        self.base.validate()?;
        if self.enforce_q_exponent {
            self.base.validate_q_exponent()?;
        }
        Ok(())
    }
}

/// Everything measured in one run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunSummary {
    pub n_cut: f64,
    pub beta: f64,
    pub species: Vec<SpeciesParams>,
    pub numerics: NumericsConfig,
    pub totals: Vec<SpeciesTotals>,
    pub particle_count: usize,
    pub energy0: EnergyReport,
    pub energy_final: EnergyReport,
    /// |total(T) - total(0)| / |total(0)|
    pub energy_drift: f64,
    pub identity0: IdentityReport,
    pub identity_final: IdentityReport,
    pub kinematics_final: KinematicsRecord,
    pub qsup_final: f64,
    pub qsup_mu: Vec3,
    pub qsup_radius: f64,
    pub farfield: Vec<FarFieldRow>,
    /// None when the run has too little speed spread to fit an envelope.
    pub envelope: Option<EnvelopeFit>,
    pub elapsed_seconds: f64,
}

/// A run summary together with the final particle states (needed by the
/// trajectory-convergence check).
#[derive(Debug, Clone)]
pub struct LadderRun {
    pub summary: RunSummary,
    pub final_ensemble: Ensemble,
}

/// Step hooks that collect the diagnostic series and stream them to CSV.
struct RunRecorder<'a> {
    num: NumericsConfig,
    cut: CutoffConfig,
    tracker: KinematicsTracker,
    t_final: f64,
    energy_series: Vec<EnergyReport>,
    kinematics_series: Vec<KinematicsRecord>,
    identity_reports: Vec<IdentityReport>,
    qsup_series: Vec<(f64, f64, Vec3, f64)>,
    energy_csv: Option<&'a mut output::EnergyCsv>,
    kinematics_csv: Option<&'a mut output::KinematicsCsv>,
    qsup_csv: Option<&'a mut output::QsupCsv>,
    checkpoint_every: Option<u64>,
    out_dir: Option<PathBuf>,
    error: Option<Error>,
}

impl RunRecorder<'_> {
    fn output(&mut self, state: &SimState) -> Result<()> {
        let t = state.t;
        let is_identity_time = t == 0.0 || (t - self.t_final).abs() < 1e-9;
        let report = if is_identity_time {
            let (rep, id) = EnergyReport::with_identity(
                &state.ensemble,
                &self.num,
                &self.cut,
                t,
                self.tracker.v_max(),
            )?;
            self.identity_reports.push(id);
            rep
        } else {
            EnergyReport::plain(&state.ensemble, self.num.softening, t)
        };
        if let Some(w) = self.energy_csv.as_mut() {
            w.append(&report)?;
        }
        self.energy_series.push(report);

        let kin = self.tracker.record(t);
        if let Some(w) = self.kinematics_csv.as_mut() {
            w.append(&kin)?;
        }
        self.kinematics_series.push(kin);

        let radius = kin.r_disp;
        let (q, mu) = q_sup(&state.ensemble, radius, self.num.softening, radius / 2.0)?;
        if let Some(w) = self.qsup_csv.as_mut() {
            w.append(t, q, mu, radius)?;
        }
        self.qsup_series.push((t, q, mu, radius));
        Ok(())
    }
}

impl StepHooks for RunRecorder<'_> {
    fn pre_step(&mut self, state: &SimState, dt: f64) {
        self.tracker.pre_step(state, dt);
    }

    fn post_step(&mut self, state: &SimState) {
        self.tracker.post_step(state, state.dt);
        if let (Some(every), Some(dir)) = (self.checkpoint_every, self.out_dir.as_ref()) {
            if every > 0 && state.step_count.is_multiple_of(every) {
                let path = dir.join(format!("checkpoint_{:06}.bin", state.step_count));
                if let Err(e) =
                    output::write_checkpoint(&path, &state.ensemble, state.t, state.step_count, state.dt)
                {
                    self.error = Some(e);
                }
            }
        }
    }

    fn on_output(&mut self, state: &SimState) -> Result<()> {
        match self.output(state) {
            Ok(()) => Ok(()),
            Err(e) => {
                let msg = e.to_string();
                self.error = Some(e);
                Err(Error::Ladder(msg))
            }
        }
    }
}

/// Full pipeline for one cutoff: grid, integrate to t_final, diagnostics.
pub fn run_one(base: &RunConfig, n_cut: f64, out_dir: Option<&Path>) -> Result<LadderRun> {
    let started = Instant::now();
    let mut cfg = base.clone();
    cfg.cutoff.n_cut = n_cut;
    cfg.validate()?;
    let num = cfg.numerics;
    let cut = cfg.cutoff;
    let alpha = cfg.species[0].alpha;

    let ensemble = grid_ensemble_at(&cfg, n_cut)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.resolved"), cfg.to_toml())?;
        output::write_state_csv(&dir.join("ensemble_t0.csv"), &ensemble, 0.0)?;
    }

    let mut state = SimState::new(ensemble, &num);
    let tracker = KinematicsTracker::new(&state, num.max_velocity_floor);

    // far-field decay table at t = 0 (radii well outside the support)
    let rb = cut.space_radius();
    let farfield = far_field_tail_check(
        &state.ensemble,
        &cut,
        tracker.v_max(),
        0.0,
        &[8.0 * rb, 12.0 * rb, 16.0 * rb],
        num.softening,
    )?;
    if let Some(dir) = out_dir {
        output::write_farfield_csv(&dir.join("farfield.csv"), &farfield)?;
    }

    let mut energy_csv = match out_dir {
        Some(d) => Some(output::EnergyCsv::create(&d.join("energy.csv"))?),
        None => None,
    };
    let mut kinematics_csv = match out_dir {
        Some(d) => Some(output::KinematicsCsv::create(&d.join("kinematics.csv"))?),
        None => None,
    };
    let mut qsup_csv = match out_dir {
        Some(d) => Some(output::QsupCsv::create(&d.join("qsup.csv"))?),
        None => None,
    };

    let mut recorder = RunRecorder {
        num,
        cut,
        tracker,
        t_final: num.t_final,
        energy_series: Vec::new(),
        kinematics_series: Vec::new(),
        identity_reports: Vec::new(),
        qsup_series: Vec::new(),
        energy_csv: energy_csv.as_mut(),
        kinematics_csv: kinematics_csv.as_mut(),
        qsup_csv: qsup_csv.as_mut(),
        checkpoint_every: base.checkpoint_every_steps,
        out_dir: out_dir.map(|d| d.to_path_buf()),
        error: None,
    };

    run(
        &mut state,
        num.t_final,
        &num,
        RunOptions::default(),
        &mut recorder,
    )
    .map_err(|e| recorder.error.take().unwrap_or(e))?;

    let energy0 = recorder.energy_series[0];
    let energy_final = *recorder.energy_series.last().expect("at least one output");
    let energy_drift = if energy0.total != 0.0 {
        (energy_final.total - energy0.total).abs() / energy0.total.abs()
    } else {
        0.0
    };
    let identity0 = recorder.identity_reports[0];
    let identity_final = *recorder.identity_reports.last().unwrap();
    let kinematics_final = *recorder.kinematics_series.last().unwrap();
    let &(_, qsup_final, qsup_mu, qsup_radius) = recorder.qsup_series.last().unwrap();

    let envelope = fit_envelope(&state.ensemble, alpha).ok();

    let summary = RunSummary {
        n_cut,
        beta: cut.beta,
        species: cfg.species.clone(),
        numerics: num,
        totals: state.ensemble.totals.clone(),
        particle_count: state.ensemble.len(),
        energy0,
        energy_final,
        energy_drift,
        identity0,
        identity_final,
        kinematics_final,
        qsup_final,
        qsup_mu,
        qsup_radius,
        farfield,
        envelope,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };

    if let Some(dir) = out_dir {
        output::write_state_csv(&dir.join("state_final.csv"), &state.ensemble, state.t)?;
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )?;
    }

    Ok(LadderRun {
        summary,
        final_ensemble: state.ensemble,
    })
}

fn rung_dir(base: &Path, n: f64) -> PathBuf {
    if n.fract() == 0.0 {
        base.join(format!("N={}", n as i64))
    } else {
        base.join(format!("N={n}"))
    }
}

/// Execute the full pipeline for every cutoff of the ladder, sequentially.
/// A failing run aborts the ladder; outputs of completed runs are preserved.
pub fn run_ladder(spec: &LadderSpec) -> Result<Vec<LadderRun>> {
    spec.validate()?;
    let mut runs = Vec::with_capacity(spec.n_values.len());
    for &n in &spec.n_values {
        let dir = spec.out_dir.as_ref().map(|d| rung_dir(d, n));
        runs.push(run_one(&spec.base, n, dir.as_deref())?);
    }
    Ok(runs)
}

/// Distances between matched characteristics of two adjacent cutoffs.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CauchyPair {
    pub n_small: f64,
    pub n_large: f64,
    pub common: usize,
    pub sup_x: f64,
    pub mean_x: f64,
    pub sup_v: f64,
    pub mean_v: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ConvergenceReport {
    pub pairs: Vec<CauchyPair>,
    /// sup distances nonincreasing along the ladder within 10% slack.
    pub non_increasing: bool,
}

type LatticeKey = (u32, u64, u64, u64, u64, u64, u64);

fn lattice_key(species: u32, x0: Vec3, v0: Vec3) -> LatticeKey {
    (
        species,
        x0.x.to_bits(),
        x0.y.to_bits(),
        x0.z.to_bits(),
        v0.x.to_bits(),
        v0.y.to_bits(),
        v0.z.to_bits(),
    )
}

/// Match characteristics across adjacent cutoffs by their exact initial
/// lattice node (species, x0, v0) and compare final positions/velocities.
/// All runs must share the lattice spacings and every non-cutoff parameter.
pub fn cauchy_check(runs: &[LadderRun]) -> Result<ConvergenceReport> {
    if runs.len() < 2 {
        return Err(Error::Ladder("cauchy check needs >= 2 runs".into()));
    }
    let first = &runs[0].summary;
    for r in &runs[1..] {
        let s = &r.summary;
        if s.numerics.dx != first.numerics.dx
            || s.numerics.dv != first.numerics.dv
            || s.beta != first.beta
            || s.numerics.softening != first.numerics.softening
            || s.numerics.dt_max != first.numerics.dt_max
            || s.numerics.weight_floor != first.numerics.weight_floor
            || s.species != first.species
        {
            return Err(Error::Ladder(
                "mismatched lattice or physics parameters across runs".into(),
            ));
        }
    }
    let mut pairs = Vec::new();
    for w in runs.windows(2) {
        let (small, large) = (&w[0], &w[1]);
        let map: HashMap<LatticeKey, (Vec3, Vec3)> = large
            .final_ensemble
            .particles
            .iter()
            .map(|p| (lattice_key(p.species, p.x0, p.v0), (p.x, p.v)))
            .collect();
        let mut sup_x = 0.0f64;
        let mut sup_v = 0.0f64;
        let mut sum_x = 0.0f64;
        let mut sum_v = 0.0f64;
        let mut common = 0usize;
        for p in &small.final_ensemble.particles {
            let Some(&(x, v)) = map.get(&lattice_key(p.species, p.x0, p.v0)) else {
                return Err(Error::Ladder(format!(
                    "initial point {:?} of N = {} missing at N = {}: lattice phase mismatch",
                    p.x0, small.summary.n_cut, large.summary.n_cut
                )));
            };
            let dx = (p.x - x).norm();
            let dv = (p.v - v).norm();
            sup_x = sup_x.max(dx);
            sup_v = sup_v.max(dv);
            sum_x += dx;
            sum_v += dv;
            common += 1;
        }
        pairs.push(CauchyPair {
            n_small: small.summary.n_cut,
            n_large: large.summary.n_cut,
            common,
            sup_x,
            mean_x: if common > 0 { sum_x / common as f64 } else { 0.0 },
            sup_v,
            mean_v: if common > 0 { sum_v / common as f64 } else { 0.0 },
        });
    }
    let non_increasing = pairs
        .windows(2)
        .all(|w| w[1].sup_x <= 1.1 * w[0].sup_x);
    Ok(ConvergenceReport {
        pairs,
        non_increasing,
    })
}

/// All ladder-level fitted exponents and pass/fail flags, thresholds pinned.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LadderReport {
    pub n_values: Vec<f64>,
    pub beta: f64,
    pub alpha: f64,

    pub total_energy_slope: f64,
    pub total_energy_limit: f64,
    pub total_energy_ok: bool,

    pub kinetic_slope: f64,
    pub kinetic_target: f64,
    pub kinetic_ok: bool,

    pub farfield_slope: f64,
    pub farfield_target: f64,
    pub farfield_slope_ok: bool,
    pub farfield_bound_ok: bool,

    pub vmax_slope: f64,
    pub vmax_limit: f64,
    pub vmax_ok: bool,

    pub qsup_slope: f64,
    pub qsup_limit: f64,
    pub qsup_ok: bool,

    pub tau_ratios: Vec<Option<f64>>,
    pub tau_limit: f64,
    pub tau_ok: bool,

    pub energy_drifts: Vec<f64>,
    pub drift_limit: f64,
    pub drift_ok: bool,

    pub identity_residuals: Vec<(f64, f64)>,
    pub identity_limit: f64,
    pub identity_ok: bool,

    pub cauchy: ConvergenceReport,
    pub cauchy_halving_ok: bool,

    pub envelope_lambdas: Vec<f64>,
    pub envelope_ok: bool,

    pub all_ok: bool,
}

/// Assemble the ladder-level report. Requires >= 4 rungs (the energy-scaling
/// fit is defined on at least 4 cutoffs).
pub fn ladder_report(runs: &[LadderRun]) -> Result<LadderReport> {
    if runs.len() < 4 {
        return Err(Error::Ladder(format!(
            "report needs >= 4 rungs, got {}",
            runs.len()
        )));
    }
    let beta = runs[0].summary.beta;
    let alpha = runs[0].summary.species[0].alpha;
    let n_values: Vec<f64> = runs.iter().map(|r| r.summary.n_cut).collect();

    let energy_points: Vec<(f64, EnergyReport)> = runs
        .iter()
        .map(|r| (r.summary.n_cut, r.summary.energy0))
        .collect();
    let scaling = energy::verify_energy_scaling(&energy_points, beta)?;
    let kinetic_target = beta * (3.0 - alpha);

    // far-field: r^2-compensated max |E| at the innermost sampled radius
    let far_points: Vec<(f64, f64)> = runs
        .iter()
        .map(|r| {
            let row = &r.summary.farfield[0];
            (r.summary.n_cut, row.max_e * row.radius * row.radius)
        })
        .collect();
    let (farfield_slope, _) = fit_exponent(&far_points)?;
    let farfield_bound_ok = runs
        .iter()
        .all(|r| r.summary.farfield.iter().all(|row| row.ratio <= 1.0));

    let vmax_points: Vec<(f64, f64)> = runs
        .iter()
        .map(|r| (r.summary.n_cut, r.summary.kinematics_final.v_max))
        .collect();
    let (vmax_slope, _) = fit_exponent(&vmax_points)?;

    let qsup_points: Vec<(f64, f64)> = runs
        .iter()
        .map(|r| (r.summary.n_cut, r.summary.qsup_final))
        .collect();
    let (qsup_slope, _) = fit_exponent(&qsup_points)?;

    let tau_limit = 2.0 / 3.0 + 0.1;
    let tau_ratios: Vec<Option<f64>> = runs
        .iter()
        .map(|r| r.summary.kinematics_final.tau_ratio)
        .collect();
    let tau_ok = tau_ratios.iter().all(|t| t.is_none_or(|v| v < tau_limit));

    let energy_drifts: Vec<f64> = runs.iter().map(|r| r.summary.energy_drift).collect();
    let drift_ok = energy_drifts.iter().all(|d| *d < 1e-3);

    let identity_residuals: Vec<(f64, f64)> = runs
        .iter()
        .map(|r| {
            (
                r.summary.identity0.residual,
                r.summary.identity_final.residual,
            )
        })
        .collect();
    let identity_ok = identity_residuals
        .iter()
        .all(|(a, b)| *a < 0.05 && *b < 0.05);

    let cauchy = cauchy_check(runs)?;
    let cauchy_halving_ok = cauchy.pairs.windows(2).all(|w| w[1].sup_x <= 0.5 * w[0].sup_x)
        && !cauchy.pairs.is_empty();

    let envelope_lambdas: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.summary.envelope.map(|e| e.lambda_prime))
        .collect();
    let envelope_ok = if envelope_lambdas.len() == runs.len() {
        let mean = envelope_lambdas.iter().sum::<f64>() / envelope_lambdas.len() as f64;
        envelope_lambdas
            .iter()
            .all(|l| *l > 0.0 && (*l - mean).abs() <= 0.2 * mean.abs())
    } else {
        false
    };

    let kinetic_ok = (scaling.kinetic_slope - kinetic_target).abs() <= 0.2;
    let farfield_slope_ok = (farfield_slope - kinetic_target).abs() <= 0.15;
    let vmax_ok = vmax_slope <= 1.1;
    let qsup_limit = 1.0 - 1.0 / 15.0 + 0.1;
    let qsup_ok = qsup_slope <= qsup_limit;

    let all_ok = scaling.pass
        && kinetic_ok
        && farfield_slope_ok
        && farfield_bound_ok
        && vmax_ok
        && qsup_ok
        && tau_ok
        && drift_ok
        && identity_ok
        && cauchy.non_increasing
        && cauchy_halving_ok
        && envelope_ok;

    Ok(LadderReport {
        n_values,
        beta,
        alpha,
        total_energy_slope: scaling.total_slope,
        total_energy_limit: 3.0 * beta + 0.2,
        total_energy_ok: scaling.pass,
        kinetic_slope: scaling.kinetic_slope,
        kinetic_target,
        kinetic_ok,
        farfield_slope,
        farfield_target: kinetic_target,
        farfield_slope_ok,
        farfield_bound_ok,
        vmax_slope,
        vmax_limit: 1.1,
        vmax_ok,
        qsup_slope,
        qsup_limit,
        qsup_ok,
        tau_ratios,
        tau_limit,
        tau_ok,
        energy_drifts,
        drift_limit: 1e-3,
        drift_ok,
        identity_residuals,
        identity_limit: 0.05,
        identity_ok,
        cauchy,
        cauchy_halving_ok,
        envelope_lambdas,
        envelope_ok,
        all_ok,
    })
}

/// Reload a ladder from the run directories written by [`run_ladder`]
/// (summary.json + state_final.csv per rung).
pub fn load_ladder(out_dir: &Path) -> Result<Vec<LadderRun>> {
    let mut entries: Vec<(f64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(out_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(n) = name.strip_prefix("N=") {
            if let Ok(v) = n.parse::<f64>() {
                entries.push((v, entry.path()));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Ladder(format!(
            "no N=<value> run directories under {}",
            out_dir.display()
        )));
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut runs = Vec::new();
    for (_, dir) in entries {
        let summary_text = std::fs::read_to_string(dir.join("summary.json"))?;
        let summary: RunSummary = serde_json::from_str(&summary_text)
            .map_err(|e| Error::Snapshot(format!("bad summary.json: {e}")))?;
        let (final_ensemble, _) = output::read_state_csv(&dir.join("state_final.csv"))?;
        runs.push(LadderRun {
            summary,
            final_ensemble,
        });
    }
    Ok(runs)
}

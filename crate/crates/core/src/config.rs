//! Run configuration: parsing, validation and normalization.
//!
//! A run is described by a flat TOML file with one `[[species]]` section per
//! species plus `[cutoff]` and `[numerics]` tables. Omitted numeric fields are
//! filled with documented defaults and the resolved configuration is written
//! next to the run outputs, so every experiment is reproducible from its
//! `config.resolved` alone.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One charged species: charge per unit mass and initial-envelope constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesParams {
    pub id: u32,
    /// Charge per unit mass, signed.
    pub sigma: f64,
    /// Envelope amplitude, > 0.
    pub c1: f64,
    /// Gaussian velocity decay rate (1/velocity^2), > 0.
    pub lambda: f64,
    /// Spatial decay exponent, > 1.
    pub alpha: f64,
}

/// Velocity cutoff `N` and spatial cutoff exponent `beta` of the partial
/// dynamics: initial data is restricted to |x| <= N^beta, |v| <= N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffConfig {
    pub n_cut: f64,
    pub beta: f64,
}

impl CutoffConfig {
    /// Spatial support radius N^beta.
    pub fn space_radius(&self) -> f64 {
        self.n_cut.powf(self.beta)
    }
}

/// Discretization and runtime parameters. All of these are artifact choices;
/// the model itself has no free constants beyond the species parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericsConfig {
    /// Spatial lattice spacing for initial-data gridding.
    pub dx: f64,
    /// Velocity lattice spacing.
    pub dv: f64,
    /// Coulomb regularization length. Default dx/2.
    pub softening: f64,
    /// Upper bound for the adaptive time step. Default 1e-2.
    pub dt_max: f64,
    /// Time horizon T.
    pub t_final: f64,
    /// Relative particle-weight cutoff: lattice nodes with density below
    /// weight_floor * (max initial density) are dropped. Must stay < 1e-6 so
    /// the total mass is not visibly altered. Default 1e-12.
    pub weight_floor: f64,
    /// Field-energy quadrature box extent, in units of the support estimate
    /// N^beta + V_max * t. Default 4.
    pub quad_radius_factor: f64,
    /// Cell size of the field-energy quadrature grid. Default dx.
    pub quad_spacing: f64,
    /// Diagnostics output cadence in simulation time. Default 0.1.
    pub output_cadence: f64,
    /// Floor C3 for the tracked maximal velocity. The model only requires
    /// C3 > 1 "suitably chosen"; it is exposed here with default 1.
    pub max_velocity_floor: f64,
    /// Hard cap on the gridded particle count. Default 5_000_000.
    pub max_particles: u64,
    /// Hard cap on the field-energy quadrature cell count. Default 2_000_000.
    pub max_quad_cells: u64,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub species: Vec<SpeciesParams>,
    pub cutoff: CutoffConfig,
    pub numerics: NumericsConfig,
    /// Ascending cutoffs for ladder experiments; optional for single runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<Vec<f64>>,
    /// Write a binary checkpoint every this many steps (when an output
    /// directory is set). Runs resume bit-exactly from checkpoints at fixed
    /// dt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every_steps: Option<u64>,
}

// Raw mirror of the file schema: everything numeric is optional so defaults
// can be filled after parsing.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    species: Vec<RawSpecies>,
    cutoff: RawCutoff,
    #[serde(default)]
    numerics: RawNumerics,
    #[serde(default)]
    ladder: Option<Vec<f64>>,
    #[serde(default)]
    checkpoint_every_steps: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpecies {
    id: u32,
    sigma: f64,
    c1: f64,
    lambda: f64,
    alpha: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCutoff {
    n_cut: f64,
    beta: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    dx: Option<f64>,
    dv: Option<f64>,
    softening: Option<f64>,
    dt_max: Option<f64>,
    t_final: Option<f64>,
    weight_floor: Option<f64>,
    quad_radius_factor: Option<f64>,
    quad_spacing: Option<f64>,
    output_cadence: Option<f64>,
    max_velocity_floor: Option<f64>,
    max_particles: Option<u64>,
    max_quad_cells: Option<u64>,
}

pub const DEFAULT_DX: f64 = 0.5;
pub const DEFAULT_DV: f64 = 0.5;
pub const DEFAULT_DT_MAX: f64 = 1e-2;
pub const DEFAULT_T_FINAL: f64 = 1.0;
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-12;
pub const DEFAULT_QUAD_RADIUS_FACTOR: f64 = 4.0;
pub const DEFAULT_OUTPUT_CADENCE: f64 = 0.1;
pub const DEFAULT_MAX_VELOCITY_FLOOR: f64 = 1.0;
pub const DEFAULT_MAX_PARTICLES: u64 = 5_000_000;
pub const DEFAULT_MAX_QUAD_CELLS: u64 = 2_000_000;

fn fill_defaults(raw: RawConfig) -> RunConfig {
    let dx = raw.numerics.dx.unwrap_or(DEFAULT_DX);
    let numerics = NumericsConfig {
        dx,
        dv: raw.numerics.dv.unwrap_or(DEFAULT_DV),
        softening: raw.numerics.softening.unwrap_or(dx / 2.0),
        dt_max: raw.numerics.dt_max.unwrap_or(DEFAULT_DT_MAX),
        t_final: raw.numerics.t_final.unwrap_or(DEFAULT_T_FINAL),
        weight_floor: raw.numerics.weight_floor.unwrap_or(DEFAULT_WEIGHT_FLOOR),
        quad_radius_factor: raw
            .numerics
            .quad_radius_factor
            .unwrap_or(DEFAULT_QUAD_RADIUS_FACTOR),
        quad_spacing: raw.numerics.quad_spacing.unwrap_or(dx),
        output_cadence: raw.numerics.output_cadence.unwrap_or(DEFAULT_OUTPUT_CADENCE),
        max_velocity_floor: raw
            .numerics
            .max_velocity_floor
            .unwrap_or(DEFAULT_MAX_VELOCITY_FLOOR),
        max_particles: raw.numerics.max_particles.unwrap_or(DEFAULT_MAX_PARTICLES),
        max_quad_cells: raw.numerics.max_quad_cells.unwrap_or(DEFAULT_MAX_QUAD_CELLS),
    };
    let mut species: Vec<SpeciesParams> = raw
        .species
        .into_iter()
        .map(|s| SpeciesParams {
            id: s.id,
            sigma: s.sigma,
            c1: s.c1,
            lambda: s.lambda,
            alpha: s.alpha,
        })
        .collect();
    species.sort_by_key(|s| s.id);
    RunConfig {
        species,
        cutoff: CutoffConfig {
            n_cut: raw.cutoff.n_cut,
            beta: raw.cutoff.beta,
        },
        numerics,
        ladder: raw.ladder,
        checkpoint_every_steps: raw.checkpoint_every_steps,
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        field,
        reason: reason.into(),
    }
}

impl RunConfig {
    /// Parse and validate a configuration string (TOML).
    pub fn from_str(text: &str, origin: &str) -> Result<RunConfig> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
            path: origin.to_string(),
            detail: e.to_string(),
        })?;
        let cfg = fill_defaults(raw);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load, validate and normalize a configuration file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text, &path.display().to_string())
    }

    /// Serialize the resolved configuration back to TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config is always serializable")
    }

    // `!(x > 0.0)` rather than `x <= 0.0`: the negation also rejects NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.species.is_empty() {
            return Err(invalid("species", "at least one species is required"));
        }
        for s in &self.species {
            if !(s.c1 > 0.0) {
                return Err(invalid("c1", format!("must be > 0, got {}", s.c1)));
            }
            if !(s.lambda > 0.0) {
                return Err(invalid("lambda", format!("must be > 0, got {}", s.lambda)));
            }
            if !(s.alpha > 1.0) {
                return Err(invalid(
                    "alpha",
                    format!("alpha must exceed 1, got {}", s.alpha),
                ));
            }
            if !s.sigma.is_finite() {
                return Err(invalid("sigma", "must be finite"));
            }
        }
        for w in self.species.windows(2) {
            if w[0].id == w[1].id {
                return Err(invalid("species.id", format!("duplicate id {}", w[0].id)));
            }
        }
        if !(self.cutoff.n_cut >= 1.0) {
            return Err(invalid(
                "n_cut",
                format!("must be >= 1, got {}", self.cutoff.n_cut),
            ));
        }
        if !(self.cutoff.beta > 0.0) {
            return Err(invalid(
                "beta",
                format!("must be > 0, got {}", self.cutoff.beta),
            ));
        }
        let n = &self.numerics;
        if !(n.dx > 0.0) {
            return Err(invalid("dx", format!("must be > 0, got {}", n.dx)));
        }
        if !(n.dv > 0.0) {
            return Err(invalid("dv", format!("must be > 0, got {}", n.dv)));
        }
        if !(n.softening > 0.0) {
            return Err(invalid(
                "softening",
                format!("must be > 0, got {}", n.softening),
            ));
        }
        if !(n.dt_max > 0.0) {
            return Err(invalid("dt_max", format!("must be > 0, got {}", n.dt_max)));
        }
        // t_final = 0 is allowed: it yields an initial-data-only run.
        if !(n.t_final >= 0.0) {
            return Err(invalid(
                "t_final",
                format!("must be >= 0, got {}", n.t_final),
            ));
        }
        if !(n.weight_floor >= 0.0) || !(n.weight_floor < 1e-6) {
            return Err(invalid(
                "weight_floor",
                format!("must lie in [0, 1e-6), got {}", n.weight_floor),
            ));
        }
        if !(n.quad_radius_factor > 0.0) {
            return Err(invalid(
                "quad_radius_factor",
                format!("must be > 0, got {}", n.quad_radius_factor),
            ));
        }
        if !(n.quad_spacing > 0.0) {
            return Err(invalid(
                "quad_spacing",
                format!("must be > 0, got {}", n.quad_spacing),
            ));
        }
        if !(n.output_cadence > 0.0) {
            return Err(invalid(
                "output_cadence",
                format!("must be > 0, got {}", n.output_cadence),
            ));
        }
        if !(n.max_velocity_floor > 0.0) {
            return Err(invalid(
                "max_velocity_floor",
                format!("must be > 0, got {}", n.max_velocity_floor),
            ));
        }
        if let Some(ladder) = &self.ladder {
            for v in ladder {
                if !(*v >= 1.0) {
                    return Err(invalid("ladder", format!("cutoffs must be >= 1, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Check the exponent constraint 3*beta < 14/15 required by the local
    /// energy scaling diagnostic.
    pub fn validate_q_exponent(&self) -> Result<()> {
        if 3.0 * self.cutoff.beta >= 14.0 / 15.0 {
            return Err(invalid(
                "beta",
                format!(
                    "3*beta must stay below 14/15 for the Q^N scaling check, got 3*beta = {}",
                    3.0 * self.cutoff.beta
                ),
            ));
        }
        Ok(())
    }

    /// Apply CLI overrides; override values win over file values.
    pub fn apply_overrides(
        &mut self,
        n_cut: Option<f64>,
        beta: Option<f64>,
        t_final: Option<f64>,
    ) -> Result<()> {
        if let Some(v) = n_cut {
            self.cutoff.n_cut = v;
        }
        if let Some(v) = beta {
            self.cutoff.beta = v;
        }
        if let Some(v) = t_final {
            self.numerics.t_final = v;
        }
        self.validate()
    }

    /// Largest initial density over all species (profiles peak at the origin).
    pub fn max_initial_density(&self) -> f64 {
        self.species.iter().map(|s| s.c1).fold(0.0, f64::max)
    }
}

//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error in {path}: {detail}")]
    ConfigParse { path: String, detail: String },

    #[error("invalid config: {field}: {reason}")]
    ConfigInvalid { field: &'static str, reason: String },

    #[error(
        "particle count exceeds cap {cap} (reached {count}); \
         coarsen the lattice, e.g. dx >= {suggested_dx:.4}"
    )]
    ParticleCap {
        count: u64,
        cap: u64,
        suggested_dx: f64,
    },

    #[error(
        "field-energy grid of {cells} cells exceeds cap {cap}; \
         raise quad_spacing to >= {suggested:.4}"
    )]
    QuadratureCap { cells: u64, cap: u64, suggested: f64 },

    #[error("non-finite position/velocity for particle {particle} at step {step}")]
    NonFinite { particle: usize, step: u64 },

    #[error("sample radius {radius} violates the support estimate: need radius > {required}")]
    RadiusInsideSupport { radius: f64, required: f64 },

    #[error("ladder: {0}")]
    Ladder(String),

    #[error("exponent fit: {0}")]
    Fit(String),

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

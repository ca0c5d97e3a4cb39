//! Fit of the propagated decay envelope: the smallest Gaussian-in-velocity
//! envelope C2 exp(-lambda' |v|^2) (1+|x|)^{-alpha} that dominates the
//! transported density at the current particle states.
//!
//! Particle densities f_p = w_p / (dx^3 dv^3) are constant along
//! characteristics, so the fit probes how the envelope rate survives the
//! motion: y_p = ln f_p + alpha ln(1+|x_p|) is binned in u_p = |v_p|^2, the
//! bin maxima are fitted by least squares (slope -lambda'), and C2 is raised
//! until every particle lies below the envelope.

use crate::error::{Error, Result};
use crate::initial_data::Ensemble;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EnvelopeFit {
    pub c2: f64,
    pub lambda_prime: f64,
    /// Number of nonempty |v|^2 bins that entered the fit.
    pub bins_used: usize,
}

const BINS: usize = 12;

pub fn fit_envelope(ens: &Ensemble, alpha: f64) -> Result<EnvelopeFit> {
    if ens.is_empty() {
        return Err(Error::Fit("envelope fit needs a nonempty ensemble".into()));
    }
    let cell = ens.cell_volume();
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(ens.len());
    for p in &ens.particles {
        if p.weight <= 0.0 {
            continue;
        }
        let u = p.v.norm_sq();
        let y = (p.weight / cell).ln() + alpha * (1.0 + p.x.norm()).ln();
        pts.push((u, y));
    }
    if pts.is_empty() {
        return Err(Error::Fit("envelope fit needs positive weights".into()));
    }
    let u_max = pts.iter().map(|(u, _)| *u).fold(0.0, f64::max);
    if u_max <= 0.0 {
        return Err(Error::Fit(
            "envelope fit needs a spread of particle speeds".into(),
        ));
    }
    // upper envelope of the point cloud: max y per |v|^2 bin; coarse velocity
    // lattices may populate only a few distinct speeds, so the bin count
    // adapts downward
    let mut distinct: Vec<u64> = pts.iter().map(|(u, _)| u.to_bits()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let bins = distinct.len().clamp(2, BINS);
    let mut bin_max = vec![f64::NEG_INFINITY; bins];
    for &(u, y) in &pts {
        let k = (((u / u_max) * bins as f64) as usize).min(bins - 1);
        bin_max[k] = bin_max[k].max(y);
    }
    let nodes: Vec<(f64, f64)> = bin_max
        .iter()
        .enumerate()
        .filter(|(_, y)| y.is_finite())
        .map(|(k, &y)| ((k as f64 + 0.5) * u_max / bins as f64, y))
        .collect();
    if nodes.len() < 2 {
        return Err(Error::Fit(format!(
            "envelope fit needs >= 2 occupied speed bins, got {}",
            nodes.len()
        )));
    }
    // least squares y = b - lambda' u on the bin maxima
    let n = nodes.len() as f64;
    let su: f64 = nodes.iter().map(|(u, _)| u).sum();
    let sy: f64 = nodes.iter().map(|(_, y)| y).sum();
    let suu: f64 = nodes.iter().map(|(u, _)| u * u).sum();
    let suy: f64 = nodes.iter().map(|(u, y)| u * y).sum();
    let slope = (n * suy - su * sy) / (n * suu - su * su);
    let lambda_prime = -slope;
    // raise the intercept until the envelope dominates every particle
    let c2_log = pts
        .iter()
        .map(|&(u, y)| y + lambda_prime * u)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(EnvelopeFit {
        c2: c2_log.exp(),
        lambda_prime,
        bins_used: nodes.len(),
    })
}

/// Check that every particle is dominated by the fitted envelope (holds by
/// construction; exposed for diagnostics and tests).
pub fn envelope_dominates(ens: &Ensemble, alpha: f64, fit: &EnvelopeFit) -> bool {
    let cell = ens.cell_volume();
    ens.particles.iter().all(|p| {
        p.weight / cell
            <= fit.c2 * (-fit.lambda_prime * p.v.norm_sq()).exp()
                * (1.0 + p.x.norm()).powf(-alpha)
                * (1.0 + 1e-12)
    })
}
